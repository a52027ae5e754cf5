// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Episodic harness: pretraining with hard and soft patch labels, two-phase
// meta-training through the transport metric, evaluation and gradient checks.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "model.hpp"
#include "set_repr.hpp"
#include "ukd.hpp"
#include "world.hpp"

namespace patchot {

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainSchedule {
  int epochs = 20;
  int warmup_epochs = 5;
  int steps_per_epoch = 50;
  int batch_size = 32;
  int patches = 4;       // n_p
  int hard_patches = 1;  // l
  double lambda = 0.1;
  double momentum = 0.999;
  double learning_rate = 0.1;
  std::vector<int> lr_milestones;
  double lr_decay = 0.1;
  bool use_soft_loss = true;
  SoftLossOptions soft;

  void validate() const;
  double learning_rate_at(int epoch) const;
};

struct PretrainStep {
  std::int64_t step = 0;
  int epoch = 0;
  double ce = 0.0;
  double soft = 0.0;
  double total = 0.0;
};

struct PretrainEpoch {
  int epoch = 0;
  bool soft_active = false;
  double learning_rate = 0.0;
  double ce = 0.0;
  double soft = 0.0;
  double total = 0.0;
};

struct PretrainTrace {
  std::vector<PretrainStep> steps;
  std::vector<PretrainEpoch> epochs;
};

// One minibatch of cropped images, row i of patches[k] is patch i.
struct PretrainBatch {
  std::vector<Matrix> patches;
  std::vector<int> labels;
};

PretrainBatch sample_pretrain_batch(const SyntheticWorld& world, int batch_size, int patches,
                                    std::mt19937_64& rng);

struct BatchLosses {
  double ce = 0.0;
  double soft = 0.0;
  double total = 0.0;
};

// Mean losses over the batch. When grad is non-null it receives
// d total / d student (same shape as the student).
BatchLosses pretrain_batch_loss(const PretrainBatch& batch, const EncoderParams& student,
                                const EncoderParams& teacher, int hard_patches, double lambda,
                                const SoftLossOptions& soft, EncoderParams* grad);

using PretrainCallback = std::function<void(const PretrainEpoch&)>;

// Resumes from model.pretrain_epochs_done. Every epoch draws from its own
// seeded stream so an interrupted run continues bitwise.
PretrainTrace pretrain(const SyntheticWorld& world, ModelState& model,
                       const PretrainSchedule& schedule, std::uint64_t seed,
                       const PretrainCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Episodes and metrics

enum class MetricKind { kAdaptive, kFixed, kEmd };

const char* metric_name(MetricKind kind);
MetricKind parse_metric(const std::string& name);

struct MetricOptions {
  MetricKind kind = MetricKind::kAdaptive;
  double fixed_epsilon = kDefaultEpsilon;
  double scale = 10.0;  // logits = scale * score
  SinkhornConfig solver{kDefaultEpsilon, 1e-9, 50000, true};

  void validate() const;
};

struct EpisodeOptions {
  int ways = 5;
  int shots = 1;
  int queries = 15;
  int set_size = 9;  // local features per image

  void validate() const;
};

struct EpisodeBatch {
  int ways = 0;
  int shots = 0;
  std::vector<Matrix> support;  // set_size x latent_dim each
  std::vector<int> support_labels;
  std::vector<Matrix> query;
  std::vector<int> query_labels;
};

EpisodeBatch crop_episode(const SyntheticWorld& world, const EpisodeTask& task, int set_size,
                          std::mt19937_64& rng);

struct EpisodeGradients {
  EncoderParams encoder;
  ModulateParams modulate;
};

struct EpisodeOutcome {
  double loss = 0.0;
  int correct = 0;
  int total = 0;
  double mean_epsilon = 0.0;
  double mean_iterations = 0.0;
  int max_iterations = 0;
};

// Cross-entropy of the query predictions. With grads non-null, fills the
// gradients of the mean loss; encoder gradients are skipped (left zero) when
// encoder_grads is false.
EpisodeOutcome episode_loss(const EpisodeBatch& batch, const ModelState& model,
                            const MetricOptions& metric, EpisodeGradients* grads,
                            bool encoder_grads = true);

// Softmax over scale * score(query, prototype_j).
Vector classify_query(const LocalFeatureSet& query, const std::vector<LocalFeatureSet>& prototypes,
                      const ModelState& model, const MetricOptions& metric);

// ---------------------------------------------------------------------------
// Meta-training

struct MetaSchedule {
  int phase1_epochs = 10;  // modulate only, encoder frozen
  int phase2_epochs = 0;   // joint
  int steps_per_epoch = 50;
  int tasks_per_step = 4;
  EpisodeOptions episode{5, 1, 5, 9};
  double modulate_lr = 1e-2;
  double encoder_lr = 1e-3;
  std::vector<int> lr_milestones;
  double lr_decay = 0.1;
  MetricOptions metric;
  double max_skip_rate = 0.01;

  void validate() const;
};

struct MetaEpoch {
  int epoch = 0;
  int phase = 1;
  double loss = 0.0;
  double accuracy = 0.0;
  double mean_epsilon = 0.0;
  double mean_iterations = 0.0;
  int tasks = 0;
  int skipped = 0;
};

struct MetaTrace {
  std::vector<MetaEpoch> epochs;
  int skipped = 0;
  int tasks = 0;
};

using MetaCallback = std::function<void(const MetaEpoch&)>;

MetaTrace meta_train(const SyntheticWorld& world, ModelState& model, const MetaSchedule& schedule,
                     std::uint64_t seed, const MetaCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  Split split = Split::kNovel;
  int episodes = 600;
  EpisodeOptions episode;
  MetricOptions metric;
  int threads = 0;  // 0 = hardware concurrency
  std::uint64_t seed = 0;
};

struct EvalResult {
  double mean_accuracy = 0.0;
  double ci95 = 0.0;
  int episodes = 0;
  std::int64_t predictions = 0;
  std::int64_t correct = 0;
  int skipped = 0;
  double mean_iterations = 0.0;
  std::vector<double> episode_accuracy;
};

// Episodes run concurrently on a read-only snapshot; each draws from its own
// seeded stream so results do not depend on the thread count.
EvalResult evaluate(const SyntheticWorld& world, const ModelState& model, const EvalOptions& options);

// Deterministic per-purpose stream derived from a run seed.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index);

// ---------------------------------------------------------------------------
// Gradient checks

struct GradCheckOptions {
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  double lambda = 0.1;
  double step = 3e-4;  // five-point central stencil
  double threshold = 1e-4;
  // Denominator floor of the relative error |a - f| / max(|a|, |f|, floor).
  double floor = 1e-8;
  int worst = 5;
};

struct GradEntry {
  std::string group;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::int64_t checked = 0;
  bool passed = false;
  bool encoder_gradient_zero = false;
  int solver_iterations = 0;  // most Sinkhorn iterations in any episode solve
  int redraws = 0;            // episodes rejected for exceeding the recorded window
  std::vector<GradEntry> worst;
};

// Builds a small seeded world, model and instance, then compares every
// trainable gradient of the pretraining loss and of the episodic loss with
// central differences.
GradCheckReport grad_check(const GradCheckOptions& options);

}  // namespace patchot

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "errors.hpp"

namespace patchot {

namespace {

constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kMetaStream = 2;
constexpr std::uint64_t kEvalStream = 3;
constexpr std::uint64_t kGradCheckStream = 4;
constexpr int kMaxGradCheckRedraws = 50;

int milestones_passed(const std::vector<int>& milestones, int epoch) {
  return static_cast<int>(std::count_if(milestones.begin(), milestones.end(),
                                        [epoch](int m) { return m <= epoch; }));
}

Vector softmax(const Vector& x) {
  const Vector e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::Index argmax(const Vector& x) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    if (x(i) > x(best)) best = i;
  }
  return best;
}

[[noreturn]] void diverged(const std::string& where, std::int64_t step, double ce, double soft) {
  std::ostringstream msg;
  msg << where << " diverged at step " << step << " (ce=" << ce << ", soft=" << soft << ")";
  throw Error(ErrorCode::kDivergence, msg.str());
}

const Matrix& require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::kDivergence, std::string("non-finite ") + what);
  return m;
}

void check_model_fits(const SyntheticWorld& world, const ModelState& model) {
  if (model.student.latent_dim() != world.latent_dim()) {
    throw Error(ErrorCode::kVersion, "model latent dimension " +
                                         std::to_string(model.student.latent_dim()) +
                                         " does not match the world (" +
                                         std::to_string(world.latent_dim()) + ")");
  }
  if (model.student.classes() != world.split_size(Split::kBase)) {
    throw Error(ErrorCode::kVersion, "model classifier has " +
                                         std::to_string(model.student.classes()) +
                                         " outputs but the world has " +
                                         std::to_string(world.split_size(Split::kBase)) +
                                         " base classes");
  }
}

struct PairScore {
  double score = 0.0;
  double epsilon = 0.0;
  std::optional<AdaptiveScoreTape> tape;
};

PairScore score_pair(const Matrix& q, const Matrix& p, const ModelState& model,
                     const MetricOptions& metric) {
  PairScore out;
  if (metric.kind == MetricKind::kEmd) {
    out.score = emd_score(LocalFeatureSet(q), LocalFeatureSet(p));
    return out;
  }
  out.epsilon = metric.kind == MetricKind::kAdaptive
                    ? predict_epsilon(q, p, model.modulate).epsilon
                    : metric.fixed_epsilon;
  out.tape.emplace(q, p, out.epsilon, metric.solver);
  out.score = out.tape->score();
  return out;
}

}  // namespace

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------

void PretrainSchedule::validate() const {
  if (epochs < 0) throw ConfigError("pretrain.epochs", "must be nonnegative");
  if (warmup_epochs < 0) throw ConfigError("pretrain.warmup_epochs", "must be nonnegative");
  if (steps_per_epoch < 1) throw ConfigError("pretrain.steps_per_epoch", "must be positive");
  if (batch_size < 1) throw ConfigError("pretrain.batch_size", "must be positive");
  if (patches < 2) throw ConfigError("pretrain.patches", "need at least 2 patches");
  if (hard_patches < 1 || hard_patches >= patches) {
    throw ConfigError("pretrain.hard_patches", "must satisfy 0 < l < patches");
  }
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("pretrain.lambda", "must be finite and nonnegative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("pretrain.momentum", "must lie in [0, 1)");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("pretrain.learning_rate", "must be finite and nonnegative");
  }
  if (!(lr_decay > 0)) throw ConfigError("pretrain.lr_decay", "must be positive");
  if (!(soft.temperature > 0)) throw ConfigError("pretrain.temperature", "must be positive");
}

double PretrainSchedule::learning_rate_at(int epoch) const {
  return learning_rate * std::pow(lr_decay, milestones_passed(lr_milestones, epoch));
}

PretrainBatch sample_pretrain_batch(const SyntheticWorld& world, int batch_size, int patches,
                                    std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, world.split_size(Split::kBase) - 1);
  PretrainBatch batch;
  for (int i = 0; i < batch_size; ++i) {
    const int cls = world.split_begin(Split::kBase) + pick(rng);
    const ImageSample image = sample_image(world, cls, rng);
    batch.patches.push_back(crop_patches(world, image, patches, rng).latents);
    batch.labels.push_back(cls);
  }
  return batch;
}

BatchLosses pretrain_batch_loss(const PretrainBatch& batch, const EncoderParams& student,
                                const EncoderParams& teacher, int hard_patches, double lambda,
                                const SoftLossOptions& soft, EncoderParams* grad) {
  if (batch.patches.empty()) throw_invalid("empty pretraining batch");
  const double inv = 1.0 / static_cast<double>(batch.patches.size());
  BatchLosses out;
  for (size_t k = 0; k < batch.patches.size(); ++k) {
    EncoderTrace trace;
    const Matrix f = encode(student, batch.patches[k], &trace);
    const Matrix zs = require_finite(head_logits(student, f), "student logits");
    const Matrix zt = require_finite(head_logits(teacher, encode(teacher, batch.patches[k])), "teacher logits");
    const PretrainLosses l = pretrain_losses(zs, zt, batch.labels[k], hard_patches, lambda, soft);
    out.ce += inv * l.ce;
    out.soft += inv * l.soft;
    out.total += inv * l.total;
    if (grad != nullptr) {
      const Matrix f_bar = head_backward(student, f, inv * l.student_grad, *grad);
      encode_backward(student, trace, f_bar, *grad);
    }
  }
  return out;
}

PretrainTrace pretrain(const SyntheticWorld& world, ModelState& model,
                       const PretrainSchedule& schedule, std::uint64_t seed,
                       const PretrainCallback& on_epoch) {
  schedule.validate();
  check_model_fits(world, model);
  PretrainTrace trace;
  for (int epoch = model.pretrain_epochs_done; epoch < schedule.epochs; ++epoch) {
    std::mt19937_64 rng = derived_rng(seed, kPretrainStream, static_cast<std::uint64_t>(epoch));
    const bool soft_active = epoch >= schedule.warmup_epochs;
    if (soft_active && !model.teacher_initialized) {
      model.teacher = model.student;
      model.teacher_initialized = true;
    }
    const double lr = schedule.learning_rate_at(epoch);
    model.learning_rate = lr;
    const double lambda = soft_active && schedule.use_soft_loss ? schedule.lambda : 0.0;

    PretrainEpoch summary;
    summary.epoch = epoch;
    summary.soft_active = soft_active && schedule.use_soft_loss;
    summary.learning_rate = lr;
    for (int s = 0; s < schedule.steps_per_epoch; ++s) {
      const PretrainBatch batch =
          sample_pretrain_batch(world, schedule.batch_size, schedule.patches, rng);
      EncoderParams grad = EncoderParams::zeros_like(model.student);
      const EncoderParams& teacher = model.teacher_initialized ? model.teacher : model.student;
      const BatchLosses losses = pretrain_batch_loss(batch, model.student, teacher,
                                                     schedule.hard_patches, lambda, schedule.soft,
                                                     &grad);
      if (!std::isfinite(losses.total) || !grad.all_finite()) {
        diverged("pretraining", model.pretrain_steps, losses.ce, losses.soft);
      }
      model.student.add_scaled(grad, -lr);
      if (!model.student.all_finite()) diverged("pretraining", model.pretrain_steps, losses.ce, losses.soft);
      if (model.teacher_initialized) {
        model.teacher.assign(ema_update(model.teacher.flat(), model.student.flat(), schedule.momentum));
      }
      trace.steps.push_back({model.pretrain_steps, epoch, losses.ce, losses.soft, losses.total});
      ++model.pretrain_steps;
      summary.ce += losses.ce / schedule.steps_per_epoch;
      summary.soft += losses.soft / schedule.steps_per_epoch;
      summary.total += losses.total / schedule.steps_per_epoch;
    }
    ++model.pretrain_epochs_done;
    trace.epochs.push_back(summary);
    if (on_epoch) on_epoch(summary);
  }
  return trace;
}

// ---------------------------------------------------------------------------

const char* metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kAdaptive: return "adaptive";
    case MetricKind::kFixed: return "fixed";
    case MetricKind::kEmd: return "emd";
  }
  return "?";
}

MetricKind parse_metric(const std::string& name) {
  if (name == "adaptive") return MetricKind::kAdaptive;
  if (name == "fixed") return MetricKind::kFixed;
  if (name == "emd") return MetricKind::kEmd;
  throw ConfigError("metric", "expected adaptive, fixed or emd, got '" + name + "'");
}

void MetricOptions::validate() const {
  if (!(fixed_epsilon > 0) || !std::isfinite(fixed_epsilon)) {
    throw ConfigError("metric.fixed_epsilon", "must be positive");
  }
  if (!(scale > 0) || !std::isfinite(scale)) throw ConfigError("metric.scale", "must be positive");
  if (!(solver.tolerance > 0)) throw ConfigError("metric.tolerance", "must be positive");
  if (solver.max_iterations < 1) throw ConfigError("metric.max_iterations", "must be positive");
}

void EpisodeOptions::validate() const {
  if (ways < 1) throw ConfigError("episode.ways", "must be positive");
  if (shots < 1) throw ConfigError("episode.shots", "must be positive");
  if (queries < 1) throw ConfigError("episode.queries", "must be positive");
  if (set_size < 1) throw ConfigError("episode.set_size", "must be positive");
}

EpisodeBatch crop_episode(const SyntheticWorld& world, const EpisodeTask& task, int set_size,
                          std::mt19937_64& rng) {
  EpisodeBatch batch;
  batch.ways = task.ways;
  batch.shots = task.shots;
  for (const ImageSample& image : task.support) {
    batch.support.push_back(crop_patches(world, image, set_size, rng).latents);
    batch.support_labels.push_back(image.label);
  }
  for (const ImageSample& image : task.query) {
    batch.query.push_back(crop_patches(world, image, set_size, rng).latents);
    batch.query_labels.push_back(image.label);
  }
  return batch;
}

EpisodeOutcome episode_loss(const EpisodeBatch& batch, const ModelState& model,
                            const MetricOptions& metric, EpisodeGradients* grads,
                            bool encoder_grads) {
  if (batch.query.empty() || batch.support.empty()) throw_invalid("episode has no images");
  if (grads != nullptr && metric.kind == MetricKind::kEmd) {
    throw_invalid("the exact transport metric has no gradient");
  }
  const EncoderParams& enc = model.student;
  const int ways = batch.ways;

  std::vector<EncoderTrace> support_trace(batch.support.size());
  std::vector<LocalFeatureSet> support_sets;
  for (size_t k = 0; k < batch.support.size(); ++k) {
    support_sets.emplace_back(require_finite(encode(enc, batch.support[k], &support_trace[k]), "support features"));
  }
  std::vector<Matrix> prototypes;
  for (int j = 0; j < ways; ++j) {
    prototypes.push_back(
        build_prototype(support_sets, batch.support_labels, j, batch.shots).features());
  }

  if (grads != nullptr) {
    grads->encoder = EncoderParams::zeros_like(enc);
    grads->modulate = ModulateParams::zeros_like(model.modulate);
  }
  std::vector<Matrix> proto_bar(static_cast<size_t>(ways));
  for (auto& p : proto_bar) p = Matrix::Zero(prototypes[0].rows(), prototypes[0].cols());

  EpisodeOutcome out;
  const double inv_q = 1.0 / static_cast<double>(batch.query.size());
  double eps_sum = 0.0, iter_sum = 0.0;
  int solves = 0;
  for (size_t qi = 0; qi < batch.query.size(); ++qi) {
    EncoderTrace qtrace;
    const Matrix qf =
        LocalFeatureSet(require_finite(encode(enc, batch.query[qi], &qtrace), "query features")).features();
    std::vector<PairScore> pairs;
    Vector logits(ways);
    for (int j = 0; j < ways; ++j) {
      pairs.push_back(score_pair(qf, prototypes[static_cast<size_t>(j)], model, metric));
      logits(j) = metric.scale * pairs.back().score;
      if (pairs.back().tape) {
        eps_sum += pairs.back().epsilon;
        iter_sum += pairs.back().tape->plan().iterations;
        out.max_iterations = std::max(out.max_iterations, pairs.back().tape->plan().iterations);
        ++solves;
      }
    }
    const Vector p = softmax(logits);
    const int label = batch.query_labels[qi];
    out.loss -= inv_q * std::log(std::max(p(label), 1e-300));
    out.correct += argmax(logits) == label;
    ++out.total;
    if (grads == nullptr) continue;

    Matrix q_bar = Matrix::Zero(qf.rows(), qf.cols());
    for (int j = 0; j < ways; ++j) {
      const double logit_bar = inv_q * (p(j) - (j == label ? 1.0 : 0.0));
      const ScoreGradients sg = pairs[static_cast<size_t>(j)].tape->backward(metric.scale * logit_bar);
      q_bar += sg.u;
      proto_bar[static_cast<size_t>(j)] += sg.v;
      if (metric.kind == MetricKind::kAdaptive) {
        const ModulateGradients mg =
            epsilon_gradient(qf, prototypes[static_cast<size_t>(j)], model.modulate, sg.epsilon);
        grads->modulate.add_scaled(mg.params, 1.0);
        q_bar += mg.u;
        proto_bar[static_cast<size_t>(j)] += mg.v;
      }
    }
    if (encoder_grads) encode_backward(enc, qtrace, q_bar, grads->encoder);
  }
  if (grads != nullptr && encoder_grads) {
    for (size_t k = 0; k < batch.support.size(); ++k) {
      const int label = batch.support_labels[k];
      encode_backward(enc, support_trace[k],
                      proto_bar[static_cast<size_t>(label)] / static_cast<double>(batch.shots),
                      grads->encoder);
    }
  }
  out.mean_epsilon = solves > 0 ? eps_sum / solves : 0.0;
  out.mean_iterations = solves > 0 ? iter_sum / solves : 0.0;
  return out;
}

Vector classify_query(const LocalFeatureSet& query, const std::vector<LocalFeatureSet>& prototypes,
                      const ModelState& model, const MetricOptions& metric) {
  if (prototypes.empty()) throw_invalid("need at least one prototype");
  Vector logits(static_cast<Eigen::Index>(prototypes.size()));
  for (size_t j = 0; j < prototypes.size(); ++j) {
    logits(static_cast<Eigen::Index>(j)) =
        metric.scale * score_pair(query.features(), prototypes[j].features(), model, metric).score;
  }
  return softmax(logits);
}

// ---------------------------------------------------------------------------

void MetaSchedule::validate() const {
  if (phase1_epochs < 0) throw ConfigError("meta.phase1_epochs", "must be nonnegative");
  if (phase2_epochs < 0) throw ConfigError("meta.phase2_epochs", "must be nonnegative");
  if (steps_per_epoch < 1) throw ConfigError("meta.steps_per_epoch", "must be positive");
  if (tasks_per_step < 1) throw ConfigError("meta.tasks_per_step", "must be positive");
  if (!(modulate_lr >= 0)) throw ConfigError("meta.modulate_lr", "must be nonnegative");
  if (!(encoder_lr >= 0)) throw ConfigError("meta.encoder_lr", "must be nonnegative");
  if (!(lr_decay > 0)) throw ConfigError("meta.lr_decay", "must be positive");
  if (!(max_skip_rate >= 0 && max_skip_rate <= 1)) throw ConfigError("meta.max_skip_rate", "must lie in [0, 1]");
  if (metric.kind == MetricKind::kEmd) throw ConfigError("meta.metric", "the exact metric cannot be trained");
  episode.validate();
  metric.validate();
}

MetaTrace meta_train(const SyntheticWorld& world, ModelState& model, const MetaSchedule& schedule,
                     std::uint64_t seed, const MetaCallback& on_epoch) {
  schedule.validate();
  check_model_fits(world, model);
  const EpisodeOptions& ep = schedule.episode;
  MetaTrace trace;
  const int total_epochs = schedule.phase1_epochs + schedule.phase2_epochs;
  for (int epoch = model.meta_epochs_done; epoch < total_epochs; ++epoch) {
    std::mt19937_64 rng = derived_rng(seed, kMetaStream, static_cast<std::uint64_t>(epoch));
    const int phase = epoch < schedule.phase1_epochs ? 1 : 2;
    const int phase_epoch = phase == 1 ? epoch : epoch - schedule.phase1_epochs;
    const double factor = std::pow(schedule.lr_decay, milestones_passed(schedule.lr_milestones, phase_epoch));
    const double mod_lr = schedule.modulate_lr * factor;
    const double enc_lr = schedule.encoder_lr * factor;
    model.learning_rate = phase == 1 ? mod_lr : enc_lr;

    MetaEpoch summary;
    summary.epoch = epoch;
    summary.phase = phase;
    int correct = 0, predictions = 0, used = 0;
    for (int s = 0; s < schedule.steps_per_epoch; ++s) {
      EncoderParams enc_grad = EncoderParams::zeros_like(model.student);
      ModulateParams mod_grad = ModulateParams::zeros_like(model.modulate);
      for (int t = 0; t < schedule.tasks_per_step; ++t) {
        const EpisodeTask task = sample_episode(world, Split::kBase, ep.ways, ep.shots, ep.queries, rng);
        const EpisodeBatch batch = crop_episode(world, task, ep.set_size, rng);
        ++summary.tasks;
        EpisodeGradients g;
        EpisodeOutcome out;
        try {
          out = episode_loss(batch, model, schedule.metric, &g, phase == 2);
        } catch (const NonConvergenceError&) {
          ++summary.skipped;
          continue;
        }
        if (!std::isfinite(out.loss)) diverged("meta-training", model.meta_steps, out.loss, 0.0);
        const double w = 1.0 / schedule.tasks_per_step;
        enc_grad.add_scaled(g.encoder, w);
        mod_grad.add_scaled(g.modulate, w);
        summary.loss += out.loss;
        summary.mean_epsilon += out.mean_epsilon;
        summary.mean_iterations += out.mean_iterations;
        correct += out.correct;
        predictions += out.total;
        ++used;
      }
      if (!enc_grad.all_finite() || !mod_grad.all_finite()) {
        diverged("meta-training", model.meta_steps, summary.loss, 0.0);
      }
      if (schedule.metric.kind == MetricKind::kAdaptive) model.modulate.add_scaled(mod_grad, -mod_lr);
      if (phase == 2) {
        // The classifier head is not part of f and receives no episodic gradient.
        model.student.add_scaled(enc_grad, -enc_lr);
      }
      if (!model.student.all_finite() || !model.modulate.all_finite()) {
        diverged("meta-training", model.meta_steps, summary.loss, 0.0);
      }
      ++model.meta_steps;
    }
    if (used > 0) {
      summary.loss /= used;
      summary.mean_epsilon /= used;
      summary.mean_iterations /= used;
    }
    summary.accuracy = predictions > 0 ? static_cast<double>(correct) / predictions : 0.0;
    trace.tasks += summary.tasks;
    trace.skipped += summary.skipped;
    ++model.meta_epochs_done;
    trace.epochs.push_back(summary);
    if (on_epoch) on_epoch(summary);
    if (trace.skipped > schedule.max_skip_rate * trace.tasks) {
      throw Error(ErrorCode::kNonConvergence,
                  "meta-training skipped " + std::to_string(trace.skipped) + " of " +
                      std::to_string(trace.tasks) + " episodes for solver non-convergence");
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------

EvalResult evaluate(const SyntheticWorld& world, const ModelState& model, const EvalOptions& options) {
  if (options.episodes < 1) throw ConfigError("eval.episodes", "must be positive");
  options.episode.validate();
  options.metric.validate();
  check_model_fits(world, model);
  const EpisodeOptions& ep = options.episode;
  const int n = options.episodes;
  std::vector<double> accuracy(static_cast<size_t>(n), 0.0);
  std::vector<double> iterations(static_cast<size_t>(n), 0.0);
  std::vector<int> correct(static_cast<size_t>(n), 0), total(static_cast<size_t>(n), 0);
  std::vector<char> skipped(static_cast<size_t>(n), 0);

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        std::mt19937_64 rng = derived_rng(options.seed, kEvalStream, static_cast<std::uint64_t>(i));
        const EpisodeTask task = sample_episode(world, options.split, ep.ways, ep.shots, ep.queries, rng);
        const EpisodeBatch batch = crop_episode(world, task, ep.set_size, rng);
        const EpisodeOutcome out = episode_loss(batch, model, options.metric, nullptr);
        const auto k = static_cast<size_t>(i);
        correct[k] = out.correct;
        total[k] = out.total;
        accuracy[k] = static_cast<double>(out.correct) / out.total;
        iterations[k] = out.mean_iterations;
      } catch (const NonConvergenceError&) {
        skipped[static_cast<size_t>(i)] = 1;
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  int threads = options.threads > 0 ? options.threads
                                    : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalResult result;
  double sum = 0.0, iter_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(i);
    if (skipped[k]) {
      ++result.skipped;
      continue;
    }
    result.episode_accuracy.push_back(accuracy[k]);
    sum += accuracy[k];
    iter_sum += iterations[k];
    result.correct += correct[k];
    result.predictions += total[k];
  }
  result.episodes = static_cast<int>(result.episode_accuracy.size());
  if (result.episodes > 0) {
    result.mean_accuracy = sum / result.episodes;
    result.mean_iterations = iter_sum / result.episodes;
  }
  if (result.episodes > 1) {
    double ss = 0.0;
    for (double a : result.episode_accuracy) ss += (a - result.mean_accuracy) * (a - result.mean_accuracy);
    const double stderr_ = std::sqrt(ss / (result.episodes - 1) / result.episodes);
    result.ci95 = 1.96 * stderr_;
  }
  return result;
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const GradCheckOptions& options) {
  std::mt19937_64 rng = derived_rng(options.seed, kGradCheckStream, 0);
  WorldConfig wc;
  wc.base_classes = 4;
  wc.val_classes = 0;
  wc.novel_classes = 2;
  wc.latent_dim = 4;
  wc.margin = 0.5;
  wc.seed = options.seed;
  const SyntheticWorld world = generate_world(wc);

  ModelConfig mc;
  mc.encoder_hidden = 5;
  mc.feature_dim = 3;
  mc.modulate_hidden = 4;
  ModelState model = init_model(wc.latent_dim, wc.base_classes, mc, options.seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Vector teacher = model.student.flat();
  for (Eigen::Index i = 0; i < teacher.size(); ++i) teacher(i) += noise(rng);
  model.teacher.assign(teacher);
  model.teacher_initialized = true;
  for (Eigen::Index i = 0; i < model.modulate.w2.size(); ++i) model.modulate.w2(i) = noise(rng);
  model.modulate.b2 = std::log(3.0);

  const PretrainBatch pre = sample_pretrain_batch(world, 2, 4, rng);
  const SoftLossOptions soft{SoftWeighting::kUniCon, 1.0};
  MetricOptions metric;
  metric.scale = 5.0;
  metric.solver.tolerance = 1e-13;
  metric.solver.max_iterations = 100000;

  // The reverse pass is exact only when every solve fits in the recorded
  // window, so episodes that need longer solves are redrawn.
  GradCheckReport report;
  EpisodeBatch episode;
  for (;; ++report.redraws) {
    if (report.redraws == kMaxGradCheckRedraws) {
      throw Error(ErrorCode::kDegenerate, "gradient check: no episode converged within the recorded window");
    }
    const EpisodeTask task = sample_episode(world, Split::kBase, 2, 2, 1, rng);
    episode = crop_episode(world, task, 3, rng);
    if (episode_loss(episode, model, metric, nullptr).max_iterations <= kMaxRecordedIterations) break;
  }
  std::vector<GradEntry> entries;
  const double h = options.step;
  auto compare = [&](const std::string& group, Eigen::Index index, double analytic, double numeric) {
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), options.floor});
    entries.push_back({group, index, analytic, numeric, rel});
    report.max_relative_error = std::max(report.max_relative_error, rel);
    ++report.checked;
  };

  // Five-point central stencil along coordinate i of theta.
  auto derivative = [&](const Vector& theta, Eigen::Index i, const std::function<double(const Vector&)>& f) {
    Vector t = theta;
    auto at = [&](double offset) {
      t(i) = theta(i) + offset;
      return f(t);
    };
    return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  };

  // Pretraining loss with respect to every student parameter.
  {
    EncoderParams grad = EncoderParams::zeros_like(model.student);
    pretrain_batch_loss(pre, model.student, model.teacher, 1, options.lambda, soft, &grad);
    const Vector analytic = grad.flat();
    const Vector theta = model.student.flat();
    EncoderParams probe = model.student;
    const auto loss = [&](const Vector& t) {
      probe.assign(t);
      return pretrain_batch_loss(pre, probe, model.teacher, 1, options.lambda, soft, nullptr).total;
    };
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      compare("pretrain.student", i, analytic(i), derivative(theta, i, loss));
    }
  }

  // Episodic loss through the metric, the modulate predictor and f.
  EpisodeGradients g;
  report.solver_iterations = episode_loss(episode, model, metric, &g, !options.freeze_encoder).max_iterations;
  const Vector enc_analytic = g.encoder.flat();
  report.encoder_gradient_zero = enc_analytic.cwiseAbs().maxCoeff() == 0.0;
  if (!options.freeze_encoder) {
    const Vector theta = model.student.flat();
    ModelState probe = model;
    const auto loss = [&](const Vector& t) {
      probe.student.assign(t);
      return episode_loss(episode, probe, metric, nullptr).loss;
    };
    for (Eigen::Index i = 0; i < model.student.feature_size(); ++i) {
      compare("episode.encoder", i, enc_analytic(i), derivative(theta, i, loss));
    }
  }
  {
    const Vector analytic = g.modulate.flat();
    const Vector theta = model.modulate.flat();
    ModelState probe = model;
    const auto loss = [&](const Vector& t) {
      probe.modulate.assign(t);
      return episode_loss(episode, probe, metric, nullptr).loss;
    };
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      compare("episode.modulate", i, analytic(i), derivative(theta, i, loss));
    }
  }

  std::stable_sort(entries.begin(), entries.end(),
                   [](const GradEntry& a, const GradEntry& b) { return a.relative_error > b.relative_error; });
  entries.resize(std::min(entries.size(), static_cast<size_t>(std::max(options.worst, 0))));
  report.worst = std::move(entries);
  report.passed = report.max_relative_error <= options.threshold;
  return report;
}

}  // namespace patchot

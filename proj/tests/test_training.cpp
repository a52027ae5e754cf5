// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "errors.hpp"
#include "test_util.hpp"
#include "training.hpp"

namespace patchot {
namespace {

WorldConfig small_world(std::uint64_t seed) {
  WorldConfig c;
  c.base_classes = 10;
  c.val_classes = 0;
  c.novel_classes = 6;
  c.latent_dim = 8;
  c.margin = 1.5;
  c.seed = seed;
  return c;
}

WorldConfig separable_world(std::uint64_t seed) {
  WorldConfig c = small_world(seed);
  c.mean_scale = 3.0;
  c.margin = 4.0;
  c.intra_class_sigma = 0.05;
  c.crop_sigma = 0.05;
  c.semantic_flip_prob = 0.0;
  return c;
}

ModelConfig small_model() {
  ModelConfig m;
  m.encoder_hidden = 16;
  m.feature_dim = 8;
  m.modulate_hidden = 8;
  return m;
}

PretrainSchedule short_schedule() {
  PretrainSchedule s;
  s.epochs = 4;
  s.warmup_epochs = 1;
  s.steps_per_epoch = 10;
  s.batch_size = 8;
  s.learning_rate = 0.1;
  return s;
}

double linf(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

// tanh(a x) / a is the identity to within a^2 |x|^3 / 3.
ModelState oracle_model(int dim, int classes) {
  std::mt19937_64 rng(0);
  ModelConfig mc;
  mc.encoder_hidden = dim;
  mc.feature_dim = dim;
  mc.modulate_hidden = 4;
  ModelState m = init_model(dim, classes, mc, 0);
  const double a = 1e-3;
  m.student.w1 = a * Matrix::Identity(dim, dim);
  m.student.w2 = (1.0 / a) * Matrix::Identity(dim, dim);
  return m;
}

TEST(Encoder, FlatAssignRoundTrip) {
  std::mt19937_64 rng(1);
  const EncoderParams p = EncoderParams::init(5, 7, 3, 4, rng);
  EXPECT_EQ(p.size(), 7 * 5 + 7 + 3 * 7 + 3 + 4 * 3 + 4);
  EXPECT_EQ(p.feature_size(), 7 * 5 + 7 + 3 * 7 + 3);
  EncoderParams q = EncoderParams::zeros_like(p);
  q.assign(p.flat());
  EXPECT_EQ(q.flat(), p.flat());
  EXPECT_TRUE(q.same_shape(p));
  EXPECT_THROW(EncoderParams::init(5, 7, 1, 4, rng), Error);
}

TEST(Encoder, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  EncoderParams p = EncoderParams::init(4, 6, 3, 5, rng);
  const Matrix x = test::random_gaussian(3, 4, rng);
  const Matrix w = test::random_gaussian(3, 5, rng);  // L = sum(w .* logits)
  auto loss = [&](const EncoderParams& q) { return (head_logits(q, encode(q, x)).array() * w.array()).sum(); };

  EncoderTrace trace;
  const Matrix f = encode(p, x, &trace);
  EncoderParams grad = EncoderParams::zeros_like(p);
  const Matrix f_bar = head_backward(p, f, w, grad);
  encode_backward(p, trace, f_bar, grad);

  const Vector theta = p.flat(), analytic = grad.flat();
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vector t = theta;
    t(i) += h;
    EncoderParams up = p;
    up.assign(t);
    t(i) -= 2 * h;
    EncoderParams down = p;
    down.assign(t);
    const double numeric = (loss(up) - loss(down)) / (2 * h);
    EXPECT_LE(test::relative_error(analytic(i), numeric), 1e-6) << "index " << i;
  }
}

TEST(Pretrain, ZeroLambdaMatchesCeOnly) {
  const SyntheticWorld w = generate_world(small_world(3));
  const ModelState init = init_model(8, 10, small_model(), 4);

  PretrainSchedule with_zero = short_schedule();
  with_zero.lambda = 0.0;
  PretrainSchedule ce_only = short_schedule();
  ce_only.use_soft_loss = false;

  ModelState a = init, b = init;
  const PretrainTrace ta = pretrain(w, a, with_zero, 9);
  const PretrainTrace tb = pretrain(w, b, ce_only, 9);
  EXPECT_EQ(a.student.flat(), b.student.flat());
  ASSERT_EQ(ta.steps.size(), tb.steps.size());
  for (size_t i = 0; i < ta.steps.size(); ++i) EXPECT_EQ(ta.steps[i].ce, tb.steps[i].ce);
}

TEST(Pretrain, TeacherCopiesStudentAfterWarmup) {
  const SyntheticWorld w = generate_world(small_world(3));
  ModelState m = init_model(8, 10, small_model(), 4);
  PretrainSchedule s = short_schedule();
  s.epochs = 2;
  s.warmup_epochs = 2;
  pretrain(w, m, s, 1);
  EXPECT_FALSE(m.teacher_initialized);

  // The first soft step starts from a copy of the student, then one EMA step.
  const EncoderParams student_before = m.student;
  s.epochs = 3;
  s.steps_per_epoch = 1;
  pretrain(w, m, s, 1);
  EXPECT_TRUE(m.teacher_initialized);
  EXPECT_EQ(m.teacher.flat(), ema_update(student_before.flat(), m.student.flat(), s.momentum));
  EXPECT_NE(m.student.flat(), student_before.flat());
}

TEST(Pretrain, TeacherMovesByAtMostOneMinusMomentum) {
  const SyntheticWorld w = generate_world(small_world(5));
  ModelState m = init_model(8, 10, small_model(), 6);
  PretrainSchedule s = short_schedule();
  s.steps_per_epoch = 1;
  s.warmup_epochs = 1;
  s.momentum = 0.999;
  s.lambda = 0.5;
  s.epochs = 2;
  pretrain(w, m, s, 2);
  ASSERT_TRUE(m.teacher_initialized);
  for (int epoch = 3; epoch <= 30; ++epoch) {
    const Vector teacher_before = m.teacher.flat();
    s.epochs = epoch;
    pretrain(w, m, s, 2);
    const double moved = linf(m.teacher.flat() - teacher_before);
    const double gap = linf(m.student.flat() - teacher_before);
    EXPECT_LE(moved, (1.0 - s.momentum) * gap * (1.0 + 1e-12)) << "epoch " << epoch;
    EXPECT_GT(moved, 0.0);
  }
}

TEST(Pretrain, CrossEntropyDecreasesOnSeparableWorld) {
  const SyntheticWorld w = generate_world(separable_world(7));
  ModelState m = init_model(8, 10, small_model(), 8);
  PretrainSchedule s = short_schedule();
  s.epochs = 4;
  s.steps_per_epoch = 50;
  const PretrainTrace t = pretrain(w, m, s, 3);
  ASSERT_EQ(t.steps.size(), 200u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += t.steps[static_cast<size_t>(i)].ce / 10;
    last += t.steps[t.steps.size() - 1 - static_cast<size_t>(i)].ce / 10;
  }
  EXPECT_LT(last, first);
  for (const PretrainStep& step : t.steps) EXPECT_TRUE(std::isfinite(step.total));
}

TEST(Pretrain, ResumeIsBitwise) {
  const SyntheticWorld w = generate_world(small_world(3));
  const ModelState init = init_model(8, 10, small_model(), 4);
  PretrainSchedule s = short_schedule();
  ModelState whole = init;
  pretrain(w, whole, s, 5);

  ModelState split = init;
  PretrainSchedule first = s;
  first.epochs = 2;
  pretrain(w, split, first, 5);
  const ModelState restored = checkpoint_from_string(checkpoint_to_string(split));
  ModelState resumed = restored;
  pretrain(w, resumed, s, 5);
  EXPECT_TRUE(bitwise_equal(whole, resumed));
}

TEST(Pretrain, DivergenceAborts) {
  const SyntheticWorld w = generate_world(small_world(3));
  ModelState m = init_model(8, 10, small_model(), 4);
  PretrainSchedule s = short_schedule();
  s.learning_rate = 1e300;
  try {
    pretrain(w, m, s, 1);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
}

TEST(Pretrain, ScheduleValidation) {
  PretrainSchedule s;
  s.momentum = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = PretrainSchedule{};
  s.hard_patches = 5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = PretrainSchedule{};
  s.lr_milestones = {5, 10};
  EXPECT_EQ(s.learning_rate_at(4), s.learning_rate);
  EXPECT_NEAR(s.learning_rate_at(5), 0.1 * s.learning_rate, 1e-15);
  EXPECT_NEAR(s.learning_rate_at(12), 0.01 * s.learning_rate, 1e-15);
}

TEST(ClassifyQuery, SinglePrototypeIsCertain) {
  std::mt19937_64 rng(4);
  const ModelState m = init_model(8, 10, small_model(), 1);
  const LocalFeatureSet q(test::random_gaussian(4, 8, rng));
  const std::vector<LocalFeatureSet> protos{LocalFeatureSet(test::random_gaussian(4, 8, rng))};
  const Vector p = classify_query(q, protos, m, MetricOptions{});
  ASSERT_EQ(p.size(), 1);
  EXPECT_EQ(p(0), 1.0);
}

TEST(ClassifyQuery, IdenticalPrototypesAreUniform) {
  std::mt19937_64 rng(5);
  const ModelState m = init_model(8, 10, small_model(), 1);
  const LocalFeatureSet q(test::random_gaussian(4, 8, rng));
  const LocalFeatureSet proto(test::random_gaussian(4, 8, rng));
  const std::vector<LocalFeatureSet> protos(4, proto);
  const Vector p = classify_query(q, protos, m, MetricOptions{});
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(p(j), 0.25, 1e-15);
}

TEST(ClassifyQuery, MatchingPrototypeWins) {
  std::mt19937_64 rng(6);
  const ModelState m = init_model(8, 10, small_model(), 1);
  std::vector<LocalFeatureSet> protos;
  for (int j = 0; j < 5; ++j) {
    // Each prototype lives near its own coordinate axis.
    Matrix f = 0.05 * test::random_gaussian(4, 8, rng);
    f.col(j).array() += 1.0;
    protos.emplace_back(f);
  }
  for (MetricKind kind : {MetricKind::kAdaptive, MetricKind::kFixed, MetricKind::kEmd}) {
    MetricOptions opts;
    opts.kind = kind;
    const Vector p = classify_query(protos[2], protos, m, opts);
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    EXPECT_EQ(best, 2) << metric_name(kind);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  }
}

TEST(Episode, EmdHasNoGradient) {
  const SyntheticWorld w = generate_world(small_world(1));
  const ModelState m = init_model(8, 10, small_model(), 1);
  std::mt19937_64 rng(3);
  const EpisodeBatch b = crop_episode(w, sample_episode(w, Split::kNovel, 3, 1, 2, rng), 4, rng);
  MetricOptions emd;
  emd.kind = MetricKind::kEmd;
  EpisodeGradients g;
  EXPECT_THROW(episode_loss(b, m, emd, &g), Error);
  const EpisodeOutcome o = episode_loss(b, m, emd, nullptr);
  EXPECT_EQ(o.total, 6);
  EXPECT_TRUE(std::isfinite(o.loss));
}

MetaSchedule short_meta() {
  MetaSchedule s;
  s.phase1_epochs = 3;
  s.phase2_epochs = 0;
  s.steps_per_epoch = 5;
  s.tasks_per_step = 2;
  s.episode = {3, 1, 3, 4};
  s.modulate_lr = 0.05;
  return s;
}

TEST(MetaTrain, PhaseOneFreezesEncoder) {
  const SyntheticWorld w = generate_world(small_world(2));
  ModelState m = init_model(8, 10, small_model(), 3);
  const ModelState before = m;
  const MetaTrace t = meta_train(w, m, short_meta(), 4);
  EXPECT_EQ(m.student.flat(), before.student.flat());
  EXPECT_EQ(m.teacher.flat(), before.teacher.flat());
  EXPECT_NE(m.modulate.flat(), before.modulate.flat());
  ASSERT_EQ(t.epochs.size(), 3u);
  for (const MetaEpoch& e : t.epochs) EXPECT_EQ(e.phase, 1);
}

TEST(MetaTrain, PhaseTwoUpdatesEncoder) {
  const SyntheticWorld w = generate_world(small_world(2));
  ModelState m = init_model(8, 10, small_model(), 3);
  MetaSchedule s = short_meta();
  s.phase1_epochs = 1;
  s.phase2_epochs = 1;
  const ModelState before = m;
  const MetaTrace t = meta_train(w, m, s, 4);
  EXPECT_NE(m.student.flat(), before.student.flat());
  ASSERT_EQ(t.epochs.size(), 2u);
  EXPECT_EQ(t.epochs[1].phase, 2);
}

TEST(MetaTrain, ZeroLearningRateLeavesAccuracyFlat) {
  // Signs of consecutive accuracy changes, pooled over seeds, under a
  // two-sided binomial sign test.
  int up = 0, down = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SyntheticWorld w = generate_world(small_world(20 + seed));
    ModelState m = init_model(8, 10, small_model(), seed);
    const ModelState before = m;
    MetaSchedule s = short_meta();
    s.phase1_epochs = 4;
    s.phase2_epochs = 2;
    s.modulate_lr = 0.0;
    s.encoder_lr = 0.0;
    const MetaTrace t = meta_train(w, m, s, seed);
    EXPECT_TRUE(bitwise_equal(m, before) || m.meta_steps > 0);
    EXPECT_EQ(m.student.flat(), before.student.flat());
    EXPECT_EQ(m.modulate.flat(), before.modulate.flat());
    for (size_t i = 1; i < t.epochs.size(); ++i) {
      const double d = t.epochs[i].accuracy - t.epochs[i - 1].accuracy;
      up += d > 0;
      down += d < 0;
    }
  }
  const int n = up + down, k = std::min(up, down);
  double tail = 0.0;
  for (int i = 0; i <= k; ++i) tail += std::exp(std::lgamma(n + 1) - std::lgamma(i + 1) - std::lgamma(n - i + 1) - n * std::log(2.0));
  EXPECT_GT(std::min(1.0, 2.0 * tail), 0.05) << up << " up, " << down << " down";
}

TEST(MetaTrain, SeparableWorldDoesNotLoseAccuracy) {
  double before_sum = 0.0, after_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WorldConfig wc = small_world(40 + seed);
    wc.mean_scale = 2.0;
    wc.margin = 2.5;
    wc.intra_class_sigma = 0.4;
    wc.crop_sigma = 0.6;
    const SyntheticWorld w = generate_world(wc);
    ModelState m = init_model(8, 10, small_model(), seed);
    PretrainSchedule ps = short_schedule();
    ps.steps_per_epoch = 25;
    pretrain(w, m, ps, seed);
    EvalOptions eo;
    eo.episodes = 40;
    eo.episode = {5, 1, 5, 4};
    eo.threads = 1;
    eo.seed = 100 + seed;
    before_sum += evaluate(w, m, eo).mean_accuracy;
    MetaSchedule s = short_meta();
    s.phase1_epochs = 2;
    s.phase2_epochs = 2;
    s.episode = {5, 1, 3, 4};
    meta_train(w, m, s, seed);
    after_sum += evaluate(w, m, eo).mean_accuracy;
  }
  EXPECT_GE(after_sum / 5, before_sum / 5);
}

TEST(MetaTrain, DeterministicPerSeed) {
  const SyntheticWorld w = generate_world(small_world(2));
  ModelState a = init_model(8, 10, small_model(), 3), b = a;
  const MetaTrace ta = meta_train(w, a, short_meta(), 9);
  const MetaTrace tb = meta_train(w, b, short_meta(), 9);
  EXPECT_TRUE(bitwise_equal(a, b));
  for (size_t i = 0; i < ta.epochs.size(); ++i) {
    EXPECT_EQ(ta.epochs[i].loss, tb.epochs[i].loss);
    EXPECT_EQ(ta.epochs[i].accuracy, tb.epochs[i].accuracy);
  }
}

TEST(MetaTrain, ExcessiveSkipsFail) {
  const SyntheticWorld w = generate_world(small_world(2));
  ModelState m = init_model(8, 10, small_model(), 3);
  MetaSchedule s = short_meta();
  s.phase1_epochs = 1;
  s.metric.solver.max_iterations = 1;
  try {
    meta_train(w, m, s, 1);
    FAIL() << "expected non-convergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonConvergence);
  }
}

TEST(Evaluate, RandomEncoderIsAtChance) {
  WorldConfig wc = small_world(8);
  wc.novel_classes = 10;
  const SyntheticWorld w = generate_world(wc);
  // Random parameters and a world whose crops are pure background leave no
  // signal to classify on.
  WorldConfig noise = wc;
  noise.semantic_flip_prob = 1.0;
  const SyntheticWorld blind = generate_world(noise);
  const ModelState m = init_model(8, 10, small_model(), 2);
  EvalOptions eo;
  eo.episodes = 200;
  eo.episode = {5, 1, 15, 4};
  eo.seed = 3;
  const EvalResult r = evaluate(blind, m, eo);
  EXPECT_LE(std::abs(r.mean_accuracy - 0.2), r.ci95);
}

TEST(Evaluate, OracleEncoderIsNearPerfect) {
  WorldConfig wc = separable_world(9);
  wc.crop_sigma = 0.0;
  const SyntheticWorld w = generate_world(wc);
  const ModelState m = oracle_model(8, 10);
  EvalOptions eo;
  eo.episodes = 100;
  eo.episode = {5, 1, 15, 4};
  eo.seed = 4;
  EXPECT_GE(evaluate(w, m, eo).mean_accuracy, 0.99);
}

TEST(Evaluate, CountsEveryPrediction) {
  const SyntheticWorld w = generate_world(small_world(8));
  const ModelState m = init_model(8, 10, small_model(), 2);
  EvalOptions eo;
  eo.episodes = 600;
  eo.episode = {5, 1, 15, 3};
  eo.metric.kind = MetricKind::kEmd;
  eo.seed = 1;
  const EvalResult r = evaluate(w, m, eo);
  EXPECT_EQ(r.episodes, 600);
  EXPECT_EQ(r.predictions, 600 * 75);
  EXPECT_EQ(r.episode_accuracy.size(), 600u);
  EXPECT_EQ(r.skipped, 0);
  EXPECT_NEAR(r.mean_accuracy, static_cast<double>(r.correct) / r.predictions, 1e-12);
}

TEST(Evaluate, SkippedEpisodesAreCounted) {
  const SyntheticWorld w = generate_world(small_world(8));
  const ModelState m = init_model(8, 10, small_model(), 2);
  EvalOptions eo;
  eo.episodes = 20;
  eo.episode = {5, 1, 3, 4};
  eo.metric.solver.max_iterations = 1;
  eo.seed = 1;
  const EvalResult r = evaluate(w, m, eo);
  EXPECT_EQ(r.skipped, 20);
  EXPECT_EQ(r.predictions, 0);
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const SyntheticWorld w = generate_world(small_world(8));
  const ModelState m = init_model(8, 10, small_model(), 2);
  EvalOptions eo;
  eo.episodes = 30;
  eo.episode = {5, 1, 3, 4};
  eo.seed = 12;
  eo.threads = 1;
  const EvalResult one = evaluate(w, m, eo);
  eo.threads = 4;
  const EvalResult four = evaluate(w, m, eo);
  EXPECT_EQ(one.episode_accuracy, four.episode_accuracy);
  EXPECT_EQ(one.mean_accuracy, four.mean_accuracy);
  EXPECT_EQ(one.ci95, four.ci95);
}

TEST(Evaluate, ConfidenceIntervalIsStandardError) {
  const SyntheticWorld w = generate_world(small_world(8));
  const ModelState m = init_model(8, 10, small_model(), 2);
  EvalOptions eo;
  eo.episodes = 50;
  eo.episode = {3, 1, 4, 3};
  eo.seed = 2;
  const EvalResult r = evaluate(w, m, eo);
  double mean = 0.0;
  for (double a : r.episode_accuracy) mean += a / 50;
  double var = 0.0;
  for (double a : r.episode_accuracy) var += (a - mean) * (a - mean) / 49;
  EXPECT_NEAR(r.mean_accuracy, mean, 1e-12);
  EXPECT_NEAR(r.ci95, 1.96 * std::sqrt(var / 50), 1e-12);
}

TEST(GradCheck, PassesOnSeededInstances) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GradCheckOptions o;
    o.seed = seed;
    const GradCheckReport r = grad_check(o);
    EXPECT_TRUE(r.passed) << "seed " << seed << ": " << r.max_relative_error;
    EXPECT_LE(r.max_relative_error, 1e-4);
    EXPECT_GT(r.checked, 0);
    EXPECT_LE(r.solver_iterations, kMaxRecordedIterations);
    EXPECT_FALSE(r.worst.empty());
  }
}

TEST(GradCheck, FrozenEncoderGradientIsZero) {
  GradCheckOptions o;
  o.seed = 3;
  o.freeze_encoder = true;
  const GradCheckReport r = grad_check(o);
  EXPECT_TRUE(r.encoder_gradient_zero);
  EXPECT_TRUE(r.passed);
  for (const GradEntry& e : r.worst) EXPECT_NE(e.group, "episode.encoder");
}

TEST(GradCheck, ZeroLambdaGradientIsCrossEntropyGradient) {
  const SyntheticWorld w = generate_world(small_world(4));
  const ModelState m = init_model(8, 10, small_model(), 5);
  std::mt19937_64 rng(6);
  const PretrainBatch batch = sample_pretrain_batch(w, 4, 4, rng);
  // With lambda = 0 the teacher must not matter at all.
  EncoderParams other = m.student;
  other.assign(m.student.flat() + test::random_gaussian_vector(static_cast<int>(m.student.size()), rng));
  EncoderParams ga = EncoderParams::zeros_like(m.student), gb = ga;
  const BatchLosses la = pretrain_batch_loss(batch, m.student, m.student, 1, 0.0, {}, &ga);
  const BatchLosses lb = pretrain_batch_loss(batch, m.student, other, 1, 0.0, {}, &gb);
  EXPECT_EQ(ga.flat(), gb.flat());
  EXPECT_EQ(la.total, la.ce);
  EXPECT_EQ(lb.total, lb.ce);
}

}  // namespace
}  // namespace patchot

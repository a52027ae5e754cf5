// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Tolerances, seed sets and experiment settings are
// fixed here; `--only 1,3` restricts the run to a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "modulate.hpp"
#include "ot.hpp"
#include "report.hpp"
#include "runner.hpp"
#include "set_repr.hpp"
#include "training.hpp"
#include "ukd.hpp"

namespace {

using namespace patchot;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

Matrix gaussian(int n, int m, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix x(n, m);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

Vector simplex(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v / v.sum();
}

// ---------------------------------------------------------------------------
// 1. Chain decomposition identity

double oracle_kl(const Vector& p, const Vector& q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0) s += p(i) * std::log(p(i) / q(i));
  }
  return s;
}

Vector oracle_softmax(const Vector& z) {
  const Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

// sum_i S_i KL(b_i^T || b_i^S) with S_i the teacher tail mass from i on.
double oracle_chain(const Vector& zt, const Vector& zs) {
  const Vector p = oracle_softmax(zt), q = oracle_softmax(zs);
  const Eigen::Index n = p.size();
  double total = 0.0, tail_p = 1.0, tail_q = 1.0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double bt = p(i) / tail_p, bs = q(i) / tail_q;
    const double kl2 = bt * std::log(bt / bs) + (1 - bt) * std::log((1 - bt) / (1 - bs));
    total += tail_p * kl2;
    tail_p -= p(i);
    tail_q -= q(i);
  }
  return total;
}

Outcome criterion1() {
  std::mt19937_64 rng(1001);
  double worst_oracle = 0.0, worst_library = 0.0;
  int pairs = 0;
  for (int nc : {3, 5, 50}) {
    for (int k = 0; k < 1000; ++k) {
      const Vector zt = gaussian(nc, 1, rng, 2.0), zs = gaussian(nc, 1, rng, 2.0);
      const double direct = oracle_kl(oracle_softmax(zt), oracle_softmax(zs));
      worst_oracle = std::max(worst_oracle, std::abs(direct - oracle_chain(zt, zs)));
      worst_library = std::max(worst_library, std::abs(direct - decomposed_kl(zt, zs)));
      ++pairs;
    }
  }
  const double tol = 1e-10;
  return {worst_oracle <= tol && worst_library <= tol,
          fmt("%d logit pairs, n_c in {3,5,50}: max |KL - chain sum| library %.2e, reference %.2e (tol %.0e)",
              pairs, worst_library, worst_oracle, tol)};
}

// ---------------------------------------------------------------------------
// 2. Limit weights

Outcome criterion2() {
  int mismatches = 0;
  for (int nc = 2; nc <= 1000; ++nc) {
    const Vector w = limit_weights(nc);
    const Vector via_chain = chain_weights(Vector::Zero(nc), 1.0).limit;
    for (int i = 1; i < nc; ++i) {
      const double expected = static_cast<double>(nc - i + 1) / static_cast<double>(nc);
      if (w(i - 1) != expected || via_chain(i - 1) != expected) ++mismatches;
    }
  }
  std::mt19937_64 rng(1002);
  double spread = 0.0;
  for (int nc : {3, 5, 50, 100}) {
    for (int k = 0; k < 100; ++k) {
      const Vector z = gaussian(nc, 1, rng);
      const Vector w = chain_weights(z, 1e6).normalized;
      spread = std::max(spread, w.maxCoeff() - w.minCoeff());
    }
  }
  const double tol = 1e-6;
  return {mismatches == 0 && spread <= tol,
          fmt("limit weights exact for n_c = 2..1000 (%d mismatches); max normalized spread at T=1e6 %.2e (tol %.0e)",
              mismatches, spread, tol)};
}

// ---------------------------------------------------------------------------
// 3. Sinkhorn feasibility and agreement with the exact solver

double vertex_2x2(const Vector& r, const Vector& c, const Matrix& m) {
  auto cost = [&](double t) {
    return t * m(0, 0) + (r(0) - t) * m(0, 1) + (c(0) - t) * m(1, 0) + (r(1) - c(0) + t) * m(1, 1);
  };
  return std::min(cost(std::max(0.0, r(0) - c(1))), cost(std::min(r(0), c(0))));
}

Outcome criterion3() {
  std::mt19937_64 rng(1003);
  std::uniform_int_distribution<int> size16(1, 16), size4(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_cost = [&](int n, int m) {
    Matrix x(n, m);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = unit(rng);
    return x;
  };

  SinkhornConfig feasible;
  feasible.max_iterations = 100000;
  double worst_violation = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int n = size16(rng), m = size16(rng);
    const Vector r = simplex(n, rng), c = simplex(m, rng);
    const TransportPlan p = sinkhorn_solve(r, c, random_cost(n, m), feasible);
    worst_violation = std::max(worst_violation, max_marginal_violation(p.entries, r, c));
  }

  SinkhornConfig sharp;
  sharp.epsilon = 1e-3;
  sharp.max_iterations = 2000000;
  double worst_gap = 0.0;
  for (int k = 0; k < 50; ++k) {
    const int n = size4(rng), m = size4(rng);
    const Vector r = simplex(n, rng), c = simplex(m, rng);
    const Matrix cost = random_cost(n, m);
    const double entropic = transport_cost(sinkhorn_solve(r, c, cost, sharp).entries, cost);
    const double exact = transport_cost(exact_emd_solve(r, c, cost).entries, cost);
    worst_gap = std::max(worst_gap, std::abs(entropic - exact));
  }

  double worst_vertex = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Vector r = simplex(2, rng), c = simplex(2, rng);
    const Matrix cost = random_cost(2, 2);
    worst_vertex = std::max(worst_vertex,
                            std::abs(transport_cost(exact_emd_solve(r, c, cost).entries, cost) - vertex_2x2(r, c, cost)));
  }

  const double tol_violation = 1e-9, tol_gap = 1e-2, tol_vertex = 1e-12;
  return {worst_violation <= tol_violation && worst_gap <= tol_gap && worst_vertex <= tol_vertex,
          fmt("max violation %.2e on 100 instances (tol %.0e); max |Sinkhorn(1e-3) - EMD| %.2e on 50 (tol %.0e); "
              "EMD vs 2x2 vertices %.2e (tol %.0e)",
              worst_violation, tol_violation, worst_gap, tol_gap, worst_vertex, tol_vertex)};
}

// ---------------------------------------------------------------------------
// 4. Plan smoothness

Matrix with_duplicates(int distinct, int copies, int dim, std::mt19937_64& rng) {
  const Matrix base = gaussian(distinct, dim, rng);
  Matrix out(distinct * copies, dim);
  for (int c = 0; c < copies; ++c) out.middleRows(c * distinct, distinct) = base;
  return out;
}

Outcome criterion4() {
  std::mt19937_64 rng(1004);
  SinkhornConfig cfg;
  cfg.max_iterations = 1000000;
  int smoother = 0, monotone = 0;
  double smallest_margin = INFINITY, smallest_step = INFINITY;
  const std::vector<double> eps = {0.01, 0.05, 0.1, 0.5, 1, 5};
  for (int k = 0; k < 20; ++k) {
    const LocalFeatureSet u(with_duplicates(3, 2, 8, rng)), v(with_duplicates(3, 2, 8, rng));
    const Matrix cost = cosine_cost_matrix(u, v);
    const NodeWeights w = node_weights(u, v);
    cfg.epsilon = 0.1;
    const double h_sinkhorn = plan_entropy(sinkhorn_solve(w.r, w.c, cost, cfg).entries);
    const double h_exact = plan_entropy(exact_emd_solve(w.r, w.c, cost).entries);
    smoother += h_sinkhorn > h_exact;
    smallest_margin = std::min(smallest_margin, h_sinkhorn - h_exact);

    bool ok = true;
    double previous = -INFINITY;
    for (double e : eps) {
      cfg.epsilon = e;
      const double h = plan_entropy(sinkhorn_solve(w.r, w.c, cost, cfg).entries);
      if (previous > -INFINITY) smallest_step = std::min(smallest_step, h - previous);
      ok = ok && h >= previous;
      previous = h;
    }
    monotone += ok;
  }
  return {smoother == 20 && monotone == 20,
          fmt("h(Sinkhorn 0.1) > h(EMD) on %d/20 duplicated-feature instances (min margin %.3f); "
              "entropy nondecreasing over epsilon on %d/20 (min step %.2e)",
              smoother, smallest_margin, monotone, smallest_step)};
}

// ---------------------------------------------------------------------------
// 5. Gradient fidelity

Outcome criterion5() {
  int passed = 0;
  double worst = 0.0;
  int redraws = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GradCheckOptions o;
    o.seed = seed;
    const GradCheckReport r = grad_check(o);
    passed += r.passed;
    worst = std::max(worst, r.max_relative_error);
    redraws += r.redraws;
  }
  const GradCheckOptions defaults;
  return {passed == 10,
          fmt("%d/10 seeded instances pass; max relative error %.2e (tol %.0e, five-point stencil h=%.0e, "
              "%d episode redraws)",
              passed, worst, defaults.threshold, defaults.step, redraws)};
}

// ---------------------------------------------------------------------------
// 6. Modulate contract

Matrix permute_rows(const Matrix& m, std::mt19937_64& rng) {
  std::vector<Eigen::Index> order(static_cast<size_t>(m.rows()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::shuffle(order.begin(), order.end(), rng);
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(order[static_cast<size_t>(i)]);
  return out;
}

Outcome criterion6() {
  std::mt19937_64 rng(1006);
  int default_exact = 0, invariant = 0, in_range = 0;
  const int trials = 200;
  for (int k = 0; k < trials; ++k) {
    const ModulateParams fresh = ModulateParams::init(16, 16, rng);
    const Matrix u = gaussian(9, 16, rng), v = gaussian(9, 16, rng);
    default_exact += predict_epsilon(u, v, fresh).epsilon == 0.1;

    ModulateParams p = fresh;
    const double scale = k % 4 == 0 ? 100.0 : 1.0;  // every fourth drives the clamp
    p.w2 = gaussian(16, 1, rng, scale);
    p.b2 = std::normal_distribution<double>(0.0, scale)(rng);
    const double e = predict_epsilon(u, v, p).epsilon;
    const bool same = predict_epsilon(permute_rows(u, rng), v, p).epsilon == e &&
                      predict_epsilon(u, permute_rows(v, rng), p).epsilon == e;
    invariant += same;
    in_range += e >= kMinEpsilon && e <= kMaxEpsilon;
  }
  return {default_exact == trials && invariant == trials && in_range == trials,
          fmt("zero head gives 0.1 exactly %d/%d; bitwise permutation invariance %d/%d; epsilon in [1e-3, 10] %d/%d",
              default_exact, trials, invariant, trials, in_range, trials)};
}

// ---------------------------------------------------------------------------
// 7. Soft-label weighting ablation

constexpr int kC7Seeds = 10;  // seeds 0..9

WorldConfig c7_world(int s) {
  WorldConfig w;
  w.semantic_flip_prob = 0.25;
  w.intra_class_sigma = 0.8;
  w.crop_sigma = 0.8;
  w.novel_mixing = 0.7;
  w.seed = static_cast<std::uint64_t>(100 + s);
  return w;
}

PretrainSchedule c7_schedule() {
  PretrainSchedule p;
  p.epochs = 40;
  p.warmup_epochs = 5;
  p.steps_per_epoch = 50;
  p.batch_size = 32;
  p.learning_rate = 0.2;
  p.momentum = 0.99;
  p.lambda = 0.5;
  return p;
}

EvalOptions c7_eval(int s) {
  EvalOptions e;
  e.split = Split::kNovel;
  e.episodes = 100;
  e.episode = {5, 1, 15, 9};
  e.metric.kind = MetricKind::kFixed;
  e.seed = static_cast<std::uint64_t>(5 + s);
  return e;
}

Outcome criterion7() {
  double ce = 0.0, unicon = 0.0, classical = 0.0;
  for (int s = 0; s < kC7Seeds; ++s) {
    const SyntheticWorld world = generate_world(c7_world(s));
    const ModelState init = init_model(world.latent_dim(), world.split_size(Split::kBase), ModelConfig{},
                                       static_cast<std::uint64_t>(7 + s));
    double acc[3];
    for (int v = 0; v < 3; ++v) {
      ModelState m = init;
      PretrainSchedule p = c7_schedule();
      if (v == 0) p.use_soft_loss = false;
      if (v == 2) p.soft = {SoftWeighting::kClassical, 1.0};
      pretrain(world, m, p, static_cast<std::uint64_t>(11 + s));
      acc[v] = evaluate(world, m, c7_eval(s)).mean_accuracy;
    }
    std::printf("    seed %d: ce-only %.4f  ce+unicon %.4f  ce+classical %.4f\n", s, acc[0], acc[1], acc[2]);
    std::fflush(stdout);
    ce += acc[0] / kC7Seeds;
    unicon += acc[1] / kC7Seeds;
    classical += acc[2] / kC7Seeds;
  }
  return {unicon >= ce && unicon >= classical,
          fmt("mean novel 1-shot accuracy over %d seeds: ce+unicon %.4f, ce-only %.4f, ce+classical(T=1) %.4f",
              kC7Seeds, unicon, ce, classical)};
}

// ---------------------------------------------------------------------------
// 8. Metric ablation

constexpr int kC8Seeds = 10;       // seeds 0..9
constexpr double kC8Slack = 0.01;  // fixed >= emd - slack counts as "approximately at least"

WorldConfig c8_world(int s) {
  WorldConfig w;
  w.semantic_flip_prob = 0.25;
  w.intra_class_sigma = 1.0;
  w.crop_sigma = 1.0;
  w.novel_mixing = 0.8;
  w.parts_per_class = 3;
  w.part_sigma = 1.5;
  w.seed = static_cast<std::uint64_t>(200 + s);
  return w;
}

PretrainSchedule c8_pretrain() {
  PretrainSchedule p;
  p.epochs = 20;
  p.warmup_epochs = 5;
  p.steps_per_epoch = 50;
  p.lambda = 0.1;
  return p;
}

MetaSchedule c8_meta() {
  MetaSchedule m;
  m.phase1_epochs = 5;
  m.phase2_epochs = 0;
  m.steps_per_epoch = 20;
  m.tasks_per_step = 4;
  m.modulate_lr = 1.0;
  return m;
}

Outcome criterion8() {
  double adaptive = 0.0, fixed = 0.0, emd = 0.0;
  for (int s = 0; s < kC8Seeds; ++s) {
    const SyntheticWorld world = generate_world(c8_world(s));
    ModelState m = init_model(world.latent_dim(), world.split_size(Split::kBase), ModelConfig{},
                              static_cast<std::uint64_t>(7 + s));
    pretrain(world, m, c8_pretrain(), static_cast<std::uint64_t>(11 + s));
    const MetaTrace trace = meta_train(world, m, c8_meta(), static_cast<std::uint64_t>(13 + s));
    EvalOptions e;
    e.episodes = 100;
    e.episode = {5, 1, 15, 9};
    e.seed = static_cast<std::uint64_t>(5 + s);
    double acc[3];
    const MetricKind kinds[3] = {MetricKind::kAdaptive, MetricKind::kFixed, MetricKind::kEmd};
    for (int k = 0; k < 3; ++k) {
      e.metric.kind = kinds[k];
      acc[k] = evaluate(world, m, e).mean_accuracy;
    }
    std::printf("    seed %d: adaptive %.4f (mean eps %.4f)  fixed %.4f  emd %.4f\n", s, acc[0],
                trace.epochs.back().mean_epsilon, acc[1], acc[2]);
    std::fflush(stdout);
    adaptive += acc[0] / kC8Seeds;
    fixed += acc[1] / kC8Seeds;
    emd += acc[2] / kC8Seeds;
  }
  return {adaptive >= fixed && fixed >= emd - kC8Slack,
          fmt("mean accuracy over %d seeds: adaptive %.4f, fixed-epsilon %.4f, exact EMD %.4f "
              "(fixed >= emd - %.2f)",
              kC8Seeds, adaptive, fixed, emd, kC8Slack)};
}

// ---------------------------------------------------------------------------
// 9. Bench harness

Outcome criterion9(const fs::path& work) {
  json doc = {{"command", "bench"}, {"seed", 9}, {"out", (work / "bench").string()},
              {"bench", {{"episodes", 1000}, {"patches", 9}}}};
  const RunReport r = run(config_from_json(doc));
  const RunReport back = read_report((work / "bench" / "report.json").string());
  const json& b = back.results.at("bench");
  bool ok = back == r && back.command == "bench" && back.config == r.config;
  for (const char* k : {"emd", "adaptive"}) {
    ok = ok && b.contains(k) && b.at(k).at("episodes").get<int>() == 1000 &&
         b.at(k).at("mean_episode_ms").get<double>() > 0.0;
  }
  ok = ok && b.at("emd").at("predictions") == b.at("adaptive").at("predictions");
  const double emd_ms = b.at("emd").at("mean_episode_ms").get<double>();
  const double ada_ms = b.at("adaptive").at("mean_episode_ms").get<double>();
  const double ratio = back.results.at("adaptive_over_emd_time_ratio").get<double>();
  ok = ok && std::abs(ratio - ada_ms / emd_ms) <= 1e-12 * ratio;
  ok = ok && read_metrics((work / "bench" / "metrics.jsonl").string()).size() == 2;
  return {ok, fmt("1000 episodes at n=9: exact EMD %.3f ms/episode, adaptive %.3f ms/episode, ratio %.3f "
                  "(saving %.1f%%); report validated",
                  emd_ms, ada_ms, ratio, 100.0 * (1.0 - ratio))};
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism

Outcome criterion10(const fs::path& work) {
  const json base = {
      {"seed", 10},
      {"world", {{"base_classes", 12}, {"val_classes", 0}, {"novel_classes", 6}, {"latent_dim", 12}}},
      {"model", {{"encoder_hidden", 16}, {"feature_dim", 8}, {"modulate_hidden", 8}}},
      {"pretrain", {{"epochs", 3}, {"warmup_epochs", 1}, {"steps_per_epoch", 10}, {"batch_size", 8}}},
      {"meta", {{"phase1_epochs", 1}, {"phase2_epochs", 1}, {"steps_per_epoch", 5}}},
      {"eval", {{"episodes", 30}}},
      {"bench", {{"episodes", 20}}},
      {"gradcheck", {{"instances", 3}}}};
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  int identical = 0, total = 0;
  std::string checkpoint;
  for (const char* command : {"pretrain", "meta", "eval", "bench", "gradcheck"}) {
    std::string streams[2];
    for (int rep = 0; rep < 2; ++rep) {
      json doc = base;
      doc["command"] = command;
      const fs::path out = work / "determinism" / (std::string(command) + (rep == 0 ? "_a" : "_b"));
      doc["out"] = out.string();
      if (std::string(command) == "meta" || std::string(command) == "eval") doc["checkpoint"] = checkpoint;
      run(config_from_json(doc));
      streams[rep] = slurp(out / "metrics.jsonl");
      if (std::string(command) == "pretrain" && rep == 0) checkpoint = (out / "checkpoint.json").string();
    }
    identical += !streams[0].empty() && streams[0] == streams[1];
    ++total;
  }
  return {identical == total,
          fmt("%d/%d commands (pretrain, meta, eval, bench, gradcheck) produce byte-identical metrics streams",
              identical, total)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "patchot_acceptance").string();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work);
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::set<int> selected(only.begin(), only.end());

  struct Criterion {
    int id;
    const char* name;
    double runtime_limit;  // seconds, 0 = none stated
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "chain decomposition identity", 1.0, criterion1},
      {2, "limit weights", 1.0, criterion2},
      {3, "Sinkhorn feasibility and optimality", 10.0, criterion3},
      {4, "plan smoothness", 5.0, criterion4},
      {5, "gradient fidelity", 30.0, criterion5},
      {6, "modulate contract", 1.0, criterion6},
      {7, "soft-label weighting ablation", 0.0, criterion7},
      {8, "metric ablation", 0.0, criterion8},
      {9, "bench harness", 0.0, [&] { return criterion9(dir); }},
      {10, "end-to-end determinism", 0.0, [&] { return criterion10(dir); }},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    std::string timing = fmt("%.2f s", secs);
    if (c.runtime_limit > 0) {
      timing += fmt(" (limit %.0f s)", c.runtime_limit);
      o.pass = o.pass && secs < c.runtime_limit;
    }
    std::printf("%s %2d %s: %s [%s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "runner.hpp"

#include <chrono>
#include <filesystem>

#include "errors.hpp"

namespace patchot {

using nlohmann::json;

namespace {

constexpr std::uint64_t kModelSeed = 1;
constexpr std::uint64_t kPretrainSeed = 2;
constexpr std::uint64_t kMetaSeed = 3;
constexpr std::uint64_t kEvalSeed = 4;
constexpr std::uint64_t kGradSeed = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ModelState load_or_init(const RunConfig& c, const SyntheticWorld& world, bool required) {
  if (!c.checkpoint.empty()) return load_checkpoint(c.checkpoint);
  if (required) {
    throw ConfigError("checkpoint", std::string(command_name(c.command)) + " needs a pretrained checkpoint");
  }
  return init_model(world.latent_dim(), world.split_size(Split::kBase), c.model,
                    mix_seed(c.seed, kModelSeed));
}

json eval_json(const EvalResult& r) {
  return json{{"accuracy", r.mean_accuracy}, {"ci95", r.ci95},           {"episodes", r.episodes},
              {"predictions", r.predictions}, {"correct", r.correct},    {"skipped", r.skipped},
              {"mean_iterations", r.mean_iterations}};
}

EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.split = c.eval_split;
  o.episodes = c.eval_episodes;
  o.episode = c.episode;
  o.metric = c.metric;
  o.threads = c.threads;
  o.seed = mix_seed(c.seed, kEvalSeed);
  return o;
}

}  // namespace

RunPaths run_paths(const RunConfig& config) {
  const std::filesystem::path out(config.out);
  RunPaths p;
  p.report = (out / "report.json").string();
  p.metrics = (out / "metrics.jsonl").string();
  if (config.command == Command::kPretrain || config.command == Command::kMeta) {
    p.checkpoint = (out / "checkpoint.json").string();
  }
  return p;
}

RunReport run(const RunConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.out, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create output directory " + c.out + ": " + ec.message());
  const RunPaths paths = run_paths(c);
  MetricsWriter metrics(paths.metrics);

  RunReport report;
  report.command = command_name(c.command);
  report.config = config_to_json(c);
  const auto start = Clock::now();
  const SyntheticWorld world = generate_world(c.world);
  report.timing["world"] = seconds_since(start);

  switch (c.command) {
    case Command::kPretrain: {
      ModelState model = load_or_init(c, world, false);
      const auto t = Clock::now();
      pretrain(world, model, c.pretrain, mix_seed(c.seed, kPretrainSeed), [&](const PretrainEpoch& e) {
        const json record{{"phase", "pretrain"},  {"epoch", e.epoch}, {"soft_active", e.soft_active},
                          {"learning_rate", e.learning_rate}, {"ce", e.ce}, {"soft", e.soft},
                          {"total", e.total}};
        metrics.write(record);
        report.epochs.push_back(record);
      });
      report.timing["pretrain"] = seconds_since(t);
      save_checkpoint(model, paths.checkpoint);
      report.results = {{"steps", model.pretrain_steps},
                        {"epochs", model.pretrain_epochs_done},
                        {"checkpoint", paths.checkpoint}};
      if (!report.epochs.empty()) {
        report.results["final_ce"] = report.epochs.back()["ce"];
        report.results["final_soft"] = report.epochs.back()["soft"];
        report.results["final_total"] = report.epochs.back()["total"];
      }
      break;
    }
    case Command::kMeta: {
      ModelState model = load_or_init(c, world, true);
      const auto t = Clock::now();
      const MetaTrace trace = meta_train(world, model, c.meta, mix_seed(c.seed, kMetaSeed), [&](const MetaEpoch& e) {
        const json record{{"phase", "meta"},         {"epoch", e.epoch},
                          {"stage", e.phase},        {"loss", e.loss},
                          {"accuracy", e.accuracy},  {"mean_epsilon", e.mean_epsilon},
                          {"mean_iterations", e.mean_iterations}, {"tasks", e.tasks},
                          {"skipped", e.skipped}};
        metrics.write(record);
        report.epochs.push_back(record);
      });
      report.timing["meta"] = seconds_since(t);
      save_checkpoint(model, paths.checkpoint);
      double iterations = 0.0;
      for (const MetaEpoch& e : trace.epochs) iterations += e.mean_iterations;
      report.solver = {{"tasks", trace.tasks},
                       {"skipped", trace.skipped},
                       {"mean_iterations", trace.epochs.empty() ? 0.0 : iterations / trace.epochs.size()}};
      report.results = {{"steps", model.meta_steps},
                        {"epochs", model.meta_epochs_done},
                        {"checkpoint", paths.checkpoint}};
      if (!trace.epochs.empty()) report.results["final_accuracy"] = trace.epochs.back().accuracy;
      break;
    }
    case Command::kEval: {
      const ModelState model = load_or_init(c, world, false);
      const auto t = Clock::now();
      const EvalResult r = evaluate(world, model, eval_options(c));
      report.timing["eval"] = seconds_since(t);
      json record = eval_json(r);
      record["phase"] = "eval";
      record["split"] = split_name(c.eval_split);
      record["metric"] = metric_name(c.metric.kind);
      metrics.write(record);
      report.results = eval_json(r);
      report.solver = {{"skipped", r.skipped}, {"mean_iterations", r.mean_iterations}};
      break;
    }
    case Command::kBench: {
      const ModelState model = load_or_init(c, world, false);
      std::vector<MetricKind> kinds;
      if (c.bench.metric) {
        kinds.push_back(*c.bench.metric);
      } else {
        kinds = {MetricKind::kEmd, MetricKind::kAdaptive};
      }
      EvalOptions o = eval_options(c);
      o.episodes = c.bench.episodes;
      o.episode.set_size = c.bench.patches;
      o.threads = 1;
      report.results["bench"] = json::object();
      for (MetricKind kind : kinds) {
        o.metric.kind = kind;
        const auto t = Clock::now();
        const EvalResult r = evaluate(world, model, o);
        const double elapsed = seconds_since(t);
        json record = eval_json(r);
        record["phase"] = "bench";
        record["metric"] = metric_name(kind);
        metrics.write(record);
        json entry = eval_json(r);
        entry["seconds"] = elapsed;
        entry["mean_episode_ms"] = 1000.0 * elapsed / o.episodes;
        report.results["bench"][metric_name(kind)] = entry;
        report.timing[std::string("bench_") + metric_name(kind)] = elapsed;
      }
      if (kinds.size() == 2) {
        const double emd = report.results["bench"]["emd"]["mean_episode_ms"].get<double>();
        const double adaptive = report.results["bench"]["adaptive"]["mean_episode_ms"].get<double>();
        report.results["adaptive_over_emd_time_ratio"] = adaptive / emd;
        report.results["adaptive_time_saving"] = 1.0 - adaptive / emd;
      }
      break;
    }
    case Command::kGradCheck: {
      const auto t = Clock::now();
      double worst = 0.0;
      bool passed = true;
      for (int i = 0; i < c.gradcheck.instances; ++i) {
        GradCheckOptions o;
        o.seed = mix_seed(c.seed, kGradSeed) + static_cast<std::uint64_t>(i);
        o.freeze_encoder = c.gradcheck.freeze_encoder;
        o.lambda = c.gradcheck.lambda;
        const GradCheckReport g = grad_check(o);
        json offenders = json::array();
        for (const GradEntry& e : g.worst) {
          offenders.push_back({{"group", e.group}, {"index", e.index}, {"analytic", e.analytic},
                               {"numeric", e.numeric}, {"relative_error", e.relative_error}});
        }
        const json record{{"phase", "gradcheck"},
                          {"instance", i},
                          {"max_relative_error", g.max_relative_error},
                          {"checked", g.checked},
                          {"passed", g.passed},
                          {"encoder_gradient_zero", g.encoder_gradient_zero},
                          {"solver_iterations", g.solver_iterations},
                          {"redraws", g.redraws},
                          {"worst", offenders}};
        metrics.write(record);
        report.epochs.push_back(record);
        worst = std::max(worst, g.max_relative_error);
        passed = passed && g.passed;
      }
      report.timing["gradcheck"] = seconds_since(t);
      report.results = {{"instances", c.gradcheck.instances},
                        {"max_relative_error", worst},
                        {"threshold", GradCheckOptions{}.threshold},
                        {"passed", passed}};
      report.timing["total"] = seconds_since(start);
      write_report(report, paths.report);
      if (!passed) {
        throw Error(ErrorCode::kCheckFailed, "gradient check failed: max relative error " +
                                                 std::to_string(worst));
      }
      return report;
    }
  }
  report.timing["total"] = seconds_since(start);
  write_report(report, paths.report);
  return report;
}

}  // namespace patchot

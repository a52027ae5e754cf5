// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "errors.hpp"

namespace patchot {

using nlohmann::json;

namespace {

template <typename T>
const char* type_label() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  if constexpr (std::is_same_v<T, std::string>) return "a string";
  if constexpr (std::is_same_v<T, std::vector<int>>) return "an array of integers";
  if constexpr (std::is_same_v<T, std::uint64_t>) return "a nonnegative integer";
  if constexpr (std::is_integral_v<T>) return "an integer";
  return "a number";
}

class Reader {
 public:
  Reader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!doc_.contains(key)) return;
    used_.insert(key);
    const json& v = doc_.at(key);
    const std::string field = name(key);
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_same_v<T, std::string>) {
      ok = v.is_string();
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer();
    } else {
      ok = v.is_number();
    }
    if (!ok) throw ConfigError(field, std::string("expected ") + type_label<T>());
    out = v.get<T>();
  }

  // Returns nullptr when the key is absent.
  const json* child(const char* key) {
    if (!doc_.contains(key)) return nullptr;
    used_.insert(key);
    return &doc_.at(key);
  }

  bool has(const char* key) const { return doc_.contains(key); }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!used_.count(item.key())) throw ConfigError(name(item.key()), "unknown field");
    }
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> used_;
};

json episode_json(const EpisodeOptions& e) {
  return {{"ways", e.ways}, {"shots", e.shots}, {"queries", e.queries}, {"set_size", e.set_size}};
}

void read_episode(const json& doc, const std::string& path, EpisodeOptions& e) {
  Reader r(doc, path);
  r.get("ways", e.ways);
  r.get("shots", e.shots);
  r.get("queries", e.queries);
  r.get("set_size", e.set_size);
  r.finish();
}

json metric_json(const MetricOptions& m) {
  return {{"kind", metric_name(m.kind)},
          {"fixed_epsilon", m.fixed_epsilon},
          {"scale", m.scale},
          {"tolerance", m.solver.tolerance},
          {"max_iterations", m.solver.max_iterations},
          {"log_domain", m.solver.log_domain}};
}

void read_metric(const json& doc, const std::string& path, MetricOptions& m) {
  Reader r(doc, path);
  std::string kind = metric_name(m.kind);
  r.get("kind", kind);
  try {
    m.kind = parse_metric(kind);
  } catch (const ConfigError&) {
    throw ConfigError(r.name("kind"), "expected adaptive, fixed or emd, got '" + kind + "'");
  }
  r.get("fixed_epsilon", m.fixed_epsilon);
  r.get("scale", m.scale);
  r.get("tolerance", m.solver.tolerance);
  r.get("max_iterations", m.solver.max_iterations);
  r.get("log_domain", m.solver.log_domain);
  r.finish();
}

}  // namespace

const char* command_name(Command command) {
  switch (command) {
    case Command::kPretrain: return "pretrain";
    case Command::kMeta: return "meta";
    case Command::kEval: return "eval";
    case Command::kBench: return "bench";
    case Command::kGradCheck: return "gradcheck";
  }
  return "?";
}

Command parse_command(const std::string& name) {
  for (Command c : {Command::kPretrain, Command::kMeta, Command::kEval, Command::kBench,
                    Command::kGradCheck}) {
    if (name == command_name(c)) return c;
  }
  throw ConfigError("command", "expected pretrain, meta, eval, bench or gradcheck, got '" + name + "'");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t purpose) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (purpose + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t RunConfig::effective_world_seed() const {
  return world_seed ? *world_seed : mix_seed(seed, 0);
}

json config_to_json(const RunConfig& c) {
  const WorldConfig& w = c.world;
  const PretrainSchedule& p = c.pretrain;
  const MetaSchedule& m = c.meta;
  json doc;
  doc["command"] = command_name(c.command);
  doc["seed"] = c.seed;
  doc["out"] = c.out;
  doc["checkpoint"] = c.checkpoint;
  doc["world"] = {{"seed", c.world_seed ? json(*c.world_seed) : json(nullptr)},
                  {"base_classes", w.base_classes},
                  {"val_classes", w.val_classes},
                  {"novel_classes", w.novel_classes},
                  {"latent_dim", w.latent_dim},
                  {"mean_scale", w.mean_scale},
                  {"margin", w.margin},
                  {"intra_class_sigma", w.intra_class_sigma},
                  {"crop_sigma", w.crop_sigma},
                  {"semantic_flip_prob", w.semantic_flip_prob},
                  {"background_sigma", w.background_sigma},
                  {"parts_per_class", w.parts_per_class},
                  {"part_sigma", w.part_sigma},
                  {"novel_mixing", w.novel_mixing},
                  {"max_attempts", w.max_attempts}};
  doc["model"] = {{"encoder_hidden", c.model.encoder_hidden},
                  {"feature_dim", c.model.feature_dim},
                  {"modulate_hidden", c.model.modulate_hidden}};
  doc["pretrain"] = {{"epochs", p.epochs},
                     {"warmup_epochs", p.warmup_epochs},
                     {"steps_per_epoch", p.steps_per_epoch},
                     {"batch_size", p.batch_size},
                     {"patches", p.patches},
                     {"hard_patches", p.hard_patches},
                     {"lambda", p.lambda},
                     {"momentum", p.momentum},
                     {"learning_rate", p.learning_rate},
                     {"lr_milestones", p.lr_milestones},
                     {"lr_decay", p.lr_decay},
                     {"use_soft_loss", p.use_soft_loss},
                     {"weighting", p.soft.weighting == SoftWeighting::kUniCon ? "unicon" : "classical"},
                     {"temperature", p.soft.temperature}};
  doc["meta"] = {{"phase1_epochs", m.phase1_epochs},
                 {"phase2_epochs", m.phase2_epochs},
                 {"steps_per_epoch", m.steps_per_epoch},
                 {"tasks_per_step", m.tasks_per_step},
                 {"episode", episode_json(m.episode)},
                 {"modulate_lr", m.modulate_lr},
                 {"encoder_lr", m.encoder_lr},
                 {"lr_milestones", m.lr_milestones},
                 {"lr_decay", m.lr_decay},
                 {"max_skip_rate", m.max_skip_rate}};
  doc["metric"] = metric_json(c.metric);
  doc["episode"] = episode_json(c.episode);
  doc["eval"] = {{"split", split_name(c.eval_split)}, {"episodes", c.eval_episodes}, {"threads", c.threads}};
  doc["bench"] = {{"metric", c.bench.metric ? metric_name(*c.bench.metric) : "both"},
                  {"episodes", c.bench.episodes},
                  {"patches", c.bench.patches}};
  doc["gradcheck"] = {{"instances", c.gradcheck.instances},
                      {"freeze_encoder", c.gradcheck.freeze_encoder},
                      {"lambda", c.gradcheck.lambda}};
  return doc;
}

RunConfig config_from_json(const json& doc) {
  RunConfig c;
  Reader top(doc, "");
  std::string command = command_name(c.command);
  top.get("command", command);
  c.command = parse_command(command);
  if (!top.has("seed") || doc.at("seed").is_null()) {
    throw ConfigError("seed", "a seed is required (pass --seed or set it in the config)");
  }
  top.get("seed", c.seed);
  top.get("out", c.out);
  top.get("checkpoint", c.checkpoint);

  if (const json* w = top.child("world")) {
    Reader r(*w, "world");
    if (r.has("seed") && !w->at("seed").is_null()) {
      std::uint64_t s = 0;
      r.get("seed", s);
      c.world_seed = s;
    } else {
      r.child("seed");
    }
    WorldConfig& x = c.world;
    r.get("base_classes", x.base_classes);
    r.get("val_classes", x.val_classes);
    r.get("novel_classes", x.novel_classes);
    r.get("latent_dim", x.latent_dim);
    r.get("mean_scale", x.mean_scale);
    r.get("margin", x.margin);
    r.get("intra_class_sigma", x.intra_class_sigma);
    r.get("crop_sigma", x.crop_sigma);
    r.get("semantic_flip_prob", x.semantic_flip_prob);
    r.get("background_sigma", x.background_sigma);
    r.get("parts_per_class", x.parts_per_class);
    r.get("part_sigma", x.part_sigma);
    r.get("novel_mixing", x.novel_mixing);
    r.get("max_attempts", x.max_attempts);
    r.finish();
  }
  c.world.seed = c.effective_world_seed();

  if (const json* m = top.child("model")) {
    Reader r(*m, "model");
    r.get("encoder_hidden", c.model.encoder_hidden);
    r.get("feature_dim", c.model.feature_dim);
    r.get("modulate_hidden", c.model.modulate_hidden);
    r.finish();
  }

  if (const json* p = top.child("pretrain")) {
    Reader r(*p, "pretrain");
    PretrainSchedule& x = c.pretrain;
    r.get("epochs", x.epochs);
    r.get("warmup_epochs", x.warmup_epochs);
    r.get("steps_per_epoch", x.steps_per_epoch);
    r.get("batch_size", x.batch_size);
    r.get("patches", x.patches);
    r.get("hard_patches", x.hard_patches);
    r.get("lambda", x.lambda);
    r.get("momentum", x.momentum);
    r.get("learning_rate", x.learning_rate);
    r.get("lr_milestones", x.lr_milestones);
    r.get("lr_decay", x.lr_decay);
    r.get("use_soft_loss", x.use_soft_loss);
    std::string weighting = x.soft.weighting == SoftWeighting::kUniCon ? "unicon" : "classical";
    r.get("weighting", weighting);
    if (weighting == "unicon") {
      x.soft.weighting = SoftWeighting::kUniCon;
    } else if (weighting == "classical") {
      x.soft.weighting = SoftWeighting::kClassical;
    } else {
      throw ConfigError("pretrain.weighting", "expected unicon or classical, got '" + weighting + "'");
    }
    r.get("temperature", x.soft.temperature);
    r.finish();
  }

  if (const json* m = top.child("metric")) read_metric(*m, "metric", c.metric);
  if (const json* e = top.child("episode")) read_episode(*e, "episode", c.episode);

  c.meta.metric = c.metric;
  if (const json* m = top.child("meta")) {
    Reader r(*m, "meta");
    MetaSchedule& x = c.meta;
    r.get("phase1_epochs", x.phase1_epochs);
    r.get("phase2_epochs", x.phase2_epochs);
    r.get("steps_per_epoch", x.steps_per_epoch);
    r.get("tasks_per_step", x.tasks_per_step);
    if (const json* e = r.child("episode")) read_episode(*e, "meta.episode", x.episode);
    r.get("modulate_lr", x.modulate_lr);
    r.get("encoder_lr", x.encoder_lr);
    r.get("lr_milestones", x.lr_milestones);
    r.get("lr_decay", x.lr_decay);
    r.get("max_skip_rate", x.max_skip_rate);
    r.finish();
  }

  if (const json* e = top.child("eval")) {
    Reader r(*e, "eval");
    std::string split = split_name(c.eval_split);
    r.get("split", split);
    try {
      c.eval_split = parse_split(split);
    } catch (const ConfigError&) {
      throw ConfigError("eval.split", "expected base, val or novel, got '" + split + "'");
    }
    r.get("episodes", c.eval_episodes);
    r.get("threads", c.threads);
    r.finish();
  }

  if (const json* b = top.child("bench")) {
    Reader r(*b, "bench");
    std::string metric = c.bench.metric ? metric_name(*c.bench.metric) : "both";
    r.get("metric", metric);
    if (metric == "both") {
      c.bench.metric.reset();
    } else if (metric == "emd" || metric == "adaptive") {
      c.bench.metric = parse_metric(metric);
    } else {
      throw ConfigError("bench.metric", "expected emd, adaptive or both, got '" + metric + "'");
    }
    r.get("episodes", c.bench.episodes);
    r.get("patches", c.bench.patches);
    r.finish();
  }

  if (const json* g = top.child("gradcheck")) {
    Reader r(*g, "gradcheck");
    r.get("instances", c.gradcheck.instances);
    r.get("freeze_encoder", c.gradcheck.freeze_encoder);
    r.get("lambda", c.gradcheck.lambda);
    r.finish();
  }
  top.finish();

  c.world.validate();
  c.model.validate();
  c.pretrain.validate();
  c.metric.validate();
  c.episode.validate();
  if (c.meta.metric.kind == MetricKind::kEmd && c.command == Command::kMeta) {
    throw ConfigError("metric.kind", "meta-training needs a differentiable metric (adaptive or fixed)");
  }
  if (c.command == Command::kMeta) c.meta.validate();
  if (c.eval_episodes < 1) throw ConfigError("eval.episodes", "must be positive");
  if (c.threads < 0) throw ConfigError("eval.threads", "must be nonnegative");
  if (c.bench.episodes < 1) throw ConfigError("bench.episodes", "must be positive");
  if (c.bench.patches < 1) throw ConfigError("bench.patches", "must be positive");
  if (c.gradcheck.instances < 1) throw ConfigError("gradcheck.instances", "must be positive");
  if (!(c.gradcheck.lambda >= 0)) throw ConfigError("gradcheck.lambda", "must be nonnegative");
  if (c.out.empty()) throw ConfigError("out", "output directory must not be empty");
  return c;
}

void apply_override(json& doc, const std::string& dotted_key, const json& value) {
  if (dotted_key.empty()) throw ConfigError("override", "empty key");
  json* node = &doc;
  std::stringstream parts(dotted_key);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError(dotted_key, "malformed key");
    keys.push_back(part);
  }
  for (size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->is_object()) throw ConfigError(dotted_key, "parent is not an object");
    node = &(*node)[keys[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError(dotted_key, "parent is not an object");
  (*node)[keys.back()] = value;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config", path + " is not valid JSON: " + e.what());
  }
}

}  // namespace patchot

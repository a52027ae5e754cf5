// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Run configuration. A JSON document supplies values, command-line flags are
// applied on top as dotted-key overrides, and the result is parsed strictly:
// unknown keys and bad values raise ConfigError naming the field.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "training.hpp"

namespace patchot {

enum class Command { kPretrain, kMeta, kEval, kBench, kGradCheck };

const char* command_name(Command command);
Command parse_command(const std::string& name);

struct BenchOptions {
  std::optional<MetricKind> metric;  // empty: time both emd and adaptive
  int episodes = 1000;
  int patches = 9;
};

struct GradCheckRunOptions {
  int instances = 10;
  bool freeze_encoder = false;
  double lambda = 0.1;
};

struct RunConfig {
  Command command = Command::kEval;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string checkpoint;
  std::optional<std::uint64_t> world_seed;  // defaults to a stream derived from seed
  WorldConfig world;
  ModelConfig model;
  PretrainSchedule pretrain;
  MetaSchedule meta;
  MetricOptions metric;
  EpisodeOptions episode;
  Split eval_split = Split::kNovel;
  int eval_episodes = 600;
  int threads = 0;
  BenchOptions bench;
  GradCheckRunOptions gradcheck;

  std::uint64_t effective_world_seed() const;
};

// Full document with every field, as echoed in reports.
nlohmann::json config_to_json(const RunConfig& config);

// Strict parse. The seed must be present; every other field has a default.
RunConfig config_from_json(const nlohmann::json& doc);

// Sets doc[a][b]... = value for a dotted key such as "bench.metric".
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const nlohmann::json& value);

nlohmann::json read_json_file(const std::string& path);

// Splittable seed mixing, so streams derived from one run seed do not overlap.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t purpose);

}  // namespace patchot

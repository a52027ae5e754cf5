// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchot/patchot.h"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::vector<std::string> sets;
  std::optional<std::string> metric;
  std::optional<int> episodes;
  std::optional<int> patches;
  bool quiet = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file supplying defaults")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "Run seed");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--checkpoint", f.checkpoint, "Checkpoint to start from");
  sub->add_option("--set", f.sets, "Override a config field, KEY=VALUE with a dotted key")
      ->type_name("KEY=VALUE");
  sub->add_flag("-q,--quiet", f.quiet, "Do not print the report");
}

int report_failure(const char* step, pot_status status) {
  std::fprintf(stderr, "patchot %s: %s: %s\n", step, pot_status_name(status), pot_last_error());
  return static_cast<int>(status);
}

std::string json_string(const std::string& s) {
  std::string r = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') r += '\\';
    r += ch;
  }
  return r + "\"";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Episodic few-shot experiments with adaptive optimal transport metrics"};
  app.set_version_flag("--version", pot_version());
  app.require_subcommand(1);

  Flags f;
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"pretrain", "Pretrain the encoder with hard and soft patch labels"},
      {"meta", "Meta-train from a pretrained checkpoint"},
      {"eval", "Evaluate episodic accuracy"},
      {"bench", "Time exact EMD against the adaptive metric"},
      {"gradcheck", "Compare analytic gradients with finite differences"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, f);
    if (std::string(name) == "bench") {
      sub->add_option("--metric", f.metric, "Time one metric only")
          ->check(CLI::IsMember({"emd", "adaptive"}));
      sub->add_option("--episodes", f.episodes, "Episodes per metric")->check(CLI::PositiveNumber);
      sub->add_option("--patches", f.patches, "Local features per image")->check(CLI::PositiveNumber);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : POT_ERR_CONFIG;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  pot_run* run = nullptr;
  pot_status st = f.config.empty() ? pot_run_create(nullptr, &run)
                                   : pot_run_create_from_file(f.config.c_str(), &run);
  if (st != POT_OK) return report_failure("config", st);

  std::vector<std::pair<std::string, std::string>> overrides;
  overrides.emplace_back("command", json_string(command));
  for (const std::string& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "patchot: --set expects KEY=VALUE, got '%s'\n", s.c_str());
      pot_run_destroy(run);
      return POT_ERR_CONFIG;
    }
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.seed) overrides.emplace_back("seed", std::to_string(*f.seed));
  if (f.out) overrides.emplace_back("out", json_string(*f.out));
  if (f.checkpoint) overrides.emplace_back("checkpoint", json_string(*f.checkpoint));
  if (f.metric) overrides.emplace_back("bench.metric", json_string(*f.metric));
  if (f.episodes) overrides.emplace_back("bench.episodes", std::to_string(*f.episodes));
  if (f.patches) overrides.emplace_back("bench.patches", std::to_string(*f.patches));

  for (const auto& [key, value] : overrides) {
    st = pot_run_set(run, key.c_str(), value.c_str());
    if (st != POT_OK) {
      pot_run_destroy(run);
      return report_failure("config", st);
    }
  }

  st = pot_run_execute(run);
  if (st != POT_OK) {
    pot_run_destroy(run);
    return report_failure(command.c_str(), st);
  }
  const char* report = nullptr;
  if (!f.quiet && pot_run_report_json(run, &report) == POT_OK) std::cout << report << "\n";
  pot_run_destroy(run);
  return 0;
}

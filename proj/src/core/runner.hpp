// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#pragma once

#include <string>

#include "config.hpp"
#include "report.hpp"

namespace patchot {

struct RunPaths {
  std::string report;
  std::string metrics;
  std::string checkpoint;  // empty when the command writes none
};

RunPaths run_paths(const RunConfig& config);

// Executes one command, writes <out>/report.json and <out>/metrics.jsonl (and
// <out>/checkpoint.json for training commands) and returns the report.
// Wall-clock timings go only into the report; the metrics stream is a pure
// function of the config.
RunReport run(const RunConfig& config);

}  // namespace patchot

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#pragma once

#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace patchot {

struct RunReport {
  std::string library_version = PATCHOT_VERSION;
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<nlohmann::json> epochs;
  nlohmann::json results = nlohmann::json::object();
  nlohmann::json solver = nlohmann::json::object();
  nlohmann::json timing = nlohmann::json::object();  // seconds per phase

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& doc);
  bool operator==(const RunReport& other) const;
};

void write_report(const RunReport& report, const std::string& path);
RunReport read_report(const std::string& path);

// Record-per-line JSON stream. Each record is formatted first and then written
// and flushed under a lock, so concurrent writers never interleave lines.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);

  void write(const nlohmann::json& record);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::mutex mutex_;
};

std::vector<nlohmann::json> read_metrics(const std::string& path);

}  // namespace patchot

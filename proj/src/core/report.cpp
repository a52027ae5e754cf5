// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "report.hpp"

#include <sstream>

#include "errors.hpp"

namespace patchot {

using nlohmann::json;

json RunReport::to_json() const {
  return json{{"format", "patchot-report"},
              {"library_version", library_version},
              {"command", command},
              {"config", config},
              {"epochs", epochs},
              {"results", results},
              {"solver", solver},
              {"timing", timing}};
}

RunReport RunReport::from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "patchot-report") {
      throw Error(ErrorCode::kIo, "not a patchot report");
    }
    RunReport r;
    r.library_version = doc.at("library_version").get<std::string>();
    r.command = doc.at("command").get<std::string>();
    r.config = doc.at("config");
    r.epochs = doc.at("epochs").get<std::vector<json>>();
    r.results = doc.at("results");
    r.solver = doc.at("solver");
    r.timing = doc.at("timing");
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("malformed report: ") + e.what());
  }
}

bool RunReport::operator==(const RunReport& o) const {
  return library_version == o.library_version && command == o.command && config == o.config &&
         epochs == o.epochs && results == o.results && solver == o.solver && timing == o.timing;
}

void write_report(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << report.to_json().dump(2) << '\n';
  out.close();
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

RunReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  try {
    return RunReport::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kIo, path + " is not valid JSON: " + e.what());
  }
}

MetricsWriter::MetricsWriter(const std::string& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
}

void MetricsWriter::write(const json& record) {
  const std::string line = record.dump() + '\n';
  std::lock_guard<std::mutex> lock(mutex_);
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw Error(ErrorCode::kIo, "failed writing " + path_);
}

std::vector<json> read_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::vector<json> records;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    try {
      records.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kIo, path + ":" + std::to_string(number) + " is not a JSON record");
    }
  }
  return records;
}

}  // namespace patchot

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "errors.hpp"

namespace patchot {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) {
  return json{{"rows", m.rows()},
              {"cols", m.cols()},
              {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from(const json& j, const char* name) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw Error(ErrorCode::kVersion, std::string("checkpoint array ") + name + " has inconsistent shape");
    }
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kVersion, std::string("checkpoint array ") + name + ": " + e.what());
  }
}

Vector vector_from(const json& j, const char* name) {
  const Matrix m = matrix_from(j, name);
  if (m.cols() != 1) throw Error(ErrorCode::kVersion, std::string("checkpoint array ") + name + " is not a vector");
  return m.col(0);
}

json encoder_json(const EncoderParams& p) {
  return json{{"w1", matrix_json(p.w1)}, {"b1", matrix_json(p.b1)}, {"w2", matrix_json(p.w2)},
              {"b2", matrix_json(p.b2)}, {"wc", matrix_json(p.wc)}, {"bc", matrix_json(p.bc)}};
}

EncoderParams encoder_from(const json& j) {
  EncoderParams p;
  p.w1 = matrix_from(j.at("w1"), "w1");
  p.b1 = vector_from(j.at("b1"), "b1");
  p.w2 = matrix_from(j.at("w2"), "w2");
  p.b2 = vector_from(j.at("b2"), "b2");
  p.wc = matrix_from(j.at("wc"), "wc");
  p.bc = vector_from(j.at("bc"), "bc");
  if (p.b1.size() != p.w1.rows() || p.w2.cols() != p.w1.rows() || p.b2.size() != p.w2.rows() ||
      p.wc.cols() != p.w2.rows() || p.bc.size() != p.wc.rows()) {
    throw Error(ErrorCode::kVersion, "checkpoint encoder arrays have inconsistent shapes");
  }
  return p;
}

json modulate_json(const ModulateParams& p) {
  return json{{"set_tags", matrix_json(p.set_tags)}, {"w1", matrix_json(p.w1)},
              {"b1", matrix_json(p.b1)}, {"w2", matrix_json(p.w2)}, {"b2", p.b2}};
}

ModulateParams modulate_from(const json& j) {
  ModulateParams p;
  p.set_tags = matrix_from(j.at("set_tags"), "set_tags");
  p.w1 = matrix_from(j.at("w1"), "w1");
  p.b1 = vector_from(j.at("b1"), "b1");
  p.w2 = vector_from(j.at("w2"), "w2");
  p.b2 = j.at("b2").get<double>();
  if (p.set_tags.rows() != 2 || p.set_tags.cols() != kSetTagDim || p.w1.cols() <= kSetTagDim ||
      p.b1.size() != p.w1.rows() || p.w2.size() != p.w1.rows()) {
    throw Error(ErrorCode::kVersion, "checkpoint modulate arrays have inconsistent shapes");
  }
  return p;
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace

void ModelConfig::validate() const {
  if (encoder_hidden < 1) throw ConfigError("model.encoder_hidden", "must be positive");
  if (feature_dim < 2) throw ConfigError("model.feature_dim", "must be at least 2");
  if (modulate_hidden < 1) throw ConfigError("model.modulate_hidden", "must be positive");
}

ModelState init_model(int latent_dim, int classes, const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelState m;
  m.student = EncoderParams::init(latent_dim, config.encoder_hidden, config.feature_dim, classes, rng);
  m.teacher = m.student;
  m.modulate = ModulateParams::init(config.feature_dim, config.modulate_hidden, rng);
  m.seed = seed;
  return m;
}

std::string checkpoint_to_string(const ModelState& m) {
  const json doc{{"format", "patchot-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"library_version", PATCHOT_VERSION},
                 {"seed", m.seed},
                 {"schedule",
                  {{"teacher_initialized", m.teacher_initialized},
                   {"pretrain_steps", m.pretrain_steps},
                   {"meta_steps", m.meta_steps},
                   {"pretrain_epochs_done", m.pretrain_epochs_done},
                   {"meta_epochs_done", m.meta_epochs_done},
                   {"learning_rate", m.learning_rate}}},
                 {"student", encoder_json(m.student)},
                 {"teacher", encoder_json(m.teacher)},
                 {"modulate", modulate_json(m.modulate)}};
  return doc.dump(1);
}

ModelState checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kVersion, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "patchot-checkpoint") {
      throw Error(ErrorCode::kVersion, "not a patchot checkpoint");
    }
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw Error(ErrorCode::kVersion, "checkpoint version " + std::to_string(version) +
                                           " is not supported (expected " +
                                           std::to_string(kCheckpointVersion) + ")");
    }
    ModelState m;
    m.seed = doc.at("seed").get<std::uint64_t>();
    const json& s = doc.at("schedule");
    m.teacher_initialized = s.at("teacher_initialized").get<bool>();
    m.pretrain_steps = s.at("pretrain_steps").get<std::int64_t>();
    m.meta_steps = s.at("meta_steps").get<std::int64_t>();
    m.pretrain_epochs_done = s.at("pretrain_epochs_done").get<int>();
    m.meta_epochs_done = s.at("meta_epochs_done").get<int>();
    m.learning_rate = s.at("learning_rate").get<double>();
    m.student = encoder_from(doc.at("student"));
    m.teacher = encoder_from(doc.at("teacher"));
    m.modulate = modulate_from(doc.at("modulate"));
    if (!m.student.same_shape(m.teacher)) {
      throw Error(ErrorCode::kVersion, "checkpoint student and teacher shapes differ");
    }
    if (m.modulate.feature_dim() != m.student.feature_dim()) {
      throw Error(ErrorCode::kVersion, "checkpoint modulate and encoder feature dimensions differ");
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kVersion, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelState& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << checkpoint_to_string(model) << '\n';
  out.close();
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_string(buffer.str());
}

bool bitwise_equal(const ModelState& a, const ModelState& b) {
  auto enc = [](const EncoderParams& x, const EncoderParams& y) {
    return same_bits(x.w1, y.w1) && same_bits(x.b1, y.b1) && same_bits(x.w2, y.w2) &&
           same_bits(x.b2, y.b2) && same_bits(x.wc, y.wc) && same_bits(x.bc, y.bc);
  };
  return enc(a.student, b.student) && enc(a.teacher, b.teacher) &&
         same_bits(a.modulate.set_tags, b.modulate.set_tags) && same_bits(a.modulate.w1, b.modulate.w1) &&
         same_bits(a.modulate.b1, b.modulate.b1) && same_bits(a.modulate.w2, b.modulate.w2) &&
         std::memcmp(&a.modulate.b2, &b.modulate.b2, sizeof(double)) == 0 &&
         a.teacher_initialized == b.teacher_initialized && a.pretrain_steps == b.pretrain_steps &&
         a.meta_steps == b.meta_steps && a.pretrain_epochs_done == b.pretrain_epochs_done &&
         a.meta_epochs_done == b.meta_epochs_done &&
         std::memcmp(&a.learning_rate, &b.learning_rate, sizeof(double)) == 0 && a.seed == b.seed;
}

}  // namespace patchot

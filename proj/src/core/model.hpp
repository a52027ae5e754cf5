// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#pragma once

#include <cstdint>
#include <string>

#include "encoder.hpp"
#include "modulate.hpp"

namespace patchot {

inline constexpr int kCheckpointVersion = 1;

struct ModelConfig {
  int encoder_hidden = 64;
  int feature_dim = 16;
  int modulate_hidden = 16;

  void validate() const;
};

struct ModelState {
  EncoderParams student;
  EncoderParams teacher;
  ModulateParams modulate;
  bool teacher_initialized = false;
  std::int64_t pretrain_steps = 0;
  std::int64_t meta_steps = 0;
  int pretrain_epochs_done = 0;
  int meta_epochs_done = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
};

ModelState init_model(int latent_dim, int classes, const ModelConfig& config, std::uint64_t seed);

// Structured-text checkpoint. Doubles are written in shortest round-trip
// form so save/load is bitwise lossless.
std::string checkpoint_to_string(const ModelState& model);
ModelState checkpoint_from_string(const std::string& text);

void save_checkpoint(const ModelState& model, const std::string& path);
ModelState load_checkpoint(const std::string& path);

bool bitwise_equal(const ModelState& a, const ModelState& b);

}  // namespace patchot

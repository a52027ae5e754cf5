// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Toy patch encoder f: latent -> tanh hidden layer -> feature, plus the
// linear classifier head g used during pretraining. Rows are patches.

#pragma once

#include <random>

#include "ot.hpp"

namespace patchot {

struct EncoderParams {
  Matrix w1;  // hidden x latent
  Vector b1;
  Matrix w2;  // feature x hidden
  Vector b2;
  Matrix wc;  // classes x feature
  Vector bc;

  static EncoderParams init(int latent_dim, int hidden, int feature_dim, int classes,
                            std::mt19937_64& rng);
  static EncoderParams zeros_like(const EncoderParams& other);

  int latent_dim() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  int feature_dim() const { return static_cast<int>(w2.rows()); }
  int classes() const { return static_cast<int>(wc.rows()); }

  Eigen::Index size() const;
  // Parameters of f only, without the classifier head.
  Eigen::Index feature_size() const;
  Vector flat() const;
  void assign(const Vector& flat);
  void add_scaled(const EncoderParams& other, double scale);
  bool all_finite() const;
  bool same_shape(const EncoderParams& other) const;
};

struct EncoderTrace {
  Matrix input;
  Matrix hidden;
};

Matrix encode(const EncoderParams& params, const Matrix& latents, EncoderTrace* trace = nullptr);

Matrix head_logits(const EncoderParams& params, const Matrix& features);

// Accumulates head gradients into grad and returns dL/d(features).
Matrix head_backward(const EncoderParams& params, const Matrix& features,
                     const Matrix& logits_bar, EncoderParams& grad);

// Accumulates gradients of f into grad.
void encode_backward(const EncoderParams& params, const EncoderTrace& trace,
                     const Matrix& features_bar, EncoderParams& grad);

}  // namespace patchot

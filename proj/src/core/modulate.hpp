// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Predicts the Sinkhorn regularization strength from the pair of feature
// sets. Each feature is concatenated with a learned tag for the set it came
// from, mapped through a shared tanh layer, mean-pooled, and reduced to a
// scalar o by a linear head. epsilon = clamp(0.1 * exp(o), 1e-3, 10).

#pragma once

#include <random>

#include "ot.hpp"

namespace patchot {

inline constexpr int kSetTagDim = 16;
inline constexpr double kDefaultEpsilon = 0.1;
inline constexpr double kMinEpsilon = 1e-3;
inline constexpr double kMaxEpsilon = 10.0;

struct ModulateParams {
  Matrix set_tags;  // 2 x kSetTagDim; row 0 tags the query set, row 1 the prototype
  Matrix w1;        // hidden x (feature_dim + kSetTagDim)
  Vector b1;        // hidden
  Vector w2;        // hidden
  double b2 = 0.0;

  // Random tags and first layer, zero output head (so epsilon starts at 0.1).
  static ModulateParams init(int feature_dim, int hidden, std::mt19937_64& rng);
  static ModulateParams zeros_like(const ModulateParams& other);

  int feature_dim() const { return static_cast<int>(w1.cols()) - kSetTagDim; }
  int hidden() const { return static_cast<int>(w1.rows()); }

  Eigen::Index size() const;
  Vector flat() const;
  void assign(const Vector& flat);
  void add_scaled(const ModulateParams& other, double scale);
  bool all_finite() const;
};

struct EpsilonPrediction {
  double epsilon = kDefaultEpsilon;
  double raw_output = 0.0;
  bool clamped = false;
};

EpsilonPrediction predict_epsilon(const Matrix& u, const Matrix& v, const ModulateParams& params);

struct ModulateGradients {
  ModulateParams params;
  Matrix u;
  Matrix v;
};

// Reverse pass of predict_epsilon given upstream = dL/d(epsilon). Zero when
// the clamp is active.
ModulateGradients epsilon_gradient(const Matrix& u, const Matrix& v,
                                   const ModulateParams& params, double upstream);

}  // namespace patchot

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#pragma once

#include <optional>
#include <span>

#include "ot.hpp"

namespace patchot {

// n feature vectors of dimension d, one per row. Every row must be finite and
// nonzero so cosine quantities are defined.
class LocalFeatureSet {
 public:
  explicit LocalFeatureSet(Matrix features);

  const Matrix& features() const { return features_; }
  Eigen::Index size() const { return features_.rows(); }
  Eigen::Index dim() const { return features_.cols(); }

 private:
  Matrix features_;
};

// M_ij = 1 - cos(u_i, v_j)
Matrix cosine_cost_matrix(const LocalFeatureSet& u, const LocalFeatureSet& v);

struct NodeWeights {
  Vector r;
  Vector c;
};

// r = softmax_i cos(u_i, mean(V)), c = softmax_j cos(v_j, mean(U)).
NodeWeights node_weights(const LocalFeatureSet& u, const LocalFeatureSet& v);

// sum_ij (1 - M_ij) P_ij with P the Sinkhorn plan at the given epsilon.
double adaptive_score(const LocalFeatureSet& u, const LocalFeatureSet& v, double epsilon,
                      const SinkhornConfig& cfg);

// Same score with the exact transport plan instead.
double emd_score(const LocalFeatureSet& u, const LocalFeatureSet& v);

// Positional mean of the K sets labelled class_id.
LocalFeatureSet build_prototype(std::span<const LocalFeatureSet> support,
                                std::span<const int> labels, int class_id, int shots);

struct ScoreGradients {
  Matrix u;
  Matrix v;
  double epsilon = 0.0;
};

// Differentiable adaptive score. The forward pass runs in the constructor;
// backward() returns d(score)/d(inputs) scaled by upstream.
class AdaptiveScoreTape {
 public:
  AdaptiveScoreTape(const Matrix& u, const Matrix& v, double epsilon,
                    const SinkhornConfig& cfg);

  double score() const { return score_; }
  const TransportPlan& plan() const { return tape_->plan(); }
  ScoreGradients backward(double upstream) const;

 private:
  Matrix u_, v_;
  Matrix u_hat_, v_hat_;
  Vector u_norm_, v_norm_;
  Matrix cos_;
  Vector mean_u_, mean_v_;
  Vector r_score_, c_score_;
  NodeWeights weights_;
  std::optional<SinkhornTape> tape_;
  double score_ = 0.0;
};

}  // namespace patchot

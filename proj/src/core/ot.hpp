// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Discrete optimal transport: entropy-regularized Sinkhorn scaling (log or
// plain domain) with an unrolled reverse pass, and an exact transportation
// simplex used as the unregularized baseline.

#pragma once

#include <deque>

#include <Eigen/Dense>

namespace patchot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SinkhornConfig {
  double epsilon = 0.1;
  double tolerance = 1e-9;  // max marginal violation, both sides
  int max_iterations = 1000;
  bool log_domain = true;

  void validate() const;
};

struct TransportPlan {
  Matrix entries;
  Vector row_marginal;
  Vector col_marginal;
  int iterations = 0;
  double marginal_violation = 0.0;
};

// Weight vectors are clamped below at this mass and renormalized before
// Sinkhorn runs.
inline constexpr double kMinNodeMass = 1e-12;

// Most iterations the reverse pass will differentiate through.
inline constexpr int kMaxRecordedIterations = 200;

// Clamps entries to kMinNodeMass and renormalizes to unit mass. Rejects
// negative, non-finite and zero-total inputs.
Vector normalize_weights(const Vector& w, const char* name);

TransportPlan sinkhorn_solve(const Vector& r, const Vector& c, const Matrix& cost,
                             const SinkhornConfig& cfg);

// Transportation simplex, north-west corner start, Bland's rule for both the
// entering and the leaving variable. Marginals are scaled to unit mass.
TransportPlan exact_emd_solve(const Vector& r, const Vector& c, const Matrix& cost);

double transport_cost(const Matrix& plan, const Matrix& cost);

// -sum P log P with 0 log 0 = 0.
double plan_entropy(const Matrix& plan);

// sum P M - eps * h(P)
double regularized_objective(const Matrix& plan, const Matrix& cost, double epsilon);

double max_marginal_violation(const Matrix& plan, const Vector& r, const Vector& c);

struct SinkhornGradients {
  Matrix cost;
  Vector r;
  Vector c;
  double epsilon = 0.0;
};

// Forward solve that keeps the dual potentials of the last
// kMaxRecordedIterations iterations so the exact derivative of the executed
// iteration can be replayed in reverse. Earlier iterations are treated as
// constants.
class SinkhornTape {
 public:
  SinkhornTape(const Vector& r, const Vector& c, const Matrix& cost,
               const SinkhornConfig& cfg);

  const TransportPlan& plan() const { return plan_; }
  int recorded_iterations() const { return static_cast<int>(f_.size()); }

  // upstream is dL/dP. Gradients w.r.t. r and c are taken w.r.t. the raw
  // (pre-normalization) inputs.
  SinkhornGradients backward(const Matrix& upstream) const;

 private:
  Vector raw_r_, raw_c_, r_, c_;
  Matrix cost_;
  double epsilon_;
  TransportPlan plan_;
  Vector g_start_;
  std::deque<Vector> f_;
  std::deque<Vector> g_;
};

// Convenience wrapper: forward solve plus reverse pass in one call. Throws
// NonConvergenceError (no gradients) if the forward solve fails.
SinkhornGradients sinkhorn_unrolled_backward(const Vector& r, const Vector& c,
                                             const Matrix& cost,
                                             const SinkhornConfig& cfg,
                                             const Matrix& upstream);

}  // namespace patchot

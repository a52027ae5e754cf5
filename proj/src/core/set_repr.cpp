// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "set_repr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "errors.hpp"

namespace patchot {

namespace {

Vector softmax(const Vector& x) {
  const Vector e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

void check_pair(const Matrix& u, const Matrix& v) {
  if (u.cols() != v.cols()) throw_invalid("feature sets have different dimensions");
  if (u.rows() != v.rows()) throw_invalid("feature sets have different cardinalities");
}

Vector row_norms_checked(const Matrix& m, const char* name) {
  Vector norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) throw_degenerate(std::string(name) + " has a zero-norm feature");
  }
  return norms;
}

Vector mean_checked(const Matrix& m, const char* name) {
  Vector mean = m.colwise().mean().transpose();
  if (!(mean.norm() > 0.0)) {
    throw_degenerate(std::string("mean of ") + name + " is the zero vector");
  }
  return mean;
}

}  // namespace

LocalFeatureSet::LocalFeatureSet(Matrix features) : features_(std::move(features)) {
  if (features_.rows() < 1 || features_.cols() < 1) throw_invalid("empty feature set");
  if (!features_.allFinite()) throw_invalid("feature set contains NaN or Inf");
  row_norms_checked(features_, "feature set");
}

Matrix cosine_cost_matrix(const LocalFeatureSet& u, const LocalFeatureSet& v) {
  if (u.dim() != v.dim()) throw_invalid("feature sets have different dimensions");
  const Matrix uh = u.features().rowwise().normalized();
  const Matrix vh = v.features().rowwise().normalized();
  // Rounding can push cosines a hair outside [-1, 1].
  return (1.0 - (uh * vh.transpose()).array()).cwiseMax(0.0).cwiseMin(2.0).matrix();
}

NodeWeights node_weights(const LocalFeatureSet& u, const LocalFeatureSet& v) {
  check_pair(u.features(), v.features());
  const Vector mu = mean_checked(u.features(), "U");
  const Vector mv = mean_checked(v.features(), "V");
  const Matrix uh = u.features().rowwise().normalized();
  const Matrix vh = v.features().rowwise().normalized();
  NodeWeights w;
  w.r = softmax(uh * mv.normalized());
  w.c = softmax(vh * mu.normalized());
  return w;
}

double adaptive_score(const LocalFeatureSet& u, const LocalFeatureSet& v, double epsilon,
                      const SinkhornConfig& cfg) {
  const AdaptiveScoreTape tape(u.features(), v.features(), epsilon, cfg);
  // Plan mass is one only up to the solver tolerance.
  return std::clamp(tape.score(), -1.0, 1.0);
}

double emd_score(const LocalFeatureSet& u, const LocalFeatureSet& v) {
  const Matrix cost = cosine_cost_matrix(u, v);
  const NodeWeights w = node_weights(u, v);
  const TransportPlan plan = exact_emd_solve(w.r, w.c, cost);
  return std::clamp((1.0 - cost.array()).matrix().cwiseProduct(plan.entries).sum(), -1.0, 1.0);
}

LocalFeatureSet build_prototype(std::span<const LocalFeatureSet> support,
                                std::span<const int> labels, int class_id, int shots) {
  if (support.size() != labels.size()) throw_invalid("support and label counts differ");
  if (shots < 1) throw_invalid("shots must be positive");
  Matrix sum;
  int count = 0;
  for (size_t k = 0; k < support.size(); ++k) {
    if (labels[k] != class_id) continue;
    const Matrix& f = support[k].features();
    if (count == 0) {
      sum = f;
    } else {
      if (f.rows() != sum.rows() || f.cols() != sum.cols()) {
        throw_invalid("support sets have different shapes");
      }
      sum += f;
    }
    ++count;
  }
  if (count == 0) throw_invalid("no support set carries class " + std::to_string(class_id));
  if (count != shots) {
    throw_invalid("class " + std::to_string(class_id) + " has " + std::to_string(count) +
                  " support sets, expected " + std::to_string(shots));
  }
  return LocalFeatureSet(sum / static_cast<double>(count));
}

AdaptiveScoreTape::AdaptiveScoreTape(const Matrix& u, const Matrix& v, double epsilon,
                                     const SinkhornConfig& cfg)
    : u_(u), v_(v) {
  check_pair(u, v);
  if (!u.allFinite() || !v.allFinite()) throw_invalid("feature set contains NaN or Inf");
  u_norm_ = row_norms_checked(u, "U");
  v_norm_ = row_norms_checked(v, "V");
  u_hat_ = u.array().colwise() / u_norm_.array();
  v_hat_ = v.array().colwise() / v_norm_.array();
  cos_ = u_hat_ * v_hat_.transpose();
  mean_u_ = mean_checked(u, "U");
  mean_v_ = mean_checked(v, "V");
  r_score_ = u_hat_ * mean_v_.normalized();
  c_score_ = v_hat_ * mean_u_.normalized();
  weights_.r = softmax(r_score_);
  weights_.c = softmax(c_score_);

  SinkhornConfig solver = cfg;
  solver.epsilon = epsilon;
  const Matrix cost = (1.0 - cos_.array()).matrix();
  tape_.emplace(weights_.r, weights_.c, cost, solver);
  score_ = cos_.cwiseProduct(tape_->plan().entries).sum();
}

ScoreGradients AdaptiveScoreTape::backward(double upstream) const {
  const Eigen::Index n = u_.rows();
  const Matrix& plan = tape_->plan().entries;

  // score = sum C .* P, M = 1 - C
  const SinkhornGradients sg = tape_->backward(upstream * cos_);
  Matrix cos_bar = upstream * plan - sg.cost;

  auto softmax_backward = [](const Vector& p, const Vector& grad) {
    return Vector(p.cwiseProduct(grad.array().matrix() - Vector::Constant(p.size(), grad.dot(p))));
  };
  const Vector r_score_bar = softmax_backward(weights_.r, sg.r);
  const Vector c_score_bar = softmax_backward(weights_.c, sg.c);

  ScoreGradients out;
  out.u = Matrix::Zero(u_.rows(), u_.cols());
  out.v = Matrix::Zero(v_.rows(), v_.cols());
  out.epsilon = sg.epsilon;

  // d cos(a, b) / da = (b_hat - cos * a_hat) / |a|
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double g = cos_bar(i, j);
      if (g == 0.0) continue;
      out.u.row(i) += g * (v_hat_.row(j) - cos_(i, j) * u_hat_.row(i)) / u_norm_(i);
      out.v.row(j) += g * (u_hat_.row(i) - cos_(i, j) * v_hat_.row(j)) / v_norm_(j);
    }
  }

  const double mv_norm = mean_v_.norm();
  const double mu_norm = mean_u_.norm();
  const Vector mv_hat = mean_v_ / mv_norm;
  const Vector mu_hat = mean_u_ / mu_norm;
  Vector mean_v_bar = Vector::Zero(v_.cols());
  Vector mean_u_bar = Vector::Zero(u_.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gr = r_score_bar(i);
    out.u.row(i) += gr * (mv_hat.transpose() - r_score_(i) * u_hat_.row(i)) / u_norm_(i);
    mean_v_bar += gr * (u_hat_.row(i).transpose() - r_score_(i) * mv_hat) / mv_norm;
    const double gc = c_score_bar(i);
    out.v.row(i) += gc * (mu_hat.transpose() - c_score_(i) * v_hat_.row(i)) / v_norm_(i);
    mean_u_bar += gc * (v_hat_.row(i).transpose() - c_score_(i) * mu_hat) / mu_norm;
  }
  out.v.rowwise() += mean_v_bar.transpose() / static_cast<double>(n);
  out.u.rowwise() += mean_u_bar.transpose() / static_cast<double>(n);
  return out;
}

}  // namespace patchot

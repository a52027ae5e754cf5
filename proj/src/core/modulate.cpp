// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "modulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "errors.hpp"

namespace patchot {

namespace {

Matrix hidden_activations(const Matrix& x, int tag, const ModulateParams& p) {
  const int d = p.feature_dim();
  const Vector bias = p.w1.rightCols(kSetTagDim) * p.set_tags.row(tag).transpose() + p.b1;
  Matrix z = x * p.w1.leftCols(d).transpose();
  z.rowwise() += bias.transpose();
  return z.array().tanh().matrix();
}

// Row mean accumulated in lexicographic row order, so the result does not
// depend on how the set was ordered.
Vector canonical_mean(const Matrix& h) {
  std::vector<Eigen::Index> order(static_cast<size_t>(h.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&h](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index k = 0; k < h.cols(); ++k) {
      if (h(a, k) != h(b, k)) return h(a, k) < h(b, k);
    }
    return false;
  });
  Vector sum = Vector::Zero(h.cols());
  for (const Eigen::Index i : order) sum += h.row(i).transpose();
  return sum / static_cast<double>(h.rows());
}

void check_inputs(const Matrix& u, const Matrix& v, const ModulateParams& p) {
  if (u.rows() < 1 || v.rows() < 1) throw_invalid("empty feature set");
  if (u.cols() != p.feature_dim() || v.cols() != p.feature_dim()) {
    throw_invalid("feature dimension does not match the modulate parameters");
  }
  if (!u.allFinite() || !v.allFinite()) throw_invalid("feature set contains NaN or Inf");
}

struct Forward {
  Matrix hu, hv;
  Vector pooled;
  EpsilonPrediction prediction;
};

Forward run_forward(const Matrix& u, const Matrix& v, const ModulateParams& p) {
  check_inputs(u, v, p);
  Forward fw;
  fw.hu = hidden_activations(u, 0, p);
  fw.hv = hidden_activations(v, 1, p);
  fw.pooled = 0.5 * (canonical_mean(fw.hu) + canonical_mean(fw.hv));
  const double o = p.w2.dot(fw.pooled) + p.b2;
  const double eps = kDefaultEpsilon * std::exp(o);
  fw.prediction.raw_output = o;
  fw.prediction.clamped = !(eps >= kMinEpsilon && eps <= kMaxEpsilon);
  fw.prediction.epsilon = std::isnan(eps) ? kMaxEpsilon : std::clamp(eps, kMinEpsilon, kMaxEpsilon);
  return fw;
}

}  // namespace

ModulateParams ModulateParams::init(int feature_dim, int hidden, std::mt19937_64& rng) {
  if (feature_dim < 1 || hidden < 1) throw_invalid("modulate dimensions must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  ModulateParams p;
  p.set_tags = Matrix::NullaryExpr(2, kSetTagDim, [&] { return 0.5 * normal(rng); });
  const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim + kSetTagDim));
  p.w1 = Matrix::NullaryExpr(hidden, feature_dim + kSetTagDim, [&] { return scale * normal(rng); });
  p.b1 = Vector::Zero(hidden);
  p.w2 = Vector::Zero(hidden);
  p.b2 = 0.0;
  return p;
}

ModulateParams ModulateParams::zeros_like(const ModulateParams& other) {
  ModulateParams p;
  p.set_tags = Matrix::Zero(other.set_tags.rows(), other.set_tags.cols());
  p.w1 = Matrix::Zero(other.w1.rows(), other.w1.cols());
  p.b1 = Vector::Zero(other.b1.size());
  p.w2 = Vector::Zero(other.w2.size());
  p.b2 = 0.0;
  return p;
}

Eigen::Index ModulateParams::size() const {
  return set_tags.size() + w1.size() + b1.size() + w2.size() + 1;
}

Vector ModulateParams::flat() const {
  Vector out(size());
  Eigen::Index o = 0;
  for (const auto* m : {&set_tags, &w1}) {
    out.segment(o, m->size()) = Eigen::Map<const Vector>(m->data(), m->size());
    o += m->size();
  }
  for (const auto* v : {&b1, &w2}) {
    out.segment(o, v->size()) = *v;
    o += v->size();
  }
  out(o) = b2;
  return out;
}

void ModulateParams::assign(const Vector& flat) {
  if (flat.size() != size()) throw_invalid("flat modulate parameter vector has the wrong length");
  Eigen::Index o = 0;
  for (auto* m : {&set_tags, &w1}) {
    Eigen::Map<Vector>(m->data(), m->size()) = flat.segment(o, m->size());
    o += m->size();
  }
  for (auto* v : {&b1, &w2}) {
    *v = flat.segment(o, v->size());
    o += v->size();
  }
  b2 = flat(o);
}

void ModulateParams::add_scaled(const ModulateParams& other, double scale) {
  set_tags += scale * other.set_tags;
  w1 += scale * other.w1;
  b1 += scale * other.b1;
  w2 += scale * other.w2;
  b2 += scale * other.b2;
}

bool ModulateParams::all_finite() const {
  return set_tags.allFinite() && w1.allFinite() && b1.allFinite() && w2.allFinite() &&
         std::isfinite(b2);
}

EpsilonPrediction predict_epsilon(const Matrix& u, const Matrix& v, const ModulateParams& params) {
  return run_forward(u, v, params).prediction;
}

ModulateGradients epsilon_gradient(const Matrix& u, const Matrix& v,
                                   const ModulateParams& params, double upstream) {
  const Forward fw = run_forward(u, v, params);
  ModulateGradients g;
  g.params = ModulateParams::zeros_like(params);
  g.u = Matrix::Zero(u.rows(), u.cols());
  g.v = Matrix::Zero(v.rows(), v.cols());
  if (fw.prediction.clamped) return g;

  const double o_bar = upstream * fw.prediction.epsilon;
  g.params.w2 = o_bar * fw.pooled;
  g.params.b2 = o_bar;
  const Vector pooled_bar = o_bar * params.w2;

  const int d = params.feature_dim();
  auto set_backward = [&](const Matrix& x, const Matrix& h, int tag, Matrix& x_bar) {
    const Vector row_bar = 0.5 * pooled_bar / static_cast<double>(x.rows());
    // dtanh = 1 - h^2
    const Matrix z_bar = (1.0 - h.array().square()).matrix() * row_bar.asDiagonal();
    const Vector z_sum = z_bar.colwise().sum().transpose();
    g.params.w1.leftCols(d) += z_bar.transpose() * x;
    g.params.w1.rightCols(kSetTagDim) += z_sum * params.set_tags.row(tag);
    g.params.b1 += z_sum;
    g.params.set_tags.row(tag) += (params.w1.rightCols(kSetTagDim).transpose() * z_sum).transpose();
    x_bar = z_bar * params.w1.leftCols(d);
  };
  set_backward(u, fw.hu, 0, g.u);
  set_backward(v, fw.hv, 1, g.v);
  return g;
}

}  // namespace patchot

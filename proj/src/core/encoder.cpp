// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "encoder.hpp"

#include <cmath>

#include "errors.hpp"

namespace patchot {

namespace {

Matrix gaussian(int rows, int cols, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = sigma * g(rng);
  }
  return m;
}

template <typename P, typename F>
void for_each_block(P& p, F&& f) {
  f(p.w1.data(), p.w1.size());
  f(p.b1.data(), p.b1.size());
  f(p.w2.data(), p.w2.size());
  f(p.b2.data(), p.b2.size());
  f(p.wc.data(), p.wc.size());
  f(p.bc.data(), p.bc.size());
}

}  // namespace

EncoderParams EncoderParams::init(int latent_dim, int hidden, int feature_dim, int classes,
                                  std::mt19937_64& rng) {
  if (latent_dim < 1 || hidden < 1 || classes < 2) throw_invalid("encoder dimensions too small");
  if (feature_dim < 2) throw_invalid("feature dimension must be at least 2");
  EncoderParams p;
  p.w1 = gaussian(hidden, latent_dim, 1.0 / std::sqrt(latent_dim), rng);
  p.b1 = Vector::Zero(hidden);
  p.w2 = gaussian(feature_dim, hidden, 1.0 / std::sqrt(hidden), rng);
  p.b2 = Vector::Zero(feature_dim);
  p.wc = gaussian(classes, feature_dim, 1.0 / std::sqrt(feature_dim), rng);
  p.bc = Vector::Zero(classes);
  return p;
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& other) {
  EncoderParams p;
  p.w1 = Matrix::Zero(other.w1.rows(), other.w1.cols());
  p.b1 = Vector::Zero(other.b1.size());
  p.w2 = Matrix::Zero(other.w2.rows(), other.w2.cols());
  p.b2 = Vector::Zero(other.b2.size());
  p.wc = Matrix::Zero(other.wc.rows(), other.wc.cols());
  p.bc = Vector::Zero(other.bc.size());
  return p;
}

Eigen::Index EncoderParams::size() const {
  return feature_size() + wc.size() + bc.size();
}

Eigen::Index EncoderParams::feature_size() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

Vector EncoderParams::flat() const {
  Vector out(size());
  Eigen::Index o = 0;
  for_each_block(*this, [&](const double* data, Eigen::Index n) {
    out.segment(o, n) = Eigen::Map<const Vector>(data, n);
    o += n;
  });
  return out;
}

void EncoderParams::assign(const Vector& flat) {
  if (flat.size() != size()) throw_invalid("flat encoder parameter vector has the wrong length");
  Eigen::Index o = 0;
  for_each_block(*this, [&](double* data, Eigen::Index n) {
    Eigen::Map<Vector>(data, n) = flat.segment(o, n);
    o += n;
  });
}

void EncoderParams::add_scaled(const EncoderParams& other, double scale) {
  w1 += scale * other.w1;
  b1 += scale * other.b1;
  w2 += scale * other.w2;
  b2 += scale * other.b2;
  wc += scale * other.wc;
  bc += scale * other.bc;
}

bool EncoderParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() &&
         wc.allFinite() && bc.allFinite();
}

bool EncoderParams::same_shape(const EncoderParams& o) const {
  return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows() &&
         wc.rows() == o.wc.rows() && b1.size() == o.b1.size() && b2.size() == o.b2.size() &&
         bc.size() == o.bc.size();
}

Matrix encode(const EncoderParams& params, const Matrix& latents, EncoderTrace* trace) {
  if (latents.cols() != params.latent_dim()) throw_invalid("latent dimension mismatch");
  Matrix z = latents * params.w1.transpose();
  z.rowwise() += params.b1.transpose();
  Matrix h = z.array().tanh().matrix();
  Matrix f = h * params.w2.transpose();
  f.rowwise() += params.b2.transpose();
  if (trace != nullptr) {
    trace->input = latents;
    trace->hidden = std::move(h);
  }
  return f;
}

Matrix head_logits(const EncoderParams& params, const Matrix& features) {
  Matrix z = features * params.wc.transpose();
  z.rowwise() += params.bc.transpose();
  return z;
}

Matrix head_backward(const EncoderParams& params, const Matrix& features,
                     const Matrix& logits_bar, EncoderParams& grad) {
  grad.wc += logits_bar.transpose() * features;
  grad.bc += logits_bar.colwise().sum().transpose();
  return logits_bar * params.wc;
}

void encode_backward(const EncoderParams& params, const EncoderTrace& trace,
                     const Matrix& features_bar, EncoderParams& grad) {
  grad.w2 += features_bar.transpose() * trace.hidden;
  grad.b2 += features_bar.colwise().sum().transpose();
  const Matrix h_bar = features_bar * params.w2;
  const Matrix z_bar = h_bar.cwiseProduct((1.0 - trace.hidden.array().square()).matrix());
  grad.w1 += z_bar.transpose() * trace.input;
  grad.b1 += z_bar.colwise().sum().transpose();
}

}  // namespace patchot

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "ukd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "errors.hpp"

namespace patchot {

namespace {

void check_logits(const Vector& z, const char* name) {
  if (z.size() < 2) throw_invalid(std::string(name) + " needs at least two classes");
  if (!z.allFinite()) throw_invalid(std::string(name) + " contains NaN or Inf");
}

void check_logit_pair(const Vector& zt, const Vector& zs) {
  check_logits(zt, "teacher logits");
  check_logits(zs, "student logits");
  if (zt.size() != zs.size()) throw_invalid("teacher and student class counts differ");
}

// suffix(i) = logsumexp_{j>=i} z_j; suffix(n) = -inf.
Vector suffix_lse(const Vector& z) {
  const Eigen::Index n = z.size();
  Vector out(n + 1);
  out(n) = -std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  double acc = 0.0;  // sum exp(z_j - mx) over the suffix
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    if (z(i) > mx) {
      acc = acc * std::exp(mx - z(i)) + 1.0;
      mx = z(i);
    } else {
      acc += std::exp(z(i) - mx);
    }
    out(i) = mx + std::log(acc);
  }
  return out;
}

// KL between two Bernoulli pairs given as logs.
double pair_kl(double log_qt, double log_qt_not, double log_qs, double log_qs_not) {
  return std::exp(log_qt) * (log_qt - log_qs) + std::exp(log_qt_not) * (log_qt_not - log_qs_not);
}

Vector raw_weights(const Vector& teacher_logits, double temperature) {
  const Vector lse = suffix_lse(teacher_logits / temperature);
  const Eigen::Index pairs = teacher_logits.size() - 1;
  Vector w(pairs);
  for (Eigen::Index i = 0; i < pairs; ++i) w(i) = std::exp(lse(i) - lse(0));
  return w;
}

}  // namespace

Vector softmax_probs(const Vector& logits, double temperature) {
  if (!(temperature > 0.0)) throw_invalid("temperature must be positive");
  if (logits.size() < 1) throw_invalid("empty logits");
  if (!logits.allFinite()) throw_invalid("logits contain NaN or Inf");
  const Vector scaled = logits / temperature;
  const Vector e = (scaled.array() - scaled.maxCoeff()).exp();
  return e / e.sum();
}

std::vector<BinaryPair> binary_chain(const Vector& logits) {
  check_logits(logits, "logits");
  const Vector lse = suffix_lse(logits);
  std::vector<BinaryPair> chain(static_cast<size_t>(logits.size() - 1));
  for (size_t i = 0; i < chain.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    chain[i].q = std::exp(logits(k) - lse(k));
    chain[i].q_not = std::exp(lse(k + 1) - lse(k));
  }
  return chain;
}

Vector limit_weights(Eigen::Index num_classes) {
  if (num_classes < 2) throw_invalid("need at least two classes");
  Vector w(num_classes - 1);
  for (Eigen::Index i = 0; i < num_classes - 1; ++i) {
    w(i) = static_cast<double>(num_classes - i) / static_cast<double>(num_classes);
  }
  return w;
}

ChainWeights chain_weights(const Vector& teacher_logits, double temperature) {
  check_logits(teacher_logits, "teacher logits");
  if (!(temperature > 0.0)) throw_invalid("temperature must be positive");
  const Eigen::Index nc = teacher_logits.size();
  ChainWeights w;
  w.raw = raw_weights(teacher_logits, temperature);
  w.normalized.resize(nc - 1);
  for (Eigen::Index i = 0; i < nc - 1; ++i) {
    w.normalized(i) = w.raw(i) / static_cast<double>(nc - i);
  }
  w.limit = limit_weights(nc);
  return w;
}

double kl(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw_invalid("distributions have different lengths");
  double out = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p(i)) || !std::isfinite(q(i)) || p(i) < 0.0 || q(i) < 0.0) {
      throw_invalid("distributions must be finite and nonnegative");
    }
    if (p(i) == 0.0) continue;
    if (q(i) == 0.0) throw_invalid("q has a zero entry where p has mass");
    out += p(i) * (std::log(std::max(p(i), kProbabilityFloor)) -
                   std::log(std::max(q(i), kProbabilityFloor)));
  }
  return out;
}

double chain_divergence(const Vector& teacher_logits, const Vector& student_logits,
                        const Vector& weights, Vector* student_grad) {
  check_logit_pair(teacher_logits, student_logits);
  const Eigen::Index nc = teacher_logits.size();
  if (weights.size() != nc - 1) throw_invalid("need one weight per binary pair");
  const Vector lt = suffix_lse(teacher_logits);
  const Vector ls = suffix_lse(student_logits);

  double total = 0.0;
  for (Eigen::Index i = 0; i < nc - 1; ++i) {
    total += weights(i) * pair_kl(teacher_logits(i) - lt(i), lt(i + 1) - lt(i),
                                  student_logits(i) - ls(i), ls(i + 1) - ls(i));
  }

  if (student_grad != nullptr) {
    // d/dz_k of -qT log qS - qT_not log qS_not, k >= i:
    //   s_i(k) - qT [k == i] - qT_not [k > i] s_{i+1}(k), s_i(k) = exp(z_k - L_i)
    student_grad->setZero(nc);
    for (Eigen::Index i = 0; i < nc - 1; ++i) {
      const double w = weights(i);
      if (w == 0.0) continue;
      const double qt = std::exp(teacher_logits(i) - lt(i));
      const double qt_not = std::exp(lt(i + 1) - lt(i));
      for (Eigen::Index k = i; k < nc; ++k) {
        double g = std::exp(student_logits(k) - ls(i));
        if (k == i) {
          g -= qt;
        } else {
          g -= qt_not * std::exp(student_logits(k) - ls(i + 1));
        }
        (*student_grad)(k) += w * g;
      }
    }
  }
  return total;
}

double decomposed_kl(const Vector& teacher_logits, const Vector& student_logits) {
  check_logit_pair(teacher_logits, student_logits);
  return chain_divergence(teacher_logits, student_logits, raw_weights(teacher_logits, 1.0));
}

double ukd_div(const Vector& teacher_logits, const Vector& student_logits) {
  check_logit_pair(teacher_logits, student_logits);
  return chain_divergence(teacher_logits, student_logits, limit_weights(teacher_logits.size()));
}

Vector soft_loss_weights(const Vector& teacher_logits, const SoftLossOptions& opts) {
  if (opts.weighting == SoftWeighting::kUniCon) return limit_weights(teacher_logits.size());
  if (!(opts.temperature > 0.0)) throw_invalid("temperature must be positive");
  return raw_weights(teacher_logits, opts.temperature);
}

PretrainLosses pretrain_losses(const Matrix& student_logits, const Matrix& teacher_logits,
                               int label, int hard, double lambda,
                               const SoftLossOptions& opts) {
  const auto patches = static_cast<int>(student_logits.rows());
  const auto classes = student_logits.cols();
  if (teacher_logits.rows() != student_logits.rows() || teacher_logits.cols() != classes) {
    throw_invalid("teacher and student logits have different shapes");
  }
  if (hard <= 0 || hard >= patches) {
    throw_invalid("hard patch count " + std::to_string(hard) + " must lie in (0, " +
                  std::to_string(patches) + ")");
  }
  if (label < 0 || label >= classes) throw_invalid("label out of range");
  if (!student_logits.allFinite() || !teacher_logits.allFinite()) {
    throw_invalid("logits contain NaN or Inf");
  }

  PretrainLosses out;
  out.student_grad = Matrix::Zero(patches, classes);

  const Vector mean = student_logits.topRows(hard).colwise().mean().transpose();
  const Vector lse = suffix_lse(mean);
  out.ce = lse(0) - mean(label);
  Vector ce_grad = softmax_probs(mean);
  ce_grad(label) -= 1.0;
  for (int p = 0; p < hard; ++p) out.student_grad.row(p) = ce_grad.transpose() / hard;

  const int soft = patches - hard;
  Vector g;
  for (int p = hard; p < patches; ++p) {
    const Vector zt = teacher_logits.row(p).transpose();
    const Vector zs = student_logits.row(p).transpose();
    out.soft += chain_divergence(zt, zs, soft_loss_weights(zt, opts), &g);
    out.student_grad.row(p) = (lambda / soft) * g.transpose();
  }
  out.soft /= soft;
  out.total = out.ce + lambda * out.soft;
  return out;
}

Vector ema_update(const Vector& teacher, const Vector& student, double momentum) {
  if (teacher.size() != student.size()) throw_invalid("parameter vectors differ in length");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw_invalid("momentum must lie in [0, 1)");
  return momentum * teacher + (1.0 - momentum) * student;
}

}  // namespace patchot

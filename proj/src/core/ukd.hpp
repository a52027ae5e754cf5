// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Soft-label supervision: temperature softmax, the without-replacement binary
// chain, chain weights, classical and uniform-contribution KL divergences,
// the pretraining losses and the EMA teacher update.

#pragma once

#include <span>
#include <vector>

#include "ot.hpp"

namespace patchot {

// Floor applied to probabilities before they enter a log.
inline constexpr double kProbabilityFloor = 1e-12;

struct BinaryPair {
  double q = 0.0;      // this class
  double q_not = 0.0;  // any of the remaining classes
};

struct ChainWeights {
  Vector raw;         // sum_{k>=i} p_k at temperature T
  Vector normalized;  // raw_i / (n_c - i + 1)
  Vector limit;       // (n_c - i + 1) / n_c
};

Vector softmax_probs(const Vector& logits, double temperature = 1.0);

// n_c - 1 pairs (q_i, 1 - q_i), q_i = exp(z_i) / sum_{j>=i} exp(z_j).
std::vector<BinaryPair> binary_chain(const Vector& logits);

ChainWeights chain_weights(const Vector& teacher_logits, double temperature);

// (n_c - i + 1) / n_c for i = 1..n_c-1, each a ratio of integers.
Vector limit_weights(Eigen::Index num_classes);

// sum p log(p / q) with 0 log 0 = 0. Rejects q_i = 0 where p_i > 0.
double kl(const Vector& p, const Vector& q);

// sum_i w_i KL(b_i^T || b_i^S) with the raw T = 1 weights; equals
// kl(softmax(z_T), softmax(z_S)).
double decomposed_kl(const Vector& teacher_logits, const Vector& student_logits);

// sum_i w'_i KL(b_i^T || b_i^S) with the limit weights.
double ukd_div(const Vector& teacher_logits, const Vector& student_logits);

// sum_i weights_i KL(b_i^T || b_i^S) and, optionally, its gradient w.r.t. the
// student logits.
double chain_divergence(const Vector& teacher_logits, const Vector& student_logits,
                        const Vector& weights, Vector* student_grad = nullptr);

// Which chain weights the soft-label loss uses. kUniCon is the T -> infinity
// limit; kClassical uses raw weights at the given temperature (T = 1 makes the
// loss exactly the classical KL divergence).
enum class SoftWeighting { kUniCon, kClassical };

struct SoftLossOptions {
  SoftWeighting weighting = SoftWeighting::kUniCon;
  double temperature = 1.0;
};

Vector soft_loss_weights(const Vector& teacher_logits, const SoftLossOptions& opts);

struct PretrainLosses {
  double ce = 0.0;
  double soft = 0.0;
  double total = 0.0;
  // d total / d student logits, one row per patch.
  Matrix student_grad;
};

// Rows of student_logits / teacher_logits are patches. The first `hard`
// patches are averaged and scored against `label` by cross-entropy; the rest
// are matched to the teacher by the chain divergence.
PretrainLosses pretrain_losses(const Matrix& student_logits, const Matrix& teacher_logits,
                               int label, int hard, double lambda,
                               const SoftLossOptions& opts = {});

// m * teacher + (1 - m) * student, elementwise.
Vector ema_update(const Vector& teacher, const Vector& student, double momentum);

}  // namespace patchot

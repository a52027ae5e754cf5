// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "errors.hpp"
#include "test_util.hpp"
#include "ukd.hpp"

namespace patchot {
namespace {

// Test-side oracles written directly from the definitions, without the
// log-space suffix sums used by the library.
Vector naive_softmax(const Vector& z) {
  Vector e = z.array().exp();
  return e / e.sum();
}

double naive_kl(const Vector& p, const Vector& q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) s += p(i) * std::log(p(i) / q(i));
  return s;
}

double naive_chain_divergence(const Vector& zt, const Vector& zs, const Vector& w) {
  const Eigen::Index n = zt.size();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n - 1; ++i) {
    double tail_t = 0.0, tail_s = 0.0;
    for (Eigen::Index j = i; j < n; ++j) {
      tail_t += std::exp(zt(j));
      tail_s += std::exp(zs(j));
    }
    const double qt = std::exp(zt(i)) / tail_t, qs = std::exp(zs(i)) / tail_s;
    s += w(i) * (qt * std::log(qt / qs) + (1 - qt) * std::log((1 - qt) / (1 - qs)));
  }
  return s;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

TEST(Softmax, UniformAndArithmetic) {
  for (double t : {0.5, 1.0, 7.0}) {
    const Vector p = softmax_probs(Vector::Constant(4, 1.3), t);
    EXPECT_NEAR((p.array() - 0.25).abs().maxCoeff(), 0.0, 1e-15);
  }
  const Vector p = softmax_probs(vec({std::log(2.0), 0.0}), 1.0);
  EXPECT_NEAR(p(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, HighTemperatureFlattens) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector p = softmax_probs(test::random_gaussian_vector(10, rng, 5.0), 1e6);
    EXPECT_LE(p.maxCoeff() - p.minCoeff(), 1e-5);
  }
}

TEST(Softmax, RejectsBadInput) {
  EXPECT_THROW(softmax_probs(vec({1.0, 2.0}), 0.0), Error);
  EXPECT_THROW(softmax_probs(vec({1.0, std::nan("")}), 1.0), Error);
}

TEST(BinaryChain, TwoClassesIsSoftmax) {
  const Vector z = vec({0.3, -1.2});
  const auto chain = binary_chain(z);
  ASSERT_EQ(chain.size(), 1u);
  const Vector p = softmax_probs(z);
  EXPECT_NEAR(chain[0].q, p(0), 1e-15);
  EXPECT_NEAR(chain[0].q_not, p(1), 1e-15);
}

TEST(BinaryChain, UniformThreeClasses) {
  const auto chain = binary_chain(Vector::Zero(3));
  ASSERT_EQ(chain.size(), 2u);
  EXPECT_NEAR(chain[0].q, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(chain[0].q_not, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(chain[1].q, 0.5, 1e-15);
  EXPECT_NEAR(chain[1].q_not, 0.5, 1e-15);
}

TEST(BinaryChain, ProductOfComplementsIsTailMass) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector z = test::random_gaussian_vector(5, rng, 2.0);
    const auto chain = binary_chain(z);
    const Vector p = naive_softmax(z);
    double prod = 1.0;
    for (int i = 0; i < 5; ++i) {
      EXPECT_NEAR(prod, p.tail(5 - i).sum(), 1e-12);
      if (i < 4) {
        // Reconstruction p_i = q_i * prod_{k<i} q_not_k.
        EXPECT_NEAR(chain[static_cast<size_t>(i)].q * prod, p(i), 1e-12);
        EXPECT_NEAR(chain[static_cast<size_t>(i)].q + chain[static_cast<size_t>(i)].q_not, 1.0, 1e-12);
        prod *= chain[static_cast<size_t>(i)].q_not;
      }
    }
  }
}

TEST(ChainWeights, LimitClosedForm) {
  const ChainWeights w = chain_weights(Vector::Zero(5), 1.0);
  ASSERT_EQ(w.limit.size(), 4);
  EXPECT_EQ(w.limit(0), 1.0);
  EXPECT_EQ(w.limit(1), 0.8);
  EXPECT_EQ(w.limit(2), 0.6);
  EXPECT_EQ(w.limit(3), 0.4);
  for (int nc = 2; nc <= 1000; ++nc) {
    const Vector l = limit_weights(nc);
    for (int i = 1; i < nc; ++i) {
      ASSERT_EQ(l(i - 1), static_cast<double>(nc - i + 1) / static_cast<double>(nc));
    }
  }
}

TEST(ChainWeights, UniformTeacherCollapsesOntoLimit) {
  const ChainWeights w = chain_weights(Vector::Constant(7, -0.4), 1.0);
  EXPECT_LT((w.raw - w.limit).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ChainWeights, RawIsNonincreasingAndInUnitInterval) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const ChainWeights w = chain_weights(test::random_gaussian_vector(12, rng, 3.0), 1.0);
    EXPECT_NEAR(w.raw(0), 1.0, 1e-15);
    for (Eigen::Index i = 1; i < w.raw.size(); ++i) EXPECT_LE(w.raw(i), w.raw(i - 1));
    EXPECT_GT(w.raw.minCoeff(), 0.0);
  }
}

TEST(ChainWeights, HighTemperatureSpreadVanishes) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector z = test::random_gaussian_vector(20, rng, 2.0);
    double previous = std::numeric_limits<double>::infinity();
    for (double t : {1.0, 10.0, 100.0, 1e3, 1e6}) {
      const Vector n = chain_weights(z, t).normalized;
      const double spread = n.maxCoeff() - n.minCoeff();
      EXPECT_LE(spread, previous);
      previous = spread;
    }
    EXPECT_LE(previous, 1e-6);
    // The normalized weights approach the common value 1/n_c.
    double gap = std::numeric_limits<double>::infinity();
    for (double t : {1.0, 4.0, 16.0, 64.0, 1e6}) {
      const double g = (chain_weights(z, t).normalized.array() - 1.0 / 20.0).abs().maxCoeff();
      EXPECT_LE(g, gap);
      gap = g;
    }
  }
}

TEST(Kl, Basics) {
  const Vector p = vec({0.2, 0.3, 0.5});
  EXPECT_EQ(kl(p, p), 0.0);
  EXPECT_NEAR(kl(vec({1.0, 0.0}), vec({0.25, 0.75})), std::log(4.0), 1e-15);
  EXPECT_THROW(kl(vec({0.5, 0.5}), vec({1.0, 0.0})), Error);
  EXPECT_THROW(kl(vec({0.5, 0.5}), vec({0.2, 0.3, 0.5})), Error);
  std::mt19937_64 rng(5);
  const Vector a = test::random_simplex(6, rng), b = test::random_simplex(6, rng);
  EXPECT_NEAR(kl(a, b), naive_kl(a, b), 1e-14);
  EXPECT_GT(kl(a, b), 0.0);
}

TEST(DecomposedKl, IdenticalAndTwoClass) {
  const Vector z = vec({0.1, 2.0, -1.0});
  EXPECT_NEAR(decomposed_kl(z, z), 0.0, 1e-16);
  const Vector a = vec({0.4, -0.2}), b = vec({-1.0, 0.5});
  EXPECT_NEAR(decomposed_kl(a, b), naive_kl(naive_softmax(a), naive_softmax(b)), 1e-15);
}

TEST(DecomposedKl, EqualsClassicalKl) {
  std::mt19937_64 rng(6);
  for (int nc : {3, 5, 50}) {
    for (int trial = 0; trial < 100; ++trial) {
      const Vector zt = test::random_gaussian_vector(nc, rng, 2.0);
      const Vector zs = test::random_gaussian_vector(nc, rng, 2.0);
      const double lhs = naive_kl(naive_softmax(zt), naive_softmax(zs));
      EXPECT_LE(std::abs(decomposed_kl(zt, zs) - lhs), 1e-10);
    }
  }
}

TEST(DecomposedKl, ClassOrderChangesTermsButNotTheSum) {
  std::mt19937_64 rng(7);
  const Vector zt = test::random_gaussian_vector(8, rng, 2.0);
  const Vector zs = test::random_gaussian_vector(8, rng, 2.0);
  std::vector<int> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Vector pt(8), ps(8);
  for (int i = 0; i < 8; ++i) {
    pt(i) = zt(perm[static_cast<size_t>(i)]);
    ps(i) = zs(perm[static_cast<size_t>(i)]);
  }
  EXPECT_NEAR(decomposed_kl(zt, zs), decomposed_kl(pt, ps), 1e-12);
  EXPECT_GT(std::abs(binary_chain(zt)[0].q - binary_chain(pt)[0].q), 0.0);
  EXPECT_GT(std::abs(ukd_div(zt, zs) - ukd_div(pt, ps)), 1e-6);
}

TEST(UkdDiv, Basics) {
  std::mt19937_64 rng(8);
  const Vector z = test::random_gaussian_vector(6, rng);
  EXPECT_NEAR(ukd_div(z, z), 0.0, 1e-16);
  EXPECT_NEAR(ukd_div(z, (z.array() + 3.7).matrix()), 0.0, 1e-14);
  const Vector a = vec({0.4, -0.2}), b = vec({-1.0, 0.5});
  EXPECT_NEAR(ukd_div(a, b), naive_kl(naive_softmax(a), naive_softmax(b)), 1e-15);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector zt = test::random_gaussian_vector(9, rng, 2.0);
    const Vector zs = test::random_gaussian_vector(9, rng, 2.0);
    const double v = ukd_div(zt, zs);
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(v, naive_chain_divergence(zt, zs, limit_weights(9)), 1e-12);
  }
  EXPECT_THROW(ukd_div(Vector::Zero(3), Vector::Zero(4)), Error);
}

TEST(ChainDivergence, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const int nc = 7;
    const Vector zt = test::random_gaussian_vector(nc, rng, 1.5);
    const Vector zs = test::random_gaussian_vector(nc, rng, 1.5);
    const Vector w = trial % 2 ? limit_weights(nc) : chain_weights(zt, 3.0).raw;
    Vector grad;
    chain_divergence(zt, zs, w, &grad);
    for (int k = 0; k < nc; ++k) {
      Vector p = zs, m = zs;
      p(k) += 1e-5;
      m(k) -= 1e-5;
      const double fd = (chain_divergence(zt, p, w) - chain_divergence(zt, m, w)) / 2e-5;
      EXPECT_LE(test::relative_error(grad(k), fd), 1e-4) << "k=" << k;
    }
  }
}

TEST(PretrainLosses, ComposesComponentOperations) {
  std::mt19937_64 rng(10);
  const int np = 4, l = 1, nc = 6, label = 2;
  const double lambda = 0.1;
  const Matrix zs = test::random_gaussian(np, nc, rng);
  const Matrix zt = test::random_gaussian(np, nc, rng);
  const PretrainLosses out = pretrain_losses(zs, zt, label, l, lambda);

  const Vector mean = zs.topRows(l).colwise().mean().transpose();
  const double ce = -std::log(naive_softmax(mean)(label));
  double soft = 0.0;
  for (int p = l; p < np; ++p) {
    soft += naive_chain_divergence(zt.row(p).transpose(), zs.row(p).transpose(), limit_weights(nc));
  }
  soft /= (np - l);
  EXPECT_NEAR(out.ce, ce, 1e-12);
  EXPECT_NEAR(out.soft, soft, 1e-12);
  EXPECT_NEAR(out.total, ce + lambda * soft, 1e-12);
}

TEST(PretrainLosses, EdgeCases) {
  std::mt19937_64 rng(11);
  const Matrix zs = test::random_gaussian(4, 5, rng);
  const Matrix zt = test::random_gaussian(4, 5, rng);
  const PretrainLosses no_soft = pretrain_losses(zs, zt, 0, 1, 0.0);
  EXPECT_EQ(no_soft.total, no_soft.ce);
  const PretrainLosses same = pretrain_losses(zs, zs, 0, 1, 0.1);
  EXPECT_NEAR(same.soft, 0.0, 1e-15);
  EXPECT_THROW(pretrain_losses(zs, zt, 0, 0, 0.1), Error);
  EXPECT_THROW(pretrain_losses(zs, zt, 0, 4, 0.1), Error);
  EXPECT_THROW(pretrain_losses(zs, zt, 5, 1, 0.1), Error);
}

TEST(PretrainLosses, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(12);
  const Matrix zt = test::random_gaussian(4, 6, rng);
  const Matrix zs = test::random_gaussian(4, 6, rng);
  for (auto weighting : {SoftWeighting::kUniCon, SoftWeighting::kClassical}) {
    SoftLossOptions opts{weighting, 2.0};
    const PretrainLosses out = pretrain_losses(zs, zt, 3, 2, 0.5, opts);
    for (int p = 0; p < 4; ++p) {
      for (int k = 0; k < 6; ++k) {
        Matrix a = zs, b = zs;
        a(p, k) += 1e-5;
        b(p, k) -= 1e-5;
        const double fd = (pretrain_losses(a, zt, 3, 2, 0.5, opts).total -
                           pretrain_losses(b, zt, 3, 2, 0.5, opts).total) / 2e-5;
        EXPECT_LE(test::relative_error(out.student_grad(p, k), fd), 1e-4);
      }
    }
  }
}

TEST(SoftWeights, ClassicalAtUnitTemperatureIsKl) {
  std::mt19937_64 rng(13);
  const Matrix zs = test::random_gaussian(3, 5, rng);
  const Matrix zt = test::random_gaussian(3, 5, rng);
  const PretrainLosses out =
      pretrain_losses(zs, zt, 1, 1, 1.0, {SoftWeighting::kClassical, 1.0});
  double expected = 0.0;
  for (int p = 1; p < 3; ++p) {
    expected += naive_kl(naive_softmax(zt.row(p).transpose()), naive_softmax(zs.row(p).transpose()));
  }
  EXPECT_NEAR(out.soft, expected / 2.0, 1e-12);
}

TEST(Ema, Update) {
  const Vector t = vec({0.0, 2.0, -1.0});
  const Vector s = vec({1.0, 4.0, 3.0});
  EXPECT_TRUE(ema_update(t, s, 0.0) == s);
  EXPECT_NEAR(ema_update(Vector::Zero(1), Vector::Ones(1), 0.999)(0), 0.001, 1e-15);
  const Vector same = ema_update(s, s, 0.999);
  EXPECT_LT((same - s).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(ema_update(t, Vector::Zero(2), 0.5), Error);
  EXPECT_THROW(ema_update(t, s, 1.0), Error);
}

}  // namespace
}  // namespace patchot

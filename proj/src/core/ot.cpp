// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>
#include <vector>

#include "errors.hpp"

namespace patchot {

namespace {

void check_finite(const Matrix& m, const char* name) {
  if (!m.allFinite()) {
    throw_invalid(std::string(name) + " contains NaN or Inf");
  }
}

void check_shapes(const Vector& r, const Vector& c, const Matrix& cost) {
  if (r.size() == 0 || c.size() == 0) throw_invalid("empty marginal");
  if (cost.rows() != r.size() || cost.cols() != c.size()) {
    std::ostringstream os;
    os << "cost is " << cost.rows() << "x" << cost.cols() << " but marginals are "
       << r.size() << " and " << c.size();
    throw_invalid(os.str());
  }
}

// out_i = logsumexp_j (g_j - M_ij) / eps
void row_lse(const Matrix& cost, const Vector& g, double eps, Vector& out) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  out.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) mx = std::max(mx, (g(j) - cost(i, j)) / eps);
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) s += std::exp((g(j) - cost(i, j)) / eps - mx);
    out(i) = mx + std::log(s);
  }
}

// out_j = logsumexp_i (f_i - M_ij) / eps
void col_lse(const Matrix& cost, const Vector& f, double eps, Vector& out) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  out.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) mx = std::max(mx, (f(i) - cost(i, j)) / eps);
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += std::exp((f(i) - cost(i, j)) / eps - mx);
    out(j) = mx + std::log(s);
  }
}

Matrix plan_from_potentials(const Vector& f, const Vector& g, const Matrix& cost,
                            double eps) {
  Matrix p(cost.rows(), cost.cols());
  for (Eigen::Index i = 0; i < cost.rows(); ++i)
    for (Eigen::Index j = 0; j < cost.cols(); ++j)
      p(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / eps);
  return p;
}

// Chain rule through w -> max(w, floor) / sum(max(w, floor)).
Vector normalization_backward(const Vector& raw, const Vector& normalized,
                              const Vector& grad_normalized) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < raw.size(); ++i) total += std::max(raw(i), kMinNodeMass);
  const double dot = grad_normalized.dot(normalized);
  Vector out(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    out(i) = raw(i) > kMinNodeMass ? (grad_normalized(i) - dot) / total : 0.0;
  }
  return out;
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw_invalid("epsilon must be positive");
  if (!(tolerance > 0.0)) throw_invalid("tolerance must be positive");
  if (max_iterations < 1) throw_invalid("max_iterations must be at least 1");
}

Vector normalize_weights(const Vector& w, const char* name) {
  if (w.size() == 0) throw_invalid(std::string(name) + " is empty");
  double total = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w(i))) throw_invalid(std::string(name) + " contains NaN or Inf");
    if (w(i) < 0.0) throw_invalid(std::string(name) + " has a negative entry");
    total += w(i);
  }
  if (!(total > 0.0)) throw_degenerate(std::string(name) + " has zero total mass");
  Vector out = w.cwiseMax(kMinNodeMass);
  return out / out.sum();
}

double max_marginal_violation(const Matrix& plan, const Vector& r, const Vector& c) {
  const double row = (plan.rowwise().sum() - r).cwiseAbs().maxCoeff();
  const double col = (plan.colwise().sum().transpose() - c).cwiseAbs().maxCoeff();
  return std::max(row, col);
}

SinkhornTape::SinkhornTape(const Vector& r, const Vector& c, const Matrix& cost,
                           const SinkhornConfig& cfg)
    : raw_r_(r), raw_c_(c), cost_(cost), epsilon_(cfg.epsilon) {
  cfg.validate();
  check_shapes(r, c, cost);
  check_finite(cost, "cost matrix");
  r_ = normalize_weights(r, "row marginal");
  c_ = normalize_weights(c, "column marginal");

  const double eps = cfg.epsilon;
  const Eigen::Index n = cost.rows(), m = cost.cols();
  g_start_ = Vector::Zero(m);

  auto record = [&](Vector f, Vector g) {
    if (static_cast<int>(f_.size()) == kMaxRecordedIterations) {
      g_start_ = g_.front();
      f_.pop_front();
      g_.pop_front();
    }
    f_.push_back(std::move(f));
    g_.push_back(std::move(g));
  };

  int it = 0;
  double violation = std::numeric_limits<double>::infinity();
  Vector f, g;
  if (cfg.log_domain) {
    const Vector log_r = r_.array().log();
    const Vector log_c = c_.array().log();
    g = Vector::Zero(m);
    Vector lse_r, lse_c;
    row_lse(cost, g, eps, lse_r);
    while (true) {
      f = eps * (log_r - lse_r);
      col_lse(cost, f, eps, lse_c);
      g = eps * (log_c - lse_c);
      ++it;
      record(f, g);
      row_lse(cost, g, eps, lse_r);
      violation = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        violation = std::max(violation, std::abs(std::exp(f(i) / eps + lse_r(i)) - r_(i)));
      }
      if (!std::isfinite(violation) || violation <= cfg.tolerance || it >= cfg.max_iterations)
        break;
    }
  } else {
    const Matrix kernel = (-cost / eps).array().exp();
    Vector u(n), v = Vector::Ones(m);
    while (true) {
      u = r_.cwiseQuotient(kernel * v);
      v = c_.cwiseQuotient(kernel.transpose() * u);
      ++it;
      record(eps * u.array().log().matrix(), eps * v.array().log().matrix());
      violation = (u.cwiseProduct(kernel * v) - r_).cwiseAbs().maxCoeff();
      if (!std::isfinite(violation) || violation <= cfg.tolerance || it >= cfg.max_iterations)
        break;
    }
    f = f_.back();
    g = g_.back();
  }

  if (!std::isfinite(violation) || violation > cfg.tolerance) {
    std::ostringstream os;
    os << "Sinkhorn did not converge after " << it << " iterations (violation "
       << violation << ", tolerance " << cfg.tolerance << ")";
    throw NonConvergenceError(os.str(), violation, it);
  }

  plan_.entries = plan_from_potentials(f, g, cost, eps);
  plan_.row_marginal = r_;
  plan_.col_marginal = c_;
  plan_.iterations = it;
  plan_.marginal_violation = max_marginal_violation(plan_.entries, r_, c_);
}

SinkhornGradients SinkhornTape::backward(const Matrix& upstream) const {
  if (upstream.rows() != cost_.rows() || upstream.cols() != cost_.cols()) {
    throw_invalid("upstream gradient shape does not match the plan");
  }
  const double eps = epsilon_;
  const Eigen::Index n = cost_.rows(), m = cost_.cols();

  SinkhornGradients out;
  out.cost = Matrix::Zero(n, m);
  Vector r_bar = Vector::Zero(n);
  Vector c_bar = Vector::Zero(m);
  double eps_bar = 0.0;

  // P = exp(B), B = (f + g - M) / eps
  const Vector& f_last = f_.back();
  const Vector& g_last = g_.back();
  Vector f_bar = Vector::Zero(n);
  Vector g_bar = Vector::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double b = (f_last(i) + g_last(j) - cost_(i, j)) / eps;
      const double b_bar = upstream(i, j) * std::exp(b);
      f_bar(i) += b_bar / eps;
      g_bar(j) += b_bar / eps;
      out.cost(i, j) -= b_bar / eps;
      eps_bar -= b_bar * b / eps;
    }
  }

  Vector lse;
  for (int t = static_cast<int>(f_.size()) - 1; t >= 0; --t) {
    const Vector& f_t = f_[t];
    const Vector& g_prev = t == 0 ? g_start_ : g_[t - 1];

    // g_t = eps log c - eps LSE_i((f_t - M) / eps)
    col_lse(cost_, f_t, eps, lse);
    for (Eigen::Index j = 0; j < m; ++j) {
      double weighted = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double a = (f_t(i) - cost_(i, j)) / eps;
        const double w = std::exp(a - lse(j));
        f_bar(i) -= g_bar(j) * w;
        out.cost(i, j) += g_bar(j) * w;
        weighted += w * a;
      }
      c_bar(j) += g_bar(j) * eps / c_(j);
      eps_bar += g_bar(j) * (std::log(c_(j)) - lse(j) + weighted);
    }
    g_bar.setZero();

    // f_t = eps log r - eps LSE_j((g_prev - M) / eps)
    row_lse(cost_, g_prev, eps, lse);
    for (Eigen::Index i = 0; i < n; ++i) {
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double a = (g_prev(j) - cost_(i, j)) / eps;
        const double w = std::exp(a - lse(i));
        g_bar(j) -= f_bar(i) * w;
        out.cost(i, j) += f_bar(i) * w;
        weighted += w * a;
      }
      r_bar(i) += f_bar(i) * eps / r_(i);
      eps_bar += f_bar(i) * (std::log(r_(i)) - lse(i) + weighted);
    }
    f_bar.setZero();
  }

  out.r = normalization_backward(raw_r_, r_, r_bar);
  out.c = normalization_backward(raw_c_, c_, c_bar);
  out.epsilon = eps_bar;
  return out;
}

SinkhornGradients sinkhorn_unrolled_backward(const Vector& r, const Vector& c,
                                             const Matrix& cost,
                                             const SinkhornConfig& cfg,
                                             const Matrix& upstream) {
  return SinkhornTape(r, c, cost, cfg).backward(upstream);
}

TransportPlan sinkhorn_solve(const Vector& r, const Vector& c, const Matrix& cost,
                             const SinkhornConfig& cfg) {
  return SinkhornTape(r, c, cost, cfg).plan();
}

TransportPlan exact_emd_solve(const Vector& r_in, const Vector& c_in, const Matrix& cost) {
  check_shapes(r_in, c_in, cost);
  check_finite(cost, "cost matrix");
  auto unit_mass = [](const Vector& w, const char* name) {
    if (!w.allFinite()) throw_invalid(std::string(name) + " contains NaN or Inf");
    if ((w.array() < 0.0).any()) throw_invalid(std::string(name) + " has a negative entry");
    const double total = w.sum();
    if (!(total > 0.0)) throw_degenerate(std::string(name) + " has zero total mass");
    return Vector(w / total);
  };
  const Vector r = unit_mass(r_in, "row marginal");
  const Vector c = unit_mass(c_in, "column marginal");

  const int n = static_cast<int>(r.size());
  const int m = static_cast<int>(c.size());
  Matrix x = Matrix::Zero(n, m);
  std::vector<char> basic(static_cast<size_t>(n) * m, 0);
  auto idx = [m](int i, int j) { return static_cast<size_t>(i) * m + j; };

  // North-west corner. Ties advance the row, leaving a zero basic cell so the
  // basis stays a spanning tree of n + m - 1 cells.
  {
    Vector supply = r, demand = c;
    int i = 0, j = 0;
    while (true) {
      const double amount = std::min(supply(i), demand(j));
      x(i, j) = amount;
      basic[idx(i, j)] = 1;
      const bool row_done = supply(i) <= demand(j);
      supply(i) -= amount;
      demand(j) -= amount;
      if (i == n - 1 && j == m - 1) break;
      if (i == n - 1) {
        ++j;
      } else if (j == m - 1) {
        ++i;
      } else if (row_done) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double reduced_tol = 1e-12 * scale;
  Vector u(n), v(m);
  // Graph nodes: rows 0..n-1, columns n..n+m-1.
  std::vector<int> parent(n + m);
  std::vector<char> seen(n + m);

  const int pivot_limit = 1000 * (n + m) * (n + m);
  for (int pivots = 0;; ++pivots) {
    if (pivots > pivot_limit) throw_invalid("transportation simplex exceeded its pivot limit");

    // Dual potentials from the basis tree, u_0 = 0.
    std::fill(seen.begin(), seen.end(), 0);
    std::queue<int> bfs;
    u(0) = 0.0;
    seen[0] = 1;
    bfs.push(0);
    while (!bfs.empty()) {
      const int node = bfs.front();
      bfs.pop();
      if (node < n) {
        for (int j = 0; j < m; ++j) {
          if (basic[idx(node, j)] && !seen[n + j]) {
            v(j) = cost(node, j) - u(node);
            seen[n + j] = 1;
            bfs.push(n + j);
          }
        }
      } else {
        const int j = node - n;
        for (int i = 0; i < n; ++i) {
          if (basic[idx(i, j)] && !seen[i]) {
            u(i) = cost(i, j) - v(j);
            seen[i] = 1;
            bfs.push(i);
          }
        }
      }
    }

    // Bland: lowest row-major index with a negative reduced cost enters.
    int enter_i = -1, enter_j = -1;
    for (int i = 0; i < n && enter_i < 0; ++i) {
      for (int j = 0; j < m; ++j) {
        if (!basic[idx(i, j)] && cost(i, j) - u(i) - v(j) < -reduced_tol) {
          enter_i = i;
          enter_j = j;
          break;
        }
      }
    }
    if (enter_i < 0) break;

    // Tree path from column enter_j back to row enter_i.
    std::fill(seen.begin(), seen.end(), 0);
    std::fill(parent.begin(), parent.end(), -1);
    bfs = {};
    bfs.push(enter_i);
    seen[enter_i] = 1;
    while (!bfs.empty() && !seen[n + enter_j]) {
      const int node = bfs.front();
      bfs.pop();
      if (node < n) {
        for (int j = 0; j < m; ++j) {
          if (basic[idx(node, j)] && !seen[n + j]) {
            seen[n + j] = 1;
            parent[n + j] = node;
            bfs.push(n + j);
          }
        }
      } else {
        const int j = node - n;
        for (int i = 0; i < n; ++i) {
          if (basic[idx(i, j)] && !seen[i]) {
            seen[i] = 1;
            parent[i] = node;
            bfs.push(i);
          }
        }
      }
    }

    // Walk from the entering column back to the entering row. Edges alternate
    // -, +, -, ... starting at the column end.
    std::vector<std::pair<int, int>> minus_cells, plus_cells;
    int node = n + enter_j;
    bool minus = true;
    while (node != enter_i) {
      const int prev = parent[node];
      const int i = node < n ? node : prev;
      const int j = node < n ? prev - n : node - n;
      (minus ? minus_cells : plus_cells).emplace_back(i, j);
      minus = !minus;
      node = prev;
    }

    int leave = -1;
    double theta = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < minus_cells.size(); ++k) {
      const auto [i, j] = minus_cells[k];
      const double val = x(i, j);
      if (val < theta ||
          (val == theta && idx(i, j) < idx(minus_cells[leave].first, minus_cells[leave].second))) {
        theta = val;
        leave = static_cast<int>(k);
      }
    }
    for (const auto& [i, j] : plus_cells) x(i, j) += theta;
    for (const auto& [i, j] : minus_cells) x(i, j) -= theta;
    x(enter_i, enter_j) = theta;
    basic[idx(enter_i, enter_j)] = 1;
    const auto [li, lj] = minus_cells[leave];
    basic[idx(li, lj)] = 0;
    x(li, lj) = 0.0;
  }

  TransportPlan plan;
  plan.entries = x.cwiseMax(0.0);
  plan.row_marginal = r;
  plan.col_marginal = c;
  plan.iterations = 0;
  plan.marginal_violation = max_marginal_violation(plan.entries, r, c);
  return plan;
}

double transport_cost(const Matrix& plan, const Matrix& cost) {
  if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) {
    throw_invalid("plan and cost shapes differ");
  }
  return plan.cwiseProduct(cost).sum();
}

double plan_entropy(const Matrix& plan) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
      const double p = plan(i, j);
      if (p < 0.0 || !std::isfinite(p)) throw_invalid("plan has a negative or non-finite entry");
      if (p > 0.0) h -= p * std::log(p);
    }
  }
  return h;
}

double regularized_objective(const Matrix& plan, const Matrix& cost, double epsilon) {
  return transport_cost(plan, cost) - epsilon * plan_entropy(plan);
}

}  // namespace patchot

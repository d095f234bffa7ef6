#pragma once

// Exhaustive active-set oracle for small strictly convex QPs
//   min 0.5 x'Qx + f'x  s.t.  b_lo <= Ax <= b,  lb <= x <= ub.
// Every choice of active constraints (each at its lower or upper side) with
// at most n members gives an equality-constrained problem; the cheapest
// primal feasible solution among them is the optimum.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "wdn/qp.hpp"

namespace wdn::testing {

struct OracleSolution {
  Eigen::VectorXd x;
  double objective = 0.0;
};

inline std::optional<OracleSolution> enumerate_qp(const qp::QpProblem& p, double feas_tol = 1e-9) {
  const int n = p.n(), m = p.m();
  // Constraint c < m is row c of A, otherwise the box on x[c - m].
  struct Side {
    Eigen::VectorXd normal;
    double rhs;
  };
  std::vector<std::vector<Side>> options(static_cast<std::size_t>(m + n));
  for (int c = 0; c < m + n; ++c) {
    Eigen::VectorXd a = c < m ? Eigen::VectorXd(p.a.row(c).transpose()) : Eigen::VectorXd::Unit(n, c - m);
    const double lo = c < m ? p.b_lo[c] : p.lb[c - m];
    const double hi = c < m ? p.b[c] : p.ub[c - m];
    if (std::isfinite(lo)) options[static_cast<std::size_t>(c)].push_back({a, lo});
    if (std::isfinite(hi)) options[static_cast<std::size_t>(c)].push_back({a, hi});
  }
  auto feasible = [&](const Eigen::VectorXd& x) {
    for (int r = 0; r < m; ++r) {
      const double v = p.a.row(r).dot(x);
      if (v < p.b_lo[r] - feas_tol || v > p.b[r] + feas_tol) return false;
    }
    for (int j = 0; j < n; ++j) {
      if (x[j] < p.lb[j] - feas_tol || x[j] > p.ub[j] + feas_tol) return false;
    }
    return true;
  };
  std::optional<OracleSolution> best;
  std::vector<int> choice(static_cast<std::size_t>(m + n), -1);  // -1 inactive
  auto evaluate = [&] {
    std::vector<const Side*> act;
    for (int c = 0; c < m + n; ++c) {
      if (choice[static_cast<std::size_t>(c)] >= 0) act.push_back(&options[static_cast<std::size_t>(c)][static_cast<std::size_t>(choice[static_cast<std::size_t>(c)])]);
    }
    const int k = static_cast<int>(act.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = p.q;
    rhs.head(n) = -p.f;
    for (int i = 0; i < k; ++i) {
      kkt.block(n + i, 0, 1, n) = act[static_cast<std::size_t>(i)]->normal.transpose();
      kkt.block(0, n + i, n, 1) = act[static_cast<std::size_t>(i)]->normal;
      rhs[n + i] = act[static_cast<std::size_t>(i)]->rhs;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) return;
    const Eigen::VectorXd x = lu.solve(rhs).head(n);
    if (!feasible(x)) return;
    const double obj = 0.5 * x.dot(p.q * x) + p.f.dot(x);
    if (!best || obj < best->objective) best = OracleSolution{x, obj};
  };
  auto recurse = [&](auto&& self, int c, int active) -> void {
    if (c == m + n) {
      evaluate();
      return;
    }
    choice[static_cast<std::size_t>(c)] = -1;
    self(self, c + 1, active);
    if (active == n) return;
    for (std::size_t o = 0; o < options[static_cast<std::size_t>(c)].size(); ++o) {
      choice[static_cast<std::size_t>(c)] = static_cast<int>(o);
      self(self, c + 1, active + 1);
    }
    choice[static_cast<std::size_t>(c)] = -1;
  };
  recurse(recurse, 0, 0);
  return best;
}

/// Random strictly convex QP with two-sided rows and a box; feasible by
/// construction around a random interior point.
inline qp::QpProblem random_qp(std::mt19937_64& rng, int n, int m) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rnd = [&](int r, int c) {
    Eigen::MatrixXd x(r, c);
    for (int i = 0; i < r; ++i) for (int j = 0; j < c; ++j) x(i, j) = u(rng);
    return x;
  };
  const Eigen::MatrixXd l = rnd(n, n);
  qp::QpProblem p;
  p.q = l * l.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  p.f = 2.0 * rnd(n, 1);
  p.a = rnd(m, n);
  const Eigen::VectorXd x0 = 0.5 * rnd(n, 1);
  const Eigen::VectorXd ax = p.a * x0;
  p.b_lo.resize(m);
  p.b.resize(m);
  for (int r = 0; r < m; ++r) {
    p.b_lo[r] = ax[r] - 0.05 - 0.5 * std::abs(u(rng));
    p.b[r] = ax[r] + 0.05 + 0.5 * std::abs(u(rng));
    if (u(rng) > 0.6) p.b_lo[r] = -qp::kInf;
  }
  p.lb = x0.array() - 0.1 - std::abs(u(rng));
  p.ub = x0.array() + 0.1 + std::abs(u(rng));
  return p;
}

/// Three problems with an empty feasible set: contradictory rows, a row
/// outside the box, and rows that cut the box from opposite sides.
inline std::vector<qp::QpProblem> infeasible_qps() {
  std::vector<qp::QpProblem> out;
  {
    auto p = qp::QpProblem::unconstrained(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1));
    p.a = Eigen::MatrixXd::Ones(2, 1);
    p.b_lo = Eigen::Vector2d(-qp::kInf, 1.0);
    p.b = Eigen::Vector2d(0.0, qp::kInf);
    out.push_back(p);
  }
  {
    auto p = qp::QpProblem::unconstrained(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
    p.a = Eigen::MatrixXd(1, 2);
    p.a << 1.0, 1.0;
    p.b_lo = Eigen::VectorXd::Constant(1, 3.0);
    p.b = Eigen::VectorXd::Constant(1, qp::kInf);
    p.lb = Eigen::Vector2d(0.0, 0.0);
    p.ub = Eigen::Vector2d(1.0, 1.0);
    out.push_back(p);
  }
  {
    auto p = qp::QpProblem::unconstrained(2.0 * Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(3));
    p.a = Eigen::MatrixXd(2, 3);
    p.a << 1.0, -1.0, 0.0, 1.0, -1.0, 0.0;
    p.b_lo = Eigen::Vector2d(0.5, -qp::kInf);
    p.b = Eigen::Vector2d(qp::kInf, 0.25);
    p.lb = Eigen::VectorXd::Constant(3, -1.0);
    p.ub = Eigen::VectorXd::Constant(3, 1.0);
    out.push_back(p);
  }
  return out;
}

}  // namespace wdn::testing

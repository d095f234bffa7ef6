#pragma once

// Dense convex QP solver:
//
//   minimize    1/2 x'Qx + f'x
//   subject to  b_lo <= A x <= b,   lb <= x <= ub
//
// Operator splitting (ADMM) on the constraint set, with Ruiz equilibration,
// residual-balancing step size, certificate based infeasibility detection and
// an active-set polishing step that turns an approximate ADMM point into a
// KKT point accurate to machine precision.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "wdn/error.hpp"

namespace wdn::qp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct QpProblem {
  Mat q;     // n x n, symmetric positive semidefinite
  Vec f;     // n
  Mat a;     // m x n
  Vec b_lo;  // m, may hold -inf
  Vec b;     // m, may hold +inf
  Vec lb;    // n
  Vec ub;    // n

  int n() const { return static_cast<int>(f.size()); }
  int m() const { return static_cast<int>(a.rows()); }

  // Unconstrained-row problem of dimension n.
  static QpProblem unconstrained(Mat q, Vec f) {
    const auto n = f.size();
    QpProblem p;
    p.q = std::move(q);
    p.f = std::move(f);
    p.a.resize(0, n);
    p.b_lo.resize(0);
    p.b.resize(0);
    p.lb = Vec::Constant(n, -kInf);
    p.ub = Vec::Constant(n, kInf);
    return p;
  }
};

enum class QpStatus { optimal, infeasible, unbounded, max_iterations };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "Optimal";
    case QpStatus::infeasible: return "Infeasible";
    case QpStatus::unbounded: return "Unbounded";
    case QpStatus::max_iterations: return "MaxIterations";
  }
  return "?";
}

struct QpResult {
  QpStatus status = QpStatus::max_iterations;
  Vec x;
  double objective = 0.0;
  double primal_residual = kInf;
  double dual_residual = kInf;
  int iterations = 0;
  bool polished = false;
  bool ridge_added = false;
  Vec y_rows;    // multipliers of b_lo <= Ax <= b (negative: lower active)
  Vec y_bounds;  // multipliers of lb <= x <= ub
  // Constraint rows of the independent sub-problems that did not reach
  // optimality (all rows of a failed single-block problem).
  std::vector<int> failed_rows;
};

struct QpSettings {
  double tol = 1e-6;
  int max_iter = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  double relaxation = 1.6;
  int check_every = 10;
  int scaling_iters = 10;
  bool adaptive_rho = true;
  bool polish = true;
  double infeasibility_tol = 1e-6;
  // Polishing is first attempted once ADMM residuals fall below this.
  double polish_trigger = 0.1;
  int polish_attempts = 2;  // intermediate polish tries per solve
};

namespace detail {

inline double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Row set of one independent block: rows with at most `kSparseRow` nonzeros
// are stored as index lists, the rest as a dense block (GEMM friendly).
struct Rows {
  static constexpr int kSparseRow = 16;

  int n = 0;
  std::vector<int> dense_ids;   // row ids (into the block's row numbering)
  Mat dense;                    // dense_ids.size() x n
  std::vector<int> sparse_ids;
  std::vector<std::vector<std::pair<int, double>>> sparse;

  int m() const { return static_cast<int>(dense_ids.size() + sparse_ids.size()); }

  void build(const Mat& a) {
    n = static_cast<int>(a.cols());
    std::vector<int> d;
    for (int r = 0; r < a.rows(); ++r) {
      int nnz = 0;
      for (int c = 0; c < n; ++c) nnz += a(r, c) != 0.0;
      if (nnz > kSparseRow) {
        d.push_back(r);
      } else {
        sparse_ids.push_back(r);
        std::vector<std::pair<int, double>> row;
        for (int c = 0; c < n; ++c) {
          if (a(r, c) != 0.0) row.emplace_back(c, a(r, c));
        }
        sparse.push_back(std::move(row));
      }
    }
    dense_ids = d;
    dense.resize(static_cast<Eigen::Index>(d.size()), n);
    for (std::size_t i = 0; i < d.size(); ++i) dense.row(static_cast<Eigen::Index>(i)) = a.row(d[i]);
  }

  // out = A x
  void mul(const Vec& x, Vec& out) const {
    if (!dense_ids.empty()) {
      Vec t = dense * x;
      for (std::size_t i = 0; i < dense_ids.size(); ++i) out[dense_ids[i]] = t[static_cast<Eigen::Index>(i)];
    }
    for (std::size_t i = 0; i < sparse_ids.size(); ++i) {
      double s = 0.0;
      for (const auto& [c, v] : sparse[i]) s += v * x[c];
      out[sparse_ids[i]] = s;
    }
  }

  // out += A' y
  void mul_t_add(const Vec& y, Vec& out) const {
    if (!dense_ids.empty()) {
      Vec yd(static_cast<Eigen::Index>(dense_ids.size()));
      for (std::size_t i = 0; i < dense_ids.size(); ++i) yd[static_cast<Eigen::Index>(i)] = y[dense_ids[i]];
      out.noalias() += dense.transpose() * yd;
    }
    for (std::size_t i = 0; i < sparse_ids.size(); ++i) {
      const double yi = y[sparse_ids[i]];
      if (yi == 0.0) continue;
      for (const auto& [c, v] : sparse[i]) out[c] += v * yi;
    }
  }

  // k += A' diag(w) A restricted to rows with mask (empty mask: all rows).
  void add_gram(const Vec& w, Mat& k, const std::vector<char>* mask = nullptr) const {
    if (!dense_ids.empty()) {
      std::vector<int> sel;
      for (std::size_t i = 0; i < dense_ids.size(); ++i) {
        const int r = dense_ids[i];
        if ((!mask || (*mask)[r]) && w[r] != 0.0) sel.push_back(static_cast<int>(i));
      }
      if (!sel.empty()) {
        Mat s(static_cast<Eigen::Index>(sel.size()), n);
        for (std::size_t i = 0; i < sel.size(); ++i) {
          s.row(static_cast<Eigen::Index>(i)) = std::sqrt(w[dense_ids[sel[i]]]) * dense.row(sel[i]);
        }
        k.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose());
      }
    }
    for (std::size_t i = 0; i < sparse_ids.size(); ++i) {
      const int r = sparse_ids[i];
      if ((mask && !(*mask)[r]) || w[r] == 0.0) continue;
      for (const auto& [c1, v1] : sparse[i]) {
        for (const auto& [c2, v2] : sparse[i]) {
          if (c1 >= c2) k(c1, c2) += w[r] * v1 * v2;
        }
      }
    }
  }

  void scale(const Vec& row_scale, const Vec& col_scale) {
    if (!dense_ids.empty()) {
      Vec rs(static_cast<Eigen::Index>(dense_ids.size()));
      for (std::size_t i = 0; i < dense_ids.size(); ++i) rs[static_cast<Eigen::Index>(i)] = row_scale[dense_ids[i]];
      dense = rs.asDiagonal() * dense * col_scale.asDiagonal();
    }
    for (std::size_t i = 0; i < sparse_ids.size(); ++i) {
      for (auto& [c, v] : sparse[i]) v *= row_scale[sparse_ids[i]] * col_scale[c];
    }
  }

  // Column-wise and row-wise inf norms.
  void norms(Vec& col, Vec& row) const {
    col = Vec::Zero(n);
    row = Vec::Zero(m());
    if (!dense_ids.empty()) {
      const Vec rm = dense.cwiseAbs().rowwise().maxCoeff();
      col = dense.cwiseAbs().colwise().maxCoeff().transpose();
      for (std::size_t i = 0; i < dense_ids.size(); ++i) row[dense_ids[i]] = rm[static_cast<Eigen::Index>(i)];
    }
    for (std::size_t i = 0; i < sparse_ids.size(); ++i) {
      double rm = 0.0;
      for (const auto& [c, v] : sparse[i]) {
        rm = std::max(rm, std::abs(v));
        col[c] = std::max(col[c], std::abs(v));
      }
      row[sparse_ids[i]] = rm;
    }
  }
};

// ADMM workspace for one independent block. Matrices are fixed at
// construction; linear term and bounds may change between solves.
class Block {
 public:
  Block(const Mat& q, const Mat& a, const QpSettings& s) : settings_(s) {
    n_ = static_cast<int>(q.rows());
    m_ = static_cast<int>(a.rows());
    p_ = q;
    rows_.build(a);
    equilibrate();
    rho_ = settings_.rho;
  }

  int n() const { return n_; }
  int m() const { return m_; }

  QpResult solve(const Vec& f, const Vec& lo, const Vec& hi, bool warm) {
    // Scaled data. Constraint rows are [A; I].
    q_ = cost_scale_ * d_.cwiseProduct(f);
    l_.resize(m_ + n_);
    u_.resize(m_ + n_);
    for (int i = 0; i < m_ + n_; ++i) {
      l_[i] = std::isfinite(lo[i]) ? e_[i] * lo[i] : -kInf;
      u_[i] = std::isfinite(hi[i]) ? e_[i] * hi[i] : kInf;
    }
    set_row_rho();
    if (!warm || x_.size() != n_) {
      x_ = Vec::Zero(n_);
      z_ = Vec::Zero(m_ + n_);
      y_ = Vec::Zero(m_ + n_);
    }
    return run();
  }

 private:
  void equilibrate() {
    d_ = Vec::Ones(n_);
    e_ = Vec::Ones(m_ + n_);
    cost_scale_ = 1.0;
    box_ = Vec::Ones(n_);  // scaled coefficient of the identity rows
    for (int it = 0; it < settings_.scaling_iters; ++it) {
      Vec col_a, row_a;
      rows_.norms(col_a, row_a);
      Vec col(n_);
      for (int j = 0; j < n_; ++j) {
        col[j] = std::max({p_.col(j).cwiseAbs().maxCoeff(), col_a[j], std::abs(box_[j])});
      }
      Vec dj(n_), ei(m_ + n_);
      for (int j = 0; j < n_; ++j) dj[j] = col[j] > 1e-8 ? 1.0 / std::sqrt(col[j]) : 1.0;
      for (int i = 0; i < m_; ++i) ei[i] = row_a[i] > 1e-8 ? 1.0 / std::sqrt(row_a[i]) : 1.0;
      for (int j = 0; j < n_; ++j) {
        const double r = std::abs(box_[j]);
        ei[m_ + j] = r > 1e-8 ? 1.0 / std::sqrt(r) : 1.0;
      }
      dj = dj.cwiseMin(1e4).cwiseMax(1e-4);
      ei = ei.cwiseMin(1e4).cwiseMax(1e-4);
      p_ = dj.asDiagonal() * p_ * dj.asDiagonal();
      rows_.scale(ei.head(m_), dj);
      for (int j = 0; j < n_; ++j) box_[j] *= ei[m_ + j] * dj[j];
      d_ = d_.cwiseProduct(dj);
      e_ = e_.cwiseProduct(ei);
    }
    // Cost scaling keeps the Hessian at unit magnitude.
    double pn = 0.0;
    for (int j = 0; j < n_; ++j) pn += p_.col(j).cwiseAbs().maxCoeff();
    pn = n_ > 0 ? pn / n_ : 0.0;
    cost_scale_ = pn > 1e-8 ? std::clamp(1.0 / pn, 1e-4, 1e4) : 1.0;
    p_ *= cost_scale_;
  }

  void set_row_rho() {
    Vec next(m_ + n_);
    for (int i = 0; i < m_ + n_; ++i) {
      if (!std::isfinite(l_[i]) && !std::isfinite(u_[i])) {
        next[i] = 1e-6;
      } else if (std::abs(u_[i] - l_[i]) < 1e-12) {
        next[i] = 1e3 * rho_;
      } else {
        next[i] = rho_;
      }
    }
    if (rho_vec_.size() == next.size() && rho_vec_ == next) return;
    rho_vec_ = next;
    factor();
  }

  void factor() {
    Mat k = p_;
    k.diagonal().array() += settings_.sigma;
    rows_.add_gram(rho_vec_.head(m_), k);
    for (int j = 0; j < n_; ++j) k(j, j) += rho_vec_[m_ + j] * box_[j] * box_[j];
    llt_.compute(k);
  }

  void mul_c(const Vec& x, Vec& out) const {
    out.resize(m_ + n_);
    rows_.mul(x, out);
    out.tail(n_) = box_.cwiseProduct(x);
  }
  void mul_ct(const Vec& y, Vec& out) const {
    out = box_.cwiseProduct(y.tail(n_));
    rows_.mul_t_add(y, out);
  }

  // Unscaled residual norms and thresholds.
  struct Residuals {
    double prim, dual, eps_prim, eps_dual, prim_scale, dual_scale;
  };
  Residuals residuals(const Vec& x, const Vec& z, const Vec& y) const {
    Vec cx;
    mul_c(x, cx);
    const Vec einv = e_.cwiseInverse();
    const double prim = inf_norm(einv.cwiseProduct(cx - z));
    const double cx_n = inf_norm(einv.cwiseProduct(cx));
    const double z_n = inf_norm(einv.cwiseProduct(z));
    Vec px = p_ * x;
    Vec cty;
    mul_ct(y, cty);
    const Vec dinv = d_.cwiseInverse() / cost_scale_;
    const double dual = inf_norm(dinv.cwiseProduct(px + q_ + cty));
    const double px_n = inf_norm(dinv.cwiseProduct(px));
    const double cty_n = inf_norm(dinv.cwiseProduct(cty));
    const double q_n = inf_norm(dinv.cwiseProduct(q_));
    const double t = settings_.tol;
    const double ps = std::max(cx_n, z_n);
    const double ds = std::max({px_n, cty_n, q_n});
    return {prim, dual, t + t * ps, t + t * ds, ps, ds};
  }

  bool primal_infeasible(const Vec& dy) const {
    // Project onto the normal cone of the box [l, u].
    Vec d = dy;
    for (int i = 0; i < m_ + n_; ++i) {
      if (!std::isfinite(u_[i]) && d[i] > 0) d[i] = 0;
      if (!std::isfinite(l_[i]) && d[i] < 0) d[i] = 0;
    }
    const Vec dyu = e_.cwiseProduct(d) / cost_scale_;
    const double nrm = inf_norm(dyu);
    if (nrm < 1e-12) return false;
    Vec ctd;
    mul_ct(d, ctd);
    const double ct_n = inf_norm(d_.cwiseInverse().cwiseProduct(ctd) / cost_scale_);
    double support = 0.0;
    for (int i = 0; i < m_ + n_; ++i) {
      if (d[i] > 0) support += u_[i] * d[i];
      if (d[i] < 0) support += l_[i] * d[i];
    }
    support /= cost_scale_;
    const double eps = settings_.infeasibility_tol;
    return ct_n <= eps * nrm && support <= -eps * nrm;
  }

  bool dual_infeasible(const Vec& dx) const {
    const Vec dxu = d_.cwiseProduct(dx);
    const double nrm = inf_norm(dxu);
    if (nrm < 1e-12) return false;
    const double eps = settings_.infeasibility_tol;
    const Vec pdx = d_.cwiseInverse().cwiseProduct(p_ * dx) / cost_scale_;
    if (inf_norm(pdx) > eps * nrm) return false;
    if (q_.dot(dx) / cost_scale_ > -eps * nrm) return false;
    Vec cdx;
    mul_c(dx, cdx);
    const Vec cdxu = e_.cwiseInverse().cwiseProduct(cdx);
    for (int i = 0; i < m_ + n_; ++i) {
      if (std::isfinite(u_[i]) && cdxu[i] > eps * nrm) return false;
      if (std::isfinite(l_[i]) && cdxu[i] < -eps * nrm) return false;
    }
    return true;
  }

  // Equality-constrained solve on a guessed active set, refined by a few
  // primal-dual active-set rounds; returns the polished scaled (x, y) when
  // it verifies as a KKT point.
  bool polish(Vec& xp, Vec& yp) const {
    const int mt = m_ + n_;
    std::vector<char> lower(mt, 0), upper(mt, 0), active(mt, 0);
    for (int i = 0; i < mt; ++i) {
      if (z_[i] - l_[i] < -y_[i]) {
        lower[i] = 1;
      } else if (u_[i] - z_[i] < y_[i]) {
        upper[i] = 1;
      }
    }
    const double delta = 1e-7;
    Vec x, y;
    for (int round = 0; round < 8; ++round) {
      Vec target = Vec::Zero(mt);
      Vec w = Vec::Zero(mt);
      for (int i = 0; i < mt; ++i) {
        active[i] = lower[i] || upper[i];
        if (lower[i]) target[i] = l_[i];
        if (upper[i]) target[i] = u_[i];
        if (active[i]) w[i] = 1.0 / delta;
      }
      if (!solve_active(active, w, target, delta, x, y)) return false;

      // Primal feasibility of inactive rows and multiplier signs of active
      // rows decide the next working set.
      Vec cx;
      mul_c(x, cx);
      bool changed = false;
      for (int i = 0; i < mt; ++i) {
        const bool fixed = std::abs(u_[i] - l_[i]) <= 1e-12;
        if (!active[i]) {
          if (cx[i] < l_[i] - settings_.tol) {
            lower[i] = 1;
            changed = true;
          } else if (cx[i] > u_[i] + settings_.tol) {
            upper[i] = 1;
            changed = true;
          }
        } else if (!fixed) {
          if (lower[i] && y[i] > 1e-9) {
            lower[i] = 0;
            changed = true;
          } else if (upper[i] && y[i] < -1e-9) {
            upper[i] = 0;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    for (int i = 0; i < mt; ++i) {
      if (std::abs(u_[i] - l_[i]) <= 1e-12) continue;
      if (lower[i] && y[i] > 1e-7) return false;
      if (upper[i] && y[i] < -1e-7) return false;
    }
    Vec cx;
    mul_c(x, cx);
    Vec zp = cx.cwiseMax(l_).cwiseMin(u_);
    const auto r = residuals(x, zp, y);
    if (!(r.prim <= r.eps_prim) || !(r.dual <= r.eps_dual)) return false;
    xp = x;
    yp = y;
    return true;
  }

  // Regularised reduced KKT on the active rows, refined against the exact
  // system  P x + C_a' y = -q,  C_a x = target.
  bool solve_active(const std::vector<char>& active, const Vec& w,
                    const Vec& target, double delta, Vec& x, Vec& y) const {
    const int mt = m_ + n_;
    Mat k = p_;
    k.diagonal().array() += delta;
    rows_.add_gram(w.head(m_), k, &active);
    for (int j = 0; j < n_; ++j) k(j, j) += w[m_ + j] * box_[j] * box_[j];
    Eigen::LLT<Mat> llt(k);
    if (llt.info() != Eigen::Success) return false;

    auto apply_exact = [&](const Vec& xv, const Vec& yv, Vec& rx, Vec& ry) {
      Vec cty;
      mul_ct(yv, cty);
      rx = p_ * xv + cty;
      Vec cx;
      mul_c(xv, cx);
      ry = Vec::Zero(mt);
      for (int i = 0; i < mt; ++i) {
        if (active[i]) ry[i] = cx[i];
      }
    };
    auto solve_reg = [&](const Vec& bx, const Vec& by, Vec& xv, Vec& yv) {
      // [K1 C'; C -delta] with K1 = P + delta I, eliminate y = (C x - by)/delta.
      Vec t = by.cwiseProduct(w);
      Vec ct;
      mul_ct(t, ct);
      xv = llt.solve(bx + ct);
      Vec cx;
      mul_c(xv, cx);
      yv = Vec::Zero(mt);
      for (int i = 0; i < mt; ++i) {
        if (active[i]) yv[i] = (cx[i] - by[i]) / delta;
      }
    };
    const Vec bx = -q_;
    solve_reg(bx, target, x, y);
    for (int it = 0; it < 5; ++it) {
      Vec rx, ry;
      apply_exact(x, y, rx, ry);
      Vec ex = bx - rx;
      Vec ey = target - ry;
      for (int i = 0; i < mt; ++i) {
        if (!active[i]) ey[i] = 0.0;
      }
      // The regularised operator differs from the exact one by +delta I on
      // x and -delta I on y; refinement uses it as a preconditioner.
      Vec dx, dy;
      solve_reg(ex, ey, dx, dy);
      x += dx;
      y += dy;
    }
    return true;
  }

  std::vector<char> active_set() const {
    std::vector<char> act(static_cast<std::size_t>(m_ + n_), 0);
    for (int i = 0; i < m_ + n_; ++i) {
      if (z_[i] - l_[i] < -y_[i]) act[i] = 1;
      else if (u_[i] - z_[i] < y_[i]) act[i] = 2;
    }
    return act;
  }

  QpResult finish(QpStatus status, int iters, bool polished) const {
    QpResult res;
    res.status = status;
    res.iterations = iters;
    res.polished = polished;
    res.x = d_.cwiseProduct(x_);
    const Vec yu = e_.cwiseProduct(y_) / cost_scale_;
    res.y_rows = yu.head(m_);
    res.y_bounds = yu.tail(n_);
    const auto r = residuals(x_, z_, y_);
    res.primal_residual = r.prim;
    res.dual_residual = r.dual;
    return res;
  }

  QpResult run() {
    const double alpha = settings_.relaxation;
    const double sigma = settings_.sigma;
    Vec x_prev = x_, y_prev = y_;
    Vec rhs(n_), cty, ct, cx(m_ + n_);
    std::vector<char> last_active, act_polished;
    int attempts = 0;
    int it = 0;
    for (it = 1; it <= settings_.max_iter; ++it) {
      x_prev = x_;
      y_prev = y_;
      Vec t = rho_vec_.cwiseProduct(z_) - y_;
      mul_ct(t, ct);
      rhs = sigma * x_ - q_ + ct;
      Vec xt = llt_.solve(rhs);
      mul_c(xt, cx);
      x_ = alpha * xt + (1.0 - alpha) * x_;
      Vec zh = alpha * cx + (1.0 - alpha) * z_;
      Vec zn = (zh + y_.cwiseQuotient(rho_vec_)).cwiseMax(l_).cwiseMin(u_);
      y_ += rho_vec_.cwiseProduct(zh - zn);
      z_ = zn;

      if (it % settings_.check_every != 0 && it != settings_.max_iter) continue;
      const auto r = residuals(x_, z_, y_);
      if (r.prim <= r.eps_prim && r.dual <= r.eps_dual) {
        bool polished = false;
        if (settings_.polish) {
          Vec xp, yp;
          if (polish(xp, yp)) {
            x_ = xp;
            y_ = yp;
            Vec c2;
            mul_c(x_, c2);
            z_ = c2.cwiseMax(l_).cwiseMin(u_);
            polished = true;
          }
        }
        return finish(QpStatus::optimal, it, polished);
      }
      // Attempt polishing once the active-set guess settles.
      std::vector<char> act = active_set();
      const bool settled = act == last_active;
      last_active = std::move(act);
      if (settings_.polish && settled && act_polished != last_active && attempts < settings_.polish_attempts &&
          std::max(r.prim / std::max(r.prim_scale, 1.0), r.dual / std::max(r.dual_scale, 1.0)) <
              settings_.polish_trigger) {
        act_polished = last_active;
        ++attempts;
        Vec xp, yp;
        if (polish(xp, yp)) {
          x_ = xp;
          y_ = yp;
          Vec c2;
          mul_c(x_, c2);
          z_ = c2.cwiseMax(l_).cwiseMin(u_);
          return finish(QpStatus::optimal, it, true);
        }
      }
      if (primal_infeasible(y_ - y_prev)) return finish(QpStatus::infeasible, it, false);
      if (dual_infeasible(x_ - x_prev)) return finish(QpStatus::unbounded, it, false);
      if (settings_.adaptive_rho) {
        const double rp = r.prim / std::max(r.prim_scale, 1e-12);
        const double rd = r.dual / std::max(r.dual_scale, 1e-12);
        const double ratio = std::sqrt(rp / std::max(rd, 1e-30));
        const double rho_new = std::clamp(rho_ * ratio, 1e-6, 1e6);
        if (rho_new > 5.0 * rho_ || rho_new < 0.2 * rho_) {
          rho_ = rho_new;
          set_row_rho();
        }
      }
    }
    return finish(QpStatus::max_iterations, settings_.max_iter, false);
  }

  QpSettings settings_;
  int n_ = 0, m_ = 0;
  Mat p_;
  Rows rows_;
  Vec box_, d_, e_;
  double cost_scale_ = 1.0;
  double rho_ = 0.1;
  Vec rho_vec_, q_, l_, u_;
  Vec x_, z_, y_;
  Eigen::LLT<Mat> llt_;
};

}  // namespace detail

inline void check_dimensions(const QpProblem& p) {
  const auto n = p.f.size();
  const auto m = p.a.rows();
  if (p.q.rows() != n || p.q.cols() != n || p.a.cols() != n || p.b.size() != m || p.b_lo.size() != m ||
      p.lb.size() != n || p.ub.size() != n) {
    throw Error(ErrorCode::dimension_mismatch, "qp: inconsistent problem dimensions");
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (p.lb[j] > p.ub[j]) throw Error(ErrorCode::invalid_argument, "qp: lb > ub");
  }
}

/// Reusable solver for a fixed (Q, A) pair. The problem splits into
/// independent blocks (connected components of the variable coupling graph
/// through Q and A); each block keeps its own scaling, step size and last
/// iterate, and a block whose data did not change is not re-solved.
class QpSolver {
 public:
  QpSolver(const QpProblem& p, QpSettings settings = {}) : settings_(settings) {
    check_dimensions(p);
    n_ = p.n();
    m_ = p.m();
    q_full_ = p.q;
    check_convexity();
    split(p);
  }

  bool ridge_added() const { return ridge_added_; }
  int n_blocks() const { return static_cast<int>(blocks_.size()); }

  QpResult solve(const Vec& f, const Vec& b_lo, const Vec& b, const Vec& lb, const Vec& ub) {
    if (f.size() != n_ || b_lo.size() != m_ || b.size() != m_ || lb.size() != n_ || ub.size() != n_) {
      throw Error(ErrorCode::dimension_mismatch, "qp: update has inconsistent dimensions");
    }
    QpResult out;
    out.x = Vec::Zero(n_);
    out.y_rows = Vec::Zero(m_);
    out.y_bounds = Vec::Zero(n_);
    out.status = QpStatus::optimal;
    out.polished = true;
    out.primal_residual = 0.0;
    out.dual_residual = 0.0;
    // Rows touching no variable.
    for (int r : empty_rows_) {
      const double viol = std::max(b_lo[r], -b[r]);
      out.primal_residual = std::max(out.primal_residual, std::max(0.0, viol));
      if (b_lo[r] > settings_.tol || b[r] < -settings_.tol) {
        out.status = QpStatus::infeasible;
        out.failed_rows.push_back(r);
      }
    }
    for (auto& blk : blocks_) {
      const int bn = static_cast<int>(blk.vars.size());
      const int bm = static_cast<int>(blk.rows.size());
      Vec fb(bn), lo(bm + bn), hi(bm + bn);
      for (int j = 0; j < bn; ++j) fb[j] = f[blk.vars[j]];
      for (int i = 0; i < bm; ++i) {
        lo[i] = b_lo[blk.rows[i]];
        hi[i] = b[blk.rows[i]];
      }
      for (int j = 0; j < bn; ++j) {
        lo[bm + j] = lb[blk.vars[j]];
        hi[bm + j] = ub[blk.vars[j]];
      }
      const bool same = blk.last && blk.f.size() == fb.size() && blk.f == fb && blk.lo == lo && blk.hi == hi;
      if (!same) {
        blk.last = blk.ws->solve(fb, lo, hi, blk.last.has_value());
        blk.f = fb;
        blk.lo = lo;
        blk.hi = hi;
      }
      const QpResult& r = *blk.last;
      for (int j = 0; j < bn; ++j) {
        out.x[blk.vars[j]] = r.x[j];
        out.y_bounds[blk.vars[j]] = r.y_bounds[j];
      }
      for (int i = 0; i < bm; ++i) out.y_rows[blk.rows[i]] = r.y_rows[i];
      out.iterations = std::max(out.iterations, r.iterations);
      out.primal_residual = std::max(out.primal_residual, r.primal_residual);
      out.dual_residual = std::max(out.dual_residual, r.dual_residual);
      out.polished = out.polished && r.polished;
      out.status = worse(out.status, r.status);
      if (r.status != QpStatus::optimal) out.failed_rows.insert(out.failed_rows.end(), blk.rows.begin(), blk.rows.end());
    }
    std::sort(out.failed_rows.begin(), out.failed_rows.end());
    out.ridge_added = ridge_added_;
    out.objective = 0.5 * out.x.dot(q_full_ * out.x) + f.dot(out.x);
    return out;
  }

  QpResult solve(const QpProblem& p) { return solve(p.f, p.b_lo, p.b, p.lb, p.ub); }

 private:
  static QpStatus worse(QpStatus a, QpStatus b) {
    auto rank = [](QpStatus s) {
      switch (s) {
        case QpStatus::optimal: return 0;
        case QpStatus::max_iterations: return 1;
        case QpStatus::unbounded: return 2;
        case QpStatus::infeasible: return 3;
      }
      return 0;
    };
    return rank(a) >= rank(b) ? a : b;
  }

  void check_convexity() {
    if (n_ == 0) return;
    if (!q_full_.isApprox(q_full_.transpose(), 1e-10) &&
        (q_full_ - q_full_.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
      throw Error(ErrorCode::invalid_argument, "qp: Q must be symmetric");
    }
    // A successful factorization of Q - 1e-10 I proves Q positive definite
    // at once; only on failure are the PSD test and the ridge needed.
    Mat low = q_full_;
    low.diagonal().array() -= 1e-10;
    if (Eigen::LLT<Mat>(low).info() == Eigen::Success) return;
    Mat shifted = q_full_;
    shifted.diagonal().array() += 1e-8;
    if (Eigen::LLT<Mat>(shifted).info() != Eigen::Success) {
      Eigen::SelfAdjointEigenSolver<Mat> es(q_full_, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-8) {
        throw Error(ErrorCode::non_convex, "qp: Q is not positive semidefinite (eigenvalue " +
                                               std::to_string(es.eigenvalues().minCoeff()) + ")");
      }
    }
    q_full_.diagonal().array() += 1e-9;
    ridge_added_ = true;
  }

  void split(const QpProblem& p) {
    // Union-find over variables.
    std::vector<int> parent(static_cast<std::size_t>(n_));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
      while (parent[v] != v) v = parent[v] = parent[parent[v]];
      return v;
    };
    auto unite = [&](int a, int b) {
      a = find(a);
      b = find(b);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < i; ++j) {
        if (q_full_(i, j) != 0.0 || q_full_(j, i) != 0.0) unite(i, j);
      }
    }
    std::vector<int> row_first(static_cast<std::size_t>(m_), -1);
    for (int r = 0; r < m_; ++r) {
      for (int c = 0; c < n_; ++c) {
        if (p.a(r, c) == 0.0) continue;
        if (row_first[r] < 0) {
          row_first[r] = c;
        } else {
          unite(row_first[r], c);
        }
      }
    }
    std::vector<int> block_of(static_cast<std::size_t>(n_), -1);
    for (int v = 0; v < n_; ++v) {
      const int root = find(v);
      if (block_of[root] < 0) {
        block_of[root] = static_cast<int>(blocks_.size());
        blocks_.emplace_back();
      }
      blocks_[block_of[root]].vars.push_back(v);
    }
    for (int r = 0; r < m_; ++r) {
      if (row_first[r] < 0) {
        empty_rows_.push_back(r);
      } else {
        blocks_[block_of[find(row_first[r])]].rows.push_back(r);
      }
    }
    for (auto& blk : blocks_) {
      const int bn = static_cast<int>(blk.vars.size());
      const int bm = static_cast<int>(blk.rows.size());
      Mat qb(bn, bn), ab(bm, bn);
      for (int i = 0; i < bn; ++i) {
        for (int j = 0; j < bn; ++j) qb(i, j) = q_full_(blk.vars[i], blk.vars[j]);
      }
      for (int i = 0; i < bm; ++i) {
        for (int j = 0; j < bn; ++j) ab(i, j) = p.a(blk.rows[i], blk.vars[j]);
      }
      blk.ws = std::make_unique<detail::Block>(qb, ab, settings_);
    }
  }

  struct BlockState {
    std::vector<int> vars;
    std::vector<int> rows;
    std::unique_ptr<detail::Block> ws;
    std::optional<QpResult> last;
    Vec f, lo, hi;
  };

  QpSettings settings_;
  int n_ = 0, m_ = 0;
  Mat q_full_;
  bool ridge_added_ = false;
  std::vector<BlockState> blocks_;
  std::vector<int> empty_rows_;
};

/// One-shot solve.
inline QpResult solve(const QpProblem& p, double tol = 1e-6, int max_iter = 20000) {
  QpSettings s;
  s.tol = tol;
  s.max_iter = max_iter;
  QpSolver solver(p, s);
  return solver.solve(p);
}

struct FeasibilityResult {
  bool feasible = false;
  Vec witness;
  double violation = 0.0;  // minimal total constraint violation
};

/// Phase-1 check: minimises the total violation of b_lo <= Ax <= b over the
/// box lb <= x <= ub.
inline FeasibilityResult check_feasible(const Mat& a, const Vec& b_lo, const Vec& b, const Vec& lb, const Vec& ub,
                                        double tol = 1e-6) {
  const auto n = a.cols();
  const auto m = a.rows();
  if (b_lo.size() != m || b.size() != m || lb.size() != n || ub.size() != n) {
    throw Error(ErrorCode::dimension_mismatch, "check_feasible: inconsistent dimensions");
  }
  FeasibilityResult out;
  if (m == 0) {
    out.feasible = (lb.array() <= ub.array()).all();
    out.witness = Vec::Zero(n).cwiseMax(lb).cwiseMin(ub);
    return out;
  }
  // Variables [x, s_hi, s_lo]; rows  A x - s_hi <= b  and  A x + s_lo >= b_lo.
  const auto nv = n + 2 * m;
  QpProblem p;
  p.q = Mat::Zero(nv, nv);
  p.f = Vec::Zero(nv);
  p.f.tail(2 * m).setOnes();
  p.a = Mat::Zero(2 * m, nv);
  p.b_lo = Vec::Constant(2 * m, -kInf);
  p.b = Vec::Constant(2 * m, kInf);
  p.a.topLeftCorner(m, n) = a;
  p.a.block(0, n, m, m) = -Mat::Identity(m, m);
  p.b.head(m) = b;
  p.a.bottomLeftCorner(m, n) = a;
  p.a.block(m, n + m, m, m) = Mat::Identity(m, m);
  p.b_lo.tail(m) = b_lo;
  p.lb = Vec::Zero(nv);
  p.ub = Vec::Constant(nv, kInf);
  p.lb.head(n) = lb;
  p.ub.head(n) = ub;
  // Finite rows only need slack.
  for (Eigen::Index r = 0; r < m; ++r) {
    if (!std::isfinite(b[r])) p.ub[n + r] = 0.0;
    if (!std::isfinite(b_lo[r])) p.ub[n + m + r] = 0.0;
  }
  const auto res = solve(p, std::min(tol, 1e-7), 50000);
  out.witness = res.x.head(n);
  Vec ax = a * out.witness;
  double viol = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    viol += std::max(0.0, ax[r] - b[r]) + std::max(0.0, b_lo[r] - ax[r]);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    viol += std::max(0.0, out.witness[j] - ub[j]) + std::max(0.0, lb[j] - out.witness[j]);
  }
  out.violation = viol;
  out.feasible = viol <= tol;
  return out;
}

}  // namespace wdn::qp

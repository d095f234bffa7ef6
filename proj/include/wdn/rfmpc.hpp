#pragma once

// Robustly feasible MPC: task assembly with safety zones, the iterative
// zone generator (a relaxation towards the fixed point of zones -> plan ->
// envelope -> zones), and the receding-horizon closed loop. The loop driver
// is generic over the planner so the distributed and supervised controllers
// reuse it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wdn/error.hpp"
#include "wdn/hydraulics.hpp"
#include "wdn/ltv.hpp"
#include "wdn/network.hpp"
#include "wdn/qp.hpp"
#include "wdn/quality.hpp"
#include "wdn/uncertainty.hpp"

namespace wdn {

/// One control strategy: objective weights, references and constraints.
/// Output fields hold one entry per monitored output, input fields one per
/// booster.
struct MpcTask {
  double w_u = 1.0;   // penalty on u^2
  double w_du = 10.0; // penalty on (u(k) - u(k-1))^2
  double w_y = 0.0;   // penalty on (y - y_ref)^2
  std::vector<double> y_ref, y_min, y_max, y_terminal, terminal_tol;
  std::vector<double> u_min, u_max, rate_max;
  int control_horizon = 12;  // quality steps applied before re-planning

  static MpcTask from_network(const Network& net) {
    MpcTask t;
    for (const auto& m : net.monitored) {
      t.y_ref.push_back(m.y_min);
      t.y_min.push_back(m.y_min);
      t.y_max.push_back(m.y_max);
      t.y_terminal.push_back(m.y_terminal);
      t.terminal_tol.push_back(m.terminal_tol);
    }
    for (const auto& b : net.boosters) {
      t.u_min.push_back(b.u_min);
      t.u_max.push_back(b.u_max);
      t.rate_max.push_back(b.rate_max);
    }
    t.control_horizon = net.time_grid.steps_per_hydraulic();
    return t;
  }

  int n_out() const { return static_cast<int>(y_min.size()); }
  int n_in() const { return static_cast<int>(u_min.size()); }

  void check(int n_in_expected, int n_out_expected) const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::invalid_argument, "mpc task: " + m); };
    const auto no = static_cast<std::size_t>(n_out_expected), ni = static_cast<std::size_t>(n_in_expected);
    if (y_ref.size() != no || y_min.size() != no || y_max.size() != no || y_terminal.size() != no ||
        terminal_tol.size() != no) {
      throw Error(ErrorCode::dimension_mismatch, "mpc task: output fields need " + std::to_string(no) + " entries");
    }
    if (u_min.size() != ni || u_max.size() != ni || rate_max.size() != ni) {
      throw Error(ErrorCode::dimension_mismatch, "mpc task: input fields need " + std::to_string(ni) + " entries");
    }
    if (w_u < 0.0 || w_du < 0.0 || w_y < 0.0) fail("weights must be >= 0");
    if (!(w_u > 0.0 || w_y > 0.0)) fail("one of w_u, w_y must be > 0");
    if (control_horizon < 1) fail("control horizon must be >= 1");
    for (std::size_t i = 0; i < no; ++i) {
      if (!(y_min[i] < y_max[i])) fail("y_min must be < y_max");
      if (terminal_tol[i] < 0.0) fail("terminal tolerance must be >= 0");
    }
    for (std::size_t j = 0; j < ni; ++j) {
      if (!(u_min[j] <= u_max[j])) fail("u_min must be <= u_max");
      if (!(rate_max[j] > 0.0)) fail("rate bound must be > 0");
    }
  }
  bool operator==(const MpcTask&) const = default;
};

/// The task in force at each step of a prediction horizon (constant in the
/// ordinary case, blended while a strategy switch is in progress).
struct TaskProfile {
  std::vector<MpcTask> steps;

  static TaskProfile constant(const MpcTask& t, int horizon) {
    return TaskProfile{std::vector<MpcTask>(static_cast<std::size_t>(horizon), t)};
  }
  int horizon() const { return static_cast<int>(steps.size()); }
  const MpcTask& operator[](int k) const { return steps[static_cast<std::size_t>(k)]; }
  const MpcTask& front() const { return steps.front(); }
};

/// Per output and step tightenings (H x n_out); both sides are >= 0.
struct SafetyZones {
  Mat upper;
  Mat lower;

  static SafetyZones zero(int horizon, int n_out) {
    return {Mat::Zero(horizon, n_out), Mat::Zero(horizon, n_out)};
  }
  int horizon() const { return static_cast<int>(upper.rows()); }
  double mass() const { return upper.sum() + lower.sum(); }
  // Drops the first `shift` steps and keeps `horizon` rows (zero padded).
  SafetyZones shifted(int shift, int horizon) const {
    SafetyZones z = zero(horizon, static_cast<int>(upper.cols()));
    for (int k = 0; k < horizon && k + shift < this->horizon(); ++k) {
      z.upper.row(k) = upper.row(k + shift);
      z.lower.row(k) = lower.row(k + shift);
    }
    return z;
  }
  bool operator==(const SafetyZones& o) const { return upper == o.upper && lower == o.lower; }
};

/// Assembled MPC problem and the map from (output, step) to QP row.
struct MpcQp {
  qp::QpProblem qp;
  int horizon = 0;
  int n_in = 0;
  int n_out = 0;
  std::vector<int> row_of;  // index i*H + k -> constraint row, -1 if dropped
  int n_output_rows = 0;

  bool controllable(int i, int k) const { return row_of[static_cast<std::size_t>(i * horizon + k)] >= 0; }
};

namespace detail {

inline void check_shapes(const LtvResponseModel& m, const TaskProfile& p, const SafetyZones& z, const Vec& u_prev) {
  if (p.horizon() != m.horizon) throw Error(ErrorCode::dimension_mismatch, "task profile length differs from the model horizon");
  for (const auto& t : p.steps) t.check(m.n_in, m.n_out);
  if (z.upper.rows() != m.horizon || z.lower.rows() != m.horizon || z.upper.cols() != m.n_out ||
      z.lower.cols() != m.n_out) {
    throw Error(ErrorCode::dimension_mismatch, "safety zones must be horizon x outputs");
  }
  if ((z.upper.array() < 0.0).any() || (z.lower.array() < 0.0).any()) {
    throw Error(ErrorCode::invalid_argument, "safety zones must be >= 0");
  }
  if (u_prev.size() != m.n_in) throw Error(ErrorCode::dimension_mismatch, "u_prev must have one entry per input");
}

}  // namespace detail

/// Refreshes the output row bounds for new zones (or a new free response).
/// Throws zones_exhaust_band when a tightened band is empty.
inline void set_output_bounds(MpcQp& mq, const LtvResponseModel& m, const TaskProfile& p, const SafetyZones& z) {
  const int H = m.horizon;
  for (int i = 0; i < m.n_out; ++i) {
    for (int k = 0; k < H; ++k) {
      const auto& t = p[k];
      const auto ii = static_cast<std::size_t>(i);
      double lo = t.y_min[ii] + z.lower(k, i);
      double hi = t.y_max[ii] - z.upper(k, i);
      if (!(lo < hi)) {
        throw Error(ErrorCode::zones_exhaust_band, "zones exhaust constraint band at output " + std::to_string(i) +
                                                       " step " + std::to_string(m.first_step + k));
      }
      if (k == H - 1) {
        lo = std::max(lo, t.y_terminal[ii] - t.terminal_tol[ii]);
        hi = std::min(hi, t.y_terminal[ii] + t.terminal_tol[ii]);
        if (lo > hi) {
          throw Error(ErrorCode::zones_exhaust_band, "zones exhaust constraint band at the terminal step of output " +
                                                         std::to_string(i));
        }
      }
      const int r = mq.row_of[static_cast<std::size_t>(i * H + k)];
      if (r < 0) continue;
      mq.qp.b_lo[r] = lo - m.y_free(k, i);
      mq.qp.b[r] = hi - m.y_free(k, i);
    }
  }
}

namespace detail {

/// Outputs whose tightened band is empty at some step.
inline std::vector<int> exhausted_outputs(const TaskProfile& p, const SafetyZones& z) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < z.upper.cols(); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    for (int k = 0; k < p.horizon(); ++k) {
      const double lo = p[k].y_min[ii] + z.lower(k, i), hi = p[k].y_max[ii] - z.upper(k, i);
      bool empty = !(lo < hi);
      if (k == p.horizon() - 1) {
        empty = empty || std::max(lo, p[k].y_terminal[ii] - p[k].terminal_tol[ii]) >
                             std::min(hi, p[k].y_terminal[ii] + p[k].terminal_tol[ii]);
      }
      if (empty) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Builds the MPC quadratic program over the stacked inputs x[j*H + l].
/// Output rows whose gains are all below `ctrl_eps` cannot be influenced by
/// any input over the horizon (transport delay) and are left out.
inline MpcQp assemble_mpc(const LtvResponseModel& m, const TaskProfile& p, const SafetyZones& z, const Vec& u_prev,
                          double ctrl_eps = 1e-12) {
  detail::check_shapes(m, p, z, u_prev);
  const int H = m.horizon, ni = m.n_in, no = m.n_out, n = ni * H;
  MpcQp mq;
  mq.horizon = H;
  mq.n_in = ni;
  mq.n_out = no;
  auto& q = mq.qp;
  q.q = Mat::Zero(n, n);
  q.f = Vec::Zero(n);
  q.lb.resize(n);
  q.ub.resize(n);
  for (int j = 0; j < ni; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    for (int l = 0; l < H; ++l) {
      const int v = j * H + l;
      const auto& t = p[l];
      q.q(v, v) += 2.0 * t.w_u;
      const double c = 2.0 * t.w_du;
      q.q(v, v) += c;
      if (l > 0) {
        q.q(v - 1, v - 1) += c;
        q.q(v, v - 1) -= c;
        q.q(v - 1, v) -= c;
      } else {
        q.f[v] -= c * u_prev[j];
      }
      q.lb[v] = t.u_min[jj];
      q.ub[v] = t.u_max[jj];
    }
  }
  // Tracking term, assembled block by block in a fixed order.
  bool tracking = false;
  for (const auto& t : p.steps) tracking = tracking || t.w_y > 0.0;
  if (tracking) {
    for (int i = 0; i < no; ++i) {
      Vec w(H), e(H);
      for (int k = 0; k < H; ++k) {
        w[k] = 2.0 * p[k].w_y;
        e[k] = m.y_free(k, i) - p[k].y_ref[static_cast<std::size_t>(i)];
      }
      for (int j1 = 0; j1 < ni; ++j1) {
        const Mat g1 = m.gains.block(i * H, j1 * H, H, H);
        const Mat wg1 = w.asDiagonal() * g1;
        q.f.segment(j1 * H, H).noalias() += wg1.transpose() * e;
        for (int j2 = 0; j2 < ni; ++j2) {
          const Mat g2 = m.gains.block(i * H, j2 * H, H, H);
          q.q.block(j1 * H, j2 * H, H, H).noalias() += wg1.transpose() * g2;
        }
      }
    }
  }
  // Output rows.
  mq.row_of.assign(static_cast<std::size_t>(no * H), -1);
  std::vector<int> out_rows;
  for (int i = 0; i < no; ++i) {
    for (int k = 0; k < H; ++k) {
      double reach = 0.0;
      for (int j = 0; j < ni; ++j) {
        const double span = std::max(p[k].u_max[static_cast<std::size_t>(j)] - p[k].u_min[static_cast<std::size_t>(j)], 1.0);
        reach += span * m.gains.row(i * H + k).segment(j * H, H).cwiseAbs().sum();
      }
      if (reach > ctrl_eps) {
        mq.row_of[static_cast<std::size_t>(i * H + k)] = static_cast<int>(out_rows.size());
        out_rows.push_back(i * H + k);
      }
    }
  }
  mq.n_output_rows = static_cast<int>(out_rows.size());
  const int mrows = mq.n_output_rows + n;
  q.a = Mat::Zero(mrows, n);
  q.b_lo.resize(mrows);
  q.b.resize(mrows);
  for (int r = 0; r < mq.n_output_rows; ++r) q.a.row(r) = m.gains.row(out_rows[static_cast<std::size_t>(r)]);
  // Rate rows, including the seam against the last applied input.
  for (int j = 0; j < ni; ++j) {
    for (int l = 0; l < H; ++l) {
      const int r = mq.n_output_rows + j * H + l;
      const double rate = p[l].rate_max[static_cast<std::size_t>(j)];
      q.a(r, j * H + l) = 1.0;
      if (l > 0) {
        q.a(r, j * H + l - 1) = -1.0;
        q.b_lo[r] = -rate;
        q.b[r] = rate;
      } else {
        q.b_lo[r] = u_prev[j] - rate;
        q.b[r] = u_prev[j] + rate;
      }
    }
  }
  set_output_bounds(mq, m, p, z);
  return mq;
}

/// Single-task convenience form.
inline qp::QpProblem assemble_qp(const LtvResponseModel& m, const MpcTask& task, const SafetyZones& z,
                                 const Vec& u_prev) {
  return assemble_mpc(m, TaskProfile::constant(task, m.horizon), z, u_prev).qp;
}

inline Mat unstack(const Vec& x, int horizon, int n_in) {
  return Eigen::Map<const Mat>(x.data(), horizon, n_in);
}

enum class ZoneStatus { robustly_feasible, zones_exhausted, max_iterations };

inline const char* to_string(ZoneStatus s) {
  switch (s) {
    case ZoneStatus::robustly_feasible: return "RobustlyFeasible";
    case ZoneStatus::zones_exhausted: return "ZonesExhausted";
    case ZoneStatus::max_iterations: return "MaxIterations";
  }
  return "unknown";
}

/// How zones grow between iterations. `violation` adds alpha times the
/// envelope's bound violations. `anticipate` does the same and also lifts
/// every controllable zone to the envelope's current spread around the
/// nominal prediction, which stops violations from creeping to neighbouring
/// steps one iteration at a time.
enum class ZoneUpdate { violation, anticipate };

struct ZoneConfig {
  ZoneUpdate update = ZoneUpdate::anticipate;
  // Anticipated zones are the spread times (1 + headroom); the envelope
  // widens as the plan moves, so an exact spread would always fall short.
  double headroom = 0.1;
  int dilation = 3;  // steps each anticipated lift extends to either side
  double alpha = 1.0;
  double tol = 1e-4;
  int max_iter = 30;
  double qp_tol = 1e-6;
  int qp_max_iter = 20000;
  bool qp_polish = false;  // ADMM at qp_tol is accurate enough for the zone loop
  bool operator==(const ZoneConfig&) const = default;
};

/// Outputs under a candidate plan: u is H x n_in, the result H x n_out.
using EnvelopeFn = std::function<Envelope(const Mat& u)>;

struct ZoneResult {
  ZoneStatus status = ZoneStatus::zones_exhausted;
  qp::QpStatus qp_status = qp::QpStatus::infeasible;
  SafetyZones zones;
  Mat u;           // H x n_in, last optimal plan (empty if none)
  Mat y_nominal;   // H x n_out, model prediction of u
  Envelope envelope;
  int iterations = 0;
  std::vector<int> offending_steps;  // absolute steps, when exhausted
  std::vector<SafetyZones> history;  // zones used by every iteration
  std::string message;
};

/// Relaxation for robustly feasible zones: solve with the current zones,
/// bound the outputs of the plan, widen the zones by alpha times the bound
/// violations, repeat. Only rows the plan can influence are checked. Alpha
/// is kept per output and halved when that output's zone increment shrinks
/// and then grows again. With ZoneUpdate::anticipate, zones of rows near a
/// bound are also lifted to the envelope spread; if that leaves no feasible
/// plan, the outputs at fault fall back in steps to the violation-only
/// increment.
inline ZoneResult iterate_safety_zones(const LtvResponseModel& m, const TaskProfile& p, const EnvelopeFn& envelope,
                                       const Vec& u_prev, SafetyZones zones, const ZoneConfig& cfg = {}) {
  const int H = m.horizon, no = m.n_out;
  ZoneResult res;
  if (zones.upper.size() == 0) zones = SafetyZones::zero(H, no);
  std::optional<MpcQp> mq;
  std::unique_ptr<qp::QpSolver> solver;
  std::vector<double> alpha(static_cast<std::size_t>(no), cfg.alpha);
  std::vector<std::vector<double>> inc_hist(static_cast<std::size_t>(no));
  SafetyZones prev_zones;
  std::optional<SafetyZones> fallback;
  const bool anticipate = cfg.update == ZoneUpdate::anticipate;
  Eigen::MatrixXi repeat = Eigen::MatrixXi::Zero(H, no);

  // Steps whose zones differ from the previous iteration.
  auto changed_steps = [&] {
    std::vector<int> out;
    for (int k = 0; k < H; ++k) {
      for (int i = 0; i < no; ++i) {
        if (zones.upper(k, i) != prev_zones.upper(k, i) || zones.lower(k, i) != prev_zones.lower(k, i)) {
          out.push_back(m.first_step + k);
          break;
        }
      }
    }
    return out;
  };

  for (int it = 1; it <= cfg.max_iter; ++it) {
    res.iterations = it;
    std::optional<qp::QpResult> sol;
    std::string failure;
    const SafetyZones lifted = zones;
    std::vector<int> backoff(static_cast<std::size_t>(no), 0);
    while (true) {
      failure.clear();
      sol.reset();
      std::vector<int> failing;  // outputs whose constraints broke the solve
      try {
        if (!mq) {
          mq = assemble_mpc(m, p, zones, u_prev);
          qp::QpSettings s;
          s.tol = cfg.qp_tol;
          s.max_iter = cfg.qp_max_iter;
          s.polish = cfg.qp_polish;
          solver = std::make_unique<qp::QpSolver>(mq->qp, s);
        } else {
          set_output_bounds(*mq, m, p, zones);
        }
        sol = solver->solve(mq->qp);
        if (sol->status != qp::QpStatus::optimal) {
          failure = std::string("QP ") + qp::to_string(sol->status) + " at zone iteration " + std::to_string(it);
          const auto& bad = sol->failed_rows;
          for (int i = 0; i < no; ++i) {
            for (int k = 0; k < H; ++k) {
              const int r = mq->row_of[static_cast<std::size_t>(i * H + k)];
              if (r >= 0 && std::binary_search(bad.begin(), bad.end(), r)) {
                failing.push_back(i);
                break;
              }
            }
          }
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::zones_exhaust_band) throw;
        failure = e.what();
        failing = detail::exhausted_outputs(p, zones);
      }
      if (failure.empty() || !fallback) break;
      // Back off the outputs at fault towards their violation-only zones:
      // half, quarter, none. Outputs in independent sub-problems keep theirs.
      if (failing.empty()) {
        failing.resize(static_cast<std::size_t>(no));
        std::iota(failing.begin(), failing.end(), 0);
      }
      bool moved = false;
      for (int i : failing) {
        int& b = backoff[static_cast<std::size_t>(i)];
        if (b >= 3) continue;
        ++b;
        const double theta = b == 1 ? 0.5 : b == 2 ? 0.25 : 0.0;
        zones.upper.col(i) = fallback->upper.col(i) + theta * (lifted.upper.col(i) - fallback->upper.col(i));
        zones.lower.col(i) = fallback->lower.col(i) + theta * (lifted.lower.col(i) - fallback->lower.col(i));
        moved = true;
      }
      if (!moved) break;
    }
    res.history.push_back(zones);
    if (sol) res.qp_status = sol->status;
    if (!failure.empty()) {
      res.status = ZoneStatus::zones_exhausted;
      res.message = failure;
      if (!sol) {
        for (int k = 0; k < H; ++k) {
          for (int i = 0; i < no; ++i) {
            if (!(p[k].y_min[static_cast<std::size_t>(i)] + zones.lower(k, i) <
                  p[k].y_max[static_cast<std::size_t>(i)] - zones.upper(k, i))) {
              res.offending_steps.push_back(m.first_step + k);
              break;
            }
          }
        }
      } else if (it > 1) {
        res.offending_steps = changed_steps();
      }
      return res;
    }
    res.zones = zones;
    // Clip solver round-off onto the input box so the plant sees feasible u.
    res.u.resize(H, m.n_in);
    for (int j = 0; j < m.n_in; ++j) {
      for (int l = 0; l < H; ++l) {
        res.u(l, j) = std::clamp(sol->x[j * H + l], p[l].u_min[static_cast<std::size_t>(j)],
                                 p[l].u_max[static_cast<std::size_t>(j)]);
      }
    }
    res.y_nominal = predict(m, res.u);
    res.envelope = envelope(res.u);
    // Bound violations of the envelope on controllable rows.
    Mat vu = Mat::Zero(H, no), vl = Mat::Zero(H, no);
    bool ok = true;
    for (int i = 0; i < no; ++i) {
      for (int k = 0; k < H; ++k) {
        if (!mq->controllable(i, k)) continue;
        const auto ii = static_cast<std::size_t>(i);
        vu(k, i) = std::max(0.0, res.envelope.y_hi(k, i) - p[k].y_max[ii]);
        vl(k, i) = std::max(0.0, p[k].y_min[ii] - res.envelope.y_lo(k, i));
        if (vu(k, i) > cfg.tol || vl(k, i) > cfg.tol) ok = false;
      }
    }
    if (ok) {
      res.status = ZoneStatus::robustly_feasible;
      return res;
    }
    prev_zones = zones;
    for (int i = 0; i < no; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      auto& hist = inc_hist[ii];
      hist.push_back(vu.col(i).sum() + vl.col(i).sum());
      const std::size_t s = hist.size();
      if (!anticipate && s >= 3 && hist[s - 2] < hist[s - 3] && hist[s - 1] > hist[s - 2]) alpha[ii] *= 0.5;
      zones.upper.col(i) += alpha[ii] * vu.col(i);
      zones.lower.col(i) += alpha[ii] * vl.col(i);
    }
    if (!anticipate) continue;
    fallback = zones;
    Mat lift_u = zones.upper, lift_l = zones.lower;
    std::vector<char> violated(static_cast<std::size_t>(no), 0);
    for (int i = 0; i < no; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      // An output already inside its bounds keeps its zones.
      violated[ii] = (vu.col(i).array() > cfg.tol).any() || (vl.col(i).array() > cfg.tol).any();
      if (!violated[ii]) continue;
      for (int k = 0; k < H; ++k) {
        if (!mq->controllable(i, k)) continue;
        // Rows that keep violating get doubling increments.
        int& c = repeat(k, i);
        c = (vu(k, i) > cfg.tol || vl(k, i) > cfg.tol) ? std::min(c + 1, 3) : 0;
        const double extra = c > 1 ? static_cast<double>((1 << (c - 1)) - 1) * alpha[ii] : 0.0;
        lift_u(k, i) = zones.upper(k, i) + extra * vu(k, i);
        lift_l(k, i) = zones.lower(k, i) + extra * vl(k, i);
        const double su = res.envelope.y_hi(k, i) - res.y_nominal(k, i);
        const double sl = res.y_nominal(k, i) - res.envelope.y_lo(k, i);
        // Only rows whose nominal output is within two spreads of a bound
        // are at risk; lifting the others would only narrow the band.
        if (p[k].y_max[ii] - res.y_nominal(k, i) < 2.0 * su) {
          lift_u(k, i) = std::max(lift_u(k, i), (1.0 + cfg.headroom) * su);
        }
        if (res.y_nominal(k, i) - p[k].y_min[ii] < 2.0 * sl) {
          lift_l(k, i) = std::max(lift_l(k, i), (1.0 + cfg.headroom) * sl);
        }
      }
    }
    // Uncertain travel times move a row's worst case to nearby steps, so
    // each lift also covers the neighbouring controllable rows.
    for (int i = 0; i < no; ++i) {
      if (!violated[static_cast<std::size_t>(i)]) continue;
      for (int k = 0; k < H; ++k) {
        if (!mq->controllable(i, k)) continue;
        const int k0 = std::max(0, k - cfg.dilation), k1 = std::min(H - 1, k + cfg.dilation);
        for (int q = k0; q <= k1; ++q) {
          if (!mq->controllable(i, q)) continue;
          zones.upper(k, i) = std::max(zones.upper(k, i), lift_u(q, i));
          zones.lower(k, i) = std::max(zones.lower(k, i), lift_l(q, i));
        }
      }
    }
  }
  res.status = ZoneStatus::max_iterations;
  res.message = "zone iteration limit reached";
  return res;
}

// ---------------------------------------------------------------------------
// Plant and closed loop.

/// The simulated physical system: true network, realised hydraulics and the
/// current chlorine state. Events and schedule updates rebuild the engine.
class Plant {
 public:
  Plant(Network net, HydraulicSchedule planned, Realization truth, QualityState state, Tariff tariff)
      : net_(std::move(net)), planned_(std::move(planned)), truth_(std::move(truth)), tariff_(tariff) {
    rebuild(std::move(state));
  }

  const Network& network() const { return net_; }
  const HydraulicSchedule& planned() const { return planned_; }
  const HydraulicSchedule& actual() const { return actual_; }
  const Realization& truth() const { return truth_; }
  QualityState state() const { return engine_->lane_state(lanes_); }
  int step() const { return lanes_.step; }
  double energy_cost() const { return cost_; }

  std::vector<double> tank_levels() const {
    std::vector<double> v;
    for (std::size_t t = 0; t < net_.tanks.size(); ++t) v.push_back(engine_->tank_level(static_cast<int>(t), step()));
    return v;
  }

  void set_schedule(HydraulicSchedule planned) {
    auto s = state();
    planned_ = std::move(planned);
    rebuild(std::move(s));
  }

  // Topology or demand change; a burst pipe's chlorine leaves with it.
  void apply(const ScenarioEvent& e) {
    auto s = state();
    if (e.kind == EventKind::pipe_burst) {
      const auto idx = pipe_index(net_, e.pipe_id);
      s.pipe_buffers.erase(s.pipe_buffers.begin() + static_cast<std::ptrdiff_t>(idx));
      s.pipe_direction.erase(s.pipe_direction.begin() + static_cast<std::ptrdiff_t>(idx));
      if (idx < truth_.pipe_decay.size()) truth_.pipe_decay.erase(truth_.pipe_decay.begin() + static_cast<std::ptrdiff_t>(idx));
    }
    net_ = apply_event(net_, e);
    rebuild(std::move(s));
  }

  struct StepRecord {
    Vec y, u, level, flow;
    double cost = 0.0;
    double injected = 0.0;  // chlorine mass added by all boosters, g
    Vec injected_by;        // per booster, g
  };

  /// Applies one quality step of setpoints.
  StepRecord advance(const Vec& u) {
    const auto& tg = net_.time_grid;
    const int k = step();
    const int h = k / tg.steps_per_hydraulic();
    StepRecord rec;
    rec.u = u;
    rec.level.resize(static_cast<Eigen::Index>(net_.tanks.size()));
    for (std::size_t t = 0; t < net_.tanks.size(); ++t) rec.level[static_cast<Eigen::Index>(t)] = engine_->tank_level(static_cast<int>(t), k);
    rec.flow.resize(static_cast<Eigen::Index>(net_.pumps.size()));
    double kwh = 0.0;
    for (std::size_t p = 0; p < net_.pumps.size(); ++p) {
      const double q = actual_.pump_flow[static_cast<std::size_t>(h)][p];
      rec.flow[static_cast<Eigen::Index>(p)] = q;
      kwh += net_.pumps[p].power_coeff * q * tg.dt_quality_hours();
    }
    const auto dtq = tg.dt_quality.count();
    const std::int64_t t0 = static_cast<std::int64_t>(k) * dtq % 86400;
    cost_ += tariff_.mean_over(t0, t0 + dtq) * kwh;
    rec.cost = cost_;
    // Injected mass: setpoint minus the concentration arriving upstream
    // would be the dosing; the outgoing load u * Q is the reported proxy.
    rec.injected_by = Vec::Zero(static_cast<Eigen::Index>(net_.boosters.size()));
    NetworkView view(net_);
    const auto& q = actual_.pipe_flow[static_cast<std::size_t>(h)];
    for (std::size_t b = 0; b < net_.boosters.size(); ++b) {
      const int node = view.node(net_.boosters[b].node_id);
      double out = 0.0;
      for (int p = 0; p < view.n_pipes(); ++p) {
        const double f = q[static_cast<std::size_t>(p)];
        if (view.pipe_from(p) == node && f > 0.0) out += f;
        if (view.pipe_to(p) == node && f < 0.0) out -= f;
      }
      rec.injected_by[static_cast<Eigen::Index>(b)] = u[static_cast<Eigen::Index>(b)] * out * tg.dt_quality_hours();
    }
    rec.injected = rec.injected_by.sum();
    Mat uk = u.transpose();
    Vec src = Vec::Ones(1);
    engine_->step(lanes_, uk, src);
    rec.y = engine_->outputs(lanes_).row(0).transpose();
    return rec;
  }

  static std::size_t pipe_index(const Network& net, int pipe_id) {
    for (std::size_t p = 0; p < net.pipes.size(); ++p) {
      if (net.pipes[p].id == pipe_id) return p;
    }
    throw Error(ErrorCode::invalid_argument, "unknown pipe " + std::to_string(pipe_id));
  }

 private:
  void rebuild(QualityState s) {
    actual_ = realize_hydraulics(net_, planned_, truth_);
    engine_ = std::make_unique<QualityEngine>(net_, actual_, truth_);
    lanes_ = engine_->lanes_from(s, 1);
  }

  Network net_;
  HydraulicSchedule planned_;
  HydraulicSchedule actual_;
  Realization truth_;
  Tariff tariff_;
  std::unique_ptr<QualityEngine> engine_;
  detail::LaneState lanes_;
  double cost_ = 0.0;
};

/// Everything a planner sees at one control cycle.
struct CycleInput {
  int step = 0;
  int horizon = 0;
  const Network* net = nullptr;
  const LtvResponseModel* model = nullptr;
  const TaskProfile* profile = nullptr;
  const QualityState* measured = nullptr;
  const EnvelopePredictor* predictor = nullptr;
  const Plant* plant = nullptr;
  Vec u_prev;
};

struct AgentCycle {
  int agent = 0;
  ZoneStatus status = ZoneStatus::robustly_feasible;
  qp::QpStatus qp_status = qp::QpStatus::optimal;
  int zone_iters = 0;
  bool degraded = false;
};

/// A planner's answer for one cycle. All matrices cover the remaining
/// horizon starting at the cycle step.
struct PlanOutcome {
  Mat u;
  SafetyZones zones;
  Envelope envelope;
  ZoneStatus status = ZoneStatus::robustly_feasible;
  qp::QpStatus qp_status = qp::QpStatus::optimal;
  int zone_iters = 0;
  bool degraded = false;
  std::string message;
  std::vector<AgentCycle> agents;
  // Set when the planner replaced the task profile it was given (e.g. a
  // strategy switch); the log then records these bounds.
  std::optional<TaskProfile> profile;
};

using Planner = std::function<PlanOutcome(const CycleInput&)>;

struct ClosedLoopOptions {
  bool use_zones = true;
  bool warm_start_zones = true;
  ZoneConfig zone;
  EnvelopeConfig envelope;
  int control_horizon = 0;    // 0: the task's own
  std::vector<double> u_init;  // setpoints before the first cycle; empty: u_min
  bool operator==(const ClosedLoopOptions&) const = default;
};

struct CycleRecord {
  int step = 0;
  int horizon = 0;
  ZoneStatus status = ZoneStatus::robustly_feasible;
  qp::QpStatus qp_status = qp::QpStatus::optimal;
  int zone_iters = 0;
  bool degraded = false;
  double wall_s = 0.0;
  std::string message;
  std::vector<AgentCycle> agents;
};

/// Closed-loop record; one row per quality step.
struct ControllerLog {
  std::vector<int> monitored_ids, booster_ids, tank_ids, pump_ids;
  Seconds dt{300};
  int first_step = 0;
  Mat y, u, level, flow;     // steps x ...
  std::vector<double> energy_cost_cumulative;
  Mat y_min, y_max;          // untightened bounds in force at each step
  Mat sigma_u, sigma_l;      // zones the plan used for each step
  Mat y_lo, y_hi;            // envelope predicted for each step
  Mat injected;              // steps x boosters, g
  std::vector<std::string> qp_status;
  std::vector<int> zone_iters;
  std::vector<CycleRecord> cycles;
  // Per agent columns (distributed runs only).
  std::vector<std::vector<int>> agent_boosters;
  std::vector<std::vector<int>> agent_zone_iters;  // [agent][step]
  QualityState final_state;
  HydraulicSchedule schedule;  // planned schedule in force at the end

  int steps() const { return static_cast<int>(y.rows()); }
};

namespace detail {

inline void append_row(Mat& m, const Vec& v) {
  m.conservativeResize(m.rows() + 1, v.size());
  m.row(m.rows() - 1) = v.transpose();
}

}  // namespace detail

/// Hooks for the supervised and hierarchical loops.
struct LoopHooks {
  // Task profile for the horizon starting at `step` (default: constant).
  std::function<TaskProfile(int step, int horizon, const Plant& plant)> profile;
  // Called at the start of every cycle; may replace the planned schedule.
  std::function<std::optional<HydraulicSchedule>(int step, const Plant& plant)> schedule;
  // Extra cycle boundaries (e.g. event steps).
  std::vector<int> extra_cycle_steps;
};

/// Generic receding-horizon loop over one day. Each cycle extracts the model
/// from the measured state under the nominal realisation of the current
/// schedule, asks the planner for a plan over the shrinking horizon and
/// applies it until the next cycle boundary.
inline ControllerLog run_closed_loop(const Network& net, const HydraulicSchedule& planned, const MpcTask& task,
                                     const UncertaintySet& set, const Realization& truth, const QualityState& init,
                                     const Tariff& tariff, const ClosedLoopOptions& opt, const Planner& planner,
                                     const LoopHooks& hooks = {}) {
  task.check(static_cast<int>(net.boosters.size()), static_cast<int>(net.monitored.size()));
  const auto& tg = net.time_grid;
  const int end = tg.steps_quality();
  const int tc = opt.control_horizon > 0 ? opt.control_horizon : task.control_horizon;
  Plant plant(net, planned, truth, init, tariff);
  UncertaintySet cur_set = set;
  std::vector<ScenarioEvent> events = net.events;
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.at_step < b.at_step; });

  ControllerLog log;
  log.dt = tg.dt_quality;
  log.first_step = init.step;
  for (const auto& m : net.monitored) log.monitored_ids.push_back(m.node_id);
  for (const auto& b : net.boosters) log.booster_ids.push_back(b.node_id);
  for (const auto& t : net.tanks) log.tank_ids.push_back(t.node_id);
  for (const auto& p : net.pumps) log.pump_ids.push_back(p.id);

  Vec u_prev(static_cast<Eigen::Index>(net.boosters.size()));
  for (std::size_t b = 0; b < net.boosters.size(); ++b) {
    const double u0 = b < opt.u_init.size() ? opt.u_init[b] : task.u_min[b];
    u_prev[static_cast<Eigen::Index>(b)] = std::clamp(u0, task.u_min[b], task.u_max[b]);
  }
  std::size_t next_event = 0;
  int t = init.step;
  while (t < end) {
    // Events due now change plant and controller network alike.
    while (next_event < events.size() && events[next_event].at_step <= t) {
      const auto& e = events[next_event++];
      if (e.kind == EventKind::pipe_burst) {
        const auto idx = Plant::pipe_index(plant.network(), e.pipe_id);
        cur_set.decay_lo.erase(cur_set.decay_lo.begin() + static_cast<std::ptrdiff_t>(idx));
        cur_set.decay_hi.erase(cur_set.decay_hi.begin() + static_cast<std::ptrdiff_t>(idx));
      }
      plant.apply(e);
    }
    if (hooks.schedule) {
      if (auto s = hooks.schedule(t, plant)) plant.set_schedule(std::move(*s));
    }
    const int H = end - t;
    int next = std::min(end, t + tc);
    for (const auto& e : events) {
      if (e.at_step > t && e.at_step < next) next = e.at_step;
    }
    for (int s : hooks.extra_cycle_steps) {
      if (s > t && s < next) next = s;
    }

    const auto wall0 = std::chrono::steady_clock::now();
    const Network& cnet = plant.network();
    const QualityState measured = plant.state();
    const Realization nominal = nominal_realization(cnet, cur_set);
    const auto model_hyd = realize_hydraulics(cnet, plant.planned(), nominal);
    const auto model = extract(cnet, model_hyd, measured, H, nominal);
    const EnvelopePredictor predictor(cnet, plant.planned(), cur_set, opt.envelope);
    const TaskProfile profile = hooks.profile ? hooks.profile(t, H, plant) : TaskProfile::constant(task, H);

    CycleInput in;
    in.step = t;
    in.horizon = H;
    in.net = &cnet;
    in.model = &model;
    in.profile = &profile;
    in.measured = &measured;
    in.predictor = &predictor;
    in.plant = &plant;
    in.u_prev = u_prev;
    PlanOutcome plan = planner(in);
    const TaskProfile& used = plan.profile ? *plan.profile : profile;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

    CycleRecord cr;
    cr.step = t;
    cr.horizon = H;
    cr.status = plan.status;
    cr.qp_status = plan.qp_status;
    cr.zone_iters = plan.zone_iters;
    cr.degraded = plan.degraded;
    cr.wall_s = wall;
    cr.message = plan.message;
    cr.agents = plan.agents;
    log.cycles.push_back(cr);
    if (log.agent_zone_iters.size() < plan.agents.size()) log.agent_zone_iters.resize(plan.agents.size());

    for (int k = t; k < next; ++k) {
      const int r = k - t;
      Vec u = plan.u.row(r).transpose();
      const auto rec = plant.advance(u);
      detail::append_row(log.y, rec.y);
      detail::append_row(log.u, rec.u);
      detail::append_row(log.level, rec.level);
      detail::append_row(log.flow, rec.flow);
      detail::append_row(log.injected, rec.injected_by);
      log.energy_cost_cumulative.push_back(rec.cost);
      Vec lo(static_cast<Eigen::Index>(used[r].y_min.size())), hi(lo.size());
      for (Eigen::Index i = 0; i < lo.size(); ++i) {
        lo[i] = used[r].y_min[static_cast<std::size_t>(i)];
        hi[i] = used[r].y_max[static_cast<std::size_t>(i)];
      }
      detail::append_row(log.y_min, lo);
      detail::append_row(log.y_max, hi);
      detail::append_row(log.sigma_u, plan.zones.upper.row(r).transpose());
      detail::append_row(log.sigma_l, plan.zones.lower.row(r).transpose());
      detail::append_row(log.y_lo, plan.envelope.y_lo.row(r).transpose());
      detail::append_row(log.y_hi, plan.envelope.y_hi.row(r).transpose());
      log.qp_status.push_back(qp::to_string(plan.qp_status));
      log.zone_iters.push_back(plan.zone_iters);
      for (std::size_t a = 0; a < plan.agents.size(); ++a) log.agent_zone_iters[a].push_back(plan.agents[a].zone_iters);
      u_prev = u;
    }
    t = next;
  }
  log.final_state = plant.state();
  log.schedule = plant.planned();
  return log;
}

/// State a single RFMPC controller carries between cycles: warm-start zones
/// and the last robustly feasible plan (used in degraded mode).
struct ControllerMemory {
  int plan_step = -1;
  Mat plan_u;
  SafetyZones plan_zones;
  Envelope plan_envelope;
  int zones_step = -1;
  SafetyZones zones;

  // Rows of the stored plan from `step` on, padded by holding the last row.
  template <class M>
  static M tail(const M& full, int from_row, int rows) {
    M out(rows, full.cols());
    for (int r = 0; r < rows; ++r) {
      const int src = std::min<int>(from_row + r, static_cast<int>(full.rows()) - 1);
      out.row(r) = full.row(src);
    }
    return out;
  }
};

/// One RFMPC solve with warm-started zones and degraded-mode fallback.
/// `n_in`/`n_out` describe the (possibly agent-local) model.
inline PlanOutcome rfmpc_plan(const LtvResponseModel& model, const TaskProfile& profile, const EnvelopeFn& env,
                              const Vec& u_prev, ControllerMemory& mem, const ClosedLoopOptions& opt) {
  const int H = model.horizon, t = model.first_step;
  PlanOutcome out;
  ZoneResult zr;
  if (opt.use_zones) {
    SafetyZones init = SafetyZones::zero(H, model.n_out);
    if (opt.warm_start_zones && mem.zones_step >= 0) init = mem.zones.shifted(t - mem.zones_step, H);
    zr = iterate_safety_zones(model, profile, env, u_prev, init, opt.zone);
    const bool warm = init.mass() > 0.0;
    if (zr.status == ZoneStatus::zones_exhausted && warm) {
      // The warm start can over-tighten rows the inputs barely reach; retry
      // from zero zones before giving up.
      auto cold = iterate_safety_zones(model, profile, env, u_prev, SafetyZones::zero(H, model.n_out), opt.zone);
      cold.iterations += zr.iterations;
      zr = std::move(cold);
    }
  } else {
    ZoneConfig once = opt.zone;
    once.max_iter = 1;
    zr = iterate_safety_zones(model, profile, env, u_prev, SafetyZones::zero(H, model.n_out), once);
    // A single solve is accepted whatever the envelope says.
    if (zr.qp_status == qp::QpStatus::optimal) zr.status = ZoneStatus::robustly_feasible;
  }
  out.status = zr.status;
  out.qp_status = zr.qp_status;
  out.zone_iters = zr.iterations;
  out.message = zr.message;
  if (zr.qp_status == qp::QpStatus::optimal && zr.u.size() > 0 && zr.status != ZoneStatus::zones_exhausted) {
    // MaxIterations still yields the best plan found; it is flagged but used.
    out.u = zr.u;
    out.zones = zr.zones;
    out.envelope = zr.envelope;
    mem.plan_step = t;
    mem.plan_u = zr.u;
    mem.plan_zones = zr.zones;
    mem.plan_envelope = zr.envelope;
    mem.zones_step = t;
    mem.zones = zr.zones;
    return out;
  }
  out.degraded = true;
  if (mem.plan_step >= 0) {
    const int shift = t - mem.plan_step;
    out.u = ControllerMemory::tail(mem.plan_u, shift, H);
    out.zones = mem.plan_zones.shifted(shift, H);
    out.envelope.y_lo = ControllerMemory::tail(mem.plan_envelope.y_lo, shift, H);
    out.envelope.y_hi = ControllerMemory::tail(mem.plan_envelope.y_hi, shift, H);
  } else {
    out.u = u_prev.transpose().replicate(H, 1);
    out.zones = SafetyZones::zero(H, model.n_out);
    out.envelope.y_lo = predict(model, out.u);
    out.envelope.y_hi = out.envelope.y_lo;
  }
  // Keep the held plan inside this cycle's input box.
  for (int j = 0; j < model.n_in; ++j) {
    for (int l = 0; l < H; ++l) {
      out.u(l, j) = std::clamp(out.u(l, j), profile[l].u_min[static_cast<std::size_t>(j)], profile[l].u_max[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

/// Centralised RFMPC planner (one controller for all boosters).
inline Planner centralized_planner(const ClosedLoopOptions& opt) {
  auto mem = std::make_shared<ControllerMemory>();
  return [mem, opt](const CycleInput& in) {
    const auto* pred = in.predictor;
    const auto* measured = in.measured;
    EnvelopeFn env = [pred, measured](const Mat& u) { return (*pred)(*measured, u); };
    return rfmpc_plan(*in.model, *in.profile, env, in.u_prev, *mem, opt);
  };
}

/// Centralised receding-horizon RFMPC under a fixed schedule.
inline ControllerLog run_receding_horizon(const Network& net, const HydraulicSchedule& planned, const MpcTask& task,
                                          const UncertaintySet& set, const Realization& truth,
                                          const QualityState& init, const ClosedLoopOptions& opt = {},
                                          const Tariff& tariff = Tariff::two_level()) {
  return run_closed_loop(net, planned, task, set, truth, init, tariff, opt, centralized_planner(opt));
}

/// Rolling upper level: every `period` hydraulic steps the pump schedule is
/// re-optimised over a 24 h window from the measured tank levels and spliced
/// into the day's plan; the lower level runs RFMPC under it.
struct HierarchyOptions {
  int ucl_period = 2;  // hydraulic steps between re-plans
  int window = 24;     // hydraulic steps
  ClosedLoopOptions loop;
};

struct HierarchyResult {
  HydraulicSchedule schedule;             // final spliced plan
  std::vector<HydraulicSchedule> plans;   // each UCL solution (window rows)
  std::vector<int> plan_steps;            // hydraulic step of each plan
  ControllerLog log;
};

inline HierarchyResult run_hierarchy(const Network& net, const Tariff& tariff, const MpcTask& task,
                                     const UncertaintySet& set, const Realization& truth, const QualityState& init,
                                     const HierarchyOptions& opt = {}) {
  const auto& tg = net.time_grid;
  const int nh = tg.steps_hydraulic();
  auto result = std::make_shared<HierarchyResult>();
  auto splice = [&, nh](const HydraulicSchedule& base, const HydraulicSchedule& plan, int h0) {
    HydraulicSchedule s = base;
    for (int k = 0; k < plan.steps() && h0 + k < nh; ++k) {
      s.pump_flow[static_cast<std::size_t>(h0 + k)] = plan.pump_flow[static_cast<std::size_t>(k)];
      s.tank_flow[static_cast<std::size_t>(h0 + k)] = plan.tank_flow[static_cast<std::size_t>(k)];
      s.pipe_flow[static_cast<std::size_t>(h0 + k)] = plan.pipe_flow[static_cast<std::size_t>(k)];
    }
    s.tank_level.resize(1);
    const double dt = tg.dt_hydraulic_hours();
    for (int h = 0; h < nh; ++h) {
      auto next = s.tank_level.back();
      for (std::size_t t = 0; t < net.tanks.size(); ++t) next[t] -= s.tank_flow[static_cast<std::size_t>(h)][t] * dt / net.tanks[t].area;
      s.tank_level.push_back(std::move(next));
    }
    return s;
  };
  PumpScheduleOptions first;
  first.window = opt.window;
  first.periodic_demand = true;
  auto day0 = optimize_pump_schedule(net, tariff, first);
  result->plans.push_back(day0);
  result->plan_steps.push_back(0);
  HydraulicSchedule current = splice(day0, day0, 0);
  LoopHooks hooks;
  const int sph = tg.steps_per_hydraulic();
  hooks.schedule = [&, result, sph](int step, const Plant& plant) -> std::optional<HydraulicSchedule> {
    if (step % sph != 0) return std::nullopt;
    const int h = step / sph;
    if (h == 0 || h % opt.ucl_period != 0) return std::nullopt;
    PumpScheduleOptions o;
    o.first_step = h;
    o.window = opt.window;
    o.periodic_demand = true;
    o.level0 = plant.tank_levels();
    auto plan = optimize_pump_schedule(plant.network(), tariff, o);
    result->plans.push_back(plan);
    result->plan_steps.push_back(h);
    current = splice(plant.planned(), plan, h);
    return current;
  };
  for (int h = opt.ucl_period; h < nh; h += opt.ucl_period) hooks.extra_cycle_steps.push_back(h * sph);
  result->log = run_closed_loop(net, current, task, set, truth, init, tariff, opt.loop, centralized_planner(opt.loop), hooks);
  result->schedule = result->log.schedule;
  return std::move(*result);
}

// ---------------------------------------------------------------------------
// Log output.

/// Violation of the untightened bounds at every (step, output).
inline Mat bound_violations(const ControllerLog& log) {
  Mat v = Mat::Zero(log.y.rows(), log.y.cols());
  for (Eigen::Index k = 0; k < log.y.rows(); ++k) {
    for (Eigen::Index i = 0; i < log.y.cols(); ++i) {
      v(k, i) = std::max({0.0, log.y_min(k, i) - log.y(k, i), log.y(k, i) - log.y_max(k, i)});
    }
  }
  return v;
}

inline std::vector<std::string> controller_csv_header(const ControllerLog& log) {
  std::vector<std::string> h{"time_s"};
  for (int id : log.monitored_ids) h.push_back("y_" + std::to_string(id));
  for (int id : log.booster_ids) h.push_back("u_" + std::to_string(id));
  for (int id : log.tank_ids) h.push_back("level_" + std::to_string(id));
  for (int id : log.pump_ids) h.push_back("flow_" + std::to_string(id));
  h.push_back("energy_cost_cumulative");
  for (int id : log.monitored_ids) h.push_back("ylo_" + std::to_string(id));
  for (int id : log.monitored_ids) h.push_back("yhi_" + std::to_string(id));
  for (int id : log.monitored_ids) h.push_back("sigma_u_" + std::to_string(id));
  for (int id : log.monitored_ids) h.push_back("sigma_l_" + std::to_string(id));
  h.push_back("qp_status");
  h.push_back("zone_iters");
  for (std::size_t a = 0; a < log.agent_boosters.size(); ++a) {
    for (int id : log.agent_boosters[a]) h.push_back("agent_" + std::to_string(a) + "_u_" + std::to_string(id));
    h.push_back("agent_" + std::to_string(a) + "_zone_iters");
  }
  return h;
}

inline void write_controller_csv(std::ostream& os, const ControllerLog& log) {
  using detail::fmt;
  write_csv_line(os, controller_csv_header(log));
  std::vector<int> booster_col;
  for (const auto& ids : log.agent_boosters) {
    for (int id : ids) {
      booster_col.push_back(static_cast<int>(std::find(log.booster_ids.begin(), log.booster_ids.end(), id) - log.booster_ids.begin()));
    }
  }
  for (int k = 0; k < log.steps(); ++k) {
    std::vector<std::string> r;
    r.push_back(std::to_string(static_cast<long long>(log.first_step + k) * log.dt.count()));
    for (Eigen::Index c = 0; c < log.y.cols(); ++c) r.push_back(fmt(log.y(k, c)));
    for (Eigen::Index c = 0; c < log.u.cols(); ++c) r.push_back(fmt(log.u(k, c)));
    for (Eigen::Index c = 0; c < log.level.cols(); ++c) r.push_back(fmt(log.level(k, c)));
    for (Eigen::Index c = 0; c < log.flow.cols(); ++c) r.push_back(fmt(log.flow(k, c)));
    r.push_back(fmt(log.energy_cost_cumulative[static_cast<std::size_t>(k)]));
    for (Eigen::Index c = 0; c < log.y_lo.cols(); ++c) r.push_back(fmt(log.y_lo(k, c)));
    for (Eigen::Index c = 0; c < log.y_hi.cols(); ++c) r.push_back(fmt(log.y_hi(k, c)));
    for (Eigen::Index c = 0; c < log.sigma_u.cols(); ++c) r.push_back(fmt(log.sigma_u(k, c)));
    for (Eigen::Index c = 0; c < log.sigma_l.cols(); ++c) r.push_back(fmt(log.sigma_l(k, c)));
    r.push_back(log.qp_status[static_cast<std::size_t>(k)]);
    r.push_back(std::to_string(log.zone_iters[static_cast<std::size_t>(k)]));
    std::size_t col = 0;
    for (std::size_t a = 0; a < log.agent_boosters.size(); ++a) {
      for (std::size_t b = 0; b < log.agent_boosters[a].size(); ++b) r.push_back(fmt(log.u(k, booster_col[col++])));
      r.push_back(std::to_string(log.agent_zone_iters[a][static_cast<std::size_t>(k)]));
    }
    write_csv_line(os, r);
  }
}

/// Aggregate figures of one run (wall time is kept out so the summary is
/// reproducible).
struct RunMetrics {
  int violation_count = 0;
  double max_violation = 0.0;
  std::vector<double> injection_mass;  // per booster, g
  double energy_cost = 0.0;
  int cycles = 0;
  int degraded_cycles = 0;
  int infeasible_cycles = 0;
  double mean_zone_iters = 0.0;
  int max_zone_iters = 0;
};

inline RunMetrics metrics(const ControllerLog& log, double tol = 1e-6) {
  RunMetrics m;
  const Mat v = bound_violations(log);
  for (Eigen::Index k = 0; k < v.rows(); ++k) {
    for (Eigen::Index i = 0; i < v.cols(); ++i) {
      if (v(k, i) > tol) ++m.violation_count;
      m.max_violation = std::max(m.max_violation, v(k, i));
    }
  }
  for (Eigen::Index b = 0; b < log.injected.cols(); ++b) m.injection_mass.push_back(log.injected.col(b).sum());
  m.energy_cost = log.energy_cost_cumulative.empty() ? 0.0 : log.energy_cost_cumulative.back();
  m.cycles = static_cast<int>(log.cycles.size());
  double it = 0.0;
  for (const auto& c : log.cycles) {
    if (c.degraded) ++m.degraded_cycles;
    if (c.qp_status == qp::QpStatus::infeasible) ++m.infeasible_cycles;
    it += c.zone_iters;
    m.max_zone_iters = std::max(m.max_zone_iters, c.zone_iters);
  }
  m.mean_zone_iters = m.cycles ? it / m.cycles : 0.0;
  return m;
}

/// Sum of a booster's setpoints or injected mass over [from, to).
inline double injection_between(const ControllerLog& log, int booster_id, int from, int to) {
  const auto it = std::find(log.booster_ids.begin(), log.booster_ids.end(), booster_id);
  if (it == log.booster_ids.end()) throw Error(ErrorCode::invalid_argument, "unknown booster " + std::to_string(booster_id));
  const auto b = static_cast<Eigen::Index>(it - log.booster_ids.begin());
  double s = 0.0;
  for (int k = std::max(from, log.first_step); k < std::min(to, log.first_step + log.steps()); ++k) {
    s += log.injected(k - log.first_step, b);
  }
  return s;
}

}  // namespace wdn

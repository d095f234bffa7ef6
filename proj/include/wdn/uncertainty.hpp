#pragma once

// Set-bounded uncertainty: demand forecast error and bulk decay rates.
// Provides realisation sampling, the two-envelope robust output prediction
// (vertex scenarios plus inflation) and offline Lipschitz-style zones.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "wdn/error.hpp"
#include "wdn/hydraulics.hpp"
#include "wdn/quality.hpp"

namespace wdn {

/// Box uncertainty. Demand multipliers lie in [1 - delta(k), 1 + delta(k)],
/// pipe decay rates in [decay_lo, decay_hi]; the nominal point is the
/// centre of the box.
struct UncertaintySet {
  std::vector<double> demand_rel;  // per quality step
  std::vector<double> decay_lo;    // per pipe, 1/h
  std::vector<double> decay_hi;    // per pipe, 1/h

  // 5 % for the first 10 h and 10 % afterwards; decay rates +-decay_rel
  // around each pipe's nominal value.
  static UncertaintySet standard(const Network& net, double decay_rel = 0.2, double early = 0.05,
                                 double late = 0.10, double early_hours = 10.0) {
    UncertaintySet s;
    const auto& tg = net.time_grid;
    for (int k = 0; k < tg.steps_quality(); ++k) {
      s.demand_rel.push_back(k * tg.dt_quality_hours() < early_hours - 1e-12 ? early : late);
    }
    for (const auto& p : net.pipes) {
      s.decay_lo.push_back(p.decay_rate * (1.0 - decay_rel));
      s.decay_hi.push_back(p.decay_rate * (1.0 + decay_rel));
    }
    return s;
  }
  static UncertaintySet zero(const Network& net) { return standard(net, 0.0, 0.0, 0.0); }

  // Largest relative demand error over the quality steps of hydraulic step h.
  double demand_bound(const TimeGrid& tg, int h) const {
    const int sph = tg.steps_per_hydraulic();
    double d = 0.0;
    for (int s = 0; s < sph; ++s) {
      const int k = h * sph + s;
      if (k >= 0 && k < static_cast<int>(demand_rel.size())) d = std::max(d, demand_rel[static_cast<std::size_t>(k)]);
    }
    return d;
  }
  double decay_nominal(std::size_t p) const { return 0.5 * (decay_lo[p] + decay_hi[p]); }
  double decay_radius(std::size_t p) const { return 0.5 * (decay_hi[p] - decay_lo[p]); }

  UncertaintySet scaled(double factor) const {
    UncertaintySet s = *this;
    for (auto& d : s.demand_rel) d *= factor;
    for (std::size_t p = 0; p < decay_lo.size(); ++p) {
      const double c = decay_nominal(p), r = decay_radius(p) * factor;
      s.decay_lo[p] = c - r;
      s.decay_hi[p] = c + r;
    }
    return s;
  }

  void check(const Network& net) const {
    if (decay_lo.size() != net.pipes.size() || decay_hi.size() != net.pipes.size()) {
      throw Error(ErrorCode::dimension_mismatch, "uncertainty set: one decay interval per pipe required");
    }
    for (double d : demand_rel) {
      if (!(d >= 0.0 && d < 1.0)) throw Error(ErrorCode::invalid_argument, "uncertainty set: demand bound outside [0, 1)");
    }
    for (std::size_t p = 0; p < decay_lo.size(); ++p) {
      if (!(decay_lo[p] <= decay_hi[p]) || decay_lo[p] < 0.0) {
        throw Error(ErrorCode::invalid_argument, "uncertainty set: decay interval must satisfy 0 <= lo <= hi");
      }
    }
  }
  bool operator==(const UncertaintySet&) const = default;
};

namespace detail {

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementation.
inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Chebyshev centre of the box.
inline Realization nominal_realization(const Network& net, const UncertaintySet& set) {
  Realization r;
  for (std::size_t p = 0; p < net.pipes.size(); ++p) r.pipe_decay.push_back(set.decay_nominal(p));
  return r;
}

/// Independent uniform draws inside the box; demand multipliers are
/// constant within each hydraulic step.
inline Realization sample_realization(const Network& net, const UncertaintySet& set, std::uint64_t seed) {
  set.check(net);
  std::mt19937_64 rng(seed);
  Realization r;
  r.seed = seed;
  const int nh = net.time_grid.steps_hydraulic();
  r.demand_mult.resize(net.demand_profiles.size());
  for (auto& row : r.demand_mult) {
    for (int h = 0; h < nh; ++h) {
      const double d = set.demand_bound(net.time_grid, h);
      row.push_back(1.0 - d + 2.0 * d * detail::unit(rng));
    }
  }
  for (std::size_t p = 0; p < net.pipes.size(); ++p) {
    r.pipe_decay.push_back(set.decay_lo[p] + (set.decay_hi[p] - set.decay_lo[p]) * detail::unit(rng));
  }
  return r;
}

/// Lower and upper output envelopes (steps x outputs).
struct Envelope {
  Mat y_lo;
  Mat y_hi;
};

struct EnvelopeConfig {
  int n_random = 8;
  double gamma = 0.1;  // inflation as a fraction of the half range
  std::uint64_t seed = 0x5eedULL;
  bool operator==(const EnvelopeConfig&) const = default;
};

/// Vertex scenarios of the box: all low, all high, the two mixed corners
/// (low demand with fast decay and the reverse), the nominal point, and
/// `n_random` random vertices.
inline std::vector<Realization> envelope_scenarios(const Network& net, const UncertaintySet& set,
                                                   const EnvelopeConfig& cfg) {
  set.check(net);
  const int nh = net.time_grid.steps_hydraulic();
  auto corner = [&](double dsign, bool decay_high) {
    Realization r;
    r.demand_mult.resize(net.demand_profiles.size());
    for (auto& row : r.demand_mult) {
      for (int h = 0; h < nh; ++h) row.push_back(1.0 + dsign * set.demand_bound(net.time_grid, h));
    }
    for (std::size_t p = 0; p < net.pipes.size(); ++p) r.pipe_decay.push_back(decay_high ? set.decay_hi[p] : set.decay_lo[p]);
    return r;
  };
  std::vector<Realization> out;
  out.push_back(corner(-1.0, false));
  out.push_back(corner(1.0, true));
  out.push_back(corner(-1.0, true));
  out.push_back(corner(1.0, false));
  out.push_back(nominal_realization(net, set));
  std::mt19937_64 rng(cfg.seed);
  for (int i = 0; i < cfg.n_random; ++i) {
    Realization r;
    r.seed = cfg.seed + static_cast<std::uint64_t>(i);
    r.demand_mult.resize(net.demand_profiles.size());
    for (auto& row : r.demand_mult) {
      for (int h = 0; h < nh; ++h) {
        const double d = set.demand_bound(net.time_grid, h);
        row.push_back((rng() >> 63) ? 1.0 + d : 1.0 - d);
      }
    }
    for (std::size_t p = 0; p < net.pipes.size(); ++p) r.pipe_decay.push_back((rng() >> 63) ? set.decay_hi[p] : set.decay_lo[p]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Reusable robust predictor: the scenario hydraulics and engines are built
/// once; each call simulates every scenario from `init` under `u`.
class EnvelopePredictor {
 public:
  EnvelopePredictor(const Network& net, const HydraulicSchedule& planned, const UncertaintySet& set,
                    const EnvelopeConfig& cfg = {})
      : net_(net), cfg_(cfg) {
    for (auto& r : envelope_scenarios(net_, set, cfg)) {
      auto s = std::make_unique<Scenario>();
      s->real = std::move(r);
      s->hyd = realize_hydraulics(net_, planned, s->real);
      s->engine = std::make_unique<QualityEngine>(net_, s->hyd, s->real);
      scenarios_.push_back(std::move(s));
    }
  }

  int n_scenarios() const { return static_cast<int>(scenarios_.size()); }

  /// Output trajectory of every scenario (index as in envelope_scenarios).
  std::vector<Mat> trajectories(const QualityState& init, const Mat& u) const {
    std::vector<Mat> out;
    for (const auto& s : scenarios_) out.push_back(run(*s, init, u));
    return out;
  }

  Envelope operator()(const QualityState& init, const Mat& u) const {
    Envelope env;
    for (const auto& s : scenarios_) {
      const Mat y = run(*s, init, u);
      if (env.y_lo.size() == 0) {
        env.y_lo = y;
        env.y_hi = y;
      } else {
        env.y_lo = env.y_lo.cwiseMin(y);
        env.y_hi = env.y_hi.cwiseMax(y);
      }
    }
    const Mat half = 0.5 * (env.y_hi - env.y_lo);
    env.y_lo -= cfg_.gamma * half;
    env.y_hi += cfg_.gamma * half;
    return env;
  }

 private:
  struct Scenario {
    Realization real;
    HydraulicSchedule hyd;
    std::unique_ptr<QualityEngine> engine;
  };

  Mat run(const Scenario& s, const QualityState& init, const Mat& u) const {
    auto ls = s.engine->lanes_from(init, 1);
    Vec src = Vec::Ones(1);
    Mat y(u.rows(), static_cast<Eigen::Index>(net_.monitored.size()));
    Mat uk(1, u.cols());
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      uk.row(0) = u.row(i);
      s.engine->step(ls, uk, src);
      y.row(i) = s.engine->outputs(ls).row(0);
    }
    return y;
  }

  Network net_;
  EnvelopeConfig cfg_;
  std::vector<std::unique_ptr<Scenario>> scenarios_;
};

/// One-shot robust envelope of the outputs under `u` (steps x boosters)
/// starting from `init`.
inline Envelope robust_envelope(const Network& net, const HydraulicSchedule& planned, const QualityState& init,
                                const Mat& u, const UncertaintySet& set, const EnvelopeConfig& cfg = {}) {
  return EnvelopePredictor(net, planned, set, cfg)(init, u);
}

/// Per-output sensitivity bounds: for every uncertain parameter p the
/// largest |dy_i(k)/dp| over the horizon, estimated by central finite
/// differences at `probe_count` step sizes (the largest quotient is kept).
struct LipschitzEstimate {
  // [output][parameter]; parameters are the demand profiles (multiplier,
  // all hydraulic steps at once) followed by the pipes (decay rate).
  std::vector<std::vector<double>> sens;
};

inline LipschitzEstimate estimate_lipschitz(const Network& net, const HydraulicSchedule& planned,
                                            const QualityState& init, const Mat& u, const UncertaintySet& set,
                                            int probe_count = 2) {
  if (probe_count < 2) throw Error(ErrorCode::invalid_argument, "estimate_lipschitz: probe_count must be >= 2");
  set.check(net);
  const int nd = static_cast<int>(net.demand_profiles.size());
  const int np = static_cast<int>(net.pipes.size());
  const int no = static_cast<int>(net.monitored.size());
  const Realization base = nominal_realization(net, set);
  auto outputs = [&](const Realization& r) {
    const auto hyd = realize_hydraulics(net, planned, r);
    return simulate_realized(net, hyd, u, r, init).y;
  };
  LipschitzEstimate est;
  est.sens.assign(static_cast<std::size_t>(no), std::vector<double>(static_cast<std::size_t>(nd + np), 0.0));
  const int nh = net.time_grid.steps_hydraulic();
  double dmax = 0.0;
  for (double d : set.demand_rel) dmax = std::max(dmax, d);
  for (int p = 0; p < nd + np; ++p) {
    for (int probe = 1; probe <= probe_count; ++probe) {
      const double frac = static_cast<double>(probe) / probe_count;
      Realization lo = base, hi = base;
      double h = 0.0;
      if (p < nd) {
        h = std::max(dmax, 0.01) * frac;
        lo.demand_mult.assign(static_cast<std::size_t>(nd), {});
        hi.demand_mult.assign(static_cast<std::size_t>(nd), {});
        lo.demand_mult[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(nh), 1.0 - h);
        hi.demand_mult[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(nh), 1.0 + h);
      } else {
        const auto q = static_cast<std::size_t>(p - nd);
        h = std::max(set.decay_radius(q), 0.01 * std::max(set.decay_nominal(q), 1e-3)) * frac;
        lo.pipe_decay[q] = std::max(0.0, set.decay_nominal(q) - h);
        hi.pipe_decay[q] = set.decay_nominal(q) + h;
        h = 0.5 * (hi.pipe_decay[q] - lo.pipe_decay[q]);
      }
      const Mat dy = (outputs(hi) - outputs(lo)).cwiseAbs() / (2.0 * h);
      for (int i = 0; i < no; ++i) {
        auto& s = est.sens[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)];
        s = std::max(s, dy.col(i).maxCoeff());
      }
    }
  }
  return est;
}

/// sigma_i = sum_p L_ip * radius_p, constant over the horizon; radius is the
/// largest demand bound for demand parameters and the interval half width
/// for decay parameters. Returns (steps x outputs) for both sides.
inline Mat zones_from_lipschitz(const Network& net, const LipschitzEstimate& est, const UncertaintySet& set,
                                int steps) {
  const int nd = static_cast<int>(net.demand_profiles.size());
  double dmax = 0.0;
  for (double d : set.demand_rel) dmax = std::max(dmax, d);
  Mat z(steps, static_cast<Eigen::Index>(est.sens.size()));
  for (std::size_t i = 0; i < est.sens.size(); ++i) {
    double sigma = 0.0;
    for (std::size_t p = 0; p < est.sens[i].size(); ++p) {
      const double radius = static_cast<int>(p) < nd ? dmax : set.decay_radius(p - static_cast<std::size_t>(nd));
      sigma += est.sens[i][p] * radius;
    }
    z.col(static_cast<Eigen::Index>(i)).setConstant(sigma);
  }
  return z;
}

}  // namespace wdn

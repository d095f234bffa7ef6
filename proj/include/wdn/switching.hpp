#pragma once

// Supervisory control layer: operational-state detection, a strategy
// registry, soft switching between strategies by convex blending of their
// tasks, and minimum-time switching. The supervisor wraps any planner and
// hands it the blended task profile for each cycle.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "wdn/error.hpp"
#include "wdn/rfmpc.hpp"

namespace wdn {

enum class OsLabel { normal, disturbed, emergency };

inline const char* to_string(OsLabel l) {
  switch (l) {
    case OsLabel::normal: return "Normal";
    case OsLabel::disturbed: return "Disturbed";
    case OsLabel::emergency: return "Emergency";
  }
  return "unknown";
}

inline OsLabel os_label_from_string(const std::string& s) {
  if (s == "Normal") return OsLabel::normal;
  if (s == "Disturbed") return OsLabel::disturbed;
  if (s == "Emergency") return OsLabel::emergency;
  throw Error(ErrorCode::invalid_argument, "unknown operational state '" + s + "'");
}

/// A plant condition; several clusters may share one label.
struct OperationalState {
  OsLabel label = OsLabel::normal;
  int cluster = 0;
  bool operator==(const OperationalState&) const = default;
};

struct Strategy {
  std::string id;
  MpcTask task;
  std::vector<OsLabel> states;  // labels the strategy is intended for
  bool operator==(const Strategy&) const = default;
};

enum class SwitchMode { hard, linear, min_time };

inline const char* to_string(SwitchMode m) {
  switch (m) {
    case SwitchMode::hard: return "hard";
    case SwitchMode::linear: return "linear";
    case SwitchMode::min_time: return "min_time";
  }
  return "unknown";
}

inline SwitchMode switch_mode_from_string(const std::string& s) {
  if (s == "hard") return SwitchMode::hard;
  if (s == "linear") return SwitchMode::linear;
  if (s == "min_time") return SwitchMode::min_time;
  throw Error(ErrorCode::invalid_argument, "unknown switching mode '" + s + "' (expected hard, linear or min_time)");
}

/// Field-by-field convex combination (1 - lambda) old + lambda new of
/// weights, references and bounds. The control horizon is not blended; it
/// stays the old one until lambda reaches 1.
inline MpcTask blend(const MpcTask& old_task, const MpcTask& new_task, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::invalid_argument, "blend: lambda outside [0, 1]");
  if (old_task.n_out() != new_task.n_out() || old_task.n_in() != new_task.n_in() ||
      old_task.y_ref.size() != new_task.y_ref.size() || old_task.y_max.size() != new_task.y_max.size() ||
      old_task.y_terminal.size() != new_task.y_terminal.size() ||
      old_task.terminal_tol.size() != new_task.terminal_tol.size() ||
      old_task.u_max.size() != new_task.u_max.size() || old_task.rate_max.size() != new_task.rate_max.size()) {
    throw Error(ErrorCode::dimension_mismatch, "blend: tasks have different dimensions");
  }
  if (lambda == 0.0) return old_task;
  if (lambda == 1.0) return new_task;
  auto mix = [lambda](double a, double b) { return (1.0 - lambda) * a + lambda * b; };
  auto mixv = [&](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = mix(a[i], b[i]);
    return r;
  };
  MpcTask t = old_task;
  t.w_u = mix(old_task.w_u, new_task.w_u);
  t.w_du = mix(old_task.w_du, new_task.w_du);
  t.w_y = mix(old_task.w_y, new_task.w_y);
  t.y_ref = mixv(old_task.y_ref, new_task.y_ref);
  t.y_min = mixv(old_task.y_min, new_task.y_min);
  t.y_max = mixv(old_task.y_max, new_task.y_max);
  t.y_terminal = mixv(old_task.y_terminal, new_task.y_terminal);
  t.terminal_tol = mixv(old_task.terminal_tol, new_task.terminal_tol);
  t.u_min = mixv(old_task.u_min, new_task.u_min);
  t.u_max = mixv(old_task.u_max, new_task.u_max);
  t.rate_max = mixv(old_task.rate_max, new_task.rate_max);
  return t;
}

/// lambda_i = i / T_s for i = 0..T_s.
inline std::vector<double> lambda_schedule_linear(int ts) {
  if (ts < 1) throw Error(ErrorCode::invalid_argument, "lambda_schedule_linear: T_s must be >= 1");
  std::vector<double> v;
  for (int i = 0; i <= ts; ++i) v.push_back(i == ts ? 1.0 : static_cast<double>(i) / ts);
  return v;
}

/// Largest lambda in [lambda_prev, 1] accepted by `feasible`, found by
/// probing 1 first and then bisecting to within `tol`. Returns lambda_prev
/// when nothing above it is accepted (a stall).
inline double min_time_lambda_step(double lambda_prev, const std::function<bool(double)>& feasible,
                                   double tol = 1.0 / 64.0) {
  if (!(lambda_prev >= 0.0 && lambda_prev < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "min_time_lambda_step: lambda_prev must lie in [0, 1)");
  }
  if (feasible(1.0)) return 1.0;
  double lo = lambda_prev, hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

/// Feasibility oracle for min-time switching: the blended task must let the
/// zone iteration finish RobustlyFeasible. `profile_at(lambda)` builds the
/// task profile over the model horizon for a candidate lambda. Rows the plan
/// cannot influence are settled by past setpoints, so a candidate may not
/// make their envelope violate the output bounds by more than the profile
/// at `base` already does.
inline std::function<bool(double)> robust_feasibility_oracle(const LtvResponseModel& model,
                                                             std::function<TaskProfile(double)> profile_at,
                                                             EnvelopeFn env, Vec u_prev, ZoneConfig cfg,
                                                             double base = 0.0) {
  return [&model, profile_at = std::move(profile_at), env = std::move(env), u_prev = std::move(u_prev), cfg,
          base](double lambda) {
    const TaskProfile prof = profile_at(lambda);
    const auto zr = iterate_safety_zones(model, prof, env, u_prev, SafetyZones::zero(model.horizon, model.n_out), cfg);
    if (zr.status != ZoneStatus::robustly_feasible) return false;
    const TaskProfile ref = profile_at(base);
    const MpcQp mq = assemble_mpc(model, prof, zr.zones, u_prev);
    constexpr double tol = 1e-9;
    for (int i = 0; i < model.n_out; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      for (int k = 0; k < model.horizon; ++k) {
        if (mq.controllable(i, k)) continue;
        const double lo = zr.envelope.y_lo(k, i), hi = zr.envelope.y_hi(k, i);
        const double v = std::max(prof[k].y_min[ii] - lo, hi - prof[k].y_max[ii]);
        const double v0 = std::max(ref[k].y_min[ii] - lo, hi - ref[k].y_max[ii]);
        if (v > std::max(v0, 0.0) + tol) return false;
      }
    }
    return true;
  };
}

// ---------------------------------------------------------------------------
// Operational-state detection.

/// What the supervisor senses once per control cycle.
struct Observation {
  int step = 0;
  bool pipe_burst = false;        // a burst happened since the last cycle
  bool pressure_anomaly = false;  // a pressure anomaly was flagged since the last cycle
  double demand_ratio = 1.0;      // actual over forecast total demand
  double min_tank_fill = 1.0;     // lowest (level - min) / (max - min)
};

enum class RuleKind { pipe_burst, pressure_anomaly, demand_anomaly, tank_low };

inline const char* to_string(RuleKind k) {
  switch (k) {
    case RuleKind::pipe_burst: return "pipe_burst";
    case RuleKind::pressure_anomaly: return "pressure_anomaly";
    case RuleKind::demand_anomaly: return "demand_anomaly";
    case RuleKind::tank_low: return "tank_low";
  }
  return "unknown";
}

inline RuleKind rule_kind_from_string(const std::string& s) {
  for (auto k : {RuleKind::pipe_burst, RuleKind::pressure_anomaly, RuleKind::demand_anomaly, RuleKind::tank_low}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::invalid_argument, "unknown detection rule '" + s + "'");
}

/// demand_anomaly fires when demand_ratio >= threshold, tank_low when
/// min_tank_fill <= threshold; the flag rules ignore the threshold.
struct DetectionRule {
  RuleKind kind = RuleKind::pipe_burst;
  double threshold = 0.0;
  OperationalState state{OsLabel::emergency, 0};
  bool operator==(const DetectionRule&) const = default;
};

inline bool matches(const DetectionRule& r, const Observation& o) {
  switch (r.kind) {
    case RuleKind::pipe_burst: return o.pipe_burst;
    case RuleKind::pressure_anomaly: return o.pressure_anomaly;
    case RuleKind::demand_anomaly: return o.demand_ratio >= r.threshold;
    case RuleKind::tank_low: return o.min_tank_fill <= r.threshold;
  }
  return false;
}

/// First rule matched anywhere in the window wins; Normal otherwise.
inline OperationalState detect_os(const std::vector<Observation>& window, const std::vector<DetectionRule>& rules) {
  if (window.empty()) throw Error(ErrorCode::invalid_argument, "detect_os: empty observation window");
  for (const auto& r : rules) {
    for (const auto& o : window) {
      if (matches(r, o)) return r.state;
    }
  }
  return {};
}

struct OsMapping {
  OperationalState state;
  bool any_cluster = true;  // match on the label alone
  std::string strategy;
  bool operator==(const OsMapping&) const = default;
};

struct SupervisorConfig {
  std::vector<Strategy> strategies;
  std::vector<DetectionRule> rules;
  std::vector<OsMapping> mapping;
  std::string initial_strategy;
  SwitchMode mode = SwitchMode::linear;
  int ts = 24;             // switch duration in quality steps
  int window_steps = 72;   // observations older than this are forgotten
  int stall_limit = 3;     // min-time stalls before escalating to Emergency
  double lambda_tol = 1.0 / 64.0;

  const Strategy& strategy(const std::string& id) const {
    for (const auto& s : strategies) {
      if (s.id == id) return s;
    }
    throw Error(ErrorCode::invalid_argument, "unknown strategy '" + id + "'");
  }
  const Strategy& strategy_for(const OperationalState& os) const {
    for (const auto& m : mapping) {
      if (m.state.label == os.label && (m.any_cluster || m.state.cluster == os.cluster)) return strategy(m.strategy);
    }
    return strategy(initial_strategy);
  }
  void check(int n_in, int n_out) const {
    if (strategies.empty()) throw Error(ErrorCode::invalid_argument, "supervisor: no strategies registered");
    for (const auto& s : strategies) s.task.check(n_in, n_out);
    strategy(initial_strategy);
    for (const auto& m : mapping) strategy(m.strategy);
    if (ts < 1) throw Error(ErrorCode::invalid_argument, "supervisor: T_s must be >= 1");
    if (window_steps < 1) throw Error(ErrorCode::invalid_argument, "supervisor: window must be >= 1 step");
  }
  bool operator==(const SupervisorConfig&) const = default;
};

/// One strategy change from its start step t_bar to the step t_s at which
/// lambda first reached 1 (-1 if it never did).
struct SwitchRecord {
  int t_bar = 0;
  int ts = 0;
  int t_s = -1;
  SwitchMode mode = SwitchMode::linear;
  std::string from, to;
  std::vector<double> lambda;  // applied lambda at steps t_bar, t_bar + 1, ...
  int stalls = 0;
  bool escalated = false;
};

struct OsRecord {
  int step = 0;
  OperationalState state;
  bool escalated = false;
};

struct SupervisorLog {
  std::vector<OsRecord> timeline;
  std::vector<SwitchRecord> switches;
};

inline nlohmann::ordered_json to_json(const SupervisorLog& log) {
  nlohmann::ordered_json j;
  j["os_timeline"] = nlohmann::ordered_json::array();
  for (const auto& r : log.timeline) {
    j["os_timeline"].push_back({{"step", r.step},
                                {"label", to_string(r.state.label)},
                                {"cluster", r.state.cluster},
                                {"escalated", r.escalated}});
  }
  j["switches"] = nlohmann::ordered_json::array();
  for (const auto& s : log.switches) {
    nlohmann::ordered_json sj;
    sj["t_bar"] = s.t_bar;
    sj["T_s"] = s.ts;
    sj["t_s"] = s.t_s;
    sj["mode"] = to_string(s.mode);
    sj["from"] = s.from;
    sj["to"] = s.to;
    sj["stalls"] = s.stalls;
    sj["escalated"] = s.escalated;
    sj["lambda"] = s.lambda;
    j["switches"].push_back(std::move(sj));
  }
  return j;
}

namespace detail {

// Forecast total demand of the original network vs the plant's (with any
// surges applied, scaled by the true multipliers) at quality step k.
inline double demand_ratio(const Network& base, const Network& now, const Realization& truth, int k) {
  const int sph = now.time_grid.steps_per_hydraulic();
  const int h = k / sph;
  double fb = 0.0, fa = 0.0;
  for (const auto& p : base.demand_profiles) {
    if (k < static_cast<int>(p.values.size())) fb += p.values[static_cast<std::size_t>(k)];
  }
  for (std::size_t i = 0; i < now.demand_profiles.size(); ++i) {
    const auto& p = now.demand_profiles[i];
    if (k >= static_cast<int>(p.values.size())) continue;
    double m = 1.0;
    if (i < truth.demand_mult.size() && h < static_cast<int>(truth.demand_mult[i].size())) {
      m = truth.demand_mult[i][static_cast<std::size_t>(h)];
    }
    fa += p.values[static_cast<std::size_t>(k)] * m;
  }
  return fb > 0.0 ? fa / fb : 1.0;
}

}  // namespace detail

/// Senses the plant at the start of the cycle at `step`; `since` is the
/// previous cycle step (events in (since, step] count as new).
inline Observation observe(const Network& base, const Plant& plant, int since, int step) {
  Observation o;
  o.step = step;
  for (const auto& e : base.events) {
    if (e.at_step <= since || e.at_step > step) continue;
    if (e.kind == EventKind::pipe_burst) o.pipe_burst = true;
    if (e.kind == EventKind::pressure_anomaly && e.flag) o.pressure_anomaly = true;
  }
  o.demand_ratio = detail::demand_ratio(base, plant.network(), plant.truth(), std::min(step, base.time_grid.steps_quality() - 1));
  const auto levels = plant.tank_levels();
  for (std::size_t t = 0; t < levels.size(); ++t) {
    const auto& tk = plant.network().tanks[t];
    const double span = tk.level_max - tk.level_min;
    if (span > 0.0) o.min_tank_fill = std::min(o.min_tank_fill, (levels[t] - tk.level_min) / span);
  }
  return o;
}

/// Wraps `inner` with the supervisory layer. Each cycle it observes the
/// plant, classifies the operational state, opens a switch when the mapped
/// strategy changes, and plans with the blended task profile:
///   hard      lambda = 1 from t_bar on;
///   linear    lambda(k) = (k - t_bar) / T_s, clipped to [0, 1];
///   min_time  each cycle bisects for the largest jump whose profile
///             (the jump, then at least the linear rate) is robustly
///             feasible, so it never lags the linear schedule.
/// A new switch starting mid-switch blends from the task in force at that
/// moment, so every task stays a convex combination of strategies.
class Supervisor {
 public:
  Supervisor(Network base, SupervisorConfig cfg, ClosedLoopOptions opt, Planner inner)
      : base_(std::move(base)), cfg_(std::move(cfg)), opt_(std::move(opt)), inner_(std::move(inner)) {
    cfg_.check(static_cast<int>(base_.boosters.size()), static_cast<int>(base_.monitored.size()));
    const auto& s = cfg_.strategy(cfg_.initial_strategy);
    from_task_ = s.task;
    to_task_ = s.task;
    to_id_ = s.id;
  }

  const SupervisorLog& log() const { return log_; }
  const SupervisorConfig& config() const { return cfg_; }

  /// The task every run starts from (the initial strategy's).
  const MpcTask& initial_task() const { return cfg_.strategy(cfg_.initial_strategy).task; }

  PlanOutcome operator()(const CycleInput& in) {
    const int t = in.step;
    // Sense and classify.
    if (in.plant) {
      window_.push_back(observe(base_, *in.plant, last_step_, t));
      while (!window_.empty() && window_.front().step <= t - cfg_.window_steps) window_.erase(window_.begin());
    }
    last_step_ = t;
    OsRecord rec;
    rec.step = t;
    rec.state = window_.empty() ? OperationalState{} : detect_os(window_, cfg_.rules);
    if (escalated_) {
      rec.state = {OsLabel::emergency, 0};
      rec.escalated = true;
    }
    log_.timeline.push_back(rec);

    const Strategy& target = cfg_.strategy_for(rec.state);
    if (target.id != to_id_) open_switch(t, target, rec.escalated);

    const int H = in.horizon;
    std::vector<double> lam(static_cast<std::size_t>(H), 1.0);
    if (active_) {
      auto& sw = log_.switches.back();
      if (sw.mode == SwitchMode::min_time) {
        const double base = lambda_at(t);
        double next = base;
        if (base < 1.0) {
          const auto oracle = robust_feasibility_oracle(
              *in.model, [&](double l) { return profile_from(ramp(t, l, H)); },
              [pred = in.predictor, meas = in.measured](const Mat& u) { return (*pred)(*meas, u); }, in.u_prev,
              opt_.zone, base);
          next = min_time_lambda_step(base, oracle, cfg_.lambda_tol);
          if (next <= base) {
            ++sw.stalls;
            if (++stall_run_ >= cfg_.stall_limit && !escalated_) {
              escalated_ = true;
              sw.escalated = true;
            }
          } else {
            stall_run_ = 0;
          }
        }
        jump_step_ = t;
        jump_lambda_ = next;
      }
      for (int r = 0; r < H; ++r) lam[static_cast<std::size_t>(r)] = lambda_at(t + r);
    }
    for (int r = 0; r < H; ++r) applied_[t + r] = lam[static_cast<std::size_t>(r)];

    TaskProfile profile = profile_from(lam);
    CycleInput sub = in;
    sub.profile = &profile;
    PlanOutcome out = inner_(sub);
    out.profile = std::move(profile);
    return out;
  }

  /// Fills in completion steps and lambda trajectories; call after the run.
  void finalize(int end_step) {
    for (std::size_t s = 0; s < log_.switches.size(); ++s) {
      auto& sw = log_.switches[s];
      const int stop = s + 1 < log_.switches.size() ? log_.switches[s + 1].t_bar : end_step;
      sw.lambda.clear();
      sw.t_s = -1;
      for (int k = sw.t_bar; k < stop; ++k) {
        const auto it = applied_.find(k);
        if (it == applied_.end()) break;
        sw.lambda.push_back(it->second);
        if (it->second >= 1.0) {
          sw.t_s = k;
          break;
        }
      }
    }
  }

 private:
  // lambda of the open switch at absolute step k.
  double lambda_at(int k) const {
    if (!active_) return 1.0;
    const auto& sw = log_.switches.back();
    switch (sw.mode) {
      case SwitchMode::hard: return 1.0;
      case SwitchMode::linear: return linear(sw.t_bar, k);
      case SwitchMode::min_time: {
        const double l = std::min(1.0, jump_lambda_ + static_cast<double>(k - jump_step_) / cfg_.ts);
        return std::max(l, linear(sw.t_bar, k));
      }
    }
    return 1.0;
  }
  double linear(int t_bar, int k) const {
    if (k <= t_bar) return 0.0;
    if (k >= t_bar + cfg_.ts) return 1.0;
    return static_cast<double>(k - t_bar) / cfg_.ts;
  }
  // Candidate min-time profile: jump to l now, then at least the linear rate.
  std::vector<double> ramp(int t, double l, int H) const {
    const auto& sw = log_.switches.back();
    std::vector<double> v(static_cast<std::size_t>(H));
    for (int r = 0; r < H; ++r) {
      v[static_cast<std::size_t>(r)] = std::max(std::min(1.0, l + static_cast<double>(r) / cfg_.ts), linear(sw.t_bar, t + r));
    }
    return v;
  }
  TaskProfile profile_from(const std::vector<double>& lam) const {
    TaskProfile p;
    p.steps.reserve(lam.size());
    for (double l : lam) p.steps.push_back(blend(from_task_, to_task_, l));
    return p;
  }
  void open_switch(int t, const Strategy& target, bool escalated) {
    const double l = lambda_at(t);
    from_task_ = blend(from_task_, to_task_, l);
    SwitchRecord sw;
    sw.t_bar = t;
    sw.ts = cfg_.ts;
    sw.mode = cfg_.mode;
    sw.from = l >= 1.0 || !active_ ? to_id_ : to_id_ + "*";
    sw.to = target.id;
    sw.escalated = escalated;
    to_task_ = target.task;
    to_id_ = target.id;
    jump_step_ = t;
    jump_lambda_ = 0.0;
    stall_run_ = 0;
    active_ = true;
    log_.switches.push_back(std::move(sw));
  }

  Network base_;
  SupervisorConfig cfg_;
  ClosedLoopOptions opt_;
  Planner inner_;
  SupervisorLog log_;
  std::vector<Observation> window_;
  int last_step_ = -1;
  MpcTask from_task_, to_task_;
  std::string to_id_;
  bool active_ = false;
  int jump_step_ = 0;
  double jump_lambda_ = 0.0;
  int stall_run_ = 0;
  bool escalated_ = false;
  std::map<int, double> applied_;  // lambda planned for each step; later cycles overwrite
};

struct SupervisedResult {
  ControllerLog log;
  SupervisorLog supervisor;
};

/// Closed loop under the supervisory layer, around the centralised
/// planner or any other.
inline SupervisedResult run_supervised(const Network& net, const HydraulicSchedule& planned,
                                       const SupervisorConfig& cfg, const UncertaintySet& set,
                                       const Realization& truth, const QualityState& init, const Tariff& tariff,
                                       const ClosedLoopOptions& opt, Planner inner = {}) {
  if (!inner) inner = centralized_planner(opt);
  auto sup = std::make_shared<Supervisor>(net, cfg, opt, std::move(inner));
  Planner wrapped = [sup](const CycleInput& in) { return (*sup)(in); };
  SupervisedResult r;
  r.log = run_closed_loop(net, planned, sup->initial_task(), set, truth, init, tariff, opt, wrapped);
  sup->finalize(net.time_grid.steps_quality());
  r.supervisor = sup->log();
  return r;
}

}  // namespace wdn

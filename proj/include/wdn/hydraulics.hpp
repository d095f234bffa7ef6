#pragma once

// Quasi-static hydraulics: flow allocation over the pipe graph, tank mass
// balance, realised demand, and energy-cost pump scheduling (the slow upper
// control level).

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "wdn/error.hpp"
#include "wdn/network.hpp"
#include "wdn/qp.hpp"

namespace wdn {

/// Electricity price in $/kWh for each hour of the day.
struct Tariff {
  std::array<double, 24> price{};

  static Tariff flat(double p) {
    Tariff t;
    t.price.fill(p);
    return t;
  }
  // Peak price during 06-12 and 15-21, off-peak otherwise.
  static Tariff two_level(double peak = 0.12, double off_peak = 0.06) {
    Tariff t;
    for (int h = 0; h < 24; ++h) {
      const bool is_peak = (h >= 6 && h < 12) || (h >= 15 && h < 21);
      t.price[static_cast<std::size_t>(h)] = is_peak ? peak : off_peak;
    }
    return t;
  }
  double at_hour(int hour) const { return price[static_cast<std::size_t>(((hour % 24) + 24) % 24)]; }
  // Mean price over [t0, t1) seconds from midnight, integrating hour by hour.
  double mean_over(std::int64_t t0, std::int64_t t1) const {
    if (t1 <= t0) return at_hour(static_cast<int>(t0 / 3600));
    double acc = 0.0;
    for (std::int64_t t = t0; t < t1;) {
      const std::int64_t next = std::min(t1, (t / 3600 + 1) * 3600);
      acc += at_hour(static_cast<int>(t / 3600)) * static_cast<double>(next - t);
      t = next;
    }
    return acc / static_cast<double>(t1 - t0);
  }
  bool operator==(const Tariff&) const = default;
};

/// One draw of the uncertain quantities. Empty vectors mean "nominal".
struct Realization {
  std::uint64_t seed = 0;
  // [demand profile index][hydraulic step] multiplier on the forecast.
  std::vector<std::vector<double>> demand_mult;
  std::vector<double> pipe_decay;  // 1/h, per pipe
  std::vector<double> tank_decay;  // 1/h, per tank

  static Realization nominal() { return {}; }

  double demand_multiplier(std::size_t profile, int hstep) const {
    if (profile >= demand_mult.size() || demand_mult[profile].empty()) return 1.0;
    const auto& row = demand_mult[profile];
    return row[static_cast<std::size_t>(std::clamp<int>(hstep, 0, static_cast<int>(row.size()) - 1))];
  }
  double pipe_decay_rate(const Network& net, std::size_t p) const {
    return p < pipe_decay.size() ? pipe_decay[p] : net.pipes[p].decay_rate;
  }
  double tank_decay_rate(const Network& net, std::size_t t) const {
    return t < tank_decay.size() ? tank_decay[t] : net.tanks[t].decay_rate;
  }
  bool operator==(const Realization&) const = default;
};

/// Per hydraulic step flows and tank levels. tank_level has one more row
/// than the flow tables: the level at the start of every step plus the
/// final level.
struct HydraulicSchedule {
  std::vector<std::vector<double>> pump_flow;  // [h][pump], m3/h
  std::vector<std::vector<double>> tank_flow;  // [h][tank], m3/h, + = draining
  std::vector<std::vector<double>> pipe_flow;  // [h][pipe], m3/h, + = from -> to
  std::vector<std::vector<double>> tank_level; // [h][tank], m

  int steps() const { return static_cast<int>(pump_flow.size()); }
  bool operator==(const HydraulicSchedule&) const = default;
};

/// Mean forecast demand of every node (by node index) over hydraulic step
/// `hstep`, scaled by the realisation's multipliers.
inline std::vector<double> node_demand(const Network& net, int hstep, const Realization& r = {}) {
  NetworkView view(net);
  const auto& tg = net.time_grid;
  const int sph = tg.steps_per_hydraulic();
  std::vector<double> d(net.nodes.size(), 0.0);
  for (std::size_t i = 0; i < net.demand_profiles.size(); ++i) {
    const auto& prof = net.demand_profiles[i];
    const auto n = view.find_node(prof.node_id);
    if (!n || prof.values.empty()) continue;
    double acc = 0.0;
    for (int s = 0; s < sph; ++s) {
      const int k = std::clamp(hstep * sph + s, 0, static_cast<int>(prof.values.size()) - 1);
      acc += prof.values[static_cast<std::size_t>(k)];
    }
    d[static_cast<std::size_t>(*n)] += acc / sph * r.demand_multiplier(i, hstep);
  }
  return d;
}

inline double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

/// Pipe flows that minimise sum(resistance * q^2) subject to node balance.
/// The minimiser is q = (phi_from - phi_to) / r with node potentials phi
/// solving the weighted graph Laplacian system, grounded once per connected
/// component of the pipe graph.
inline std::vector<double> solve_flows(const Network& net, const std::vector<double>& pump_flow,
                                       const std::vector<double>& tank_flow, const std::vector<double>& demand,
                                       int step = -1) {
  NetworkView view(net);
  const int n = view.n_nodes();
  if (pump_flow.size() != net.pumps.size() || tank_flow.size() != net.tanks.size() ||
      demand.size() != net.nodes.size()) {
    throw Error(ErrorCode::dimension_mismatch, "solve_flows: inconsistent input sizes");
  }
  const std::string where = step >= 0 ? " at step " + std::to_string(step) : std::string();
  Eigen::VectorXd inj = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) inj[i] = -demand[static_cast<std::size_t>(i)];
  for (std::size_t p = 0; p < net.pumps.size(); ++p) inj[view.node(net.pumps[p].discharge_node)] += pump_flow[p];
  for (std::size_t t = 0; t < net.tanks.size(); ++t) inj[view.node(net.tanks[t].node_id)] += tank_flow[t];

  // Components of the pipe graph.
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int p = 0; p < view.n_pipes(); ++p) {
    adj[view.pipe_from(p)].push_back(view.pipe_to(p));
    adj[view.pipe_to(p)].push_back(view.pipe_from(p));
  }
  int n_comp = 0;
  for (int s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    std::vector<int> stack{s};
    comp[s] = n_comp;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int w : adj[v]) {
        if (comp[w] < 0) {
          comp[w] = n_comp;
          stack.push_back(w);
        }
      }
    }
    ++n_comp;
  }
  double scale = 1.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(inj[i]));
  std::vector<double> imbalance(static_cast<std::size_t>(n_comp), 0.0);
  std::vector<int> ground(static_cast<std::size_t>(n_comp), -1);
  for (int i = 0; i < n; ++i) {
    imbalance[comp[i]] += inj[i];
    if (ground[comp[i]] < 0) ground[comp[i]] = i;
  }
  for (int c = 0; c < n_comp; ++c) {
    if (std::abs(imbalance[c]) > 1e-9 * scale) {
      throw Error(ErrorCode::hydraulic_infeasible,
                  "hydraulic infeasible" + where + ": supply and demand differ by " + std::to_string(imbalance[c]) +
                      " m3/h");
    }
  }
  // Reduced Laplacian with grounded nodes removed.
  std::vector<int> red(static_cast<std::size_t>(n), -1);
  int nr = 0;
  for (int i = 0; i < n; ++i) {
    if (ground[comp[i]] != i) red[i] = nr++;
  }
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(nr, nr);
  Eigen::VectorXd rhs(nr);
  for (int i = 0; i < n; ++i) {
    if (red[i] >= 0) rhs[red[i]] = inj[i];
  }
  for (int p = 0; p < view.n_pipes(); ++p) {
    const double g = 1.0 / net.pipes[static_cast<std::size_t>(p)].resistance;
    const int a = red[view.pipe_from(p)], b = red[view.pipe_to(p)];
    if (a >= 0) lap(a, a) += g;
    if (b >= 0) lap(b, b) += g;
    if (a >= 0 && b >= 0) {
      lap(a, b) -= g;
      lap(b, a) -= g;
    }
  }
  Eigen::VectorXd phi_r = nr > 0 ? Eigen::VectorXd(lap.ldlt().solve(rhs)) : Eigen::VectorXd();
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (red[i] >= 0) phi[i] = phi_r[red[i]];
  }
  std::vector<double> q(static_cast<std::size_t>(view.n_pipes()));
  for (int p = 0; p < view.n_pipes(); ++p) {
    q[static_cast<std::size_t>(p)] =
        (phi[view.pipe_from(p)] - phi[view.pipe_to(p)]) / net.pipes[static_cast<std::size_t>(p)].resistance;
  }
  return q;
}

/// Largest node balance residual |inflow - outflow + injection| of a flow
/// vector, for diagnostics and tests.
inline double balance_residual(const Network& net, const std::vector<double>& pump_flow,
                               const std::vector<double>& tank_flow, const std::vector<double>& demand,
                               const std::vector<double>& pipe_flow) {
  NetworkView view(net);
  std::vector<double> r(net.nodes.size(), 0.0);
  for (std::size_t i = 0; i < net.nodes.size(); ++i) r[i] = -demand[i];
  for (std::size_t p = 0; p < net.pumps.size(); ++p) r[static_cast<std::size_t>(view.node(net.pumps[p].discharge_node))] += pump_flow[p];
  for (std::size_t t = 0; t < net.tanks.size(); ++t) r[static_cast<std::size_t>(view.node(net.tanks[t].node_id))] += tank_flow[t];
  for (int p = 0; p < view.n_pipes(); ++p) {
    r[static_cast<std::size_t>(view.pipe_from(p))] -= pipe_flow[static_cast<std::size_t>(p)];
    r[static_cast<std::size_t>(view.pipe_to(p))] += pipe_flow[static_cast<std::size_t>(p)];
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (net.nodes[i].kind != NodeKind::source) worst = std::max(worst, std::abs(r[i]));
  }
  return worst;
}

/// Fills pipe flows and tank levels for given pump and tank flows.
inline HydraulicSchedule complete_schedule(const Network& net, std::vector<std::vector<double>> pump_flow,
                                           std::vector<std::vector<double>> tank_flow, const Realization& r = {},
                                           std::vector<double> level0 = {}) {
  const int steps = static_cast<int>(pump_flow.size());
  const double dt = net.time_grid.dt_hydraulic_hours();
  HydraulicSchedule s;
  s.pump_flow = std::move(pump_flow);
  s.tank_flow = std::move(tank_flow);
  if (level0.empty()) {
    for (const auto& t : net.tanks) level0.push_back(t.level_init);
  }
  s.tank_level.push_back(level0);
  for (int h = 0; h < steps; ++h) {
    s.pipe_flow.push_back(solve_flows(net, s.pump_flow[h], s.tank_flow[h], node_demand(net, h, r), h));
    auto next = s.tank_level.back();
    for (std::size_t t = 0; t < net.tanks.size(); ++t) next[t] -= s.tank_flow[h][t] * dt / net.tanks[t].area;
    s.tank_level.push_back(std::move(next));
  }
  return s;
}

/// Pumps supply the forecast demand directly, split in proportion to their
/// capacity; tanks stay idle.
inline HydraulicSchedule demand_tracking_schedule(const Network& net, const Realization& r = {}) {
  const int steps = net.time_grid.steps_hydraulic();
  double cap = 0.0;
  for (const auto& p : net.pumps) cap += p.flow_max;
  std::vector<std::vector<double>> pf, tf;
  for (int h = 0; h < steps; ++h) {
    const double d = total(node_demand(net, h, r));
    if (d > cap * (1.0 + 1e-12)) {
      throw Error(ErrorCode::schedule_infeasible,
                  "demand " + std::to_string(d) + " m3/h exceeds pump capacity at step " + std::to_string(h));
    }
    std::vector<double> row;
    for (const auto& p : net.pumps) row.push_back(cap > 0.0 ? d * p.flow_max / cap : 0.0);
    pf.push_back(std::move(row));
    tf.emplace_back(net.tanks.size(), 0.0);
  }
  return complete_schedule(net, std::move(pf), std::move(tf), r);
}

/// Energy cost ($) of every hydraulic step of a schedule.
inline std::vector<double> step_energy_cost(const Network& net, const HydraulicSchedule& s, const Tariff& tariff,
                                            int first_step = 0) {
  const auto& tg = net.time_grid;
  const auto dt_s = tg.dt_hydraulic.count();
  std::vector<double> cost;
  for (int h = 0; h < s.steps(); ++h) {
    const std::int64_t t0 = static_cast<std::int64_t>(first_step + h) * dt_s % 86400;
    const double eta = tariff.mean_over(t0, t0 + dt_s);
    double kwh = 0.0;
    for (std::size_t p = 0; p < net.pumps.size(); ++p) kwh += net.pumps[p].power_coeff * s.pump_flow[h][p];
    cost.push_back(eta * kwh * tg.dt_hydraulic_hours());
  }
  return cost;
}

inline double energy_cost(const Network& net, const HydraulicSchedule& s, const Tariff& tariff) {
  return total(step_energy_cost(net, s, tariff));
}

struct PumpScheduleOptions {
  int first_step = 0;                // hydraulic step the window starts at
  int window = -1;                   // steps; -1 = to the end of the horizon
  std::vector<double> level0;        // empty = tank level_init
  bool periodic_demand = false;      // wrap the daily profile past the horizon
  double tol = 1e-8;
};

/// Energy-optimal pump and tank flows (linear program solved through the QP
/// engine): minimise sum_k eta(k) sum_p c_p q_p(k) dt subject to balance,
/// pump and tank flow bounds, tank level bounds and an end level no lower
/// than the initial one.
inline HydraulicSchedule optimize_pump_schedule(const Network& net, const Tariff& tariff,
                                                const PumpScheduleOptions& opt = {}) {
  const auto& tg = net.time_grid;
  const int horizon = tg.steps_hydraulic();
  const int n_steps = opt.window > 0 ? opt.window : horizon - opt.first_step;
  if (n_steps <= 0) throw Error(ErrorCode::invalid_argument, "optimize_pump_schedule: empty window");
  const int np = static_cast<int>(net.pumps.size());
  const int nt = static_cast<int>(net.tanks.size());
  const int nv = n_steps * (np + nt);
  const double dt = tg.dt_hydraulic_hours();
  std::vector<double> level0 = opt.level0;
  if (level0.empty()) {
    for (const auto& t : net.tanks) level0.push_back(t.level_init);
  }
  auto hstep = [&](int k) {
    const int h = opt.first_step + k;
    return opt.periodic_demand ? h % horizon : std::min(h, horizon - 1);
  };
  auto pv = [&](int k, int p) { return k * (np + nt) + p; };
  auto tv = [&](int k, int t) { return k * (np + nt) + np + t; };

  qp::QpProblem prob;
  prob.q = qp::Mat::Zero(nv, nv);
  prob.f = qp::Vec::Zero(nv);
  prob.lb.resize(nv);
  prob.ub.resize(nv);
  const int m = n_steps + n_steps * nt;
  prob.a = qp::Mat::Zero(m, nv);
  prob.b_lo.resize(m);
  prob.b.resize(m);
  const auto dt_s = tg.dt_hydraulic.count();
  for (int k = 0; k < n_steps; ++k) {
    const std::int64_t t0 = static_cast<std::int64_t>(opt.first_step + k) * dt_s % 86400;
    const double eta = tariff.mean_over(t0, t0 + dt_s);
    for (int p = 0; p < np; ++p) {
      prob.f[pv(k, p)] = eta * net.pumps[p].power_coeff * dt;
      prob.lb[pv(k, p)] = 0.0;
      prob.ub[pv(k, p)] = net.pumps[p].flow_max;
      prob.a(k, pv(k, p)) = 1.0;
    }
    for (int t = 0; t < nt; ++t) {
      prob.lb[tv(k, t)] = -net.tanks[t].flow_max;
      prob.ub[tv(k, t)] = net.tanks[t].flow_max;
      prob.a(k, tv(k, t)) = 1.0;
    }
    const double d = total(node_demand(net, hstep(k)));
    prob.b_lo[k] = d;
    prob.b[k] = d;
  }
  // Level after step k: level0 - dt/area * sum_{i<=k} tank_flow(i).
  for (int t = 0; t < nt; ++t) {
    const auto& tk = net.tanks[t];
    for (int k = 0; k < n_steps; ++k) {
      const int row = n_steps + t * n_steps + k;
      for (int i = 0; i <= k; ++i) prob.a(row, tv(i, t)) = dt / tk.area;
      // level0 - s in [lo, hi]  <=>  s in [level0 - hi, level0 - lo]
      double lo = tk.level_min;
      if (k == n_steps - 1) lo = std::max(lo, tk.level_init);
      prob.b_lo[row] = level0[t] - tk.level_max;
      prob.b[row] = level0[t] - lo;
    }
  }
  qp::QpSettings settings;
  settings.tol = opt.tol;
  settings.max_iter = 50000;
  qp::QpSolver solver(prob, settings);
  const auto res = solver.solve(prob);
  if (res.status != qp::QpStatus::optimal) {
    throw Error(ErrorCode::schedule_infeasible,
                std::string("pump schedule optimisation failed: ") + qp::to_string(res.status));
  }
  std::vector<std::vector<double>> pf(n_steps, std::vector<double>(np)), tf(n_steps, std::vector<double>(nt));
  for (int k = 0; k < n_steps; ++k) {
    for (int p = 0; p < np; ++p) pf[k][p] = std::clamp(res.x[pv(k, p)], 0.0, net.pumps[p].flow_max);
    for (int t = 0; t < nt; ++t) tf[k][t] = std::clamp(res.x[tv(k, t)], -net.tanks[t].flow_max, net.tanks[t].flow_max);
    // Restore exact balance after clamping: the pumps take the residual.
    double gap = total(node_demand(net, hstep(k))) - total(pf[k]) - total(tf[k]);
    for (int p = 0; p < np && gap != 0.0; ++p) {
      const double room = gap > 0.0 ? net.pumps[p].flow_max - pf[k][p] : -pf[k][p];
      const double take = gap > 0.0 ? std::min(gap, room) : std::max(gap, room);
      pf[k][p] += take;
      gap -= take;
    }
  }
  // Pipe flows for the (possibly wrapped) demand of the window.
  HydraulicSchedule s;
  s.pump_flow = pf;
  s.tank_flow = tf;
  s.tank_level.push_back(level0);
  for (int k = 0; k < n_steps; ++k) {
    s.pipe_flow.push_back(solve_flows(net, pf[k], tf[k], node_demand(net, hstep(k)), opt.first_step + k));
    auto next = s.tank_level.back();
    for (int t = 0; t < nt; ++t) next[t] -= tf[k][t] * dt / net.tanks[t].area;
    s.tank_level.push_back(std::move(next));
  }
  return s;
}

/// Actual hydraulics of a planned schedule under a realisation: pumps run as
/// planned, tanks absorb the demand forecast error in equal shares (pumps do
/// when the network has no tank).
inline HydraulicSchedule realize_hydraulics(const Network& net, const HydraulicSchedule& planned,
                                            const Realization& r, int first_step = 0) {
  const int steps = planned.steps();
  std::vector<std::vector<double>> pf = planned.pump_flow, tf = planned.tank_flow;
  for (int k = 0; k < steps; ++k) {
    const int h = first_step + k;
    const double gap = total(node_demand(net, h, r)) - total(pf[k]) - total(tf[k]);
    if (!net.tanks.empty()) {
      for (auto& v : tf[k]) v += gap / static_cast<double>(net.tanks.size());
    } else if (!net.pumps.empty()) {
      for (auto& v : pf[k]) v += gap / static_cast<double>(net.pumps.size());
    }
  }
  HydraulicSchedule s;
  s.pump_flow = std::move(pf);
  s.tank_flow = std::move(tf);
  s.tank_level.push_back(planned.tank_level.empty() ? std::vector<double>{} : planned.tank_level.front());
  if (s.tank_level.front().empty()) {
    for (const auto& t : net.tanks) s.tank_level.front().push_back(t.level_init);
  }
  const double dt = net.time_grid.dt_hydraulic_hours();
  for (int k = 0; k < steps; ++k) {
    s.pipe_flow.push_back(solve_flows(net, s.pump_flow[k], s.tank_flow[k], node_demand(net, first_step + k, r),
                                      first_step + k));
    auto next = s.tank_level.back();
    for (std::size_t t = 0; t < net.tanks.size(); ++t) next[t] -= s.tank_flow[k][t] * dt / net.tanks[t].area;
    s.tank_level.push_back(std::move(next));
  }
  return s;
}

}  // namespace wdn

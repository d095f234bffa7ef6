#pragma once

// Chlorine transport, decay and mixing on the fast (quality) time scale.
//
// Pipes are plug-flow FIFO buffers whose length is the transport delay in
// quality steps. Nodes mix arriving parcels flow-weighted, booster nodes
// emit exactly their setpoint, tanks are complete-mix volumes. The engine
// advances several independent "lanes" at once over a shared hydraulic
// state; the closed loop uses one lane, model extraction one lane per
// injection impulse.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wdn/error.hpp"
#include "wdn/hydraulics.hpp"
#include "wdn/network.hpp"

namespace wdn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Physical chlorine state at the start of quality step `step`.
struct QualityState {
  int step = 0;
  // Per pipe, segment concentrations ordered from the exit end (oldest)
  // to the entry end; the buffer length is the current transport delay.
  std::vector<std::vector<double>> pipe_buffers;
  // Flow direction the buffer was filled in: +1 from->to, -1 to->from.
  std::vector<int> pipe_direction;
  std::vector<double> node_conc;  // by node index
  std::vector<double> tank_conc;  // by tank index
  bool operator==(const QualityState&) const = default;
};

/// Empty (chlorine free) state; buffers are shaped on the first step.
inline QualityState zero_quality_state(const Network& net, int step = 0) {
  QualityState s;
  s.step = step;
  s.pipe_buffers.assign(net.pipes.size(), {});
  s.pipe_direction.assign(net.pipes.size(), 0);
  s.node_conc.assign(net.nodes.size(), 0.0);
  s.tank_conc.assign(net.tanks.size(), 0.0);
  return s;
}

namespace detail {

// Multi-lane state. Each pipe is a ring buffer of lane columns; every slot
// remembers the step it entered the pipe so decay is applied on exit from
// the true residence time.
struct LaneState {
  int lanes = 1;
  int step = 0;
  std::vector<Mat> buf;                  // per pipe, lanes x delay
  std::vector<std::vector<int>> stamp;   // per pipe, entry step per slot
  std::vector<int> head;                 // ring index of the oldest slot
  std::vector<int> dir;                  // 0 = never filled
  Mat node;                              // lanes x nodes
  Mat tank;                              // lanes x tanks
};

struct PipeStep {
  int dir = 0;  // +1, -1, 0 (stagnant)
  int delay = 1;
  double flow = 0.0;  // |q|
  int up = -1, down = -1;
};

struct Inflow {
  int pipe = -1;  // -1: pump from a source
  double flow = 0.0;
  double conc = 0.0;  // source concentration for pump inflow
};

struct HydStep {
  std::vector<PipeStep> pipes;
  std::vector<std::vector<Inflow>> inflow;  // by node
  std::vector<double> q_in, q_out;          // by node
};

}  // namespace detail

/// Transport engine bound to one network, one (absolute, full horizon)
/// hydraulic schedule and one set of decay rates.
class QualityEngine {
 public:
  static constexpr double kStagnant = 1e-9;  // m3/h

  QualityEngine(const Network& net, const HydraulicSchedule& hyd, const Realization& r = {})
      : net_(&net), view_(net), hyd_(&hyd) {
    const auto& tg = net.time_grid;
    dt_h_ = tg.dt_quality_hours();
    sph_ = tg.steps_per_hydraulic();
    max_delay_ = std::max(1, tg.steps_quality());
    for (std::size_t p = 0; p < net.pipes.size(); ++p) pipe_f_.push_back(std::exp(-r.pipe_decay_rate(net, p) * dt_h_));
    for (std::size_t t = 0; t < net.tanks.size(); ++t) tank_f_.push_back(std::exp(-r.tank_decay_rate(net, t) * dt_h_));
    booster_node_.resize(net.boosters.size());
    for (std::size_t b = 0; b < net.boosters.size(); ++b) booster_node_[b] = view_.node(net.boosters[b].node_id);
    for (const auto& m : net.monitored) monitored_node_.push_back(view_.node(m.node_id));
    if (hyd.pipe_flow.size() != hyd.pump_flow.size()) {
      throw Error(ErrorCode::dimension_mismatch, "quality engine: schedule has no pipe flows");
    }
    for (int h = 0; h < hyd.steps(); ++h) steps_.push_back(build_step(h));
  }

  const Network& net() const { return *net_; }
  const HydraulicSchedule& hydraulics() const { return *hyd_; }
  const std::vector<int>& monitored_nodes() const { return monitored_node_; }
  int last_step() const { return hyd_->steps() * sph_; }

  detail::LaneState lanes_from(const QualityState& s, int lanes) const {
    detail::LaneState ls;
    ls.lanes = lanes;
    ls.step = s.step;
    const std::size_t np = net_->pipes.size();
    if (s.pipe_buffers.size() != np || s.node_conc.size() != net_->nodes.size() ||
        s.tank_conc.size() != net_->tanks.size()) {
      throw Error(ErrorCode::dimension_mismatch, "quality state does not match the network");
    }
    ls.buf.resize(np);
    ls.stamp.resize(np);
    ls.head.assign(np, 0);
    ls.dir = s.pipe_direction;
    ls.dir.resize(np, 0);
    for (std::size_t p = 0; p < np; ++p) {
      const auto& b = s.pipe_buffers[p];
      ls.buf[p] = Mat::Zero(lanes, static_cast<Eigen::Index>(b.size()));
      for (std::size_t i = 0; i < b.size(); ++i) ls.buf[p](0, static_cast<Eigen::Index>(i)) = b[i];
      ls.stamp[p].assign(b.size(), s.step);
      if (b.empty()) ls.dir[p] = 0;
    }
    ls.node = Mat::Zero(lanes, static_cast<Eigen::Index>(net_->nodes.size()));
    for (std::size_t i = 0; i < s.node_conc.size(); ++i) ls.node(0, static_cast<Eigen::Index>(i)) = s.node_conc[i];
    ls.tank = Mat::Zero(lanes, static_cast<Eigen::Index>(net_->tanks.size()));
    for (std::size_t t = 0; t < s.tank_conc.size(); ++t) ls.tank(0, static_cast<Eigen::Index>(t)) = s.tank_conc[t];
    return ls;
  }

  QualityState lane_state(const detail::LaneState& ls, int lane = 0) const {
    QualityState s;
    s.step = ls.step;
    const std::size_t np = net_->pipes.size();
    s.pipe_buffers.resize(np);
    s.pipe_direction = ls.dir;
    for (std::size_t p = 0; p < np; ++p) {
      const int d = static_cast<int>(ls.buf[p].cols());
      for (int i = 0; i < d; ++i) {
        const int slot = (ls.head[p] + i) % d;
        const int age = ls.step - ls.stamp[p][static_cast<std::size_t>(slot)];
        s.pipe_buffers[p].push_back(ls.buf[p](lane, slot) * std::pow(pipe_f_[p], age));
      }
    }
    s.node_conc.resize(net_->nodes.size());
    for (std::size_t i = 0; i < s.node_conc.size(); ++i) s.node_conc[i] = ls.node(lane, static_cast<Eigen::Index>(i));
    s.tank_conc.resize(net_->tanks.size());
    for (std::size_t t = 0; t < s.tank_conc.size(); ++t) s.tank_conc[t] = ls.tank(lane, static_cast<Eigen::Index>(t));
    return s;
  }

  /// Advances one quality step. `u` is lanes x boosters (setpoints for this
  /// step); `source_weight` scales source chlorine per lane. On return
  /// ls.node holds the node concentrations of step ls.step - 1.
  void step(detail::LaneState& ls, const Mat& u, const Vec& source_weight) const {
    const int k = ls.step;
    const int h = k / sph_;
    if (h < 0 || h >= static_cast<int>(steps_.size())) {
      throw Error(ErrorCode::invalid_argument, "quality step " + std::to_string(k) + " outside the hydraulic schedule");
    }
    const auto& hs = steps_[static_cast<std::size_t>(h)];
    const std::size_t np = net_->pipes.size();
    shape_buffers(ls, hs);

    // Exits of moving pipes.
    Mat exits(ls.lanes, static_cast<Eigen::Index>(np));
    for (std::size_t p = 0; p < np; ++p) {
      if (hs.pipes[p].dir == 0) continue;
      const int slot = ls.head[p];
      const int age = k - ls.stamp[p][static_cast<std::size_t>(slot)];
      exits.col(static_cast<Eigen::Index>(p)) = ls.buf[p].col(slot) * std::pow(pipe_f_[p], age);
    }

    // Node mixing.
    const int nn = static_cast<int>(net_->nodes.size());
    Mat next(ls.lanes, nn);
    Vec mass(ls.lanes);
    for (int n = 0; n < nn; ++n) {
      const auto& node = net_->nodes[static_cast<std::size_t>(n)];
      const int b = view_.booster_of_node(n);
      if (b >= 0) {
        next.col(n) = u.col(b);
        continue;
      }
      if (node.kind == NodeKind::source) {
        next.col(n) = node.source_conc * source_weight;
        continue;
      }
      mass.setZero();
      double qin = 0.0;
      for (const auto& in : hs.inflow[static_cast<std::size_t>(n)]) {
        qin += in.flow;
        if (in.pipe >= 0) {
          mass.noalias() += in.flow * exits.col(in.pipe);
        } else {
          mass.noalias() += (in.flow * in.conc) * source_weight;
        }
      }
      const int t = view_.tank_of_node(n);
      if (t >= 0) {
        const double vol = tank_volume(t, k);
        const double v_keep = std::max(vol - hs.q_out[static_cast<std::size_t>(n)] * dt_h_, 0.0);
        const double v_in = qin * dt_h_;
        const double f = tank_f_[static_cast<std::size_t>(t)];
        if (v_keep + v_in > 0.0) {
          ls.tank.col(t) = (f * v_keep * ls.tank.col(t) + dt_h_ * mass) / (v_keep + v_in);
        } else {
          ls.tank.col(t) *= f;
        }
        next.col(n) = ls.tank.col(t);
        continue;
      }
      if (qin > kStagnant) {
        next.col(n) = mass / qin;
      } else {
        next.col(n) = ls.node.col(n);
      }
    }
    ls.node.swap(next);

    // Entries of moving pipes.
    for (std::size_t p = 0; p < np; ++p) {
      const auto& ps = hs.pipes[p];
      if (ps.dir == 0) continue;
      const int slot = ls.head[p];
      ls.buf[p].col(slot) = ls.node.col(ps.up);
      ls.stamp[p][static_cast<std::size_t>(slot)] = k;
      ls.head[p] = (slot + 1) % static_cast<int>(ls.buf[p].cols());
    }
    ls.step = k + 1;
  }

  // Lane outputs (lanes x monitored) of the most recent step.
  Mat outputs(const detail::LaneState& ls) const {
    Mat y(ls.lanes, static_cast<Eigen::Index>(monitored_node_.size()));
    for (std::size_t i = 0; i < monitored_node_.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = ls.node.col(monitored_node_[i]);
    return y;
  }

  // Tank volume at the start of quality step k.
  double tank_volume(int t, int k) const {
    const int h = k / sph_;
    const auto& tk = net_->tanks[static_cast<std::size_t>(t)];
    const double lvl = hyd_->tank_level[static_cast<std::size_t>(h)][static_cast<std::size_t>(t)] -
                       hyd_->tank_flow[static_cast<std::size_t>(h)][static_cast<std::size_t>(t)] * dt_h_ * (k - h * sph_) / tk.area;
    return std::max(lvl, 0.0) * tk.area;
  }
  double tank_level(int t, int k) const {
    return tank_volume(t, k) / net_->tanks[static_cast<std::size_t>(t)].area;
  }

 private:
  detail::HydStep build_step(int h) const {
    detail::HydStep hs;
    const auto& net = *net_;
    const std::size_t np = net.pipes.size();
    const std::size_t nn = net.nodes.size();
    hs.pipes.resize(np);
    hs.inflow.resize(nn);
    hs.q_in.assign(nn, 0.0);
    hs.q_out.assign(nn, 0.0);
    const auto& q = hyd_->pipe_flow[static_cast<std::size_t>(h)];
    if (q.size() != np) throw Error(ErrorCode::dimension_mismatch, "pipe flow table does not match the network");
    for (std::size_t p = 0; p < np; ++p) {
      auto& ps = hs.pipes[p];
      const double qa = std::abs(q[p]);
      ps.flow = qa;
      if (qa <= kStagnant) continue;
      ps.dir = q[p] > 0.0 ? 1 : -1;
      ps.up = ps.dir > 0 ? view_.pipe_from(static_cast<int>(p)) : view_.pipe_to(static_cast<int>(p));
      ps.down = ps.dir > 0 ? view_.pipe_to(static_cast<int>(p)) : view_.pipe_from(static_cast<int>(p));
      const double d = net.pipes[p].volume / qa / dt_h_;
      ps.delay = static_cast<int>(std::clamp(std::llround(d), 1LL, static_cast<long long>(max_delay_)));
      hs.inflow[static_cast<std::size_t>(ps.down)].push_back({static_cast<int>(p), qa, 0.0});
      hs.q_in[static_cast<std::size_t>(ps.down)] += qa;
      hs.q_out[static_cast<std::size_t>(ps.up)] += qa;
    }
    const auto& pf = hyd_->pump_flow[static_cast<std::size_t>(h)];
    for (std::size_t i = 0; i < net.pumps.size(); ++i) {
      if (pf[i] <= kStagnant) continue;
      const int dn = view_.node(net.pumps[i].discharge_node);
      const int sn = view_.node(net.pumps[i].source_node);
      hs.inflow[static_cast<std::size_t>(dn)].push_back({-1, pf[i], net.nodes[static_cast<std::size_t>(sn)].source_conc});
      hs.q_in[static_cast<std::size_t>(dn)] += pf[i];
    }
    return hs;
  }

  // Orients and resizes buffers for the hydraulic state of the step.
  void shape_buffers(detail::LaneState& ls, const detail::HydStep& hs) const {
    for (std::size_t p = 0; p < hs.pipes.size(); ++p) {
      const auto& ps = hs.pipes[p];
      if (ps.dir == 0) {
        if (ls.dir[p] == 0) {
          ls.buf[p] = Mat::Zero(ls.lanes, 1);
          ls.stamp[p].assign(1, ls.step);
          ls.head[p] = 0;
          ls.dir[p] = 1;
        }
        continue;
      }
      const int d_old = static_cast<int>(ls.buf[p].cols());
      if (ls.dir[p] == 0 || d_old == 0) {
        ls.buf[p] = Mat::Zero(ls.lanes, ps.delay);
        ls.stamp[p].assign(static_cast<std::size_t>(ps.delay), ls.step);
        ls.head[p] = 0;
        ls.dir[p] = ps.dir;
      } else if (ls.dir[p] != ps.dir) {
        // Reversal: refill with the new upstream node's concentration.
        ls.buf[p] = ls.node.col(ps.up).replicate(1, ps.delay);
        ls.stamp[p].assign(static_cast<std::size_t>(ps.delay), ls.step);
        ls.head[p] = 0;
        ls.dir[p] = ps.dir;
      } else if (d_old != ps.delay) {
        // Volume-weighted remap onto the new slot count (oldest first);
        // chlorine mass along the pipe is preserved.
        Mat phys(ls.lanes, d_old);
        for (int i = 0; i < d_old; ++i) {
          const int slot = (ls.head[p] + i) % d_old;
          const int age = ls.step - ls.stamp[p][static_cast<std::size_t>(slot)];
          phys.col(i) = ls.buf[p].col(slot) * std::pow(pipe_f_[p], age);
        }
        Mat nb = Mat::Zero(ls.lanes, ps.delay);
        for (int i = 0; i < ps.delay; ++i) {
          // New slot i spans [i, i+1) * d_old / delay in old slot units.
          const double a = static_cast<double>(i) * d_old / ps.delay;
          const double b = static_cast<double>(i + 1) * d_old / ps.delay;
          for (int j = static_cast<int>(a); j < d_old && j < b; ++j) {
            const double w = std::min(b, j + 1.0) - std::max(a, static_cast<double>(j));
            if (w > 0.0) nb.col(i) += (w / (b - a)) * phys.col(j);
          }
        }
        ls.buf[p].swap(nb);
        ls.stamp[p].assign(static_cast<std::size_t>(ps.delay), ls.step);
        ls.head[p] = 0;
      }
    }
  }

  const Network* net_;
  NetworkView view_;
  const HydraulicSchedule* hyd_;
  double dt_h_ = 0.0;
  int sph_ = 1;
  int max_delay_ = 1;
  std::vector<double> pipe_f_, tank_f_;
  std::vector<int> booster_node_, monitored_node_;
  std::vector<detail::HydStep> steps_;
};

/// Per-step record of a plant run.
struct PlantTrajectory {
  int first_step = 0;
  Seconds dt{300};
  std::vector<int> monitored_ids, booster_ids, tank_ids, pump_ids;
  Mat y;      // steps x monitored
  Mat u;      // steps x boosters
  Mat level;  // steps x tanks, level at the start of the step
  Mat flow;   // steps x pumps
  std::vector<double> energy_cost_cumulative;
  QualityState final_state;

  int steps() const { return static_cast<int>(y.rows()); }
};

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Header and rows of the plant CSV, in the fixed column order.
inline std::vector<std::string> plant_csv_header(const PlantTrajectory& tr) {
  std::vector<std::string> h{"time_s"};
  for (int id : tr.monitored_ids) h.push_back("y_" + std::to_string(id));
  for (int id : tr.booster_ids) h.push_back("u_" + std::to_string(id));
  for (int id : tr.tank_ids) h.push_back("level_" + std::to_string(id));
  for (int id : tr.pump_ids) h.push_back("flow_" + std::to_string(id));
  h.push_back("energy_cost_cumulative");
  return h;
}

inline std::vector<std::string> plant_csv_row(const PlantTrajectory& tr, int i) {
  std::vector<std::string> r;
  r.push_back(std::to_string(static_cast<long long>(tr.first_step + i) * tr.dt.count()));
  for (Eigen::Index c = 0; c < tr.y.cols(); ++c) r.push_back(detail::fmt(tr.y(i, c)));
  for (Eigen::Index c = 0; c < tr.u.cols(); ++c) r.push_back(detail::fmt(tr.u(i, c)));
  for (Eigen::Index c = 0; c < tr.level.cols(); ++c) r.push_back(detail::fmt(tr.level(i, c)));
  for (Eigen::Index c = 0; c < tr.flow.cols(); ++c) r.push_back(detail::fmt(tr.flow(i, c)));
  r.push_back(detail::fmt(tr.energy_cost_cumulative[static_cast<std::size_t>(i)]));
  return r;
}

inline void write_csv_line(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << cells[i];
  }
  os << '\n';
}

inline void write_csv(std::ostream& os, const PlantTrajectory& tr) {
  write_csv_line(os, plant_csv_header(tr));
  for (int i = 0; i < tr.steps(); ++i) write_csv_line(os, plant_csv_row(tr, i));
}

/// Runs the plant from `init` over steps [init.step, init.step + u.rows())
/// under realised hydraulics `actual`. Energy cost accumulates from
/// `cost_offset`.
inline PlantTrajectory simulate_realized(const Network& net, const HydraulicSchedule& actual, const Mat& u,
                                         const Realization& r, const QualityState& init, const Tariff& tariff = Tariff::flat(0.0),
                                         double cost_offset = 0.0) {
  if (u.cols() != static_cast<Eigen::Index>(net.boosters.size())) {
    throw Error(ErrorCode::dimension_mismatch, "simulate: u must have one column per booster");
  }
  QualityEngine eng(net, actual, r);
  if (init.step + u.rows() > eng.last_step()) {
    throw Error(ErrorCode::invalid_argument, "simulate: u runs past the hydraulic schedule");
  }
  const auto& tg = net.time_grid;
  PlantTrajectory tr;
  tr.first_step = init.step;
  tr.dt = tg.dt_quality;
  for (const auto& m : net.monitored) tr.monitored_ids.push_back(m.node_id);
  for (const auto& b : net.boosters) tr.booster_ids.push_back(b.node_id);
  for (const auto& t : net.tanks) tr.tank_ids.push_back(t.node_id);
  for (const auto& p : net.pumps) tr.pump_ids.push_back(p.id);
  const int n = static_cast<int>(u.rows());
  tr.y.resize(n, static_cast<Eigen::Index>(net.monitored.size()));
  tr.u = u;
  tr.level.resize(n, static_cast<Eigen::Index>(net.tanks.size()));
  tr.flow.resize(n, static_cast<Eigen::Index>(net.pumps.size()));
  auto ls = eng.lanes_from(init, 1);
  Vec src = Vec::Ones(1);
  Mat uk(1, u.cols());
  double cost = cost_offset;
  const auto dtq = tg.dt_quality.count();
  for (int i = 0; i < n; ++i) {
    const int k = init.step + i;
    const int h = k / tg.steps_per_hydraulic();
    for (std::size_t t = 0; t < net.tanks.size(); ++t) tr.level(i, static_cast<Eigen::Index>(t)) = eng.tank_level(static_cast<int>(t), k);
    double kwh = 0.0;
    for (std::size_t p = 0; p < net.pumps.size(); ++p) {
      const double q = actual.pump_flow[static_cast<std::size_t>(h)][p];
      tr.flow(i, static_cast<Eigen::Index>(p)) = q;
      kwh += net.pumps[p].power_coeff * q * tg.dt_quality_hours();
    }
    const std::int64_t t0 = static_cast<std::int64_t>(k) * dtq % 86400;
    cost += tariff.mean_over(t0, t0 + dtq) * kwh;
    tr.energy_cost_cumulative.push_back(cost);
    uk.row(0) = u.row(i);
    eng.step(ls, uk, src);
    tr.y.row(i) = eng.outputs(ls).row(0);
  }
  tr.final_state = eng.lane_state(ls);
  return tr;
}

/// Plant run for a planned pump/tank schedule: the hydraulics are realised
/// under `r` first.
inline PlantTrajectory simulate(const Network& net, const HydraulicSchedule& planned, const Mat& u,
                                const Realization& r, const QualityState& init, const Tariff& tariff = Tariff::flat(0.0)) {
  const auto actual = realize_hydraulics(net, planned, r);
  return simulate_realized(net, actual, u, r, init, tariff);
}

/// Periodic starting state: the network is run for one horizon at constant
/// injections `u0` from a chlorine free state and the final state is
/// relabelled as step 0.
inline QualityState warm_state(const Network& net, const HydraulicSchedule& actual, const std::vector<double>& u0,
                               int days = 1) {
  auto s = zero_quality_state(net);
  const int n = net.time_grid.steps_quality();
  Mat u(n, static_cast<Eigen::Index>(net.boosters.size()));
  for (std::size_t b = 0; b < net.boosters.size(); ++b) u.col(static_cast<Eigen::Index>(b)).setConstant(u0.at(b));
  for (int d = 0; d < days; ++d) {
    s = simulate_realized(net, actual, u, {}, s).final_state;
    s.step = 0;
  }
  return s;
}

}  // namespace wdn

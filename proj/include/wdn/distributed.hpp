#pragma once

// Cooperative distributed RFMPC: the control model is split into zones, one
// RFMPC agent per zone, and agents exchange their planned injection
// trajectories once per control cycle (no iteration within a cycle).

#include <cstdint>
#include <exception>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "wdn/rfmpc.hpp"

namespace wdn {

/// One zone: the boosters it drives and the monitored outputs it answers for
/// (node ids).
struct ControlZone {
  std::vector<int> boosters;
  std::vector<int> outputs;
  bool operator==(const ControlZone&) const = default;
};

/// Zones must split the boosters and monitored outputs into disjoint,
/// exhaustive groups.
struct ZonePartition {
  std::vector<ControlZone> zones;

  /// The two-zone split used with the 16-node benchmark.
  static ZonePartition benchmark_default() { return ZonePartition{{{{5}, {16}}, {{10}, {8}}}}; }

  /// One zone per (booster, output) pair in declaration order; requires as
  /// many boosters as outputs.
  static ZonePartition pairwise(const Network& net) {
    if (net.boosters.size() != net.monitored.size()) {
      throw Error(ErrorCode::invalid_argument, "pairwise partition needs as many boosters as monitored outputs");
    }
    ZonePartition p;
    for (std::size_t i = 0; i < net.boosters.size(); ++i) p.zones.push_back({{net.boosters[i].node_id}, {net.monitored[i].node_id}});
    return p;
  }

  int size() const { return static_cast<int>(zones.size()); }

  /// Throws invalid_partition naming the first problem found.
  void check(const Network& net) const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::invalid_partition, "zone partition: " + m); };
    if (zones.empty()) fail("no zones");
    std::set<int> boosters, outputs;
    for (const auto& b : net.boosters) boosters.insert(b.node_id);
    for (const auto& m : net.monitored) outputs.insert(m.node_id);
    std::set<int> seen_b, seen_o;
    for (std::size_t z = 0; z < zones.size(); ++z) {
      const std::string tag = "zone " + std::to_string(z) + ": ";
      if (zones[z].boosters.empty()) fail(tag + "owns no booster");
      if (zones[z].outputs.empty()) fail(tag + "owns no monitored output");
      for (int id : zones[z].boosters) {
        if (!boosters.count(id)) fail(tag + "unknown booster " + std::to_string(id));
        if (!seen_b.insert(id).second) fail(tag + "booster " + std::to_string(id) + " is owned twice");
      }
      for (int id : zones[z].outputs) {
        if (!outputs.count(id)) fail(tag + "unknown monitored output " + std::to_string(id));
        if (!seen_o.insert(id).second) fail(tag + "monitored output " + std::to_string(id) + " is owned twice");
      }
    }
    for (int id : boosters) {
      if (!seen_b.count(id)) fail("booster " + std::to_string(id) + " belongs to no zone");
    }
    for (int id : outputs) {
      if (!seen_o.count(id)) fail("monitored output " + std::to_string(id) + " belongs to no zone");
    }
  }

  /// Booster and output indices (network order) of every zone, each list
  /// sorted ascending.
  std::vector<std::pair<std::vector<int>, std::vector<int>>> indices(const Network& net) const {
    check(net);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
    for (const auto& z : zones) {
      std::vector<int> in, ou;
      for (std::size_t b = 0; b < net.boosters.size(); ++b) {
        if (std::find(z.boosters.begin(), z.boosters.end(), net.boosters[b].node_id) != z.boosters.end()) {
          in.push_back(static_cast<int>(b));
        }
      }
      for (std::size_t m = 0; m < net.monitored.size(); ++m) {
        if (std::find(z.outputs.begin(), z.outputs.end(), net.monitored[m].node_id) != z.outputs.end()) {
          ou.push_back(static_cast<int>(m));
        }
      }
      out.emplace_back(std::move(in), std::move(ou));
    }
    return out;
  }
  bool operator==(const ZonePartition&) const = default;
};

/// One agent's slice of the centralised model. `own` maps the zone's inputs
/// to its outputs (with the zone's free response); `cross` maps every other
/// input, in `others` order, to the zone's outputs with the same block
/// layout as LtvResponseModel::gains.
struct AgentModel {
  int agent = 0;
  std::vector<int> inputs;   // own booster indices
  std::vector<int> outputs;  // own output indices
  std::vector<int> others;   // booster indices owned by other zones
  LtvResponseModel own;
  Mat cross;  // (n_out*H) x (n_others*H)

  /// Interaction of the other zones' inputs with this zone's outputs; `u`
  /// holds all boosters (H x n_in) and only the `others` columns are read.
  Mat interaction(const Mat& u) const {
    const int H = own.horizon;
    Mat y = Mat::Zero(H, own.n_out);
    for (int i = 0; i < own.n_out; ++i) {
      for (std::size_t j = 0; j < others.size(); ++j) {
        y.col(i).noalias() += cross.block(i * H, static_cast<Eigen::Index>(j) * H, H, H) * u.col(others[j]);
      }
    }
    return y;
  }
};

namespace detail {

inline Mat gain_blocks(const LtvResponseModel& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  const int H = m.horizon;
  Mat g(static_cast<Eigen::Index>(rows.size()) * H, static_cast<Eigen::Index>(cols.size()) * H);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      g.block(static_cast<Eigen::Index>(i) * H, static_cast<Eigen::Index>(j) * H, H, H) =
          m.gains.block(rows[i] * H, cols[j] * H, H, H);
    }
  }
  return g;
}

}  // namespace detail

/// Splits the centralised model into one AgentModel per zone by copying
/// row and column blocks.
inline std::vector<AgentModel> decompose(const LtvResponseModel& m, const Network& net, const ZonePartition& p) {
  const auto idx = p.indices(net);
  if (m.n_in != static_cast<int>(net.boosters.size()) || m.n_out != static_cast<int>(net.monitored.size())) {
    throw Error(ErrorCode::dimension_mismatch, "decompose: model does not match the network");
  }
  std::vector<AgentModel> out;
  for (std::size_t z = 0; z < idx.size(); ++z) {
    AgentModel a;
    a.agent = static_cast<int>(z);
    a.inputs = idx[z].first;
    a.outputs = idx[z].second;
    for (int j = 0; j < m.n_in; ++j) {
      if (std::find(a.inputs.begin(), a.inputs.end(), j) == a.inputs.end()) a.others.push_back(j);
    }
    a.own.first_step = m.first_step;
    a.own.horizon = m.horizon;
    a.own.n_in = static_cast<int>(a.inputs.size());
    a.own.n_out = static_cast<int>(a.outputs.size());
    a.own.gains = detail::gain_blocks(m, a.outputs, a.inputs);
    a.own.y_free.resize(m.horizon, a.own.n_out);
    for (std::size_t i = 0; i < a.outputs.size(); ++i) a.own.y_free.col(static_cast<Eigen::Index>(i)) = m.y_free.col(a.outputs[i]);
    a.cross = detail::gain_blocks(m, a.outputs, a.others);
    out.push_back(std::move(a));
  }
  return out;
}

/// Puts the agents' blocks back together into a centralised model.
inline LtvResponseModel reassemble(const std::vector<AgentModel>& agents, int n_in, int n_out) {
  if (agents.empty()) throw Error(ErrorCode::invalid_argument, "reassemble: no agents");
  const int H = agents.front().own.horizon;
  LtvResponseModel m;
  m.first_step = agents.front().own.first_step;
  m.horizon = H;
  m.n_in = n_in;
  m.n_out = n_out;
  m.gains = Mat::Zero(static_cast<Eigen::Index>(n_out) * H, static_cast<Eigen::Index>(n_in) * H);
  m.y_free = Mat::Zero(H, n_out);
  for (const auto& a : agents) {
    for (std::size_t i = 0; i < a.outputs.size(); ++i) {
      const int o = a.outputs[i];
      m.y_free.col(o) = a.own.y_free.col(static_cast<Eigen::Index>(i));
      for (std::size_t j = 0; j < a.inputs.size(); ++j) {
        m.gains.block(o * H, a.inputs[j] * H, H, H) =
            a.own.gains.block(static_cast<Eigen::Index>(i) * H, static_cast<Eigen::Index>(j) * H, H, H);
      }
      for (std::size_t j = 0; j < a.others.size(); ++j) {
        m.gains.block(o * H, a.others[j] * H, H, H) =
            a.cross.block(static_cast<Eigen::Index>(i) * H, static_cast<Eigen::Index>(j) * H, H, H);
      }
    }
  }
  return m;
}

/// The zone's share of a task: output fields of its outputs, input fields of
/// its boosters.
inline MpcTask sub_task(const MpcTask& t, const std::vector<int>& inputs, const std::vector<int>& outputs) {
  MpcTask s = t;
  auto pick = [](const std::vector<double>& v, const std::vector<int>& idx) {
    std::vector<double> out;
    for (int i : idx) out.push_back(v.at(static_cast<std::size_t>(i)));
    return out;
  };
  s.y_ref = pick(t.y_ref, outputs);
  s.y_min = pick(t.y_min, outputs);
  s.y_max = pick(t.y_max, outputs);
  s.y_terminal = pick(t.y_terminal, outputs);
  s.terminal_tol = pick(t.terminal_tol, outputs);
  s.u_min = pick(t.u_min, inputs);
  s.u_max = pick(t.u_max, inputs);
  s.rate_max = pick(t.rate_max, inputs);
  return s;
}

inline TaskProfile sub_profile(const TaskProfile& p, const std::vector<int>& inputs, const std::vector<int>& outputs) {
  TaskProfile s;
  s.steps.reserve(p.steps.size());
  for (const auto& t : p.steps) s.steps.push_back(sub_task(t, inputs, outputs));
  return s;
}

/// One agent's most recent plan for its own boosters: rows are quality steps
/// from `issue_step`, columns the agent's boosters.
struct AgentPlan {
  int agent = 0;
  int issue_step = 0;
  Mat u;
};

/// Latest plan of every agent; publishing overwrites the agent's slot.
class Mailbox {
 public:
  explicit Mailbox(int n_agents = 0) : slots_(static_cast<std::size_t>(n_agents)) {}

  int size() const { return static_cast<int>(slots_.size()); }
  void publish(AgentPlan p) {
    if (p.agent < 0 || p.agent >= size()) throw Error(ErrorCode::invalid_argument, "mailbox: unknown agent " + std::to_string(p.agent));
    slots_[static_cast<std::size_t>(p.agent)] = std::move(p);
  }
  const AgentPlan* latest(int agent) const {
    if (agent < 0 || agent >= size()) return nullptr;
    const auto& s = slots_[static_cast<std::size_t>(agent)];
    return s ? &*s : nullptr;
  }

 private:
  std::vector<std::optional<AgentPlan>> slots_;
};

/// The other zones' plans as seen at `step`: each plan is shifted by the
/// steps elapsed since it was issued and padded by holding its last row.
/// Columns of the agent's own boosters are left at zero. H x n_in.
inline Mat received_inputs(const Mailbox& box, const std::vector<AgentModel>& agents, int self, int step, int horizon,
                           int n_in) {
  Mat u = Mat::Zero(horizon, n_in);
  for (const auto& a : agents) {
    if (a.agent == self) continue;
    const AgentPlan* p = box.latest(a.agent);
    if (!p || p->u.rows() == 0) continue;
    const Mat tail = ControllerMemory::tail(p->u, step - p->issue_step, horizon);
    for (std::size_t j = 0; j < a.inputs.size(); ++j) u.col(a.inputs[j]) = tail.col(static_cast<Eigen::Index>(j));
  }
  return u;
}

struct AgentStepResult {
  PlanOutcome plan;  // in the agent's own input and output order
  AgentPlan message;
  Mat y_free;        // own free response with the predicted interaction folded in
};

/// One agent's cycle: predict the interaction from the others' latest plans,
/// fold it into the free response, run the zone's RFMPC and return the plan
/// to publish. Reads only the mailbox and the shared cycle data.
inline AgentStepResult agent_step(const AgentModel& agent, const std::vector<AgentModel>& agents, const Mailbox& box,
                                  const CycleInput& in, ControllerMemory& mem, const ClosedLoopOptions& opt) {
  const int H = in.horizon;
  const int n_in = in.model->n_in;
  const Mat received = received_inputs(box, agents, agent.agent, in.step, H, n_in);
  LtvResponseModel local = agent.own;
  local.y_free += agent.interaction(received);
  const TaskProfile prof = sub_profile(*in.profile, agent.inputs, agent.outputs);
  Vec u_prev(static_cast<Eigen::Index>(agent.inputs.size()));
  for (std::size_t j = 0; j < agent.inputs.size(); ++j) u_prev[static_cast<Eigen::Index>(j)] = in.u_prev[agent.inputs[j]];

  // The robust envelope runs the full network with the received plans in
  // the other zones' columns and reads back this zone's outputs.
  const auto* pred = in.predictor;
  const auto* measured = in.measured;
  EnvelopeFn env = [&agent, pred, measured, received](const Mat& u_own) {
    Mat u = received;
    for (std::size_t j = 0; j < agent.inputs.size(); ++j) u.col(agent.inputs[j]) = u_own.col(static_cast<Eigen::Index>(j));
    const Envelope full = (*pred)(*measured, u);
    Envelope e;
    e.y_lo.resize(full.y_lo.rows(), static_cast<Eigen::Index>(agent.outputs.size()));
    e.y_hi.resize(e.y_lo.rows(), e.y_lo.cols());
    for (std::size_t i = 0; i < agent.outputs.size(); ++i) {
      e.y_lo.col(static_cast<Eigen::Index>(i)) = full.y_lo.col(agent.outputs[i]);
      e.y_hi.col(static_cast<Eigen::Index>(i)) = full.y_hi.col(agent.outputs[i]);
    }
    return e;
  };
  AgentStepResult r;
  r.plan = rfmpc_plan(local, prof, env, u_prev, mem, opt);
  r.message.agent = agent.agent;
  r.message.issue_step = in.step;
  r.message.u = r.plan.u;
  r.y_free = local.y_free;
  return r;
}

/// FNV-1a over the bytes of the plan's doubles (column-major).
inline std::uint64_t plan_hash(const Mat& u) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(u.data());
  const std::size_t n = static_cast<std::size_t>(u.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// One published plan, as recorded in the message trace.
struct PlanMessage {
  int step = 0;
  int from = 0;
  std::uint64_t hash = 0;
};

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// JSON lines: {"step":..,"from":..,"plan_hash":"<16 hex digits>"}.
inline void write_trace(std::ostream& os, const std::vector<PlanMessage>& trace) {
  for (const auto& m : trace) {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["from"] = m.from;
    j["plan_hash"] = hex(m.hash);
    os << j.dump() << '\n';
  }
}

struct DistributedOptions {
  ClosedLoopOptions loop;
  bool concurrent = true;  // one thread per agent within a round
};

/// Shared state of a distributed controller across cycles.
struct DistributedState {
  ZonePartition partition;
  Mailbox box;
  std::vector<ControllerMemory> memory;
  std::vector<PlanMessage> trace;
  bool started = false;
};

/// Jacobi rounds: at every cycle all agents read the previous round's
/// plans, plan concurrently and, after all have finished, publish together.
/// The merged outcome uses the network's booster and output order.
inline Planner distributed_planner(std::shared_ptr<DistributedState> st, const DistributedOptions& opt) {
  return [st, opt](const CycleInput& in) {
    const auto agents = decompose(*in.model, *in.net, st->partition);
    const int na = static_cast<int>(agents.size());
    if (!st->started) {
      // Before any exchange every agent assumes the others inject nothing.
      st->box = Mailbox(na);
      for (const auto& a : agents) {
        st->box.publish({a.agent, in.step, Mat::Zero(in.horizon, static_cast<Eigen::Index>(a.inputs.size()))});
      }
      st->memory.assign(static_cast<std::size_t>(na), ControllerMemory{});
      st->started = true;
    }
    std::vector<AgentStepResult> res(static_cast<std::size_t>(na));
    std::vector<std::exception_ptr> err(static_cast<std::size_t>(na));
    auto work = [&](int a) {
      try {
        res[static_cast<std::size_t>(a)] =
            agent_step(agents[static_cast<std::size_t>(a)], agents, st->box, in, st->memory[static_cast<std::size_t>(a)], opt.loop);
      } catch (...) {
        err[static_cast<std::size_t>(a)] = std::current_exception();
      }
    };
    if (opt.concurrent && na > 1) {
      std::vector<std::thread> pool;
      for (int a = 0; a < na; ++a) pool.emplace_back(work, a);
      for (auto& t : pool) t.join();
    } else {
      for (int a = 0; a < na; ++a) work(a);
    }
    for (const auto& e : err) {
      if (e) std::rethrow_exception(e);
    }
    // Barrier passed: publish every plan.
    for (auto& r : res) {
      st->trace.push_back({in.step, r.message.agent, plan_hash(r.message.u)});
      st->box.publish(r.message);
    }

    const int H = in.horizon;
    PlanOutcome out;
    out.u = Mat::Zero(H, in.model->n_in);
    out.zones = SafetyZones::zero(H, in.model->n_out);
    out.envelope.y_lo = Mat::Zero(H, in.model->n_out);
    out.envelope.y_hi = Mat::Zero(H, in.model->n_out);
    for (int a = 0; a < na; ++a) {
      const auto& ag = agents[static_cast<std::size_t>(a)];
      const auto& p = res[static_cast<std::size_t>(a)].plan;
      for (std::size_t j = 0; j < ag.inputs.size(); ++j) out.u.col(ag.inputs[j]) = p.u.col(static_cast<Eigen::Index>(j));
      for (std::size_t i = 0; i < ag.outputs.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        out.zones.upper.col(ag.outputs[i]) = p.zones.upper.col(c);
        out.zones.lower.col(ag.outputs[i]) = p.zones.lower.col(c);
        out.envelope.y_lo.col(ag.outputs[i]) = p.envelope.y_lo.col(c);
        out.envelope.y_hi.col(ag.outputs[i]) = p.envelope.y_hi.col(c);
      }
      // Worst status wins: exhausted over iteration limit over feasible.
      auto rank = [](ZoneStatus s) { return s == ZoneStatus::zones_exhausted ? 2 : s == ZoneStatus::max_iterations ? 1 : 0; };
      if (rank(p.status) > rank(out.status)) out.status = p.status;
      if (out.qp_status == qp::QpStatus::optimal) out.qp_status = p.qp_status;
      out.zone_iters = std::max(out.zone_iters, p.zone_iters);
      out.degraded = out.degraded || p.degraded;
      if (!p.message.empty()) {
        if (!out.message.empty()) out.message += "; ";
        out.message += "agent " + std::to_string(a) + ": " + p.message;
      }
      out.agents.push_back({a, p.status, p.qp_status, p.zone_iters, p.degraded});
    }
    return out;
  };
}

struct DistributedResult {
  ControllerLog log;
  std::vector<PlanMessage> trace;
};

/// Distributed RFMPC over one day; the log has the centralised layout plus
/// the per-agent columns.
inline DistributedResult run_drfmpc(const Network& net, const HydraulicSchedule& planned, const MpcTask& task,
                                    const ZonePartition& partition, const UncertaintySet& set, const Realization& truth,
                                    const QualityState& init, const Tariff& tariff = Tariff::two_level(),
                                    const DistributedOptions& opt = {}) {
  partition.check(net);
  auto st = std::make_shared<DistributedState>();
  st->partition = partition;
  DistributedResult r;
  r.log = run_closed_loop(net, planned, task, set, truth, init, tariff, opt.loop, distributed_planner(st, opt));
  for (const auto& z : partition.indices(net)) {
    std::vector<int> ids;
    for (int b : z.first) ids.push_back(net.boosters[static_cast<std::size_t>(b)].node_id);
    r.log.agent_boosters.push_back(std::move(ids));
  }
  r.trace = std::move(st->trace);
  return r;
}

}  // namespace wdn

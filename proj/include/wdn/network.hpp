#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "wdn/error.hpp"

namespace wdn {

using Seconds = std::chrono::seconds;

/// Two-rate time discretisation: slow hydraulic steps, each split into an
/// integer number of fast quality steps.
struct TimeGrid {
  Seconds horizon{24 * 3600};
  Seconds dt_hydraulic{3600};
  Seconds dt_quality{300};

  int steps_quality() const {
    return static_cast<int>(horizon.count() / dt_quality.count());
  }
  int steps_per_hydraulic() const {
    return static_cast<int>(dt_hydraulic.count() / dt_quality.count());
  }
  int steps_hydraulic() const {
    return static_cast<int>(horizon.count() / dt_hydraulic.count());
  }
  double dt_quality_hours() const { return dt_quality.count() / 3600.0; }
  double dt_hydraulic_hours() const { return dt_hydraulic.count() / 3600.0; }
  int hydraulic_step(int quality_step) const {
    return quality_step / steps_per_hydraulic();
  }
  // Hour of day for tariff lookup; the grid starts at midnight.
  int hour_of_day(int quality_step) const {
    const auto t = static_cast<std::int64_t>(quality_step) * dt_quality.count();
    return static_cast<int>((t / 3600) % 24);
  }
  bool operator==(const TimeGrid&) const = default;
};

enum class NodeKind { junction, source, tank };

struct Node {
  int id = 0;
  NodeKind kind = NodeKind::junction;
  // Chlorine concentration delivered by a source (treatment plant output).
  double source_conc = 0.0;
  bool operator==(const Node&) const = default;
};

struct Pipe {
  int id = 0;
  int from = 0;
  int to = 0;
  double volume = 0.0;      // m3
  double resistance = 0.0;  // flow-allocation weight
  double decay_rate = 0.0;  // bulk chlorine decay, 1/h
  bool operator==(const Pipe&) const = default;
};

struct Tank {
  int node_id = 0;
  double area = 0.0;  // m2
  double level_min = 0.0;
  double level_max = 0.0;
  double level_init = 0.0;
  double flow_max = 0.0;    // m3/h, bound on |fill/drain|
  double decay_rate = 0.0;  // 1/h, complete-mix bulk decay
  bool operator==(const Tank&) const = default;
};

struct Pump {
  int id = 0;
  int source_node = 0;
  int discharge_node = 0;
  double flow_max = 0.0;     // m3/h
  double power_coeff = 0.0;  // kWh per m3
  bool operator==(const Pump&) const = default;
};

struct Booster {
  int node_id = 0;
  double u_min = 0.0;     // mg/L
  double u_max = 0.0;     // mg/L
  double rate_max = 0.0;  // mg/L per quality step
  bool operator==(const Booster&) const = default;
};

struct MonitoredOutput {
  int node_id = 0;
  double y_min = 0.0;
  double y_max = 0.0;
  double y_terminal = 0.0;
  double terminal_tol = 0.0;
  bool operator==(const MonitoredOutput&) const = default;
};

struct DemandProfile {
  int node_id = 0;
  std::vector<double> values;  // m3/h per quality step
  bool operator==(const DemandProfile&) const = default;
};

enum class EventKind { pipe_burst, demand_surge, pressure_anomaly };

struct ScenarioEvent {
  EventKind kind = EventKind::pipe_burst;
  int at_step = 0;
  int pipe_id = 0;          // pipe_burst
  int node_id = 0;          // demand_surge
  double multiplier = 1.0;  // demand_surge
  bool flag = true;         // pressure_anomaly
  bool operator==(const ScenarioEvent&) const = default;
};

struct Network {
  TimeGrid time_grid;
  std::vector<Node> nodes;
  std::vector<Pipe> pipes;
  std::vector<Tank> tanks;
  std::vector<Pump> pumps;
  std::vector<Booster> boosters;
  std::vector<MonitoredOutput> monitored;
  std::vector<DemandProfile> demand_profiles;
  std::vector<ScenarioEvent> events;
  bool operator==(const Network&) const = default;
};

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::junction: return "junction";
    case NodeKind::source: return "source";
    case NodeKind::tank: return "tank";
  }
  return "?";
}

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::pipe_burst: return "pipe_burst";
    case EventKind::demand_surge: return "demand_surge";
    case EventKind::pressure_anomaly: return "pressure_anomaly";
  }
  return "?";
}

/// Dense index view of a Network. Node indices follow the order of
/// Network::nodes; pipes, tanks, pumps, boosters and monitored outputs keep
/// their vector order.
class NetworkView {
 public:
  explicit NetworkView(const Network& net) : net_(&net) {
    for (std::size_t i = 0; i < net.nodes.size(); ++i) node_index_[net.nodes[i].id] = static_cast<int>(i);
    for (std::size_t i = 0; i < net.pipes.size(); ++i) pipe_index_[net.pipes[i].id] = static_cast<int>(i);
    tank_of_node_.assign(net.nodes.size(), -1);
    for (std::size_t t = 0; t < net.tanks.size(); ++t) {
      if (auto n = find_node(net.tanks[t].node_id)) tank_of_node_[*n] = static_cast<int>(t);
    }
    booster_of_node_.assign(net.nodes.size(), -1);
    for (std::size_t b = 0; b < net.boosters.size(); ++b) {
      if (auto n = find_node(net.boosters[b].node_id)) booster_of_node_[*n] = static_cast<int>(b);
    }
    pipe_from_.resize(net.pipes.size());
    pipe_to_.resize(net.pipes.size());
    for (std::size_t p = 0; p < net.pipes.size(); ++p) {
      pipe_from_[p] = find_node(net.pipes[p].from).value_or(-1);
      pipe_to_[p] = find_node(net.pipes[p].to).value_or(-1);
    }
    demand_of_node_.assign(net.nodes.size(), -1);
    for (std::size_t d = 0; d < net.demand_profiles.size(); ++d) {
      if (auto n = find_node(net.demand_profiles[d].node_id)) demand_of_node_[*n] = static_cast<int>(d);
    }
  }

  const Network& net() const { return *net_; }
  int n_nodes() const { return static_cast<int>(net_->nodes.size()); }
  int n_pipes() const { return static_cast<int>(net_->pipes.size()); }

  std::optional<int> find_node(int id) const {
    auto it = node_index_.find(id);
    if (it == node_index_.end()) return std::nullopt;
    return it->second;
  }
  int node(int id) const {
    auto n = find_node(id);
    if (!n) throw Error(ErrorCode::invalid_argument, "unknown node " + std::to_string(id));
    return *n;
  }
  std::optional<int> find_pipe(int id) const {
    auto it = pipe_index_.find(id);
    if (it == pipe_index_.end()) return std::nullopt;
    return it->second;
  }
  int pipe_from(int p) const { return pipe_from_[p]; }
  int pipe_to(int p) const { return pipe_to_[p]; }
  int tank_of_node(int n) const { return tank_of_node_[n]; }
  int booster_of_node(int n) const { return booster_of_node_[n]; }
  int demand_of_node(int n) const { return demand_of_node_[n]; }

 private:
  const Network* net_;
  std::unordered_map<int, int> node_index_;
  std::unordered_map<int, int> pipe_index_;
  std::vector<int> tank_of_node_;
  std::vector<int> booster_of_node_;
  std::vector<int> pipe_from_;
  std::vector<int> pipe_to_;
  std::vector<int> demand_of_node_;
};

namespace detail {

// Undirected adjacency over pipes and pumps, by node index.
inline std::vector<std::vector<int>> adjacency(const Network& net, const NetworkView& view) {
  std::vector<std::vector<int>> adj(net.nodes.size());
  auto link = [&](int a, int b) {
    if (a < 0 || b < 0) return;
    adj[a].push_back(b);
    adj[b].push_back(a);
  };
  for (int p = 0; p < view.n_pipes(); ++p) link(view.pipe_from(p), view.pipe_to(p));
  for (const auto& pump : net.pumps) {
    link(view.find_node(pump.source_node).value_or(-1), view.find_node(pump.discharge_node).value_or(-1));
  }
  return adj;
}

inline std::vector<int> bfs_hops(const std::vector<std::vector<int>>& adj, const std::vector<int>& starts,
                                 int blocked = -1) {
  std::vector<int> dist(adj.size(), -1);
  std::queue<int> q;
  for (int s : starts) {
    if (s < 0 || s == blocked || dist[s] == 0) continue;
    dist[s] = 0;
    q.push(s);
  }
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int w : adj[v]) {
      if (w == blocked || dist[w] >= 0) continue;
      dist[w] = dist[v] + 1;
      q.push(w);
    }
  }
  return dist;
}

inline std::vector<int> source_indices(const Network& net) {
  std::vector<int> out;
  for (std::size_t i = 0; i < net.nodes.size(); ++i) {
    if (net.nodes[i].kind == NodeKind::source) out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace detail

/// Hop distance from the nearest source for every node (-1 if unreachable).
inline std::vector<int> hops_from_sources(const Network& net) {
  NetworkView view(net);
  return detail::bfs_hops(detail::adjacency(net, view), detail::source_indices(net));
}

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  bool contains(const std::string& needle) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const std::string& v) { return v.find(needle) != std::string::npos; });
  }
};

/// Lists every invariant violation of `net`. Never throws.
inline ValidationReport validate(const Network& net) {
  ValidationReport report;
  auto fail = [&](std::string msg) { report.violations.push_back(std::move(msg)); };
  auto tag = [](const char* what, int id) { return std::string(what) + " " + std::to_string(id) + ": "; };

  const auto& tg = net.time_grid;
  if (tg.dt_quality.count() <= 0 || tg.dt_hydraulic.count() <= 0 || tg.horizon.count() <= 0) {
    fail("time grid durations must be > 0");
    return report;
  }
  if (tg.dt_hydraulic.count() % tg.dt_quality.count() != 0) {
    fail("dt_hydraulic must be an integer multiple of dt_quality");
  }
  if (tg.horizon.count() % tg.dt_hydraulic.count() != 0) {
    fail("horizon must be an integer multiple of dt_hydraulic");
  }
  const int steps = tg.steps_quality();

  std::set<int> node_ids;
  for (const auto& n : net.nodes) {
    if (!node_ids.insert(n.id).second) fail(tag("node", n.id) + "duplicate node id");
    if (n.source_conc < 0.0) fail(tag("node", n.id) + "source concentration must be >= 0");
  }
  NetworkView view(net);
  auto node_kind = [&](int id) -> std::optional<NodeKind> {
    auto i = view.find_node(id);
    if (!i) return std::nullopt;
    return net.nodes[*i].kind;
  };

  std::set<int> pipe_ids;
  for (const auto& p : net.pipes) {
    if (!pipe_ids.insert(p.id).second) fail(tag("pipe", p.id) + "duplicate pipe id");
    if (!node_kind(p.from) || !node_kind(p.to)) fail(tag("pipe", p.id) + "unknown end node");
    if (p.from == p.to) fail(tag("pipe", p.id) + "self loop");
    if (node_kind(p.from) == NodeKind::source || node_kind(p.to) == NodeKind::source) {
      fail(tag("pipe", p.id) + "sources connect through pumps only");
    }
    if (!(p.volume > 0.0)) fail(tag("pipe", p.id) + "pipe volume must be > 0");
    if (!(p.resistance > 0.0)) fail(tag("pipe", p.id) + "pipe resistance must be > 0");
    if (!(p.decay_rate >= 0.0)) fail(tag("pipe", p.id) + "pipe decay rate must be >= 0");
  }

  std::set<int> tank_nodes;
  for (const auto& t : net.tanks) {
    if (!tank_nodes.insert(t.node_id).second) fail(tag("tank", t.node_id) + "duplicate tank");
    if (node_kind(t.node_id) != NodeKind::tank) fail(tag("tank", t.node_id) + "tank record on a non-tank node");
    if (!(t.area > 0.0)) fail(tag("tank", t.node_id) + "tank area must be > 0");
    if (!(t.level_min <= t.level_init && t.level_init <= t.level_max)) {
      fail(tag("tank", t.node_id) + "tank levels must satisfy level_min <= level_init <= level_max");
    }
    if (!(t.flow_max >= 0.0)) fail(tag("tank", t.node_id) + "tank flow_max must be >= 0");
    if (!(t.decay_rate >= 0.0)) fail(tag("tank", t.node_id) + "tank decay rate must be >= 0");
  }
  for (const auto& n : net.nodes) {
    if (n.kind == NodeKind::tank && !tank_nodes.count(n.id)) fail(tag("node", n.id) + "tank node without tank record");
  }

  std::set<int> pump_ids;
  for (const auto& p : net.pumps) {
    if (!pump_ids.insert(p.id).second) fail(tag("pump", p.id) + "duplicate pump id");
    if (node_kind(p.source_node) != NodeKind::source) fail(tag("pump", p.id) + "pump must draw from a source node");
    auto dk = node_kind(p.discharge_node);
    if (!dk || *dk == NodeKind::source) fail(tag("pump", p.id) + "pump must discharge into a junction or tank");
    if (!(p.flow_max >= 0.0)) fail(tag("pump", p.id) + "pump flow_max must be >= 0");
    if (!(p.power_coeff > 0.0)) fail(tag("pump", p.id) + "pump power_coeff must be > 0");
  }

  std::set<int> booster_nodes;
  for (const auto& b : net.boosters) {
    if (!booster_nodes.insert(b.node_id).second) fail(tag("booster", b.node_id) + "duplicate booster");
    if (node_kind(b.node_id) != NodeKind::junction) fail(tag("booster", b.node_id) + "booster must sit on a junction");
    if (!(0.0 <= b.u_min && b.u_min <= b.u_max)) fail(tag("booster", b.node_id) + "booster bounds must satisfy 0 <= u_min <= u_max");
    if (!(b.rate_max > 0.0)) fail(tag("booster", b.node_id) + "booster rate_max must be > 0");
  }

  std::set<int> monitored_nodes;
  for (const auto& m : net.monitored) {
    if (!monitored_nodes.insert(m.node_id).second) fail(tag("monitored", m.node_id) + "duplicate monitored output");
    if (!node_kind(m.node_id)) fail(tag("monitored", m.node_id) + "unknown monitored node");
    if (!(m.y_min < m.y_max)) fail(tag("monitored", m.node_id) + "output bounds must satisfy y_min < y_max");
    if (!(m.y_min <= m.y_terminal && m.y_terminal <= m.y_max)) {
      fail(tag("monitored", m.node_id) + "terminal target must lie within the output bounds");
    }
    if (!(m.terminal_tol >= 0.0)) fail(tag("monitored", m.node_id) + "terminal tolerance must be >= 0");
  }

  std::set<int> demand_nodes;
  for (const auto& d : net.demand_profiles) {
    if (!demand_nodes.insert(d.node_id).second) fail(tag("demand", d.node_id) + "duplicate demand profile");
    auto k = node_kind(d.node_id);
    if (!k) fail(tag("demand", d.node_id) + "unknown demand node");
    if (k == NodeKind::source) fail(tag("demand", d.node_id) + "sources carry no demand");
    if (static_cast<int>(d.values.size()) != steps) {
      fail(tag("demand", d.node_id) + "demand profile length must equal steps_quality");
    }
    if (std::any_of(d.values.begin(), d.values.end(), [](double v) { return !(v >= 0.0); })) {
      fail(tag("demand", d.node_id) + "demand values must be >= 0");
    }
  }

  for (const auto& e : net.events) {
    if (e.at_step < 0 || e.at_step >= steps) fail(std::string("event ") + to_string(e.kind) + ": at_step out of range");
    if (e.kind == EventKind::pipe_burst && !pipe_ids.count(e.pipe_id)) fail("event pipe_burst: unknown pipe " + std::to_string(e.pipe_id));
    if (e.kind == EventKind::demand_surge) {
      if (!node_kind(e.node_id)) fail("event demand_surge: unknown node " + std::to_string(e.node_id));
      if (!(e.multiplier > 0.0)) fail("event demand_surge: multiplier must be > 0");
    }
  }

  if (!report.ok()) return report;

  // Structural checks need a well-formed element set.
  const auto adj = detail::adjacency(net, view);
  const auto sources = detail::source_indices(net);
  if (!net.nodes.empty()) {
    const auto all = detail::bfs_hops(adj, {0});
    if (std::any_of(all.begin(), all.end(), [](int d) { return d < 0; })) fail("graph is not connected");
  }
  const auto from_src = detail::bfs_hops(adj, sources);
  for (const auto& m : net.monitored) {
    if (from_src[view.node(m.node_id)] < 0) fail(tag("monitored", m.node_id) + "unreachable monitored node");
  }
  // A booster lies on a source->monitored path when it is reachable from a
  // source without crossing that monitored node, and the monitored node is
  // reachable from the booster without crossing a source.
  for (const auto& b : net.boosters) {
    const int bi = view.node(b.node_id);
    bool on_path = false;
    for (const auto& m : net.monitored) {
      const int mi = view.node(m.node_id);
      if (mi == bi) {
        on_path = from_src[bi] >= 0;
      } else {
        const auto src_side = detail::bfs_hops(adj, sources, mi);
        if (src_side[bi] < 0) continue;
        auto blocked_adj = adj;
        for (int s : sources) blocked_adj[s].clear();
        for (auto& row : blocked_adj) {
          row.erase(std::remove_if(row.begin(), row.end(),
                                   [&](int w) { return std::find(sources.begin(), sources.end(), w) != sources.end(); }),
                    row.end());
        }
        on_path = detail::bfs_hops(blocked_adj, {bi})[mi] >= 0;
      }
      if (on_path) break;
    }
    if (!on_path) fail(tag("booster", b.node_id) + "booster is not on any source-to-monitored path");
  }
  return report;
}

/// Applies one event and returns the modified network. A burst that leaves
/// a monitored node without a supply path raises ErrorCode::network_split.
/// The applied event is removed from the returned network's event list.
inline Network apply_event(const Network& net, const ScenarioEvent& e) {
  Network out = net;
  std::erase_if(out.events, [&](const ScenarioEvent& x) {
    return x.kind == e.kind && x.at_step == e.at_step && x.pipe_id == e.pipe_id && x.node_id == e.node_id;
  });
  switch (e.kind) {
    case EventKind::pipe_burst: {
      auto it = std::find_if(out.pipes.begin(), out.pipes.end(), [&](const Pipe& p) { return p.id == e.pipe_id; });
      if (it == out.pipes.end()) {
        throw Error(ErrorCode::invalid_argument, "pipe_burst references unknown pipe " + std::to_string(e.pipe_id));
      }
      out.pipes.erase(it);
      NetworkView view(out);
      const auto from_src = detail::bfs_hops(detail::adjacency(out, view), detail::source_indices(out));
      for (const auto& m : out.monitored) {
        if (from_src[view.node(m.node_id)] < 0) {
          throw Error(ErrorCode::network_split, "network split: burst of pipe " + std::to_string(e.pipe_id) +
                                                    " isolates monitored node " + std::to_string(m.node_id));
        }
      }
      break;
    }
    case EventKind::demand_surge: {
      auto it = std::find_if(out.demand_profiles.begin(), out.demand_profiles.end(),
                             [&](const DemandProfile& d) { return d.node_id == e.node_id; });
      if (it == out.demand_profiles.end()) {
        throw Error(ErrorCode::invalid_argument, "demand_surge references node without demand " + std::to_string(e.node_id));
      }
      if (!(e.multiplier > 0.0)) throw Error(ErrorCode::invalid_argument, "demand_surge multiplier must be > 0");
      for (std::size_t k = static_cast<std::size_t>(std::max(0, e.at_step)); k < it->values.size(); ++k) {
        it->values[k] *= e.multiplier;
      }
      break;
    }
    case EventKind::pressure_anomaly:
      break;
  }
  const auto report = validate(out);
  if (!report.ok()) {
    const bool split = report.contains("not connected") || report.contains("unreachable");
    throw Error(split ? ErrorCode::network_split : ErrorCode::invalid_argument,
                std::string(split ? "network split: " : "invalid network after event: ") + report.violations.front());
  }
  return out;
}

}  // namespace wdn

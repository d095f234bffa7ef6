#pragma once

// Scenario files: a versioned JSON document holding the network, the
// uncertainty description, the tariff and every controller setting a run
// needs. Reading rejects unknown keys and reports the location of any
// problem; writing then reading gives back an equal Scenario.

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wdn/benchmark.hpp"
#include "wdn/distributed.hpp"
#include "wdn/hydraulics.hpp"
#include "wdn/network.hpp"
#include "wdn/rfmpc.hpp"
#include "wdn/switching.hpp"
#include "wdn/toys.hpp"
#include "wdn/uncertainty.hpp"

namespace wdn {

inline constexpr int kScenarioSchemaVersion = 1;

/// Parameters of UncertaintySet::standard.
struct UncertaintySpec {
  double demand_early = 0.05;
  double demand_late = 0.10;
  double early_hours = 10.0;
  double decay_rel = 0.2;

  UncertaintySet build(const Network& net) const {
    return UncertaintySet::standard(net, decay_rel, demand_early, demand_late, early_hours);
  }
  bool operator==(const UncertaintySpec&) const = default;
};

enum class ScheduleKind { optimized, demand_tracking };

inline const char* to_string(ScheduleKind k) { return k == ScheduleKind::optimized ? "optimized" : "demand_tracking"; }

struct ControllerSpec {
  std::optional<MpcTask> task;  // empty: derived from the network
  // loop.u_init doubles as the constant setpoints of the warm-up day.
  ClosedLoopOptions loop;
  bool operator==(const ControllerSpec&) const = default;
};

struct Scenario {
  int schema_version = kScenarioSchemaVersion;
  std::string name;
  Network network;
  std::optional<Tariff> tariff;
  UncertaintySpec uncertainty;
  ScheduleKind schedule = ScheduleKind::optimized;
  ControllerSpec controller;
  int ucl_period = 2;   // hierarchy: hydraulic steps between upper-level re-plans
  int ucl_window = 24;  // hierarchy: upper-level window, hydraulic steps
  std::optional<SupervisorConfig> supervisor;
  std::optional<ZonePartition> partition;
  bool operator==(const Scenario&) const = default;

  MpcTask task() const { return controller.task ? *controller.task : MpcTask::from_network(network); }
  /// The scenario's tariff, or the two-level default when it has none.
  Tariff tariff_or_default() const { return tariff ? *tariff : Tariff::two_level(); }
  /// Throws parse_error naming the tariff section when it is absent.
  const Tariff& require_tariff(const std::string& why) const {
    if (!tariff) throw Error(ErrorCode::parse_error, "scenario: " + why + " needs the 'tariff' section");
    return *tariff;
  }
};

// ---------------------------------------------------------------------------
// Writing.

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson task_json(const MpcTask& t) {
  ojson j;
  j["w_u"] = t.w_u;
  j["w_du"] = t.w_du;
  j["w_y"] = t.w_y;
  j["y_ref"] = t.y_ref;
  j["y_min"] = t.y_min;
  j["y_max"] = t.y_max;
  j["y_terminal"] = t.y_terminal;
  j["terminal_tol"] = t.terminal_tol;
  j["u_min"] = t.u_min;
  j["u_max"] = t.u_max;
  j["rate_max"] = t.rate_max;
  j["control_horizon"] = t.control_horizon;
  return j;
}

inline ojson state_json(const OperationalState& s) {
  ojson j;
  j["label"] = to_string(s.label);
  j["cluster"] = s.cluster;
  return j;
}

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::pipe_burst: return "pipe_burst";
    case EventKind::demand_surge: return "demand_surge";
    case EventKind::pressure_anomaly: return "pressure_anomaly";
  }
  return "unknown";
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const Scenario& s) {
  using detail::ojson;
  const Network& n = s.network;
  ojson j;
  j["schema_version"] = s.schema_version;
  j["name"] = s.name;
  j["time_grid"] = {{"horizon_s", n.time_grid.horizon.count()},
                    {"dt_hydraulic_s", n.time_grid.dt_hydraulic.count()},
                    {"dt_quality_s", n.time_grid.dt_quality.count()}};
  j["nodes"] = ojson::array();
  for (const auto& x : n.nodes) {
    ojson o{{"id", x.id}, {"kind", to_string(x.kind)}};
    if (x.kind == NodeKind::source || x.source_conc != 0.0) o["source_conc"] = x.source_conc;
    j["nodes"].push_back(o);
  }
  j["pipes"] = ojson::array();
  for (const auto& x : n.pipes) {
    j["pipes"].push_back({{"id", x.id}, {"from", x.from}, {"to", x.to}, {"volume", x.volume},
                          {"resistance", x.resistance}, {"decay_rate", x.decay_rate}});
  }
  j["tanks"] = ojson::array();
  for (const auto& x : n.tanks) {
    j["tanks"].push_back({{"node", x.node_id}, {"area", x.area}, {"level_min", x.level_min}, {"level_max", x.level_max},
                          {"level_init", x.level_init}, {"flow_max", x.flow_max}, {"decay_rate", x.decay_rate}});
  }
  j["pumps"] = ojson::array();
  for (const auto& x : n.pumps) {
    j["pumps"].push_back({{"id", x.id}, {"from", x.source_node}, {"to", x.discharge_node}, {"flow_max", x.flow_max},
                          {"power_coeff", x.power_coeff}});
  }
  j["boosters"] = ojson::array();
  for (const auto& x : n.boosters) {
    j["boosters"].push_back({{"node", x.node_id}, {"u_min", x.u_min}, {"u_max", x.u_max}, {"rate_max", x.rate_max}});
  }
  j["monitored"] = ojson::array();
  for (const auto& x : n.monitored) {
    j["monitored"].push_back({{"node", x.node_id}, {"y_min", x.y_min}, {"y_max", x.y_max}, {"y_terminal", x.y_terminal},
                              {"terminal_tol", x.terminal_tol}});
  }
  j["demands"] = ojson::array();
  for (const auto& x : n.demand_profiles) j["demands"].push_back({{"node", x.node_id}, {"values", x.values}});
  j["events"] = ojson::array();
  for (const auto& e : n.events) {
    ojson o{{"kind", detail::to_string(e.kind)}, {"at_step", e.at_step}};
    switch (e.kind) {
      case EventKind::pipe_burst: o["pipe"] = e.pipe_id; break;
      case EventKind::demand_surge:
        o["node"] = e.node_id;
        o["multiplier"] = e.multiplier;
        break;
      case EventKind::pressure_anomaly: o["flag"] = e.flag; break;
    }
    j["events"].push_back(o);
  }
  if (s.tariff) j["tariff"] = {{"price", s.tariff->price}};
  j["uncertainty"] = {{"demand_early", s.uncertainty.demand_early},
                      {"demand_late", s.uncertainty.demand_late},
                      {"early_hours", s.uncertainty.early_hours},
                      {"decay_rel", s.uncertainty.decay_rel}};
  j["schedule"] = to_string(s.schedule);

  const auto& c = s.controller;
  ojson cj;
  if (c.task) cj["task"] = detail::task_json(*c.task);
  cj["u_init"] = c.loop.u_init;
  cj["zones"] = c.loop.use_zones;
  cj["warm_start_zones"] = c.loop.warm_start_zones;
  cj["control_horizon"] = c.loop.control_horizon;
  const auto& z = c.loop.zone;
  cj["zone_iteration"] = {{"update", z.update == ZoneUpdate::anticipate ? "anticipate" : "violation"},
                          {"headroom", z.headroom},
                          {"dilation", z.dilation},
                          {"alpha", z.alpha},
                          {"tol", z.tol},
                          {"max_iter", z.max_iter},
                          {"qp_tol", z.qp_tol},
                          {"qp_max_iter", z.qp_max_iter},
                          {"qp_polish", z.qp_polish}};
  cj["envelope"] = {{"n_random", c.loop.envelope.n_random},
                    {"gamma", c.loop.envelope.gamma},
                    {"seed", c.loop.envelope.seed}};
  j["controller"] = cj;
  j["hierarchy"] = {{"ucl_period", s.ucl_period}, {"window", s.ucl_window}};

  if (s.supervisor) {
    const auto& v = *s.supervisor;
    ojson sj;
    sj["strategies"] = ojson::array();
    for (const auto& st : v.strategies) {
      ojson o{{"id", st.id}, {"task", detail::task_json(st.task)}};
      o["states"] = ojson::array();
      for (auto l : st.states) o["states"].push_back(to_string(l));
      sj["strategies"].push_back(o);
    }
    sj["rules"] = ojson::array();
    for (const auto& r : v.rules) {
      sj["rules"].push_back({{"kind", to_string(r.kind)}, {"threshold", r.threshold}, {"state", detail::state_json(r.state)}});
    }
    sj["mapping"] = ojson::array();
    for (const auto& m : v.mapping) {
      sj["mapping"].push_back({{"state", detail::state_json(m.state)}, {"any_cluster", m.any_cluster}, {"strategy", m.strategy}});
    }
    sj["initial_strategy"] = v.initial_strategy;
    sj["mode"] = to_string(v.mode);
    sj["ts"] = v.ts;
    sj["window_steps"] = v.window_steps;
    sj["stall_limit"] = v.stall_limit;
    sj["lambda_tol"] = v.lambda_tol;
    j["supervisor"] = sj;
  }
  if (s.partition) {
    j["partition"] = ojson::array();
    for (const auto& z2 : s.partition->zones) j["partition"].push_back({{"boosters", z2.boosters}, {"outputs", z2.outputs}});
  }
  return j;
}

inline std::string dump_scenario(const Scenario& s) { return to_json(s).dump(2) + "\n"; }

inline void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
  os << dump_scenario(s);
}

// ---------------------------------------------------------------------------
// Reading.

namespace detail {

using json = nlohmann::json;

/// Object reader that remembers which keys were read, so that leftovers can
/// be reported as unknown, and prefixes every error with the value's path.
class JsonReader {
 public:
  JsonReader(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) fail("expected an object");
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return j_->contains(key); }

  template <class T>
  T get(const std::string& key) {
    if (!has(key)) throw Error(ErrorCode::parse_error, where(key) + ": missing required key '" + key + "'");
    return convert<T>(key);
  }
  template <class T>
  T get_or(const std::string& key, T fallback) {
    return has(key) ? convert<T>(key) : fallback;
  }
  JsonReader object(const std::string& key) {
    if (!has(key)) throw Error(ErrorCode::parse_error, where(key) + ": missing required section '" + key + "'");
    used_.insert(key);
    return JsonReader(j_->at(key), where(key));
  }
  std::vector<JsonReader> objects(const std::string& key, bool required = true) {
    std::vector<JsonReader> out;
    if (!has(key)) {
      if (required) throw Error(ErrorCode::parse_error, where(key) + ": missing required section '" + key + "'");
      return out;
    }
    used_.insert(key);
    const json& a = j_->at(key);
    if (!a.is_array()) throw Error(ErrorCode::parse_error, where(key) + ": expected an array");
    for (std::size_t i = 0; i < a.size(); ++i) out.emplace_back(a[i], where(key) + "[" + std::to_string(i) + "]");
    return out;
  }
  /// Throws on the first key that was never read.
  void finish() const {
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!used_.count(it.key())) {
        throw Error(ErrorCode::parse_error, "unknown key '" + it.key() + "' in " + (path_.empty() ? "<root>" : path_));
      }
    }
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::parse_error, (path_.empty() ? "<root>" : path_) + ": " + msg);
  }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  T convert(const std::string& key) {
    used_.insert(key);
    try {
      return j_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::parse_error, where(key) + ": wrong value type (" + std::string(j_->at(key).type_name()) + ")");
    }
  }

  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

inline MpcTask read_task(JsonReader r) {
  MpcTask t;
  t.w_u = r.get<double>("w_u");
  t.w_du = r.get<double>("w_du");
  t.w_y = r.get<double>("w_y");
  t.y_ref = r.get<std::vector<double>>("y_ref");
  t.y_min = r.get<std::vector<double>>("y_min");
  t.y_max = r.get<std::vector<double>>("y_max");
  t.y_terminal = r.get<std::vector<double>>("y_terminal");
  t.terminal_tol = r.get<std::vector<double>>("terminal_tol");
  t.u_min = r.get<std::vector<double>>("u_min");
  t.u_max = r.get<std::vector<double>>("u_max");
  t.rate_max = r.get<std::vector<double>>("rate_max");
  t.control_horizon = r.get<int>("control_horizon");
  r.finish();
  return t;
}

inline OperationalState read_state(JsonReader r) {
  OperationalState s;
  try {
    s.label = os_label_from_string(r.get<std::string>("label"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse_error) throw;
    r.fail(e.what());
  }
  s.cluster = r.get_or<int>("cluster", 0);
  r.finish();
  return s;
}

template <class F>
auto named(JsonReader& r, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse_error) throw;
    r.fail(e.what());
  }
}

}  // namespace detail

/// Parses a scenario document. Errors carry ErrorCode::parse_error and name
/// the offending key path (or line and column for malformed JSON).
inline Scenario parse_scenario_text(const std::string& text) {
  using detail::JsonReader;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse_error, std::string("malformed scenario: ") + e.what());
  }
  JsonReader r(doc, "");
  Scenario s;
  s.schema_version = r.get<int>("schema_version");
  if (s.schema_version != kScenarioSchemaVersion) {
    throw Error(ErrorCode::parse_error, "schema_version " + std::to_string(s.schema_version) + " is not supported (expected " +
                                            std::to_string(kScenarioSchemaVersion) + ")");
  }
  s.name = r.get_or<std::string>("name", "");
  Network& n = s.network;
  {
    auto g = r.object("time_grid");
    n.time_grid.horizon = Seconds(g.get<long long>("horizon_s"));
    n.time_grid.dt_hydraulic = Seconds(g.get<long long>("dt_hydraulic_s"));
    n.time_grid.dt_quality = Seconds(g.get<long long>("dt_quality_s"));
    g.finish();
  }
  for (auto& o : r.objects("nodes")) {
    Node x;
    x.id = o.get<int>("id");
    const auto kind = o.get<std::string>("kind");
    if (kind == "junction") {
      x.kind = NodeKind::junction;
    } else if (kind == "source") {
      x.kind = NodeKind::source;
    } else if (kind == "tank") {
      x.kind = NodeKind::tank;
    } else {
      o.fail("unknown node kind '" + kind + "'");
    }
    x.source_conc = o.get_or<double>("source_conc", 0.0);
    o.finish();
    n.nodes.push_back(x);
  }
  for (auto& o : r.objects("pipes")) {
    Pipe x;
    x.id = o.get<int>("id");
    x.from = o.get<int>("from");
    x.to = o.get<int>("to");
    x.volume = o.get<double>("volume");
    x.resistance = o.get<double>("resistance");
    x.decay_rate = o.get<double>("decay_rate");
    o.finish();
    n.pipes.push_back(x);
  }
  for (auto& o : r.objects("tanks", false)) {
    Tank x;
    x.node_id = o.get<int>("node");
    x.area = o.get<double>("area");
    x.level_min = o.get<double>("level_min");
    x.level_max = o.get<double>("level_max");
    x.level_init = o.get<double>("level_init");
    x.flow_max = o.get<double>("flow_max");
    x.decay_rate = o.get<double>("decay_rate");
    o.finish();
    n.tanks.push_back(x);
  }
  for (auto& o : r.objects("pumps")) {
    Pump x;
    x.id = o.get<int>("id");
    x.source_node = o.get<int>("from");
    x.discharge_node = o.get<int>("to");
    x.flow_max = o.get<double>("flow_max");
    x.power_coeff = o.get<double>("power_coeff");
    o.finish();
    n.pumps.push_back(x);
  }
  for (auto& o : r.objects("boosters")) {
    Booster x;
    x.node_id = o.get<int>("node");
    x.u_min = o.get<double>("u_min");
    x.u_max = o.get<double>("u_max");
    x.rate_max = o.get<double>("rate_max");
    o.finish();
    n.boosters.push_back(x);
  }
  for (auto& o : r.objects("monitored")) {
    MonitoredOutput x;
    x.node_id = o.get<int>("node");
    x.y_min = o.get<double>("y_min");
    x.y_max = o.get<double>("y_max");
    x.y_terminal = o.get<double>("y_terminal");
    x.terminal_tol = o.get<double>("terminal_tol");
    o.finish();
    n.monitored.push_back(x);
  }
  for (auto& o : r.objects("demands")) {
    DemandProfile x;
    x.node_id = o.get<int>("node");
    x.values = o.get<std::vector<double>>("values");
    o.finish();
    n.demand_profiles.push_back(std::move(x));
  }
  for (auto& o : r.objects("events", false)) {
    ScenarioEvent e;
    const auto kind = o.get<std::string>("kind");
    e.at_step = o.get<int>("at_step");
    if (kind == "pipe_burst") {
      e.kind = EventKind::pipe_burst;
      e.pipe_id = o.get<int>("pipe");
    } else if (kind == "demand_surge") {
      e.kind = EventKind::demand_surge;
      e.node_id = o.get<int>("node");
      e.multiplier = o.get<double>("multiplier");
    } else if (kind == "pressure_anomaly") {
      e.kind = EventKind::pressure_anomaly;
      e.flag = o.get_or<bool>("flag", true);
    } else {
      o.fail("unknown event kind '" + kind + "'");
    }
    o.finish();
    n.events.push_back(e);
  }
  if (r.has("tariff")) {
    auto t = r.object("tariff");
    const auto price = t.get<std::vector<double>>("price");
    if (price.size() != 24) t.fail("price needs 24 hourly entries");
    Tariff tf;
    std::copy(price.begin(), price.end(), tf.price.begin());
    t.finish();
    s.tariff = tf;
  }
  if (r.has("uncertainty")) {
    auto u = r.object("uncertainty");
    s.uncertainty.demand_early = u.get_or<double>("demand_early", s.uncertainty.demand_early);
    s.uncertainty.demand_late = u.get_or<double>("demand_late", s.uncertainty.demand_late);
    s.uncertainty.early_hours = u.get_or<double>("early_hours", s.uncertainty.early_hours);
    s.uncertainty.decay_rel = u.get_or<double>("decay_rel", s.uncertainty.decay_rel);
    u.finish();
  }
  {
    const auto kind = r.get_or<std::string>("schedule", "optimized");
    if (kind == "optimized") {
      s.schedule = ScheduleKind::optimized;
    } else if (kind == "demand_tracking") {
      s.schedule = ScheduleKind::demand_tracking;
    } else {
      throw Error(ErrorCode::parse_error, "schedule: expected 'optimized' or 'demand_tracking', got '" + kind + "'");
    }
  }
  if (r.has("controller")) {
    auto c = r.object("controller");
    auto& spec = s.controller;
    if (c.has("task")) spec.task = detail::read_task(c.object("task"));
    spec.loop.u_init = c.get_or<std::vector<double>>("u_init", {});
    spec.loop.use_zones = c.get_or<bool>("zones", true);
    spec.loop.warm_start_zones = c.get_or<bool>("warm_start_zones", true);
    spec.loop.control_horizon = c.get_or<int>("control_horizon", 0);
    if (c.has("zone_iteration")) {
      auto z = c.object("zone_iteration");
      auto& cfg = spec.loop.zone;
      const auto upd = z.get_or<std::string>("update", "anticipate");
      if (upd == "anticipate") {
        cfg.update = ZoneUpdate::anticipate;
      } else if (upd == "violation") {
        cfg.update = ZoneUpdate::violation;
      } else {
        z.fail("update must be 'anticipate' or 'violation'");
      }
      cfg.headroom = z.get_or<double>("headroom", cfg.headroom);
      cfg.dilation = z.get_or<int>("dilation", cfg.dilation);
      cfg.alpha = z.get_or<double>("alpha", cfg.alpha);
      cfg.tol = z.get_or<double>("tol", cfg.tol);
      cfg.max_iter = z.get_or<int>("max_iter", cfg.max_iter);
      cfg.qp_tol = z.get_or<double>("qp_tol", cfg.qp_tol);
      cfg.qp_max_iter = z.get_or<int>("qp_max_iter", cfg.qp_max_iter);
      cfg.qp_polish = z.get_or<bool>("qp_polish", cfg.qp_polish);
      z.finish();
    }
    if (c.has("envelope")) {
      auto e = c.object("envelope");
      auto& cfg = spec.loop.envelope;
      cfg.n_random = e.get_or<int>("n_random", cfg.n_random);
      cfg.gamma = e.get_or<double>("gamma", cfg.gamma);
      cfg.seed = e.get_or<std::uint64_t>("seed", cfg.seed);
      e.finish();
    }
    c.finish();
  }
  if (r.has("hierarchy")) {
    auto h = r.object("hierarchy");
    s.ucl_period = h.get_or<int>("ucl_period", s.ucl_period);
    s.ucl_window = h.get_or<int>("window", s.ucl_window);
    h.finish();
  }
  if (r.has("supervisor")) {
    auto v = r.object("supervisor");
    SupervisorConfig cfg;
    for (auto& o : v.objects("strategies")) {
      Strategy st;
      st.id = o.get<std::string>("id");
      st.task = detail::read_task(o.object("task"));
      for (const auto& l : o.get_or<std::vector<std::string>>("states", {})) {
        st.states.push_back(detail::named(o, [&] { return os_label_from_string(l); }));
      }
      o.finish();
      cfg.strategies.push_back(std::move(st));
    }
    for (auto& o : v.objects("rules", false)) {
      DetectionRule rule;
      const auto kind = o.get<std::string>("kind");
      rule.kind = detail::named(o, [&] { return rule_kind_from_string(kind); });
      rule.threshold = o.get_or<double>("threshold", 0.0);
      rule.state = detail::read_state(o.object("state"));
      o.finish();
      cfg.rules.push_back(rule);
    }
    for (auto& o : v.objects("mapping", false)) {
      OsMapping m;
      m.state = detail::read_state(o.object("state"));
      m.any_cluster = o.get_or<bool>("any_cluster", true);
      m.strategy = o.get<std::string>("strategy");
      o.finish();
      cfg.mapping.push_back(m);
    }
    cfg.initial_strategy = v.get<std::string>("initial_strategy");
    const auto mode = v.get_or<std::string>("mode", "linear");
    cfg.mode = detail::named(v, [&] { return switch_mode_from_string(mode); });
    cfg.ts = v.get_or<int>("ts", cfg.ts);
    cfg.window_steps = v.get_or<int>("window_steps", cfg.window_steps);
    cfg.stall_limit = v.get_or<int>("stall_limit", cfg.stall_limit);
    cfg.lambda_tol = v.get_or<double>("lambda_tol", cfg.lambda_tol);
    v.finish();
    s.supervisor = std::move(cfg);
  }
  if (r.has("partition")) {
    ZonePartition p;
    for (auto& o : r.objects("partition")) {
      ControlZone z;
      z.boosters = o.get<std::vector<int>>("boosters");
      z.outputs = o.get<std::vector<int>>("outputs");
      o.finish();
      p.zones.push_back(std::move(z));
    }
    s.partition = std::move(p);
  }
  r.finish();
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io_error, "cannot open scenario " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_scenario_text(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Shipped scenarios.

/// The 16-node benchmark with the two-level tariff and standard uncertainty.
inline Scenario benchmark16_scenario() {
  Scenario s;
  s.name = "benchmark16";
  s.network = build_benchmark16();
  s.tariff = Tariff::two_level();
  s.controller.loop.u_init = {1.0, 1.0};
  s.partition = ZonePartition::benchmark_default();
  return s;
}

/// Supervisor for the burst toy: Normal runs the network's own task, a
/// pipe burst raises Emergency, whose strategy asks for a higher chlorine
/// band.
inline SupervisorConfig burst_supervisor(const Network& net, SwitchMode mode = SwitchMode::linear, int ts = 24) {
  SupervisorConfig cfg;
  const MpcTask normal = MpcTask::from_network(net);
  MpcTask emergency = normal;
  emergency.y_min = {0.4};
  emergency.y_max = {0.8};
  emergency.y_ref = {0.4};
  emergency.y_terminal = {0.5};
  emergency.terminal_tol = {0.1};
  cfg.strategies = {{"normal", normal, {OsLabel::normal}}, {"emergency", emergency, {OsLabel::emergency}}};
  cfg.rules = {{RuleKind::pipe_burst, 0.0, {OsLabel::emergency, 0}}};
  cfg.mapping = {{{OsLabel::emergency, 0}, true, "emergency"}};
  cfg.initial_strategy = "normal";
  cfg.mode = mode;
  cfg.ts = ts;
  // Remember the burst for the rest of the day so the supervisor does not
  // switch back.
  cfg.window_steps = net.time_grid.steps_quality();
  return cfg;
}

/// The burst toy without uncertainty, supervised.
inline Scenario burst_scenario() {
  Scenario s;
  s.name = "burst_toy";
  s.network = build_burst_toy();
  s.tariff = Tariff::two_level();
  s.uncertainty = {0.0, 0.0, 10.0, 0.0};
  s.schedule = ScheduleKind::demand_tracking;
  s.controller.loop.u_init = {0.35};
  s.supervisor = burst_supervisor(s.network);
  return s;
}

/// Two independent branches, one zone each.
inline Scenario two_path_scenario() {
  Scenario s;
  s.name = "two_path";
  s.network = build_two_path_toy();
  s.tariff = Tariff::two_level();
  s.schedule = ScheduleKind::demand_tracking;
  s.controller.loop.u_init = {0.4, 0.4};
  s.partition = ZonePartition::pairwise(s.network);
  return s;
}

// ---------------------------------------------------------------------------
// Run preparation.

/// Everything a closed-loop run needs, derived from a scenario.
struct PreparedRun {
  Network net;
  Tariff tariff;
  UncertaintySet set;
  HydraulicSchedule planned;
  QualityState init;
  MpcTask task;
  ClosedLoopOptions loop;
};

/// Validates the network, builds the planned schedule and the periodic
/// starting state (one warm-up day at the initial setpoints).
inline PreparedRun prepare(const Scenario& s) {
  const auto report = validate(s.network);
  if (!report.ok()) throw Error(ErrorCode::invalid_argument, "invalid network: " + report.violations.front());
  PreparedRun p;
  p.net = s.network;
  p.tariff = s.tariff_or_default();
  p.set = s.uncertainty.build(p.net);
  p.task = s.task();
  p.task.check(static_cast<int>(p.net.boosters.size()), static_cast<int>(p.net.monitored.size()));
  p.planned = s.schedule == ScheduleKind::optimized ? optimize_pump_schedule(p.net, p.tariff) : demand_tracking_schedule(p.net);
  p.loop = s.controller.loop;
  std::vector<double> u0 = p.loop.u_init;
  if (u0.empty()) u0 = p.task.u_min;
  if (u0.size() != p.net.boosters.size()) {
    throw Error(ErrorCode::dimension_mismatch, "controller.u_init needs one entry per booster");
  }
  p.loop.u_init = u0;
  p.init = warm_state(p.net, realize_hydraulics(p.net, p.planned, {}), u0);
  return p;
}

}  // namespace wdn

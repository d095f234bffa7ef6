#pragma once

// Experiment runners shared by the command line tool and the tests: one
// closed-loop run per seed in any controller mode, Monte Carlo fan-out and
// the metrics documents written next to the trajectories.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "wdn/distributed.hpp"
#include "wdn/quality.hpp"
#include "wdn/rfmpc.hpp"
#include "wdn/scenario.hpp"
#include "wdn/switching.hpp"

namespace wdn {

enum class RunMode { simulate, centralized, distributed, hierarchy };

inline const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::simulate: return "simulate";
    case RunMode::centralized: return "centralized";
    case RunMode::distributed: return "distributed";
    case RunMode::hierarchy: return "hierarchy";
  }
  return "unknown";
}

inline RunMode run_mode_from_string(const std::string& s) {
  for (auto m : {RunMode::simulate, RunMode::centralized, RunMode::distributed, RunMode::hierarchy}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::invalid_argument, "unknown mode '" + s + "'");
}

/// What to run on a prepared scenario.
struct RunRequest {
  RunMode mode = RunMode::centralized;
  std::optional<bool> zones;                // override the scenario's setting
  std::optional<SwitchMode> switching;      // supervised run (needs a supervisor section)
  std::optional<int> ts;                    // override the supervisor's T_s
  bool use_scenario_supervisor = true;      // supervise when the scenario has a supervisor
};

/// Result of one seeded run.
struct RunOutput {
  std::uint64_t seed = 0;
  ControllerLog log;                   // closed-loop modes
  std::optional<PlantTrajectory> open_loop;  // simulate mode
  std::optional<SupervisorLog> supervisor;
  std::vector<PlanMessage> trace;      // distributed mode
  double wall_s = 0.0;
};

/// One run with the true plant drawn from `seed`.
inline RunOutput run_once(const Scenario& sc, const PreparedRun& p, const RunRequest& req, std::uint64_t seed) {
  RunOutput out;
  out.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const Realization truth = sample_realization(p.net, p.set, seed);
  ClosedLoopOptions loop = p.loop;
  if (req.zones) loop.use_zones = *req.zones;
  const bool supervise = req.switching.has_value() || (req.use_scenario_supervisor && sc.supervisor.has_value());
  switch (req.mode) {
    case RunMode::simulate: {
      const auto actual = realize_hydraulics(p.net, p.planned, truth);
      const int n = p.net.time_grid.steps_quality() - p.init.step;
      Mat u(n, static_cast<Eigen::Index>(p.net.boosters.size()));
      for (std::size_t b = 0; b < p.net.boosters.size(); ++b) u.col(static_cast<Eigen::Index>(b)).setConstant(loop.u_init[b]);
      out.open_loop = simulate_realized(p.net, actual, u, truth, p.init, p.tariff);
      break;
    }
    case RunMode::centralized: {
      if (supervise) {
        if (!sc.supervisor) throw Error(ErrorCode::invalid_argument, "switching needs the scenario's 'supervisor' section");
        SupervisorConfig cfg = *sc.supervisor;
        if (req.switching) cfg.mode = *req.switching;
        if (req.ts) cfg.ts = *req.ts;
        auto r = run_supervised(p.net, p.planned, cfg, p.set, truth, p.init, p.tariff, loop);
        out.log = std::move(r.log);
        out.supervisor = std::move(r.supervisor);
      } else {
        out.log = run_closed_loop(p.net, p.planned, p.task, p.set, truth, p.init, p.tariff, loop, centralized_planner(loop));
      }
      break;
    }
    case RunMode::distributed: {
      if (req.switching) throw Error(ErrorCode::invalid_argument, "switching is not available in distributed mode");
      const ZonePartition part = sc.partition ? *sc.partition : ZonePartition::pairwise(p.net);
      DistributedOptions d;
      d.loop = loop;
      auto r = run_drfmpc(p.net, p.planned, p.task, part, p.set, truth, p.init, p.tariff, d);
      out.log = std::move(r.log);
      out.trace = std::move(r.trace);
      break;
    }
    case RunMode::hierarchy: {
      if (req.switching) throw Error(ErrorCode::invalid_argument, "switching is not available in hierarchy mode");
      const Tariff& tariff = sc.require_tariff("hierarchy mode");
      HierarchyOptions h;
      h.ucl_period = sc.ucl_period;
      h.window = sc.ucl_window;
      h.loop = loop;
      // The warm-up state comes from the scenario's planned schedule; the
      // hierarchy re-plans from step 0 on.
      out.log = run_hierarchy(p.net, tariff, p.task, p.set, truth, p.init, h).log;
      break;
    }
  }
  out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Runs every seed, fanning out over `threads` workers (0: hardware
/// concurrency). Results come back in seed order whatever the scheduling.
inline std::vector<RunOutput> run_monte_carlo(const Scenario& sc, const PreparedRun& p, const RunRequest& req,
                                              const std::vector<std::uint64_t>& seeds, unsigned threads = 0) {
  std::vector<RunOutput> out(seeds.size());
  std::vector<std::exception_ptr> err(seeds.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, seeds.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seeds.size();) {
      try {
        out[i] = run_once(sc, p, req, seeds[i]);
      } catch (...) {
        err[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : err) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics documents.

/// Per-run metrics: violations against the original bounds, injected mass
/// per booster (total and per step), energy cost, cycle and zone statistics
/// and, for supervised runs, the switch records. Wall time is left out so
/// the document is reproducible.
inline nlohmann::ordered_json run_metrics_json(const RunOutput& r, const Network& net) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  if (r.open_loop) {
    // Open-loop trajectories carry no bounds; the network's apply.
    const auto& tr = *r.open_loop;
    int count = 0;
    double worst = 0.0;
    for (int k = 0; k < tr.steps(); ++k) {
      for (std::size_t i = 0; i < net.monitored.size(); ++i) {
        const double y = tr.y(k, static_cast<Eigen::Index>(i));
        const double v = std::max({0.0, net.monitored[i].y_min - y, y - net.monitored[i].y_max});
        if (v > 1e-6) ++count;
        worst = std::max(worst, v);
      }
    }
    j["violation_count"] = count;
    j["max_violation"] = worst;
    j["energy_cost"] = tr.energy_cost_cumulative.empty() ? 0.0 : tr.energy_cost_cumulative.back();
    return j;
  }
  const RunMetrics m = metrics(r.log);
  j["violation_count"] = m.violation_count;
  j["max_violation"] = m.max_violation;
  nlohmann::ordered_json inj, per_step;
  for (std::size_t b = 0; b < r.log.booster_ids.size(); ++b) {
    const std::string id = std::to_string(r.log.booster_ids[b]);
    inj[id] = m.injection_mass[b];
    std::vector<double> col(static_cast<std::size_t>(r.log.injected.rows()));
    for (Eigen::Index k = 0; k < r.log.injected.rows(); ++k) col[static_cast<std::size_t>(k)] = r.log.injected(k, static_cast<Eigen::Index>(b));
    per_step[id] = col;
  }
  j["injection_mass"] = inj;
  j["first_step"] = r.log.first_step;
  j["injection_per_step"] = per_step;
  j["energy_cost"] = m.energy_cost;
  j["cycles"] = m.cycles;
  j["degraded_cycles"] = m.degraded_cycles;
  j["infeasible_cycles"] = m.infeasible_cycles;
  j["zone_iters"] = {{"mean", m.mean_zone_iters}, {"max", m.max_zone_iters}};
  if (r.supervisor) j["switches"] = to_json(*r.supervisor)["switches"];
  return j;
}

/// Metrics of a whole Monte Carlo batch: the configuration, every run in
/// seed order and the aggregate.
inline nlohmann::ordered_json batch_metrics_json(const Scenario& sc, const PreparedRun& p, const RunRequest& req,
                                                 const std::vector<RunOutput>& runs) {
  nlohmann::ordered_json j;
  j["scenario"] = sc.name;
  j["mode"] = to_string(req.mode);
  j["zones"] = req.zones ? *req.zones : p.loop.use_zones;
  j["switching"] = req.switching ? to_string(*req.switching)
                   : (req.use_scenario_supervisor && sc.supervisor && req.mode == RunMode::centralized)
                       ? to_string(sc.supervisor->mode)
                       : "off";
  std::vector<std::uint64_t> seeds;
  for (const auto& r : runs) seeds.push_back(r.seed);
  j["seeds"] = seeds;
  j["runs"] = nlohmann::ordered_json::array();
  int total = 0, failing = 0;
  double worst = 0.0, energy = 0.0;
  for (const auto& r : runs) {
    auto rj = run_metrics_json(r, p.net);
    total += rj["violation_count"].get<int>();
    if (rj["violation_count"].get<int>() > 0) ++failing;
    worst = std::max(worst, rj["max_violation"].get<double>());
    energy += rj["energy_cost"].get<double>();
    j["runs"].push_back(std::move(rj));
  }
  j["aggregate"] = {{"runs", runs.size()},
                    {"violation_count", total},
                    {"runs_with_violations", failing},
                    {"max_violation", worst},
                    {"mean_energy_cost", runs.empty() ? 0.0 : energy / static_cast<double>(runs.size())}};
  return j;
}

/// Wall-clock times, kept in their own document.
inline nlohmann::ordered_json timing_json(const std::vector<RunOutput>& runs) {
  nlohmann::ordered_json j;
  j["runs"] = nlohmann::ordered_json::array();
  double total = 0.0;
  for (const auto& r : runs) {
    j["runs"].push_back({{"seed", r.seed}, {"wall_s", r.wall_s}});
    total += r.wall_s;
  }
  j["total_wall_s"] = total;
  return j;
}

/// Injected mass of `booster_id` over steps [from, to) from a run entry of
/// a metrics document.
inline double window_injection(const nlohmann::json& run, int booster_id, int from, int to) {
  const auto& per = run.at("injection_per_step").at(std::to_string(booster_id));
  const int first = run.at("first_step").get<int>();
  double s = 0.0;
  for (int k = std::max(from, first); k < std::min(to, first + static_cast<int>(per.size())); ++k) {
    s += per[static_cast<std::size_t>(k - first)].get<double>();
  }
  return s;
}

/// Side-by-side comparison of two metrics documents over a step window:
/// per booster the window injection of each run, matched by seed.
inline nlohmann::ordered_json compare_metrics(const nlohmann::json& a, const nlohmann::json& b, int from, int to) {
  nlohmann::ordered_json rep;
  rep["a"] = {{"scenario", a.at("scenario")}, {"mode", a.at("mode")}, {"zones", a.at("zones")}};
  rep["b"] = {{"scenario", b.at("scenario")}, {"mode", b.at("mode")}, {"zones", b.at("zones")}};
  rep["window"] = {{"from", from}, {"to", to}};
  std::vector<int> boosters;
  const auto& runs_a = a.at("runs");
  const auto& runs_b = b.at("runs");
  if (!runs_a.empty() && runs_a[0].contains("injection_mass")) {
    for (auto it = runs_a[0]["injection_mass"].begin(); it != runs_a[0]["injection_mass"].end(); ++it) {
      boosters.push_back(std::stoi(it.key()));
    }
  }
  rep["runs"] = nlohmann::ordered_json::array();
  std::map<int, std::pair<double, double>> sums;
  int matched = 0;
  for (const auto& ra : runs_a) {
    for (const auto& rb : runs_b) {
      if (ra.at("seed") != rb.at("seed")) continue;
      ++matched;
      nlohmann::ordered_json row;
      row["seed"] = ra.at("seed");
      row["violations"] = {{"a", ra.at("violation_count")}, {"b", rb.at("violation_count")}};
      for (int id : boosters) {
        const double ia = window_injection(ra, id, from, to), ib = window_injection(rb, id, from, to);
        row["injection"][std::to_string(id)] = {{"a", ia}, {"b", ib}};
        sums[id].first += ia;
        sums[id].second += ib;
      }
      rep["runs"].push_back(row);
    }
  }
  nlohmann::ordered_json summary;
  summary["matched_runs"] = matched;
  for (int id : boosters) {
    const double ma = matched ? sums[id].first / matched : 0.0, mb = matched ? sums[id].second / matched : 0.0;
    summary["injection"][std::to_string(id)] = {{"mean_a", ma}, {"mean_b", mb}, {"b_greater", mb > ma}};
  }
  rep["summary"] = summary;
  return rep;
}

}  // namespace wdn

// wdn: command line front end for scenario validation, open-loop
// simulation, closed-loop runs (centralized, distributed, hierarchy,
// supervised) and run comparison.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wdn/experiment.hpp"
#include "wdn/scenario.hpp"

namespace fs = std::filesystem;

namespace {

// Log level from WDN_LOG_LEVEL (error, info, debug); info by default.
int log_level() {
  static const int level = [] {
    const char* v = std::getenv("WDN_LOG_LEVEL");
    const std::string s = v ? v : "info";
    if (s == "error") return 0;
    if (s == "debug") return 2;
    return 1;
  }();
  return level;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[wdn] " << msg << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw wdn::Error(wdn::ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  os << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw wdn::Error(wdn::ErrorCode::io_error, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw wdn::Error(wdn::ErrorCode::parse_error, path.string() + ": " + e.what());
  }
}

std::optional<bool> parse_on_off(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "on") return true;
  if (s == "off") return false;
  throw wdn::Error(wdn::ErrorCode::invalid_argument, "--zones expects on or off, got '" + s + "'");
}

struct RunArgs {
  std::string scenario;
  std::string mode = "centralized";
  std::string zones;
  std::string switching;
  int ts = 0;
  int mc = 1;
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned threads = 0;
};

int do_validate(const std::string& path) {
  const auto sc = wdn::load_scenario(path);
  const auto report = wdn::validate(sc.network);
  if (!report.ok()) {
    for (const auto& v : report.violations) std::cout << "violation: " << v << '\n';
    std::cerr << "error[invalid_argument]: " << report.violations.size() << " network violation(s) in " << path << '\n';
    return 1;
  }
  const auto& n = sc.network;
  int junctions = 0;
  for (const auto& x : n.nodes) junctions += x.kind == wdn::NodeKind::junction;
  if (sc.supervisor) sc.supervisor->check(static_cast<int>(n.boosters.size()), static_cast<int>(n.monitored.size()));
  if (sc.partition) sc.partition->check(n);
  std::cout << "ok: " << (sc.name.empty() ? path : sc.name) << ": " << junctions << " junctions, " << n.pipes.size()
            << " pipes, " << n.tanks.size() << " tanks, " << n.boosters.size() << " boosters, " << n.monitored.size()
            << " monitored, " << n.time_grid.steps_quality() << " quality steps\n";
  return 0;
}

int do_run(const RunArgs& a, bool force_simulate) {
  const auto sc = wdn::load_scenario(a.scenario);
  wdn::RunRequest req;
  req.mode = force_simulate ? wdn::RunMode::simulate : wdn::run_mode_from_string(a.mode);
  req.zones = parse_on_off(a.zones);
  if (!a.switching.empty()) {
    if (a.switching == "off") {
      req.use_scenario_supervisor = false;
    } else {
      req.switching = wdn::switch_mode_from_string(a.switching);
    }
  }
  if (a.ts > 0) req.ts = a.ts;
  if (a.mc < 1) throw wdn::Error(wdn::ErrorCode::invalid_argument, "--mc must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.mc; ++i) seeds.push_back(a.seed + static_cast<std::uint64_t>(i));

  info("preparing " + (sc.name.empty() ? a.scenario : sc.name));
  const auto prepared = wdn::prepare(sc);
  info(std::string("running ") + wdn::to_string(req.mode) + " over " + std::to_string(seeds.size()) + " seed(s)");
  const auto runs = wdn::run_monte_carlo(sc, prepared, req, seeds, a.threads);

  const fs::path out(a.out);
  fs::create_directories(out);
  for (const auto& r : runs) {
    const std::string tag = "seed" + std::to_string(r.seed);
    std::ostringstream csv;
    if (r.open_loop) {
      wdn::write_csv(csv, *r.open_loop);
    } else {
      wdn::write_controller_csv(csv, r.log);
    }
    write_text(out / ("run_" + tag + ".csv"), csv.str());
    if (r.supervisor) write_text(out / ("supervisor_" + tag + ".json"), wdn::to_json(*r.supervisor).dump(2) + "\n");
    if (!r.trace.empty()) {
      std::ostringstream tr;
      wdn::write_trace(tr, r.trace);
      write_text(out / ("trace_" + tag + ".jsonl"), tr.str());
    }
  }
  const auto metrics = wdn::batch_metrics_json(sc, prepared, req, runs);
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  write_text(out / "timing.json", wdn::timing_json(runs).dump(2) + "\n");
  const auto& agg = metrics["aggregate"];
  std::cout << wdn::to_string(req.mode) << ": " << runs.size() << " run(s), " << agg["violation_count"].get<int>()
            << " violation(s) in " << agg["runs_with_violations"].get<int>() << " run(s), max "
            << agg["max_violation"].get<double>() << " mg/L; outputs in " << out.string() << '\n';
  return 0;
}

int do_compare(const std::string& a, const std::string& b, int from, int to, const std::string& out) {
  auto metrics_of = [](const std::string& p) {
    const fs::path path(p);
    return read_json(fs::is_directory(path) ? path / "metrics.json" : path);
  };
  const auto rep = wdn::compare_metrics(metrics_of(a), metrics_of(b), from, to);
  const std::string text = rep.dump(2) + "\n";
  if (!out.empty()) {
    const fs::path p(out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, text);
  }
  std::cout << "steps [" << from << ", " << to << "), " << rep["summary"]["matched_runs"].get<int>() << " matched run(s)\n";
  for (auto it = rep["summary"]["injection"].begin(); it != rep["summary"]["injection"].end(); ++it) {
    std::cout << "  booster " << it.key() << ": mean injection a=" << (*it)["mean_a"].get<double>()
              << " g, b=" << (*it)["mean_b"].get<double>() << " g" << ((*it)["b_greater"].get<bool>() ? " (b greater)" : "")
              << '\n';
  }
  return 0;
}

int do_export(const std::string& which, const std::string& out) {
  wdn::Scenario sc;
  if (which == "benchmark16") {
    sc = wdn::benchmark16_scenario();
  } else if (which == "burst") {
    sc = wdn::burst_scenario();
  } else if (which == "two_path") {
    sc = wdn::two_path_scenario();
  } else {
    throw wdn::Error(wdn::ErrorCode::invalid_argument, "unknown scenario '" + which + "'");
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  wdn::save_scenario(sc, out);
  std::cout << "wrote " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Water distribution network chlorine control: scenarios, closed-loop runs and comparisons"};
  app.require_subcommand(1);

  std::string scenario;
  auto* validate = app.add_subcommand("validate", "Check a scenario file and its network");
  validate->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);

  RunArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Open-loop run at the scenario's initial setpoints");
  simulate->add_option("--scenario", sim_args.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim_args.seed, "First seed of the true plant draw");
  simulate->add_option("--mc", sim_args.mc, "Number of seeds");
  simulate->add_option("--out", sim_args.out, "Output directory");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Closed-loop run, optionally over several seeds");
  run->add_option("--scenario", run_args.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", run_args.mode, "simulate, centralized, distributed or hierarchy")
      ->check(CLI::IsMember({"simulate", "centralized", "distributed", "hierarchy"}));
  run->add_option("--zones", run_args.zones, "Safety zones on or off")->check(CLI::IsMember({"on", "off"}));
  run->add_option("--switching", run_args.switching, "hard, linear, min_time or off")
      ->check(CLI::IsMember({"hard", "linear", "min_time", "off"}));
  run->add_option("--ts", run_args.ts, "Soft switching duration in quality steps")->check(CLI::PositiveNumber);
  run->add_option("--mc", run_args.mc, "Number of Monte Carlo seeds")->check(CLI::PositiveNumber);
  run->add_option("--seed", run_args.seed, "First seed");
  run->add_option("--out", run_args.out, "Output directory");
  run->add_option("--threads", run_args.threads, "Monte Carlo workers (0: all cores)");

  std::string cmp_a, cmp_b, cmp_out;
  int cmp_from = 200, cmp_to = 288;
  auto* compare = app.add_subcommand("compare", "Compare two runs' metrics over a step window");
  compare->add_option("a", cmp_a, "First run directory or metrics.json")->required()->check(CLI::ExistingPath);
  compare->add_option("b", cmp_b, "Second run directory or metrics.json")->required()->check(CLI::ExistingPath);
  compare->add_option("--from", cmp_from, "First step of the window");
  compare->add_option("--to", cmp_to, "End step of the window (exclusive)");
  compare->add_option("--out", cmp_out, "Report JSON path");

  std::string which = "benchmark16", export_out = "benchmark16.json";
  auto* exp = app.add_subcommand("export-benchmark", "Write a shipped scenario as JSON");
  exp->add_option("--which", which, "benchmark16, burst or two_path")
      ->check(CLI::IsMember({"benchmark16", "burst", "two_path"}));
  exp->add_option("--out", export_out, "Output file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return do_validate(scenario);
    if (*simulate) return do_run(sim_args, true);
    if (*run) return do_run(run_args, false);
    if (*compare) return do_compare(cmp_a, cmp_b, cmp_from, cmp_to, cmp_out);
    if (*exp) return do_export(which, export_out);
  } catch (const wdn::Error& e) {
    std::cerr << "error[" << wdn::to_string(e.code()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

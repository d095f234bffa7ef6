#pragma once

// Small crafted networks with known structure, used by the tests and the
// shipped example scenarios.

#include <vector>

#include "wdn/benchmark.hpp"
#include "wdn/network.hpp"

namespace wdn {

/// Source -> pump -> 1 -> booster 2, then to the monitored node 4 either
/// directly (pipe 2) or through node 3 (pipes 3, 4). Pipe 4 bursts at step
/// `burst_step`, after which all water takes the short pipe. Constant
/// demand keeps the hydraulics simple; the low booster rate means a jump of
/// the lower output bound cannot be met at once.
inline Network build_burst_toy(int burst_step = 100) {
  Network net;
  net.time_grid = TimeGrid{};
  for (int id = 1; id <= 4; ++id) net.nodes.push_back({id, NodeKind::junction, 0.0});
  net.nodes.push_back({100, NodeKind::source, 0.25});
  net.pipes = {
      {1, 1, 2, 10.0, 1.0, 0.3},
      {2, 2, 4, 5.0, 1.0, 0.3},
      {3, 2, 3, 5.0, 1.0, 0.3},
      {4, 3, 4, 5.0, 1.0, 0.3},
  };
  net.pumps.push_back({101, 100, 1, 120.0, 0.4});
  net.boosters.push_back({2, 0.0, 2.0, 0.01});
  net.monitored.push_back({4, 0.2, 0.6, 0.3, 0.1});
  net.demand_profiles.push_back({4, std::vector<double>(static_cast<std::size_t>(net.time_grid.steps_quality()), 60.0)});
  ScenarioEvent burst;
  burst.kind = EventKind::pipe_burst;
  burst.at_step = burst_step;
  burst.pipe_id = 4;
  net.events.push_back(burst);
  return net;
}

/// One source feeding two branches that never meet again: 1 -> 2 -> 3 -> 4
/// and 1 -> 5 -> 6 -> 7, boosters at 2 and 5, monitored nodes 4 and 7. Each
/// booster reaches only its own branch, so the zones are fully decoupled.
inline Network build_two_path_toy() {
  Network net;
  net.time_grid = TimeGrid{};
  for (int id = 1; id <= 7; ++id) net.nodes.push_back({id, NodeKind::junction, 0.0});
  net.nodes.push_back({100, NodeKind::source, 0.5});
  net.pipes = {
      {1, 1, 2, 10.0, 1.0, 0.1}, {2, 2, 3, 15.0, 1.0, 0.1}, {3, 3, 4, 10.0, 1.0, 0.1},
      {4, 1, 5, 10.0, 1.0, 0.1}, {5, 5, 6, 20.0, 1.0, 0.1}, {6, 6, 7, 10.0, 1.0, 0.1},
  };
  net.pumps.push_back({101, 100, 1, 200.0, 0.4});
  net.boosters.push_back({2, 0.0, 4.0, 0.1});
  net.boosters.push_back({5, 0.0, 4.0, 0.1});
  net.monitored.push_back({4, 0.2, 0.6, 0.3, 0.1});
  net.monitored.push_back({7, 0.2, 0.6, 0.3, 0.1});
  const std::vector<std::pair<int, double>> base = {{3, 10}, {4, 15}, {6, 8}, {7, 12}};
  for (const auto& [node, q] : base) net.demand_profiles.push_back({node, double_peak_profile(net.time_grid, q)});
  return net;
}

}  // namespace wdn

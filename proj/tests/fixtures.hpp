#pragma once

// Shared, lazily built test data. Building the benchmark's schedule and
// warm state takes a moment, so every test binary does it once.

#include "wdn/benchmark.hpp"
#include "wdn/scenario.hpp"
#include "wdn/toys.hpp"

namespace wdn::testing {

inline const PreparedRun& benchmark() {
  static const PreparedRun p = prepare(benchmark16_scenario());
  return p;
}

inline const PreparedRun& two_path() {
  static const PreparedRun p = prepare(two_path_scenario());
  return p;
}

inline const PreparedRun& burst() {
  static const PreparedRun p = prepare(burst_scenario());
  return p;
}

inline const HydraulicSchedule& benchmark_actual() {
  static const HydraulicSchedule s = realize_hydraulics(benchmark().net, benchmark().planned, {});
  return s;
}

inline int index_of_booster(const Network& net, int node_id) {
  for (std::size_t b = 0; b < net.boosters.size(); ++b) {
    if (net.boosters[b].node_id == node_id) return static_cast<int>(b);
  }
  return -1;
}

}  // namespace wdn::testing

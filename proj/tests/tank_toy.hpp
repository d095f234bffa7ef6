#pragma once

// Three-hour network with one pump, one tank and a cheap first hour, small
// enough for an exhaustive search over tank flows.

#include <algorithm>
#include <limits>

#include "wdn/hydraulics.hpp"

namespace wdn::testing {

inline Network tank_toy() {
  Network net;
  net.time_grid.horizon = Seconds{3 * 3600};
  net.nodes = {{1, NodeKind::junction, 0.0}, {2, NodeKind::tank, 0.0}, {100, NodeKind::source, 0.5}};
  net.pipes = {{1, 1, 2, 5.0, 1.0, 0.1}};
  net.tanks = {{2, 10.0, 0.0, 3.0, 1.0, 10.0, 0.05}};
  net.pumps = {{101, 100, 1, 30.0, 0.5}};
  net.demand_profiles = {{1, std::vector<double>(static_cast<std::size_t>(net.time_grid.steps_quality()), 10.0)}};
  return net;
}

inline Tariff tank_toy_tariff() {
  Tariff t = Tariff::flat(0.1);
  t.price[0] = 0.05;
  t.price[1] = 0.20;
  t.price[2] = 0.20;
  return t;
}

/// Cheapest feasible schedule cost by enumerating tank flows on a grid that
/// contains every vertex of the toy's feasible polytope.
inline double tank_toy_brute_force_cost(const Network& net, const Tariff& tariff, double grid = 0.5) {
  const auto& tank = net.tanks.front();
  const auto& pump = net.pumps.front();
  const double demand = 10.0;
  const int n = static_cast<int>(2.0 * tank.flow_max / grid + 0.5);
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a <= n; ++a) {
    for (int b = 0; b <= n; ++b) {
      for (int c = 0; c <= n; ++c) {
        const double tf[3] = {-tank.flow_max + a * grid, -tank.flow_max + b * grid, -tank.flow_max + c * grid};
        double level = tank.level_init, cost = 0.0;
        bool ok = true;
        for (int h = 0; h < 3 && ok; ++h) {
          const double q = demand - tf[h];
          level -= tf[h] / tank.area;
          ok = q >= -1e-12 && q <= pump.flow_max + 1e-12 && level >= tank.level_min - 1e-12 &&
               level <= tank.level_max + 1e-12;
          cost += tariff.price[static_cast<std::size_t>(h)] * pump.power_coeff * q;
        }
        if (ok && level >= tank.level_init - 1e-12) best = std::min(best, cost);
      }
    }
  }
  return best;
}

}  // namespace wdn::testing

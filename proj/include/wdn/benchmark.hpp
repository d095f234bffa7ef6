#pragma once

// Canonical 16-junction benchmark network.
//
// Only the element counts and the roles of a few nodes are fixed by the
// reference description; the adjacency and every numeric parameter below
// are a documented invention chosen so that
//   * booster 5 is the only entry into the loop {11..16}, whose most remote
//     node 16 is monitored;
//   * booster 10 feeds {6, 7, 8}, whose most remote node 8 is monitored;
//   * the cross pipe 14-7 carries part of the water of zone {11..16} into
//     node 7, so the two boosters interact at node 8.

#include <cmath>
#include <vector>

#include "wdn/network.hpp"

namespace wdn {

/// Daily double-peak demand multiplier (mean close to 1) at hour `t`.
inline double double_peak_shape(double t) {
  auto bump = [](double x, double mu, double w) { return std::exp(-0.5 * (x - mu) * (x - mu) / (w * w)); };
  double v = 0.62;
  for (int wrap = -1; wrap <= 1; ++wrap) {
    const double x = t + 24.0 * wrap;
    v += 0.75 * bump(x, 7.5, 1.6) + 0.30 * bump(x, 13.0, 2.5) + 0.60 * bump(x, 19.5, 1.8);
  }
  return v;
}

inline std::vector<double> double_peak_profile(const TimeGrid& tg, double base) {
  std::vector<double> v(static_cast<std::size_t>(tg.steps_quality()));
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double t_mid = (static_cast<double>(k) + 0.5) * tg.dt_quality_hours();
    v[k] = base * double_peak_shape(std::fmod(t_mid, 24.0));
  }
  return v;
}

inline Network build_benchmark16() {
  Network net;
  net.time_grid = TimeGrid{};
  for (int id = 1; id <= 16; ++id) net.nodes.push_back({id, NodeKind::junction, 0.0});
  for (int id : {17, 18, 19}) net.nodes.push_back({id, NodeKind::tank, 0.0});
  net.nodes.push_back({100, NodeKind::source, 0.6});
  net.nodes.push_back({200, NodeKind::source, 0.6});

  struct P {
    int from, to;
    double volume, resistance;
  };
  // Volumes in m3, resistances as relative allocation weights.
  const std::vector<P> pipes = {
      {1, 2, 20, 1.0},  {1, 3, 20, 1.0},  {2, 3, 15, 2.0},  {2, 4, 20, 1.0},  {3, 4, 20, 2.0},
      {4, 9, 20, 2.0},  {3, 9, 25, 2.0},  {2, 17, 10, 0.5}, {3, 18, 10, 0.5}, {9, 19, 10, 0.5},
      {2, 5, 25, 1.0},  {4, 5, 25, 1.0},  {4, 10, 25, 3.0}, {9, 10, 25, 3.0}, {5, 11, 10, 1.0},
      {5, 12, 10, 1.0}, {11, 12, 6, 2.0}, {11, 13, 8, 1.0}, {12, 14, 8, 1.0}, {13, 14, 6, 2.0},
      {13, 15, 6, 1.0}, {14, 15, 6, 2.0}, {15, 16, 5, 1.0}, {10, 6, 8, 2.0},  {6, 7, 6, 1.0},
      {7, 8, 5, 1.0},   {14, 7, 10, 1.0},
  };
  const double decay = 0.3;  // 1/h, bulk chlorine decay
  for (std::size_t i = 0; i < pipes.size(); ++i) {
    const auto& p = pipes[i];
    net.pipes.push_back({static_cast<int>(i + 1), p.from, p.to, p.volume, p.resistance, decay});
  }
  for (int id : {17, 18, 19}) net.tanks.push_back({id, 100.0, 1.0, 7.0, 4.0, 60.0, 0.1});
  net.pumps.push_back({101, 100, 1, 250.0, 0.40});
  net.pumps.push_back({201, 200, 9, 150.0, 0.45});
  for (int id : {5, 10}) net.boosters.push_back({id, 0.0, 4.0, 0.1});
  net.monitored.push_back({16, 0.2, 0.6, 0.3, 0.1});
  net.monitored.push_back({8, 0.2, 0.6, 0.3, 0.1});

  const std::vector<std::pair<int, double>> base = {
      {1, 5},   {2, 8},   {3, 8},   {4, 10},  {9, 6},  {5, 6},  {10, 6}, {11, 10},
      {12, 10}, {13, 12}, {14, 12}, {15, 10}, {16, 8}, {6, 10}, {7, 10}, {8, 8},
  };
  for (const auto& [node, q] : base) net.demand_profiles.push_back({node, double_peak_profile(net.time_grid, q)});
  return net;
}

}  // namespace wdn

#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "wdn/benchmark.hpp"
#include "wdn/network.hpp"
#include "wdn/toys.hpp"

namespace wdn {
namespace {

int count_kind(const Network& net, NodeKind k) {
  return static_cast<int>(std::count_if(net.nodes.begin(), net.nodes.end(), [k](const Node& n) { return n.kind == k; }));
}

TEST(Network, BenchmarkHasTheDocumentedElementCounts) {
  const Network net = build_benchmark16();
  EXPECT_EQ(count_kind(net, NodeKind::junction), 16);
  EXPECT_EQ(net.pipes.size(), 27u);
  EXPECT_EQ(net.tanks.size(), 3u);
  ASSERT_EQ(net.boosters.size(), 2u);
  EXPECT_EQ(net.boosters[0].node_id, 5);
  EXPECT_EQ(net.boosters[1].node_id, 10);
  ASSERT_EQ(net.monitored.size(), 2u);
  EXPECT_EQ(net.monitored[0].node_id, 16);
  EXPECT_EQ(net.monitored[1].node_id, 8);
  EXPECT_EQ(net.time_grid.steps_quality(), 288);
  EXPECT_EQ(net.time_grid.steps_hydraulic(), 24);
  EXPECT_TRUE(validate(net).ok());
}

TEST(Network, ToysAreValid) {
  EXPECT_TRUE(validate(build_burst_toy()).ok());
  EXPECT_TRUE(validate(build_two_path_toy()).ok());
}

TEST(Network, TimeGridMapsQualityStepsToHoursAndHydraulicSteps) {
  const TimeGrid tg;
  EXPECT_EQ(tg.steps_per_hydraulic(), 12);
  EXPECT_EQ(tg.hydraulic_step(0), 0);
  EXPECT_EQ(tg.hydraulic_step(11), 0);
  EXPECT_EQ(tg.hydraulic_step(12), 1);
  EXPECT_EQ(tg.hour_of_day(287), 23);
}

TEST(Network, ValidationReportsEachBrokenElement) {
  Network net = build_two_path_toy();
  net.pipes.push_back({99, 3, 3, 1.0, 1.0, 0.1});
  net.pipes.push_back({6, 1, 2, 1.0, 1.0, 0.1});
  net.boosters.push_back({100, 0.0, 1.0, 0.1});
  const auto r = validate(net);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(r.contains("self loop"));
  EXPECT_TRUE(r.contains("duplicate pipe id"));
  EXPECT_TRUE(r.contains("booster must sit on a junction"));
}

TEST(Network, ValidationRejectsBadTimeGridAndDemandLength) {
  Network net = build_two_path_toy();
  net.time_grid.dt_quality = Seconds{7 * 60};
  const auto r = validate(net);
  EXPECT_TRUE(r.contains("integer multiple"));
  EXPECT_TRUE(r.contains("demand profile length"));
}

TEST(Network, ValidationDetectsDisconnectedGraph) {
  Network net = build_two_path_toy();
  net.nodes.push_back({50, NodeKind::junction, 0.0});
  EXPECT_TRUE(validate(net).contains("not connected"));
}

TEST(Network, UnknownReferencesAreReported) {
  Network net = build_two_path_toy();
  net.monitored.push_back({77, 0.2, 0.6, 0.3, 0.1});
  net.demand_profiles.push_back({78, std::vector<double>(288, 1.0)});
  const auto r = validate(net);
  EXPECT_TRUE(r.contains("unknown monitored node"));
  EXPECT_TRUE(r.contains("unknown demand node"));
}

TEST(Network, ApplyingABurstRemovesThePipeAndTheEvent) {
  const Network net = build_burst_toy();
  ASSERT_EQ(net.events.size(), 1u);
  const Network after = apply_event(net, net.events.front());
  EXPECT_EQ(after.pipes.size(), net.pipes.size() - 1);
  EXPECT_TRUE(after.events.empty());
  EXPECT_TRUE(std::none_of(after.pipes.begin(), after.pipes.end(), [](const Pipe& p) { return p.id == 4; }));
}

TEST(Network, BurstThatIsolatesAMonitoredNodeRaisesNetworkSplit) {
  Network net = build_two_path_toy();
  ScenarioEvent e;
  e.kind = EventKind::pipe_burst;
  e.pipe_id = 3;
  try {
    apply_event(net, e);
    FAIL() << "expected network_split";
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::network_split);
  }
}

TEST(Network, DemandSurgeScalesTheNodeProfile) {
  Network net = build_two_path_toy();
  ScenarioEvent e;
  e.kind = EventKind::demand_surge;
  e.node_id = 4;
  e.multiplier = 2.0;
  e.at_step = 0;
  const Network after = apply_event(net, e);
  const auto it = std::find_if(after.demand_profiles.begin(), after.demand_profiles.end(),
                               [](const DemandProfile& d) { return d.node_id == 4; });
  const auto before = std::find_if(net.demand_profiles.begin(), net.demand_profiles.end(),
                                   [](const DemandProfile& d) { return d.node_id == 4; });
  ASSERT_NE(it, after.demand_profiles.end());
  EXPECT_DOUBLE_EQ(it->values.back(), 2.0 * before->values.back());
}

}  // namespace
}  // namespace wdn

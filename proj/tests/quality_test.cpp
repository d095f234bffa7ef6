#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "wdn/quality.hpp"
#include "wdn/toys.hpp"

namespace wdn {
namespace {

// Burst toy without its event, pipe volumes chosen so every transport delay
// is a whole number of quality steps: pipe 2 carries 40 m3/h over two steps,
// pipes 3 and 4 carry 20 m3/h over three steps each.
Network integer_delay_toy() {
  Network net = build_burst_toy();
  net.events.clear();
  net.pipes[1].volume = 40.0 * 2.0 / 12.0;
  net.pipes[2].volume = 20.0 * 3.0 / 12.0;
  net.pipes[3].volume = 20.0 * 3.0 / 12.0;
  return net;
}

TEST(Quality, WithoutDecayTheMonitoredNodesSettleAtTheSetpoints) {
  Network net = build_two_path_toy();
  for (auto& p : net.pipes) p.decay_rate = 0.0;
  const auto s = demand_tracking_schedule(net);
  Mat u(288, 2);
  u.col(0).setConstant(0.7);
  u.col(1).setConstant(1.3);
  const auto tr = simulate(net, s, u, {}, zero_quality_state(net));
  EXPECT_NEAR(tr.y(287, 0), 0.7, 1e-12);
  EXPECT_NEAR(tr.y(287, 1), 1.3, 1e-12);
}

TEST(Quality, FirstOrderDecayAlongParallelRoutesMatchesClosedForm) {
  const Network net = integer_delay_toy();
  const auto s = demand_tracking_schedule(net);
  ASSERT_NEAR(s.pipe_flow[0][1], 40.0, 1e-9);
  ASSERT_NEAR(s.pipe_flow[0][2], 20.0, 1e-9);
  const auto tr = simulate(net, s, Mat::Constant(288, 1, 1.0), {}, zero_quality_state(net));
  const double k = 0.3;
  const double expected = (40.0 * std::exp(-k * 2.0 / 12.0) + 20.0 * std::exp(-k * 6.0 / 12.0)) / 60.0;
  EXPECT_NEAR(tr.y(287, 0), expected, 1e-12);
}

TEST(Quality, ASetpointStepReachesTheOutputAfterTheShortestDelay) {
  const Network net = integer_delay_toy();
  Network still = net;
  for (auto& p : still.pipes) p.decay_rate = 0.0;
  const auto s = demand_tracking_schedule(still);
  const auto init = warm_state(still, s, {0.5});
  Mat u = Mat::Constant(40, 1, 0.5);
  u.bottomRows(30).setConstant(1.0);
  const auto tr = simulate(still, s, u, {}, init);
  for (int k = 0; k < 11; ++k) EXPECT_NEAR(tr.y(k, 0), 0.5, 1e-12) << k;
  // Two thirds of the flow arrive two steps later, the rest after six.
  EXPECT_NEAR(tr.y(12, 0), 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(tr.y(20, 0), 1.0, 1e-12);
}

TEST(Quality, WarmStateIsPeriodicUnderConstantInjection) {
  const auto& p = testing::two_path();
  const auto actual = realize_hydraulics(p.net, p.planned, {});
  const auto once = warm_state(p.net, actual, {0.4, 0.4}, 1);
  const auto twice = warm_state(p.net, actual, {0.4, 0.4}, 2);
  ASSERT_EQ(once.node_conc.size(), twice.node_conc.size());
  for (std::size_t i = 0; i < once.node_conc.size(); ++i) EXPECT_NEAR(once.node_conc[i], twice.node_conc[i], 1e-9);
}

TEST(Quality, SimulationIsDeterministicAndCsvIsStable) {
  const auto& p = testing::two_path();
  const Mat u = Mat::Constant(288, 2, 0.5);
  std::ostringstream a, b;
  write_csv(a, simulate(p.net, p.planned, u, {}, p.init));
  write_csv(b, simulate(p.net, p.planned, u, {}, p.init));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "time_s,y_4,y_7,u_2,u_5,flow_101,energy_cost_cumulative");
}

TEST(Quality, InputWidthMismatchIsRejected) {
  const auto& p = testing::two_path();
  try {
    simulate(p.net, p.planned, Mat::Zero(10, 3), {}, p.init);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

}  // namespace
}  // namespace wdn

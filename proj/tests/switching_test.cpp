#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "wdn/switching.hpp"

namespace wdn {
namespace {

MpcTask task_a() {
  MpcTask t = MpcTask::from_network(build_burst_toy());
  t.control_horizon = 12;
  return t;
}

MpcTask task_b() {
  MpcTask t = task_a();
  t.y_min = {0.4};
  t.y_max = {0.8};
  t.y_ref = {0.4};
  t.w_du = 2.0;
  t.control_horizon = 6;
  return t;
}

TEST(Switching, BlendEndpointsAndMidpoint) {
  const auto a = task_a(), b = task_b();
  EXPECT_EQ(blend(a, b, 0.0), a);
  EXPECT_EQ(blend(a, b, 1.0), b);
  const auto m = blend(a, b, 0.25);
  EXPECT_DOUBLE_EQ(m.y_min[0], 0.75 * 0.2 + 0.25 * 0.4);
  EXPECT_DOUBLE_EQ(m.y_max[0], 0.75 * 0.6 + 0.25 * 0.8);
  EXPECT_DOUBLE_EQ(m.w_du, 0.75 * 10.0 + 0.25 * 2.0);
  EXPECT_EQ(m.control_horizon, a.control_horizon);
  EXPECT_THROW(blend(a, b, 1.5), Error);
}

TEST(Switching, LinearScheduleRisesInEqualSteps) {
  EXPECT_EQ(lambda_schedule_linear(4), (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_THROW(lambda_schedule_linear(0), Error);
}

TEST(Switching, MinTimeStepFindsTheLargestAcceptedLambda) {
  int calls = 0;
  const double tol = 1.0 / 64.0;
  const double l = min_time_lambda_step(0.1, [&](double x) { ++calls; return x <= 0.3; }, tol);
  EXPECT_LE(l, 0.3);
  EXPECT_GE(l, 0.3 - tol);
  EXPECT_EQ(min_time_lambda_step(0.1, [](double) { return true; }), 1.0);
  EXPECT_EQ(min_time_lambda_step(0.5, [](double x) { return x <= 0.5; }), 0.5);
  EXPECT_LE(calls, 8);
}

TEST(Switching, DetectionTakesTheFirstMatchingRule) {
  const std::vector<DetectionRule> rules = {
      {RuleKind::pressure_anomaly, 0.0, {OsLabel::disturbed, 1}},
      {RuleKind::pipe_burst, 0.0, {OsLabel::emergency, 0}},
      {RuleKind::demand_anomaly, 1.2, {OsLabel::disturbed, 2}},
  };
  Observation calm;
  Observation burst;
  burst.pipe_burst = true;
  Observation both = burst;
  both.pressure_anomaly = true;
  Observation surge;
  surge.demand_ratio = 1.25;
  EXPECT_EQ(detect_os({calm}, rules), OperationalState{});
  EXPECT_EQ(detect_os({calm, burst}, rules), (OperationalState{OsLabel::emergency, 0}));
  EXPECT_EQ(detect_os({burst, both}, rules), (OperationalState{OsLabel::disturbed, 1}));
  EXPECT_EQ(detect_os({surge}, rules), (OperationalState{OsLabel::disturbed, 2}));
  EXPECT_THROW(detect_os({}, rules), Error);
}

TEST(Switching, MappingFallsBackToTheInitialStrategy) {
  const auto cfg = burst_supervisor(build_burst_toy());
  EXPECT_EQ(cfg.strategy_for({OsLabel::emergency, 3}).id, "emergency");
  EXPECT_EQ(cfg.strategy_for({OsLabel::disturbed, 0}).id, "normal");
  EXPECT_THROW(cfg.strategy("missing"), Error);
  auto bad = cfg;
  bad.ts = 0;
  EXPECT_THROW(bad.check(1, 1), Error);
}

TEST(Switching, LinearSwitchOnTheBurstToyCompletesAfterTs) {
  const auto& p = testing::burst();
  const auto cfg = burst_supervisor(p.net, SwitchMode::linear, 24);
  const auto truth = nominal_realization(p.net, p.set);
  const auto r = run_supervised(p.net, p.planned, cfg, p.set, truth, p.init, p.tariff, p.loop);
  ASSERT_EQ(r.supervisor.switches.size(), 1u);
  const auto& s = r.supervisor.switches.front();
  EXPECT_EQ(s.t_bar, 100);
  EXPECT_EQ(s.t_s, 124);
  EXPECT_EQ(s.to, "emergency");
  EXPECT_EQ(metrics(r.log).infeasible_cycles, 0);
  EXPECT_EQ(metrics(r.log).violation_count, 0);
  // Bounds in force ramp from the old band to the new one.
  EXPECT_DOUBLE_EQ(r.log.y_min(99, 0), 0.2);
  EXPECT_DOUBLE_EQ(r.log.y_min(112, 0), 0.2 + 0.2 * 12.0 / 24.0);
  EXPECT_DOUBLE_EQ(r.log.y_min(130, 0), 0.4);
}

}  // namespace
}  // namespace wdn

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "tank_toy.hpp"
#include "wdn/hydraulics.hpp"
#include "wdn/uncertainty.hpp"

namespace wdn {
namespace {

TEST(Tariff, TwoLevelPeakWindows) {
  const Tariff t = Tariff::two_level(0.12, 0.06);
  for (int h = 0; h < 24; ++h) {
    const bool peak = (h >= 6 && h < 12) || (h >= 15 && h < 21);
    EXPECT_DOUBLE_EQ(t.at_hour(h), peak ? 0.12 : 0.06) << "hour " << h;
  }
  EXPECT_DOUBLE_EQ(t.mean_over(5 * 3600, 7 * 3600), 0.09);
}

TEST(Hydraulics, FlowsBalanceEveryNode) {
  const auto& p = testing::benchmark();
  const auto& s = p.planned;
  for (int h = 0; h < s.steps(); ++h) {
    EXPECT_LT(balance_residual(p.net, s.pump_flow[h], s.tank_flow[h], node_demand(p.net, h), s.pipe_flow[h]), 1e-8)
        << "step " << h;
  }
}

TEST(Hydraulics, DemandTrackingLeavesTanksIdle) {
  const Network net = build_benchmark16();
  const auto s = demand_tracking_schedule(net);
  for (const auto& row : s.tank_flow) {
    for (double v : row) EXPECT_EQ(v, 0.0);
  }
  for (int h = 0; h < s.steps(); ++h) EXPECT_NEAR(total(s.pump_flow[h]), total(node_demand(net, h)), 1e-9);
}

TEST(Hydraulics, OptimizedScheduleRespectsTankAndPumpLimits) {
  const auto& p = testing::benchmark();
  const auto& s = p.planned;
  ASSERT_EQ(s.steps(), 24);
  for (int h = 0; h <= s.steps(); ++h) {
    for (std::size_t t = 0; t < p.net.tanks.size(); ++t) {
      EXPECT_GE(s.tank_level[h][t], p.net.tanks[t].level_min - 1e-6);
      EXPECT_LE(s.tank_level[h][t], p.net.tanks[t].level_max + 1e-6);
    }
  }
  for (std::size_t t = 0; t < p.net.tanks.size(); ++t) EXPECT_GE(s.tank_level.back()[t], p.net.tanks[t].level_init - 1e-6);
  for (const auto& row : s.pump_flow) {
    for (std::size_t q = 0; q < row.size(); ++q) {
      EXPECT_GE(row[q], 0.0);
      EXPECT_LE(row[q], p.net.pumps[q].flow_max);
    }
  }
}

TEST(Hydraulics, OptimizedScheduleMatchesExhaustiveSearchOnTankToy) {
  const Network net = testing::tank_toy();
  ASSERT_TRUE(validate(net).ok());
  const Tariff tariff = testing::tank_toy_tariff();
  const double lp = energy_cost(net, optimize_pump_schedule(net, tariff), tariff);
  const double brute = testing::tank_toy_brute_force_cost(net, tariff);
  EXPECT_NEAR(lp, brute, 1e-6);
  EXPECT_NEAR(brute, 1.5, 1e-12);
  EXPECT_LT(lp, energy_cost(net, demand_tracking_schedule(net), tariff) - 0.5);
}

TEST(Hydraulics, WithoutTanksOptimizationCannotBeatDemandTracking) {
  const Network net = build_two_path_toy();
  const Tariff t = Tariff::two_level();
  EXPECT_NEAR(energy_cost(net, optimize_pump_schedule(net, t), t), energy_cost(net, demand_tracking_schedule(net), t), 1e-6);
}

TEST(Hydraulics, TanksAbsorbTheDemandForecastError) {
  const auto& p = testing::benchmark();
  const auto truth = sample_realization(p.net, p.set, 3);
  const auto actual = realize_hydraulics(p.net, p.planned, truth);
  for (int h = 0; h < actual.steps(); ++h) {
    EXPECT_EQ(actual.pump_flow[h], p.planned.pump_flow[h]);
    EXPECT_NEAR(total(actual.pump_flow[h]) + total(actual.tank_flow[h]), total(node_demand(p.net, h, truth)), 1e-9);
  }
}

TEST(Hydraulics, InfeasibleWindowRaisesScheduleInfeasible) {
  Network net = testing::tank_toy();
  net.pumps.front().flow_max = 1.0;
  try {
    optimize_pump_schedule(net, testing::tank_toy_tariff());
    FAIL() << "expected schedule_infeasible";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::schedule_infeasible);
  }
}

}  // namespace
}  // namespace wdn

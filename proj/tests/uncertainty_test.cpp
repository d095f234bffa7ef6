#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "wdn/uncertainty.hpp"

namespace wdn {
namespace {

TEST(Uncertainty, DemandBoundSwitchesAfterTheEarlyHours) {
  const Network net = build_benchmark16();
  const auto set = UncertaintySet::standard(net);
  EXPECT_DOUBLE_EQ(set.demand_bound(net.time_grid, 0), 0.05);
  EXPECT_DOUBLE_EQ(set.demand_bound(net.time_grid, 9), 0.05);
  EXPECT_DOUBLE_EQ(set.demand_bound(net.time_grid, 10), 0.10);
  EXPECT_DOUBLE_EQ(set.demand_bound(net.time_grid, 23), 0.10);
}

TEST(Uncertainty, SamplesStayInsideTheBoxAndDependOnlyOnTheSeed) {
  const Network net = build_benchmark16();
  const auto set = UncertaintySet::standard(net);
  const auto a = sample_realization(net, set, 42);
  const auto b = sample_realization(net, set, 42);
  const auto c = sample_realization(net, set, 43);
  EXPECT_EQ(a.demand_mult, b.demand_mult);
  EXPECT_EQ(a.pipe_decay, b.pipe_decay);
  EXPECT_NE(a.pipe_decay, c.pipe_decay);
  ASSERT_EQ(a.demand_mult.size(), net.demand_profiles.size());
  for (const auto& row : a.demand_mult) {
    ASSERT_EQ(row.size(), 24u);
    for (int h = 0; h < 24; ++h) {
      const double d = set.demand_bound(net.time_grid, h);
      EXPECT_GE(row[static_cast<std::size_t>(h)], 1.0 - d);
      EXPECT_LE(row[static_cast<std::size_t>(h)], 1.0 + d);
    }
  }
  for (std::size_t p = 0; p < net.pipes.size(); ++p) {
    EXPECT_GE(a.pipe_decay[p], set.decay_lo[p]);
    EXPECT_LE(a.pipe_decay[p], set.decay_hi[p]);
  }
}

TEST(Uncertainty, EnvelopeScenarioSetHasCornersNominalAndRandomVertices) {
  const Network net = build_two_path_toy();
  const auto set = UncertaintySet::standard(net);
  EnvelopeConfig cfg;
  cfg.n_random = 3;
  const auto sc = envelope_scenarios(net, set, cfg);
  ASSERT_EQ(sc.size(), 8u);
  EXPECT_DOUBLE_EQ(sc[0].demand_mult[0][0], 0.95);
  EXPECT_DOUBLE_EQ(sc[1].demand_mult[0][23], 1.10);
  EXPECT_DOUBLE_EQ(sc[2].pipe_decay[0], set.decay_hi[0]);
  EXPECT_DOUBLE_EQ(sc[3].pipe_decay[0], set.decay_lo[0]);
}

TEST(Uncertainty, EnvelopeBracketsEveryScenarioTrajectory) {
  const auto& p = testing::two_path();
  const Mat u = Mat::Constant(288, 2, 0.5);
  EnvelopeConfig cfg;
  const EnvelopePredictor pred(p.net, p.planned, p.set, cfg);
  const auto env = pred(p.init, u);
  for (const auto& y : pred.trajectories(p.init, u)) {
    EXPECT_TRUE((env.y_lo.array() <= y.array()).all());
    EXPECT_TRUE((env.y_hi.array() >= y.array()).all());
  }
  // The nominal trajectory is the plant without uncertainty.
  const auto nominal = simulate(p.net, p.planned, u, {}, p.init);
  EXPECT_TRUE((env.y_lo.array() <= nominal.y.array() + 1e-12).all());
  EXPECT_TRUE((env.y_hi.array() >= nominal.y.array() - 1e-12).all());
}

TEST(Uncertainty, ZeroSetCollapsesTheEnvelope) {
  const auto& p = testing::two_path();
  const auto zero = UncertaintySet::zero(p.net);
  const Mat u = Mat::Constant(288, 2, 0.5);
  const auto env = robust_envelope(p.net, p.planned, p.init, u, zero);
  const auto nominal = simulate(p.net, p.planned, u, {}, p.init);
  EXPECT_LE((env.y_hi - env.y_lo).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((env.y_lo - nominal.y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Uncertainty, LipschitzZonesAreConstantAndNonNegative) {
  const auto& p = testing::two_path();
  const Mat u = Mat::Constant(288, 2, 0.5);
  const auto est = estimate_lipschitz(p.net, p.planned, p.init, u, p.set);
  const Mat z = zones_from_lipschitz(p.net, est, p.set, 288);
  ASSERT_EQ(z.rows(), 288);
  ASSERT_EQ(z.cols(), 2);
  EXPECT_TRUE((z.array() > 0.0).all());
  EXPECT_EQ(z.row(0), z.row(287));
}

TEST(Uncertainty, MismatchedSetIsRejected) {
  const Network net = build_two_path_toy();
  auto set = UncertaintySet::standard(net);
  set.decay_lo.pop_back();
  EXPECT_THROW(envelope_scenarios(net, set, {}), Error);
}

}  // namespace
}  // namespace wdn

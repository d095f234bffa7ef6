#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "qp_oracle.hpp"
#include "wdn/rfmpc.hpp"

namespace wdn {
namespace {

// Independent evaluation of the MPC objective for a stacked plan.
double mpc_cost(const LtvResponseModel& m, const MpcTask& t, const Mat& u, const Vec& u_prev) {
  const Mat y = predict(m, u);
  double j = 0.0;
  for (int l = 0; l < u.rows(); ++l) {
    for (int b = 0; b < u.cols(); ++b) {
      const double prev = l == 0 ? u_prev[b] : u(l - 1, b);
      j += t.w_u * u(l, b) * u(l, b) + t.w_du * (u(l, b) - prev) * (u(l, b) - prev);
    }
    for (int i = 0; i < y.cols(); ++i) {
      const double e = y(l, i) - t.y_ref[static_cast<std::size_t>(i)];
      j += t.w_y * e * e;
    }
  }
  return j;
}

const LtvResponseModel& two_path_model(int horizon) {
  static std::map<int, LtvResponseModel> cache;
  auto it = cache.find(horizon);
  if (it == cache.end()) {
    const auto& p = testing::two_path();
    it = cache.emplace(horizon, extract(p.net, realize_hydraulics(p.net, p.planned, {}), p.init, horizon)).first;
  }
  return it->second;
}

TEST(Rfmpc, QuadraticProgramReproducesTheObjectiveUpToAConstant) {
  const auto& m = two_path_model(36);
  MpcTask t = testing::two_path().task;
  t.w_y = 3.0;
  const Vec u_prev = Eigen::Vector2d(0.4, 0.5);
  const auto qp = assemble_qp(m, t, SafetyZones::zero(36, 2), u_prev);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(0.0, 2.0);
  auto qp_obj = [&](const Mat& u) {
    const Eigen::Map<const Vec> x(u.data(), u.size());
    return 0.5 * x.dot(qp.q * x) + qp.f.dot(x);
  };
  Mat u1(36, 2), u2(36, 2);
  for (int l = 0; l < 36; ++l) for (int b = 0; b < 2; ++b) { u1(l, b) = d(rng); u2(l, b) = d(rng); }
  EXPECT_NEAR(qp_obj(u1) - qp_obj(u2), mpc_cost(m, t, u1, u_prev) - mpc_cost(m, t, u2, u_prev), 1e-8);
}

TEST(Rfmpc, OutputRowsEncodeTheTightenedBands) {
  const auto& m = two_path_model(36);
  const auto& t = testing::two_path().task;
  auto z = SafetyZones::zero(36, 2);
  z.lower.setConstant(0.02);
  z.upper.setConstant(0.05);
  const auto mq = assemble_mpc(m, TaskProfile::constant(t, 36), z, Eigen::Vector2d(0.4, 0.4));
  int checked = 0;
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 35; ++k) {
      if (!mq.controllable(i, k)) continue;
      const int r = mq.row_of[static_cast<std::size_t>(i * 36 + k)];
      EXPECT_NEAR(mq.qp.b_lo[r] + m.y_free(k, i), t.y_min[static_cast<std::size_t>(i)] + 0.02, 1e-12);
      EXPECT_NEAR(mq.qp.b[r] + m.y_free(k, i), t.y_max[static_cast<std::size_t>(i)] - 0.05, 1e-12);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(Rfmpc, RowsBeyondTheInputsReachAreDropped) {
  const auto& m = two_path_model(36);
  const auto mq = assemble_mpc(m, TaskProfile::constant(testing::two_path().task, 36), SafetyZones::zero(36, 2),
                               Eigen::Vector2d(0.4, 0.4));
  // Chlorine takes several steps to travel from a booster to its output.
  EXPECT_FALSE(mq.controllable(0, 0));
  EXPECT_FALSE(mq.controllable(1, 0));
  EXPECT_TRUE(mq.controllable(0, 35));
  EXPECT_LT(mq.n_output_rows, 72);
}

TEST(Rfmpc, SmallMpcMatchesTheEnumerationOracle) {
  const auto& m = two_path_model(3);
  MpcTask t = testing::two_path().task;
  t.w_y = 1.0;
  for (auto& v : t.y_min) v = -10.0;
  const auto qp = assemble_qp(m, t, SafetyZones::zero(3, 2), Eigen::Vector2d(0.4, 0.4));
  const auto oracle = testing::enumerate_qp(qp);
  ASSERT_TRUE(oracle);
  const auto r = qp::solve(qp, 1e-9, 50000);
  ASSERT_EQ(r.status, qp::QpStatus::optimal);
  EXPECT_LE((r.x - oracle->x).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Rfmpc, EmptyBandRaisesZonesExhaustBand) {
  const auto& m = two_path_model(12);
  auto z = SafetyZones::zero(12, 2);
  z.lower(3, 1) = 0.5;
  try {
    assemble_mpc(m, TaskProfile::constant(testing::two_path().task, 12), z, Eigen::Vector2d(0.4, 0.4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::zones_exhaust_band);
  }
}

TEST(Rfmpc, ZoneIterationOnTheBenchmarkConvergesMonotonically) {
  const auto& p = testing::benchmark();
  const auto& actual = testing::benchmark_actual();
  const auto model = extract(p.net, actual, p.init);
  const EnvelopePredictor pred(p.net, p.planned, p.set);
  const EnvelopeFn env = [&](const Mat& u) { return pred(p.init, u); };
  const auto prof = TaskProfile::constant(p.task, model.horizon);
  const Vec u_prev = Eigen::Vector2d(1.0, 1.0);
  const auto zr = iterate_safety_zones(model, prof, env, u_prev, SafetyZones::zero(model.horizon, 2), ZoneConfig{});
  ASSERT_EQ(zr.status, ZoneStatus::robustly_feasible) << zr.message;
  EXPECT_LE(zr.iterations, 30);
  for (std::size_t h = 1; h < zr.history.size(); ++h) {
    EXPECT_TRUE((zr.history[h].lower.array() >= zr.history[h - 1].lower.array()).all()) << h;
    EXPECT_TRUE((zr.history[h].upper.array() >= zr.history[h - 1].upper.array()).all()) << h;
  }
  // The envelope of the final plan sits inside the bounds on every row the
  // plan controls.
  const auto mq = assemble_mpc(model, prof, zr.zones, u_prev);
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < model.horizon; ++k) {
      if (!mq.controllable(i, k)) continue;
      EXPECT_GE(zr.envelope.y_lo(k, i), p.task.y_min[static_cast<std::size_t>(i)] - 1e-4);
      EXPECT_LE(zr.envelope.y_hi(k, i), p.task.y_max[static_cast<std::size_t>(i)] + 1e-4);
    }
  }
  const auto est = estimate_lipschitz(p.net, p.planned, p.init, zr.u, p.set);
  const Mat lip = zones_from_lipschitz(p.net, est, p.set, model.horizon);
  for (int i = 0; i < 2; ++i) {
    EXPECT_GE(lip(0, i), zr.zones.lower.col(i).maxCoeff());
    EXPECT_GE(lip(0, i), zr.zones.upper.col(i).maxCoeff());
  }
}

TEST(Rfmpc, ClosedLoopOnTwoPathStaysInBounds) {
  const auto& p = testing::two_path();
  const auto truth = sample_realization(p.net, p.set, 4);
  const auto log = run_receding_horizon(p.net, p.planned, p.task, p.set, truth, p.init, p.loop, p.tariff);
  ASSERT_EQ(log.steps(), 288);
  EXPECT_EQ(log.cycles.size(), 24u);
  const auto m = metrics(log);
  EXPECT_EQ(m.violation_count, 0);
  EXPECT_EQ(m.degraded_cycles, 0);
  for (int k = 1; k < 288; ++k) {
    for (int b = 0; b < 2; ++b) EXPECT_LE(std::abs(log.u(k, b) - log.u(k - 1, b)), p.task.rate_max[static_cast<std::size_t>(b)] + 1e-6);
  }
  EXPECT_NEAR(injection_between(log, 2, 0, 288), m.injection_mass[0], 1e-9);
  std::ostringstream csv;
  write_controller_csv(csv, log);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 289);
}

TEST(Rfmpc, InfeasibleCycleHoldsThePreviousSetpoints) {
  const auto& m = two_path_model(36);
  // The terminal rows are within reach at this horizon, but the rate limit
  // cannot lift either output to the terminal target.
  MpcTask t = testing::two_path().task;
  t.y_terminal = {0.59, 0.59};
  t.terminal_tol = {0.0, 0.0};
  t.rate_max = {1e-4, 1e-4};
  const EnvelopeFn env = [&](const Mat& u) {
    const Mat y = predict(m, u);
    return Envelope{y, y};
  };
  ControllerMemory mem;
  const auto out = rfmpc_plan(m, TaskProfile::constant(t, 36), env, Eigen::Vector2d(0.4, 0.4), mem, ClosedLoopOptions{});
  EXPECT_TRUE(out.degraded);
  EXPECT_EQ(out.u, Mat::Constant(36, 2, 0.4));
}

TEST(Rfmpc, TaskCheckNamesTheBrokenField) {
  MpcTask t = testing::two_path().task;
  t.rate_max[0] = 0.0;
  try {
    t.check(2, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rate"), std::string::npos);
  }
  EXPECT_THROW(t.check(3, 2), Error);
}

}  // namespace
}  // namespace wdn

#include <gtest/gtest.h>

#include <random>

#include "qp_oracle.hpp"
#include "wdn/qp.hpp"

namespace wdn {
namespace {

using qp::kInf;
using qp::QpStatus;

TEST(Qp, UnconstrainedMinimumIsTheNewtonStep) {
  const auto p = qp::QpProblem::unconstrained(Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Constant(1, -2.0));
  const auto r = qp::solve(p);
  ASSERT_EQ(r.status, QpStatus::optimal);
  EXPECT_NEAR(r.x[0], 1.0, 1e-8);
  EXPECT_NEAR(r.objective, -1.0, 1e-8);
}

TEST(Qp, ActiveBoundGivesProjectedMinimum) {
  auto p = qp::QpProblem::unconstrained(Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1));
  p.lb[0] = 2.0;
  const auto r = qp::solve(p);
  ASSERT_EQ(r.status, QpStatus::optimal);
  EXPECT_NEAR(r.x[0], 2.0, 1e-8);
  EXPECT_NEAR(r.y_bounds[0], -4.0, 1e-5);
}

TEST(Qp, MatchesExhaustiveActiveSetOracleOnRandomProblems) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 60; ++t) {
    const int n = 2 + t % 2, m = 2 + t % 3;
    const auto p = testing::random_qp(rng, n, m);
    const auto oracle = testing::enumerate_qp(p);
    ASSERT_TRUE(oracle.has_value()) << "problem " << t;
    const auto r = qp::solve(p, 1e-9, 50000);
    ASSERT_EQ(r.status, QpStatus::optimal) << "problem " << t;
    EXPECT_LE((r.x - oracle->x).cwiseAbs().maxCoeff(), 1e-5) << "problem " << t;
    EXPECT_NEAR(r.objective, oracle->objective, 1e-6) << "problem " << t;
  }
}

TEST(Qp, DetectsInfeasibleProblems) {
  for (const auto& p : testing::infeasible_qps()) {
    EXPECT_FALSE(testing::enumerate_qp(p).has_value());
    EXPECT_EQ(qp::solve(p).status, QpStatus::infeasible);
    EXPECT_FALSE(qp::check_feasible(p.a, p.b_lo, p.b, p.lb, p.ub).feasible);
  }
}

TEST(Qp, FeasibilityCheckReturnsAWitness) {
  Eigen::MatrixXd a(1, 2);
  a << 1.0, 1.0;
  const auto fr = qp::check_feasible(a, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.5),
                                     Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 1.0));
  ASSERT_TRUE(fr.feasible);
  const double s = fr.witness.sum();
  EXPECT_GE(s, 1.0 - 1e-6);
  EXPECT_LE(s, 1.5 + 1e-6);
}

TEST(Qp, WarmSolverTracksChangedBounds) {
  std::mt19937_64 rng(7);
  auto p = testing::random_qp(rng, 3, 3);
  qp::QpSettings s;
  s.tol = 1e-9;
  s.max_iter = 50000;
  qp::QpSolver solver(p, s);
  ASSERT_EQ(solver.solve(p).status, QpStatus::optimal);
  p.lb.array() -= 0.05;
  p.ub.array() += 0.02;
  const auto r = solver.solve(p);
  const auto oracle = testing::enumerate_qp(p);
  ASSERT_TRUE(oracle);
  ASSERT_EQ(r.status, QpStatus::optimal);
  EXPECT_LE((r.x - oracle->x).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Qp, DimensionMismatchIsReported) {
  auto p = qp::QpProblem::unconstrained(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
  p.lb.resize(3);
  try {
    qp::solve(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

TEST(Qp, FailedRowsNameTheInfeasibleBlock) {
  // Two independent blocks: x0 is fine, x1 is squeezed between 1 and 0.
  auto p = qp::QpProblem::unconstrained(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
  p.a = Eigen::MatrixXd::Zero(3, 2);
  p.a(0, 0) = 1.0;
  p.a(1, 1) = 1.0;
  p.a(2, 1) = 1.0;
  p.b_lo = Eigen::Vector3d(-1.0, 1.0, -kInf);
  p.b = Eigen::Vector3d(1.0, kInf, 0.0);
  const auto r = qp::solve(p);
  EXPECT_NE(r.status, QpStatus::optimal);
  EXPECT_EQ(r.failed_rows, (std::vector<int>{1, 2}));
}

}  // namespace
}  // namespace wdn

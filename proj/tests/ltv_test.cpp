#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "fixtures.hpp"
#include "wdn/ltv.hpp"

namespace wdn {
namespace {

Mat random_inputs(std::mt19937_64& rng, int rows, int cols, double hi) {
  std::uniform_real_distribution<double> u(0.0, hi);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

TEST(Ltv, PredictionMatchesThePlantFromTheDayStart) {
  const auto& p = testing::benchmark();
  const auto& actual = testing::benchmark_actual();
  const auto model = extract(p.net, actual, p.init);
  ASSERT_EQ(model.horizon, 288);
  std::mt19937_64 rng(11);
  for (int t = 0; t < 3; ++t) {
    const Mat u = random_inputs(rng, 288, 2, 4.0);
    const auto tr = simulate_realized(p.net, actual, u, {}, p.init);
    EXPECT_LE((tr.y - predict(model, u)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Ltv, PredictionMatchesThePlantFromAMidDayState) {
  const auto& p = testing::benchmark();
  const auto& actual = testing::benchmark_actual();
  const auto mid = simulate_realized(p.net, actual, Mat::Constant(100, 2, 1.0), {}, p.init).final_state;
  ASSERT_EQ(mid.step, 100);
  const auto model = extract(p.net, actual, mid, 60);
  EXPECT_EQ(model.first_step, 100);
  std::mt19937_64 rng(12);
  const Mat u = random_inputs(rng, 60, 2, 4.0);
  const auto tr = simulate_realized(p.net, actual, u, {}, mid);
  EXPECT_LE((tr.y - predict(model, u)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Ltv, GainsAreCausal) {
  const auto& p = testing::two_path();
  const auto model = extract(p.net, realize_hydraulics(p.net, p.planned, {}), p.init, 48);
  const int H = model.horizon;
  for (int i = 0; i < model.n_out; ++i) {
    for (int j = 0; j < model.n_in; ++j) {
      const Mat block = model.gains.block(i * H, j * H, H, H);
      EXPECT_EQ(block.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(Ltv, SavedModelLoadsBackExactly) {
  const auto& p = testing::two_path();
  const auto model = extract(p.net, realize_hydraulics(p.net, p.planned, {}), p.init, 24);
  const auto path = (std::filesystem::temp_directory_path() / "wdn_ltv_roundtrip.txt").string();
  save_model(model, path);
  EXPECT_TRUE(load_model(path) == model);
  std::remove(path.c_str());
}

TEST(Ltv, WrongInputShapeIsRejected) {
  const auto& p = testing::two_path();
  const auto model = extract(p.net, realize_hydraulics(p.net, p.planned, {}), p.init, 24);
  try {
    predict(model, Mat::Zero(23, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

}  // namespace
}  // namespace wdn

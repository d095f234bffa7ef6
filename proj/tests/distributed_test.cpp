#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "wdn/distributed.hpp"

namespace wdn {
namespace {

const LtvResponseModel& benchmark_model() {
  static const LtvResponseModel m = extract(testing::benchmark().net, testing::benchmark_actual(), testing::benchmark().init, 48);
  return m;
}

const LtvResponseModel& two_path_model() {
  static const LtvResponseModel m = [] {
    const auto& p = testing::two_path();
    return extract(p.net, realize_hydraulics(p.net, p.planned, {}), p.init, 48);
  }();
  return m;
}

Mat random_plan(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

void expect_code(const std::function<void()>& f, ErrorCode code, const std::string& needle) {
  try {
    f();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code);
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(Partition, RejectsOverlapsGapsAndUnknownElements) {
  const Network net = build_benchmark16();
  EXPECT_NO_THROW(ZonePartition::benchmark_default().check(net));
  expect_code([&] { ZonePartition{{{{5, 10}, {16}}, {{10}, {8}}}}.check(net); }, ErrorCode::invalid_partition, "owned twice");
  expect_code([&] { ZonePartition{{{{5}, {16, 8}}}}.check(net); }, ErrorCode::invalid_partition, "booster 10 belongs to no zone");
  expect_code([&] { ZonePartition{{{{5}, {16}}, {{10}, {9}}}}.check(net); }, ErrorCode::invalid_partition, "unknown monitored output 9");
  expect_code([&] { ZonePartition{{{{5, 10}, {16, 8}}, {{}, {}}}}.check(net); }, ErrorCode::invalid_partition, "owns no booster");
  expect_code([&] { ZonePartition{}.check(net); }, ErrorCode::invalid_partition, "no zones");
}

TEST(Decompose, ReassemblyReproducesTheCentralModelExactly) {
  const auto& m = benchmark_model();
  const auto agents = decompose(m, testing::benchmark().net, ZonePartition::benchmark_default());
  ASSERT_EQ(agents.size(), 2u);
  EXPECT_TRUE(reassemble(agents, m.n_in, m.n_out) == m);
}

TEST(Decompose, CrossCouplingVanishesOnlyOnDecoupledNetworks) {
  const auto tp = decompose(two_path_model(), testing::two_path().net, ZonePartition::pairwise(testing::two_path().net));
  for (const auto& a : tp) EXPECT_EQ(a.cross.cwiseAbs().maxCoeff(), 0.0);
  const auto bm = decompose(benchmark_model(), testing::benchmark().net, ZonePartition::benchmark_default());
  double most = 0.0;
  for (const auto& a : bm) most = std::max(most, a.cross.cwiseAbs().maxCoeff());
  EXPECT_GT(most, 0.0);
}

TEST(Decompose, InteractionEqualsTheCentralModelsContributionOfTheOtherInputs) {
  const auto& m = benchmark_model();
  const auto agents = decompose(m, testing::benchmark().net, ZonePartition::benchmark_default());
  std::mt19937_64 rng(3);
  const Mat u = random_plan(rng, 48, 2);
  for (const auto& a : agents) {
    Mat others_only = Mat::Zero(48, 2);
    for (int j : a.others) others_only.col(j) = u.col(j);
    const Mat central = predict(m, others_only) - m.y_free;
    const Mat inter = a.interaction(u);
    for (std::size_t i = 0; i < a.outputs.size(); ++i) {
      EXPECT_LE((inter.col(static_cast<Eigen::Index>(i)) - central.col(a.outputs[i])).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Mailbox, KeepsOnlyTheLatestPlanPerAgent) {
  Mailbox box(2);
  EXPECT_EQ(box.latest(0), nullptr);
  box.publish({0, 0, Mat::Constant(4, 1, 1.0)});
  box.publish({0, 12, Mat::Constant(4, 1, 2.0)});
  ASSERT_NE(box.latest(0), nullptr);
  EXPECT_EQ(box.latest(0)->issue_step, 12);
  EXPECT_EQ(box.latest(0)->u(0, 0), 2.0);
  EXPECT_EQ(box.latest(1), nullptr);
  EXPECT_EQ(box.latest(5), nullptr);
  EXPECT_THROW(box.publish({2, 0, Mat()}), Error);
}

TEST(Mailbox, ReceivedPlansAreShiftedAndHeld) {
  const auto& m = benchmark_model();
  const auto agents = decompose(m, testing::benchmark().net, ZonePartition::benchmark_default());
  Mailbox box(2);
  Mat plan(6, 1);
  plan << 1, 2, 3, 4, 5, 6;
  box.publish({1, 10, plan});
  const Mat r = received_inputs(box, agents, 0, 14, 4, 2);
  const int col = agents[1].inputs.front();
  EXPECT_EQ(r.col(col), Eigen::Vector4d(5, 6, 6, 6));
  EXPECT_EQ(r.col(agents[0].inputs.front()), Eigen::Vector4d::Zero());
}

TEST(Mailbox, NewPlanChangesTheFoldedFreeResponseByTheCrossGain) {
  const auto& m = benchmark_model();
  const auto agents = decompose(m, testing::benchmark().net, ZonePartition::benchmark_default());
  std::mt19937_64 rng(8);
  Mailbox box(2);
  const Mat p1 = random_plan(rng, 48, 1), p2 = random_plan(rng, 48, 1);
  box.publish({1, 0, p1});
  const Mat y1 = agents[0].own.y_free + agents[0].interaction(received_inputs(box, agents, 0, 0, 48, 2));
  box.publish({1, 0, p2});
  const Mat y2 = agents[0].own.y_free + agents[0].interaction(received_inputs(box, agents, 0, 0, 48, 2));
  const Eigen::VectorXd delta = agents[0].cross * (p2 - p1).col(0);
  EXPECT_LE((y2.col(0) - y1.col(0) - delta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Trace, PlanHashIsStableAndSensitive) {
  Mat a = Mat::Constant(3, 2, 0.5);
  const auto h = plan_hash(a);
  EXPECT_EQ(h, plan_hash(Mat::Constant(3, 2, 0.5)));
  a(2, 1) = std::nextafter(0.5, 1.0);
  EXPECT_NE(h, plan_hash(a));
  EXPECT_EQ(hex(0xabcULL), "0000000000000abc");
  std::ostringstream os;
  write_trace(os, {{12, 1, 0xabcULL}});
  EXPECT_EQ(os.str(), "{\"step\":12,\"from\":1,\"plan_hash\":\"0000000000000abc\"}\n");
}

TEST(Drfmpc, DecoupledZonesReproduceTheCentralizedRunExactly) {
  const auto& p = testing::two_path();
  const auto truth = sample_realization(p.net, p.set, 7);
  const auto central = run_receding_horizon(p.net, p.planned, p.task, p.set, truth, p.init, p.loop, p.tariff);
  DistributedOptions opt;
  opt.loop = p.loop;
  const auto dist = run_drfmpc(p.net, p.planned, p.task, ZonePartition::pairwise(p.net), p.set, truth, p.init, p.tariff, opt);
  EXPECT_EQ(central.y, dist.log.y);
  EXPECT_EQ(central.u, dist.log.u);
  EXPECT_EQ(central.sigma_l, dist.log.sigma_l);
  EXPECT_EQ(central.sigma_u, dist.log.sigma_u);
  EXPECT_EQ(central.zone_iters, dist.log.zone_iters);
  // Every cycle each agent sends exactly one plan.
  EXPECT_EQ(dist.trace.size(), 2 * dist.log.cycles.size());
  for (std::size_t c = 0; c < dist.log.cycles.size(); ++c) {
    EXPECT_EQ(dist.trace[2 * c].step, dist.log.cycles[c].step);
    EXPECT_EQ(dist.trace[2 * c].from, 0);
    EXPECT_EQ(dist.trace[2 * c + 1].from, 1);
  }
  EXPECT_EQ(dist.log.agent_boosters, (std::vector<std::vector<int>>{{2}, {5}}));
}

TEST(Drfmpc, ResultDoesNotDependOnAgentScheduling) {
  const auto& p = testing::benchmark();
  const auto truth = sample_realization(p.net, p.set, 2);
  DistributedOptions seq, conc;
  seq.loop = conc.loop = p.loop;
  seq.concurrent = false;
  const auto a = run_drfmpc(p.net, p.planned, p.task, ZonePartition::benchmark_default(), p.set, truth, p.init, p.tariff, seq);
  const auto b = run_drfmpc(p.net, p.planned, p.task, ZonePartition::benchmark_default(), p.set, truth, p.init, p.tariff, conc);
  EXPECT_EQ(a.log.u, b.log.u);
  EXPECT_EQ(a.log.y, b.log.y);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].hash, b.trace[i].hash);
}

}  // namespace
}  // namespace wdn

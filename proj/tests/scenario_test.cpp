#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "wdn/scenario.hpp"

namespace wdn {
namespace {

std::string error_of(const std::string& text) {
  try {
    parse_scenario_text(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_error);
    return e.what();
  }
  ADD_FAILURE() << "scenario was accepted";
  return {};
}

TEST(Scenario, ShippedScenariosRoundTripThroughJson) {
  for (const auto& s : {benchmark16_scenario(), burst_scenario(), two_path_scenario()}) {
    const std::string text = dump_scenario(s);
    const Scenario back = parse_scenario_text(text);
    EXPECT_TRUE(back == s) << s.name;
    EXPECT_EQ(dump_scenario(back), text) << s.name;
  }
}

TEST(Scenario, ShippedDataFilesMatchTheBuiltInScenarios) {
  const std::filesystem::path data = std::filesystem::path(WDN_SOURCE_DIR) / "data";
  EXPECT_TRUE(load_scenario((data / "benchmark16.json").string()) == benchmark16_scenario());
  EXPECT_TRUE(load_scenario((data / "burst.json").string()) == burst_scenario());
  EXPECT_TRUE(load_scenario((data / "two_path.json").string()) == two_path_scenario());
}

TEST(Scenario, MalformedJsonReportsLineAndColumn) {
  const auto msg = error_of("{\n  \"schema_version\": 1,\n  oops }");
  EXPECT_NE(msg.find("malformed scenario"), std::string::npos);
  EXPECT_NE(msg.find("line 3"), std::string::npos);
}

TEST(Scenario, UnknownKeysAndWrongTypesNameTheirPath) {
  auto j = nlohmann::json::parse(dump_scenario(two_path_scenario()));
  j["pipes"][3]["colour"] = "red";
  EXPECT_EQ(error_of(j.dump()), "unknown key 'colour' in pipes[3]");
  j = nlohmann::json::parse(dump_scenario(two_path_scenario()));
  j["pipes"][3]["volume"] = "x";
  EXPECT_EQ(error_of(j.dump()), "pipes[3].volume: wrong value type (string)");
}

TEST(Scenario, MissingRequiredSectionIsNamed) {
  auto j = nlohmann::json::parse(dump_scenario(two_path_scenario()));
  j.erase("pipes");
  EXPECT_NE(error_of(j.dump()).find("pipes"), std::string::npos);
}

TEST(Scenario, UnsupportedSchemaVersionIsRejected) {
  auto j = nlohmann::json::parse(dump_scenario(two_path_scenario()));
  j["schema_version"] = 99;
  EXPECT_NE(error_of(j.dump()).find("schema_version"), std::string::npos);
}

TEST(Scenario, TariffIsOptionalExceptForTheHierarchy) {
  auto j = nlohmann::json::parse(dump_scenario(two_path_scenario()));
  j.erase("tariff");
  const Scenario s = parse_scenario_text(j.dump());
  EXPECT_FALSE(s.tariff.has_value());
  EXPECT_EQ(s.tariff_or_default(), Tariff::two_level());
  try {
    s.require_tariff("hierarchy mode");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "scenario: hierarchy mode needs the 'tariff' section");
  }
}

TEST(Scenario, PrepareBuildsAWarmStartAtTheInitialSetpoints) {
  const auto p = prepare(two_path_scenario());
  EXPECT_EQ(p.loop.u_init, (std::vector<double>{0.4, 0.4}));
  EXPECT_EQ(p.init.step, 0);
  EXPECT_EQ(p.planned.steps(), 24);
  EXPECT_EQ(p.task, MpcTask::from_network(p.net));
}

TEST(Scenario, PrepareRejectsAnInvalidNetwork) {
  Scenario s = two_path_scenario();
  s.network.pipes.front().volume = -1.0;
  EXPECT_THROW(prepare(s), Error);
  s = two_path_scenario();
  s.controller.loop.u_init = {0.4};
  try {
    prepare(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

TEST(Scenario, LoadingAMissingFileIsAnIoError) {
  try {
    load_scenario("/nonexistent/scenario.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io_error);
  }
}

}  // namespace
}  // namespace wdn

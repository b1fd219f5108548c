#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "kite/scenario_io.hpp"

using namespace kite;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json flight1_doc() {
  std::ifstream in(KITE_SCENARIO_DIR "/flight1.json");
  return json::parse(in);
}

std::string schema_field(const json& doc) {
  try {
    parse_scenario(doc);
  } catch (const SchemaError& e) {
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST(Scenario, BundledFilesLoad) {
  const ScenarioConfig f1 = load_scenario(KITE_SCENARIO_DIR "/flight1.json");
  EXPECT_EQ(f1.name, "flight1");
  EXPECT_EQ(f1.duration, 15.0);
  EXPECT_EQ(f1.wind(3.0), 4.5);
  EXPECT_EQ(f1.line(3.0), 90.0);
  const ScenarioConfig f2 = load_scenario(KITE_SCENARIO_DIR "/flight2.json");
  EXPECT_EQ(f2.duration, 180.0);
  EXPECT_EQ(f2.line(0.0), 79.0);
  EXPECT_EQ(f2.line(180.0), 100.0);
  double wmin = 1e9, wmax = 0.0;
  for (double t = 0.0; t <= 180.0; t += 0.5) {
    wmin = std::min(wmin, f2.wind(t));
    wmax = std::max(wmax, f2.wind(t));
  }
  EXPECT_EQ(wmin, 2.7);
  EXPECT_EQ(wmax, 6.6);
}

TEST(Scenario, JsonRoundTrip) {
  const ScenarioConfig a = load_scenario(KITE_SCENARIO_DIR "/flight2.json");
  const json ja = scenario_to_json(a);
  const json jb = scenario_to_json(parse_scenario(ja));
  EXPECT_EQ(ja.dump(), jb.dump());
}

TEST(Scenario, SchemaErrorsNameTheField) {
  json doc = flight1_doc();
  doc["duration"] = "long";
  EXPECT_EQ(schema_field(doc), "duration");
  doc = flight1_doc();
  doc["coupling"]["c_Q"] = 1.0;
  EXPECT_EQ(schema_field(doc), "coupling.c_Q");
  doc = flight1_doc();
  doc["wind"] = json::array({json::array({0.0, 4.5}), json::array({1.0})});
  EXPECT_EQ(schema_field(doc).rfind("wind", 0), 0u);
  doc = flight1_doc();
  doc["estimator"]["scheme"] = "backward";
  EXPECT_EQ(schema_field(doc), "estimator.scheme");
  doc = flight1_doc();
  doc["mpc"] = {{"Q", json::array({1.0, 2.0, 3.0})}};
  EXPECT_EQ(schema_field(doc), "mpc.Q");
}

TEST(Scenario, OverridesApplyBeforeValidation) {
  json doc = flight1_doc();
  apply_override(doc, "noise.sigma_theta=0");
  apply_override(doc, "mpc.horizon=20");
  apply_override(doc, "name=renamed");
  const ScenarioConfig sc = parse_scenario(doc);
  EXPECT_EQ(sc.sigma_theta, 0.0);
  EXPECT_EQ(sc.mpc.horizon, 20);
  EXPECT_EQ(sc.name, "renamed");
  apply_override(doc, "path.amplitud=2");
  EXPECT_EQ(schema_field(doc), "path.amplitud");
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), Error);
}

TEST(LogCsv, RoundTripIsByteIdentical) {
  ScenarioConfig sc = load_scenario(KITE_SCENARIO_DIR "/flight1.json");
  sc.duration = 3.0;
  const SimLog log = run_closed_loop(sc);
  std::ostringstream first;
  write_log_csv(first, log);
  std::istringstream in(first.str());
  const SimLog back = read_log_csv(in);
  ASSERT_EQ(back.records.size(), log.records.size());
  std::ostringstream second;
  write_log_csv(second, back);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(first.str().substr(0, first.str().find('\n')).find("t,"), 0u);
}

TEST(LogCsv, MalformedInputRejected) {
  std::istringstream empty("");
  EXPECT_THROW(read_log_csv(empty), SchemaError);
  std::istringstream header("time,theta\n0,1\n");
  EXPECT_THROW(read_log_csv(header), SchemaError);

  ScenarioConfig sc = load_scenario(KITE_SCENARIO_DIR "/flight1.json");
  sc.duration = 0.5;
  std::ostringstream os;
  write_log_csv(os, run_closed_loop(sc));
  std::string text = os.str();
  const auto second_line = text.find('\n') + 1;
  text.replace(second_line, 1, "x");
  std::istringstream bad(text);
  try {
    read_log_csv(bad);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.field(), log_columns().front());
  }
}

TEST(PlotFiles, FourSeriesWritten) {
  ScenarioConfig sc = load_scenario(KITE_SCENARIO_DIR "/flight1.json");
  sc.duration = 1.0;
  const SimLog log = run_closed_loop(sc);
  const fs::path dir = fs::temp_directory_path() / "kite_plot_test";
  fs::remove_all(dir);
  const auto files = write_plot_files(dir, log);
  ASSERT_EQ(files.size(), 4u);
  for (const auto& f : files) {
    EXPECT_TRUE(fs::exists(f));
    EXPECT_GT(fs::file_size(f), 0u);
  }
  fs::remove_all(dir);
}

TEST(FormatNumber, ShortestExactText) {
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
}

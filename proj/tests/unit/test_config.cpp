#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "aismerge/config.hpp"

using namespace aismerge;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / ("aismerge_cfg_" + name);
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST(RunConfig, DefaultsArePublishedParameters) {
  const RunConfig c;
  const ScenarioConfig& s = c.scenario;
  EXPECT_EQ(s.dt, 0.2);
  EXPECT_EQ(s.H, 10);
  EXPECT_EQ(s.v_min, 0.0);
  EXPECT_EQ(s.v_max, 14.0);
  EXPECT_EQ(s.u_min, -3.0);
  EXPECT_EQ(s.u_max, 2.0);
  EXPECT_EQ(s.w1, 1.0);
  EXPECT_EQ(s.w2, 10.0);
  EXPECT_EQ(s.w3, 1000.0);
  EXPECT_EQ(s.rho, 1.0);
  EXPECT_EQ(s.L_c, 70.0);
  EXPECT_EQ(s.z_c, 70.0);
  EXPECT_EQ(c.train.epochs, 100);
  EXPECT_EQ(c.episodes, 2000u);
  EXPECT_EQ(c.evaluation.j_max, 3);
  EXPECT_EQ(c.evaluation.rho, (std::vector<double>{0.6, 0.8, 1.0}));
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  const RunConfig c = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(to_json(c), to_json(RunConfig{}));
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.seed = 42;
  c.scenario.rho = 0.8;
  c.train.learning_rate = 5e-4;
  c.evaluation.rho = {0.5, 1.5};
  c.aggressive.theta_prox = 0.25;
  c.style.lookahead = {3, 7};
  c.paths.out_dir = "runs";
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(RunConfig, PartialOverrides) {
  const RunConfig c = run_config_from_json(nlohmann::json::parse(
      R"({"scenario": {"H": 6, "rho": 0.6}, "presets": {"conservative": {"theta_prox": 9}}})"));
  EXPECT_EQ(c.scenario.H, 6);
  EXPECT_EQ(c.train.H, 6);
  EXPECT_EQ(c.scenario.rho, 0.6);
  EXPECT_EQ(c.conservative.theta_prox, 9.0);
  EXPECT_EQ(c.conservative.v_des, conservative_preset(c.scenario).weights.v_des);
  EXPECT_EQ(c.preset("conservative").weights, c.conservative);
}

TEST(RunConfig, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": 0}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"scenario": {"dt": -0.1}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"scenario": {"H": 5}, "train": {"H": 7}})")),
               ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"evaluation": {"rho": []}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"seed": "seven"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"style_range": {"v_des": [1]}})")), ConfigError);
  EXPECT_THROW(RunConfig{}.preset("reckless"), ConfigError);
}

TEST(RunConfig, LoadFromFile) {
  const std::string good = write_temp("good.json", R"({"seed": 3})");
  EXPECT_EQ(load_run_config(good).seed, 3u);
  const std::string bad = write_temp("bad.json", "{\"seed\": ");
  EXPECT_THROW(load_run_config(bad), ConfigError);
  EXPECT_THROW(load_run_config(good + ".missing"), IoError);
  std::remove(good.c_str());
  std::remove(bad.c_str());
}

TEST(ConfigHash, IgnoresPathsOnly) {
  RunConfig a, b;
  b.paths.out_dir = "/elsewhere";
  b.paths.model = "m.json";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 8;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  const RunConfig c = load_run_config(AISMERGE_DEFAULT_CONFIG);
  EXPECT_EQ(config_hash(c), config_hash(RunConfig{}));
}

#include <gtest/gtest.h>

#include "magnet/run_config.hpp"
#include "test_util.hpp"

namespace magnet {
namespace {

TEST(RunConfig, EmptyDocumentIsDefaults) {
  const RunConfig c = run_config_from_json("{}");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.model, ModelConfig{});
  EXPECT_EQ(c.paths.run_dir, "run");
}

TEST(RunConfig, TopLevelSeedReachesEveryConsumer) {
  const RunConfig c = run_config_from_json(R"({"seed": 7})");
  EXPECT_EQ(c.data.synth.seed, 7u);
  EXPECT_EQ(c.model.seed, 7u);
  EXPECT_EQ(c.train.seed, 7u);
  RunConfig d = c;
  d.set_seed(9);
  EXPECT_EQ(d.model.seed, 9u);
  EXPECT_EQ(d.train.seed, 9u);
}

TEST(RunConfig, RejectsNestedSeeds) {
  EXPECT_THROW(run_config_from_json(R"({"model": {"seed": 1}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"train": {"seed": 1}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"data": {"seed": 1}})"), ConfigError);
}

TEST(RunConfig, RejectsUnknownKeysEverywhere) {
  EXPECT_THROW(run_config_from_json(R"({"sed": 1})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"paths": {"out": "x"}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"data": {"split": {"holdout": 0.1}}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"strategy": {"n": 3}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"model": {"layers": 3}})"), ConfigError);
}

TEST(RunConfig, RejectsInvalidValues) {
  EXPECT_THROW(run_config_from_json("not json"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"seed": "x"})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"strategy": {"p": 0}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"data": {"normalization": "global"}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"data": {"split": {"train": 0.9}}})"), std::invalid_argument);
  EXPECT_THROW(run_config_from_json(R"({"data": {"stocks": 6}})"), ConfigError);  // model still expects 8
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = run_config_from_json(R"({"seed": 5, "data": {"normalization": "stock_feature"},
                                         "strategy": {"p": 0.3}, "train": {"max_epochs": 4}})");
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.data.pooling, NormalizationPooling::kStockFeature);
  EXPECT_EQ(back.strategy.p, 0.3);
  EXPECT_EQ(back.train.max_epochs, 4u);
  EXPECT_EQ(back.seed, 5u);
}

TEST(RunConfig, ShippedToyConfigLoads) {
  const RunConfig c = load_run_config(MAGNET_CONFIG_DIR "/toy.json");
  EXPECT_EQ(c.model.stocks, 8u);
  EXPECT_EQ(c.data.synth.days, 400u);
  EXPECT_EQ(c.train.max_epochs, 30u);
  EXPECT_EQ(c.checkpoint(), std::filesystem::path("run") / "model.ckpt");
  EXPECT_EQ(c.manifest(), std::filesystem::path("data") / "panel.manifest.json");
}

TEST(RunConfig, MissingFileIsConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/magnet.json"), ConfigError);
}

}  // namespace
}  // namespace magnet

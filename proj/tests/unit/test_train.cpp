#include <gtest/gtest.h>

#include <cmath>

#include "magnet/train.hpp"
#include "test_util.hpp"

namespace magnet {
namespace {

using testing::small_splits;

ModelConfig small_model() { return testing::small_model_config(); }

TrainConfig small_train(std::size_t epochs) {
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = epochs;
  tc.patience = epochs;
  return tc;
}

TEST(AdamW, SingleStepByHand) {
  ParamStore params;
  params.add("w", Tensor::vector({1.0, -2.0}));
  TrainConfig tc;
  tc.learning_rate = 0.1;
  AdamW opt(tc, params);
  opt.step(params, {Tensor::vector({0.5, 0.0})});
  // After one step the bias-corrected moments are g and g^2.
  const double expected0 = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
  const double expected1 = -2.0 - 0.1 * (0.0 + 0.01 * -2.0);
  EXPECT_NEAR(params.get("w")[0], expected0, 1e-15);
  EXPECT_NEAR(params.get("w")[1], expected1, 1e-15);
  EXPECT_EQ(opt.steps(), 1u);
  EXPECT_NEAR(opt.first_moment().get("w")[0], 0.05, 1e-15);
  EXPECT_NEAR(opt.second_moment().get("w")[0], 0.001 * 0.25, 1e-15);
}

TEST(AdamW, RejectsMismatchedGradients) {
  ParamStore params;
  params.add("w", Tensor::vector({1.0, 2.0}));
  AdamW opt(TrainConfig{}, params);
  EXPECT_THROW(opt.step(params, {}), std::invalid_argument);
  EXPECT_THROW(opt.step(params, {Tensor::vector({1.0})}), std::invalid_argument);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig tc;
  tc.learning_rate = 0.0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.patience = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = small_train(3);
  EXPECT_EQ(train_config_from_json(to_json(tc)), tc);
  EXPECT_THROW(train_config_from_json(R"({"lr": 0.1})"), ConfigError);
}

TEST(Train, RunsAreBitwiseIdentical) {
  const PanelSplits s = small_splits();
  const TrainState a = train(small_model(), small_train(2), s.train, s.val);
  const TrainState b = train(small_model(), small_train(2), s.train, s.val);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.adam_m, b.adam_m);
  ASSERT_EQ(a.history.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_accuracy, b.history[i].val_accuracy);
  }
}

TEST(Train, OneStepPerWindow) {
  const PanelSplits s = small_splits();
  const TrainState st = train(small_model(), small_train(2), s.train, s.val);
  EXPECT_EQ(st.optimizer_steps, 2 * window_ends(s.train, 4).size());
  EXPECT_TRUE(st.finished);
}

TEST(Train, SeedChangesTrajectory) {
  const PanelSplits s = small_splits();
  TrainConfig other = small_train(1);
  other.seed = 43;
  EXPECT_NE(train(small_model(), small_train(1), s.train, s.val).params,
            train(small_model(), other, s.train, s.val).params);
}

TEST(Train, EarlyStoppingHonoursPatience) {
  const PanelSplits s = small_splits();
  TrainConfig tc = small_train(20);
  tc.patience = 1;
  const TrainState st = train(small_model(), tc, s.train, s.val);
  EXPECT_TRUE(st.finished);
  // Stops at the first epoch that fails to improve on the best.
  EXPECT_EQ(st.history.size(), std::min<std::size_t>(st.best_epoch + 1, 20));
  for (std::size_t i = 1; i + 1 < st.history.size(); ++i)
    EXPECT_GT(st.history[i].val_accuracy, st.history[i - 1].val_accuracy);
}

TEST(Train, BestParamsTrackBestEpoch) {
  const PanelSplits s = small_splits();
  const TrainState st = train(small_model(), small_train(3), s.train, s.val);
  double best = -1.0;
  for (const EpochRecord& r : st.history) best = std::max(best, r.val_accuracy);
  EXPECT_EQ(st.best_val_accuracy, best);
  EXPECT_EQ(evaluate(st.model, st.best_params, s.val).accuracy, best);
}

TEST(Train, CallbackRunsEveryEpoch) {
  const PanelSplits s = small_splits();
  TrainState st = initial_state(small_model(), small_train(3));
  std::vector<std::size_t> seen;
  train(st, s.train, s.val, [&](const TrainState& cur) { seen.push_back(cur.history.size()); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Train, RejectsMismatchedPanels) {
  const PanelSplits s = small_splits();
  ModelConfig wrong = small_model();
  wrong.stocks = 5;
  EXPECT_THROW(train(wrong, small_train(1), s.train, s.val), TrainingError);
  ModelConfig too_long = small_model();
  too_long.steps = 40;
  EXPECT_THROW(train(too_long, small_train(1), s.train, s.val), TrainingError);
}

TEST(Evaluate, ReportsEveryWindow) {
  const PanelSplits s = small_splits();
  const ModelConfig cfg = small_model();
  const Evaluation ev = evaluate(cfg, init_model(cfg), s.test);
  EXPECT_EQ(ev.ends, window_ends(s.test, cfg.steps));
  EXPECT_EQ(ev.prob_up.size(), ev.ends.size() * cfg.stocks);
  EXPECT_EQ(ev.labels.size(), ev.prob_up.size());
  EXPECT_GE(ev.accuracy, 0.0);
  EXPECT_LE(ev.accuracy, 1.0);
}

}  // namespace
}  // namespace magnet

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "magnet/checkpoint.hpp"
#include "test_util.hpp"

namespace magnet {
namespace {

using testing::TempDir;

TrainConfig two_epochs() {
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 2;
  tc.patience = 2;
  return tc;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

class CheckpointFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    splits = new PanelSplits(testing::small_splits());
    trained = new TrainState(train(testing::small_model_config(), two_epochs(), splits->train, splits->val));
  }
  static void TearDownTestSuite() {
    delete trained;
    delete splits;
  }
  static PanelSplits* splits;
  static TrainState* trained;
  TempDir dir{"checkpoint"};
};

PanelSplits* CheckpointFixture::splits = nullptr;
TrainState* CheckpointFixture::trained = nullptr;

TEST_F(CheckpointFixture, RoundTripIsExact) {
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(*trained, path);
  const TrainState back = load_checkpoint(path);
  EXPECT_EQ(back.model, trained->model);
  EXPECT_EQ(back.train, trained->train);
  EXPECT_EQ(back.params, trained->params);
  EXPECT_EQ(back.best_params, trained->best_params);
  EXPECT_EQ(back.adam_m, trained->adam_m);
  EXPECT_EQ(back.adam_v, trained->adam_v);
  EXPECT_EQ(back.optimizer_steps, trained->optimizer_steps);
  EXPECT_EQ(back.best_epoch, trained->best_epoch);
  EXPECT_EQ(back.best_val_accuracy, trained->best_val_accuracy);
  EXPECT_EQ(back.finished, trained->finished);
  ASSERT_EQ(back.history.size(), trained->history.size());
  for (std::size_t i = 0; i < back.history.size(); ++i) {
    EXPECT_EQ(back.history[i].train_loss, trained->history[i].train_loss);
    EXPECT_EQ(back.history[i].val_accuracy, trained->history[i].val_accuracy);
  }
}

TEST_F(CheckpointFixture, SavingTwiceIsByteIdentical) {
  save_checkpoint(*trained, dir.path() / "a.ckpt");
  save_checkpoint(*trained, dir.path() / "b.ckpt");
  EXPECT_EQ(read_bytes(dir.path() / "a.ckpt"), read_bytes(dir.path() / "b.ckpt"));
  EXPECT_EQ(read_bytes(manifest_path(dir.path() / "a.ckpt")), read_bytes(manifest_path(dir.path() / "b.ckpt")));
}

TEST_F(CheckpointFixture, ManifestListsEveryTensor) {
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(*trained, path);
  std::istringstream in(read_bytes(manifest_path(path)));
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, "magnet-checkpoint 1");
  std::size_t mentions = 0;
  const std::string text = read_bytes(manifest_path(path));
  for (std::size_t pos = text.find("embed.weight"); pos != std::string::npos; pos = text.find("embed.weight", pos + 1))
    ++mentions;
  EXPECT_EQ(mentions, 4u);  // weights, best weights, both Adam moments
  EXPECT_NE(text.find("config " + config_checksum(trained->model, trained->train)), std::string::npos);
}

TEST_F(CheckpointFixture, RejectsBadMagic) {
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(*trained, path);
  std::string bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST_F(CheckpointFixture, RejectsTruncationAndTrailingBytes) {
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(*trained, path);
  const std::string bytes = read_bytes(path);
  write_bytes(path, bytes.substr(0, bytes.size() - 9));
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  write_bytes(path, bytes + "x");
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST_F(CheckpointFixture, RejectsMissingFile) {
  EXPECT_THROW(load_checkpoint(dir.path() / "absent.ckpt"), CheckpointError);
}

TEST_F(CheckpointFixture, ResumeRefusesDifferentConfig) {
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(*trained, path);
  ModelConfig other = trained->model;
  other.d_model = 8;
  EXPECT_THROW(resume_checkpoint(path, other, trained->train), CheckpointError);
  TrainConfig lr = trained->train;
  lr.learning_rate = 0.5;
  EXPECT_THROW(resume_checkpoint(path, trained->model, lr), CheckpointError);
}

TEST_F(CheckpointFixture, ChecksumIgnoresStoppingRule) {
  TrainConfig longer = trained->train;
  longer.max_epochs = 50;
  longer.patience = 9;
  EXPECT_EQ(config_checksum(trained->model, longer), config_checksum(trained->model, trained->train));
  longer.seed = 1;
  EXPECT_NE(config_checksum(trained->model, longer), config_checksum(trained->model, trained->train));
}

TEST_F(CheckpointFixture, ResumingMatchesUninterruptedRun) {
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(*trained, path);
  TrainConfig four = two_epochs();
  four.max_epochs = 4;
  four.patience = 4;
  TrainState resumed = resume_checkpoint(path, trained->model, four);
  EXPECT_FALSE(resumed.finished);
  train(resumed, splits->train, splits->val);
  const TrainState straight = train(testing::small_model_config(), four, splits->train, splits->val);
  EXPECT_EQ(resumed.params, straight.params);
  EXPECT_EQ(resumed.best_params, straight.best_params);
  EXPECT_EQ(resumed.history.size(), straight.history.size());
  EXPECT_EQ(resumed.optimizer_steps, straight.optimizer_steps);
}

}  // namespace
}  // namespace magnet

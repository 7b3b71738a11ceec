#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/market_data.hpp"
#include "magnet/model.hpp"
#include "magnet/params.hpp"

namespace magnet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;  // epochs without a validation-accuracy improvement before stopping
  std::uint64_t seed = 42;   // window order and dropout masks
  bool shuffle = true;

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

/// Decoupled weight decay Adam; moments are kept per parameter in store order.
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, const ParamStore& params);

  /// One update of every parameter from its gradient (same order and shapes as params).
  void step(ParamStore& params, const std::vector<Tensor>& grads);

  std::uint64_t steps() const noexcept { return steps_; }
  const ParamStore& first_moment() const noexcept { return m_; }
  const ParamStore& second_moment() const noexcept { return v_; }
  /// Replaces the optimizer state, e.g. when resuming; shapes must match.
  void restore(std::uint64_t steps, ParamStore m, ParamStore v);

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  std::uint64_t steps_ = 0;
  ParamStore m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> prob_up;     // window-major, stock-minor
  std::vector<int> labels;
  std::vector<std::size_t> ends;   // window end day of every evaluated window
};

/// Evaluation-mode pass over every window of `panel`.
Evaluation evaluate(const ModelConfig& cfg, const ParamStore& params, const MarketPanel& panel);

/// Everything needed to continue training bit-identically.
struct TrainState {
  ModelConfig model;
  TrainConfig train;
  ParamStore params;       // current weights
  ParamStore best_params;  // weights of the best validation epoch
  std::uint64_t optimizer_steps = 0;
  ParamStore adam_m, adam_v;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = -1.0;
  bool finished = false;   // early stop or epoch budget reached
};

/// Fresh state with initialized weights.
TrainState initial_state(const ModelConfig& model, const TrainConfig& train);

using EpochCallback = std::function<void(const TrainState&)>;

/// Trains until the epoch budget or early stopping; `state` may come from a checkpoint.
/// The callback runs after every completed epoch.
void train(TrainState& state, const MarketPanel& train_split, const MarketPanel& val_split,
           const EpochCallback& on_epoch = {});

/// Convenience wrapper starting from initial_state.
TrainState train(const ModelConfig& model, const TrainConfig& cfg, const MarketPanel& train_split,
                 const MarketPanel& val_split);

}  // namespace magnet

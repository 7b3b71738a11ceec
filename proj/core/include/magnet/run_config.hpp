#pragma once

// Everything one CLI invocation needs, read from a single JSON document.

#include <cstdint>
#include <filesystem>
#include <string>

#include "magnet/backtest.hpp"
#include "magnet/market_data.hpp"
#include "magnet/model.hpp"
#include "magnet/train.hpp"

namespace magnet {

struct DataConfig {
  SynthSpec synth;  // generator sizes; its seed comes from RunConfig::seed
  SplitSpec split;
  NormalizationPooling pooling = NormalizationPooling::kFeature;
};

struct PathsConfig {
  std::string data_dir = "data";  // panel CSV + manifest
  std::string panel = "panel";    // file stem
  std::string run_dir = "run";    // checkpoint, history and backtest outputs
};

struct RunConfig {
  std::uint64_t seed = 42;  // the only source of randomness
  PathsConfig paths;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  StrategyParams strategy;

  /// Propagates `seed` into the generator, model and training configs.
  void set_seed(std::uint64_t value);
  /// Throws ConfigError.
  void validate() const;

  std::filesystem::path manifest() const;
  std::filesystem::path checkpoint() const;
};

/// Parses a (possibly partial) document over defaults. Unknown keys and
/// nested seeds are rejected; the result is validated.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);

}  // namespace magnet

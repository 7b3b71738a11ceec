#pragma once

// Small helpers shared by the unit tests.

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "magnet/market_data.hpp"
#include "magnet/model.hpp"
#include "magnet/oracles/dense.hpp"
#include "magnet/params.hpp"
#include "magnet/tensor.hpp"

namespace magnet::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline oracles::Dense to_dense(const Tensor& t) { return oracles::Dense(t.dim(0), t.dim(1), t.values()); }

inline double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Full pipeline at toy widths: 4 stocks, 4 steps, 3 features.
inline ModelConfig small_model_config() {
  ModelConfig cfg;
  cfg.stocks = 4;
  cfg.steps = 4;
  cfg.features = 3;
  cfg.d_model = 4;
  cfg.experts = 2;
  cfg.channels = 2;
  cfg.tch_layers = 1;
  cfg.tch_hyperedges = 4;
  cfg.top_k = 4;
  cfg.gph_hyperedges = 3;
  cfg.ssm_state = 2;
  cfg.moe_hidden = 4;
  cfg.fusion_hidden = 4;
  cfg.gph_ffn_hidden = 4;
  return cfg;
}

/// Normalized 60-day synthetic panel matching small_model_config().
inline PanelSplits small_splits() {
  SynthSpec spec;
  spec.stocks = 4;
  spec.days = 60;
  spec.features = 3;
  return split_and_normalize(synth_panel(spec).panel, SplitSpec{0.6, 0.2, 0.2});
}

/// Fresh empty per-process directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("magnet_test_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace magnet::testing

#pragma once

// Full pipeline: embed -> MAGE -> feature-wise 2D attention -> TCH ->
// stock-wise 2D attention -> GPH -> per-stock two-class head.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include "magnet/attn2d.hpp"
#include "magnet/autodiff.hpp"
#include "magnet/gph.hpp"
#include "magnet/layers.hpp"
#include "magnet/mage.hpp"
#include "magnet/params.hpp"
#include "magnet/tch.hpp"

namespace magnet {

/// Rejected configuration: unknown key, wrong type or violated constraint.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t stocks = 8;     // N
  std::size_t steps = 10;     // lookback T
  std::size_t features = 5;   // F
  std::size_t d_model = 32;   // D
  std::size_t experts = 4;    // E
  std::size_t heads = 2;      // MAGE and causal attention heads
  std::size_t channels = 4;   // 2D attention channels

  std::size_t mage_layers = 1;
  std::size_t f2d_layers = 1;
  std::size_t tch_layers = 2;
  std::size_t s2d_layers = 1;
  std::size_t gph_layers = 1;

  std::size_t tch_hyperedges = 64;  // M1
  std::size_t top_k = 64;           // K
  std::size_t gph_hyperedges = 32;  // M2

  std::size_t ssm_state = 16;
  std::size_t moe_hidden = 64;
  std::size_t fusion_hidden = 64;
  std::size_t gph_ffn_hidden = 128;

  double dropout = 0.1;
  bool use_mage = true;
  bool use_f2d = true;
  bool use_tch = true;
  bool use_s2d = true;
  bool use_gph = true;
  mage::GateMode gate_mode = mage::GateMode::kLiteral;
  bool moe_scale_output = true;
  std::uint64_t seed = 42;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  mage::MageConfig mage() const;
  attn2d::Attn2DConfig attn2d() const;
  tch::TchConfig tch() const;
  gph::GphConfig gph() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Canonical JSON text of a config (stable key order); used for checkpoints and checksums.
std::string to_json(const ModelConfig& cfg);
/// Parses a full or partial config over defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const std::string& text);

/// Every parameter of the model, initialized from cfg.seed.
ParamStore init_model(const ModelConfig& cfg);

/// GELU(x W + b) per (stock, day): [N, T, F] -> [N, T, D].
Var embed(Var x, const ParamScope& scope);

/// Probabilities [N, 2] (column 1 = rise) for one window x [N, T, F].
Var forward(Var x, const ParamScope& params, const ModelConfig& cfg, const ForwardContext& ctx);

/// Mean negative log-probability of the true class, clamped at 1e-12.
Var loss(Var probs, std::span<const int> labels);

/// Evaluation-mode forward pass without gradients.
Tensor predict(const ModelConfig& cfg, const ParamStore& params, const Tensor& x);

}  // namespace magnet

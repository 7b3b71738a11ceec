#pragma once

#include <random>
#include <string_view>

#include "magnet/autodiff.hpp"
#include "magnet/params.hpp"

namespace magnet {

/// Per-forward state shared by every stage: dropout rate and its mask source.
struct ForwardContext {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // required when the tape is in training mode and dropout > 0
};

/// x @ weight + bias over the last axis.
Var linear(Var x, Var weight, Var bias);

/// Registers `<prefix>.weight` [in, out] and `<prefix>.bias` [out].
void init_linear(ParamStore& store, std::string_view prefix, std::size_t in, std::size_t out, Rng& rng);
Var linear(Var x, const ParamScope& scope);

/// Registers `<prefix>.gain` (ones) and `<prefix>.bias` (zeros) of width d.
void init_layer_norm(ParamStore& store, std::string_view prefix, std::size_t d);
Var layer_norm(Var x, const ParamScope& scope);

/// LayerNorm(input + dropout(stage_output)).
Var residual_norm(Var input, Var stage_output, const ParamScope& norm, const ForwardContext& ctx);

}  // namespace magnet

#include "magnet/layers.hpp"

namespace magnet {

Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

void init_linear(ParamStore& store, std::string_view prefix, std::size_t in, std::size_t out, Rng& rng) {
  store.add(join_name(prefix, "weight"), init_uniform({in, out}, in, rng));
  store.add(join_name(prefix, "bias"), init_uniform({out}, in, rng));
}

Var linear(Var x, const ParamScope& scope) { return linear(x, scope("weight"), scope("bias")); }

void init_layer_norm(ParamStore& store, std::string_view prefix, std::size_t d) {
  store.add(join_name(prefix, "gain"), Tensor({d}, 1.0));
  store.add(join_name(prefix, "bias"), Tensor({d}, 0.0));
}

Var layer_norm(Var x, const ParamScope& scope) { return layer_norm(x, scope("gain"), scope("bias")); }

Var residual_norm(Var input, Var stage_output, const ParamScope& norm, const ForwardContext& ctx) {
  Var out = stage_output;
  if (ctx.dropout > 0.0 && input.tape().training()) {
    if (ctx.rng == nullptr) throw std::invalid_argument("training-mode dropout needs an rng");
    out = dropout(out, ctx.dropout, *ctx.rng);
  }
  return layer_norm(add(input, out), norm);
}

}  // namespace magnet

#include "magnet/attn2d.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "magnet/layers.hpp"

namespace magnet::attn2d {

namespace {

std::string channel_name(const char* kind, std::size_t c) { return kind + std::to_string(c); }

}  // namespace

void init_params(ParamStore& store, std::string_view prefix, const Attn2DShape& shape,
                 const Attn2DConfig& cfg, Rng& rng) {
  if (cfg.channels == 0 || cfg.fusion_hidden == 0) {
    throw std::invalid_argument("2D attention needs at least one channel and a positive fusion width");
  }
  const std::size_t s = shape.width;
  const std::size_t s_red = cfg.reduced_width(s);
  const std::size_t r = shape.rows;
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    for (const char* kind : {"q", "k", "v"}) {
      init_linear(store, join_name(prefix, channel_name(kind, c)), s, s_red, rng);
    }
  }
  init_linear(store, join_name(prefix, "fuse_hidden"), cfg.channels * r * r, cfg.fusion_hidden, rng);
  init_linear(store, join_name(prefix, "fuse_out"), cfg.fusion_hidden, 1, rng);
  init_linear(store, join_name(prefix, "out"), cfg.channels * s_red, s, rng);
}

Attn2DResult matrix_attention(Var x, const ParamScope& scope, const Attn2DConfig& cfg) {
  if (x.shape().size() != 3) throw ShapeError("matrix_attention expects [L, R, S]");
  const std::size_t items = x.dim(0), rows = x.dim(1), width = x.dim(2);
  const std::size_t channels = cfg.channels;
  const Var q0 = scope(channel_name("q", 0) + ".weight");
  if (q0.dim(0) != width) {
    throw ShapeError("2D attention projections expect width " + std::to_string(q0.dim(0)) +
                     ", got " + std::to_string(width));
  }
  const std::size_t s_red = q0.dim(1);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s_red));

  Var flat = reshape(x, {items * rows, width});
  std::vector<Var> scores, values;
  scores.reserve(channels);
  values.reserve(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    Var q = linear(flat, scope.scope(channel_name("q", c)));
    Var k = linear(flat, scope.scope(channel_name("k", c)));
    values.push_back(linear(flat, scope.scope(channel_name("v", c))));
    // Every (i, a) x (j, b) row product at once, then regrouped as [i, j, a*b].
    Var all = scale(bmm(reshape(q, {1, items * rows, s_red}), reshape(k, {1, items * rows, s_red}), true),
                    inv_sqrt);
    Var grouped = permute(reshape(all, {items, rows, items, rows}), {0, 2, 1, 3});
    scores.push_back(reshape(grouped, {items, items, 1, rows * rows}));
  }
  Var fused_in = reshape(concat(scores, 2), {items * items, channels * rows * rows});
  Var logits = linear(gelu(linear(fused_in, scope.scope("fuse_hidden"))), scope.scope("fuse_out"));
  Var weights = softmax_last(reshape(logits, {items, items}));

  std::vector<Var> mixed;
  mixed.reserve(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    Var agg = matmul(weights, reshape(values[c], {items, rows * s_red}));
    mixed.push_back(reshape(agg, {items, rows, 1, s_red}));
  }
  Var stacked = reshape(concat(mixed, 2), {items * rows, channels * s_red});
  Var out = linear(stacked, scope.scope("out"));
  return {reshape(out, {items, rows, width}), weights};
}

void init_featurewise(ParamStore& store, std::string_view prefix, std::size_t n_stocks,
                      std::size_t steps, std::size_t d_model, const Attn2DConfig& cfg, Rng& rng) {
  init_params(store, prefix, Attn2DShape{d_model, n_stocks, steps}, cfg, rng);
}

Attn2DResult featurewise_2d(Var z, const ParamScope& scope, const Attn2DConfig& cfg) {
  if (z.shape().size() != 3) throw ShapeError("featurewise_2d expects [N, T, D]");
  Attn2DResult r = matrix_attention(permute(z, {2, 0, 1}), scope, cfg);
  r.output = permute(r.output, {1, 2, 0});
  return r;
}

void init_stockwise(ParamStore& store, std::string_view prefix, std::size_t n_stocks,
                    std::size_t steps, std::size_t d_model, const Attn2DConfig& cfg, Rng& rng) {
  init_params(store, prefix, Attn2DShape{n_stocks, steps, d_model}, cfg, rng);
}

Attn2DResult stockwise_2d(Var z, const ParamScope& scope, const Attn2DConfig& cfg) {
  if (z.shape().size() != 3) throw ShapeError("stockwise_2d expects [N, T, D]");
  return matrix_attention(z, scope, cfg);
}

}  // namespace magnet::attn2d

#pragma once

// 2D spatiotemporal attention: attention between whole matrices.
//
// A batch of L items, each an R x S matrix, attends item-to-item. Per channel c
// every item is projected along S (S -> S'); the score between items i and j is
// the R x R matrix Q_{i,c} K_{j,c}^T / sqrt(S'). The C score matrices are
// flattened to length C*R*R and fused to one scalar by a one-hidden-layer GELU
// network; a softmax over j gives weights a_{i,j}. Channel outputs
// sum_j a_{i,j} V_{j,c} are concatenated per row (channel-major) and projected
// back to width S.
//
// Feature-wise attention treats each of the D features as an N x T matrix;
// stock-wise attention treats each of the N stocks as a T x D matrix.

#include <string_view>

#include "magnet/autodiff.hpp"
#include "magnet/params.hpp"

namespace magnet::attn2d {

struct Attn2DConfig {
  std::size_t channels = 4;
  std::size_t fusion_hidden = 64;
  /// Projected width S'. Zero means ceil(S / 2).
  std::size_t reduced = 0;

  std::size_t reduced_width(std::size_t width) const { return reduced ? reduced : (width + 1) / 2; }
};

/// Geometry of one attention instance: L items of R x S.
struct Attn2DShape {
  std::size_t items = 0;
  std::size_t rows = 0;
  std::size_t width = 0;
};

/// Registers per-channel q/k/v projections [S, S'] with biases, the score
/// fusion network [C*R*R -> hidden -> 1], and the output projection [C*S' -> S].
void init_params(ParamStore& store, std::string_view prefix, const Attn2DShape& shape,
                 const Attn2DConfig& cfg, Rng& rng);

struct Attn2DResult {
  Var output;   // [L, R, S]
  Var weights;  // [L, L], rows sum to 1
};

/// Core operation on x of shape [L, R, S].
Attn2DResult matrix_attention(Var x, const ParamScope& scope, const Attn2DConfig& cfg);

/// Items are features: [N, T, D] viewed as D matrices of N x T. Output [N, T, D].
Attn2DResult featurewise_2d(Var z, const ParamScope& scope, const Attn2DConfig& cfg);
void init_featurewise(ParamStore& store, std::string_view prefix, std::size_t n_stocks,
                      std::size_t steps, std::size_t d_model, const Attn2DConfig& cfg, Rng& rng);

/// Items are stocks: [N, T, D] viewed as N matrices of T x D. Output [N, T, D].
Attn2DResult stockwise_2d(Var z, const ParamScope& scope, const Attn2DConfig& cfg);
void init_stockwise(ParamStore& store, std::string_view prefix, std::size_t n_stocks,
                    std::size_t steps, std::size_t d_model, const Attn2DConfig& cfg, Rng& rng);

}  // namespace magnet::attn2d

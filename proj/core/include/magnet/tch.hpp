#pragma once

// Temporal-causal hypergraph over (time, stock) nodes.

#include <string_view>

#include "magnet/autodiff.hpp"
#include "magnet/params.hpp"

namespace magnet {

enum class IncidenceKind { kTch, kGph };

/// Node x hyperedge membership strengths.
struct IncidenceMatrix {
  Var values;
  IncidenceKind kind = IncidenceKind::kTch;

  std::size_t nodes() const { return values.dim(0); }
  std::size_t hyperedges() const { return values.dim(1); }
};

/// Throws std::domain_error if `h` violates the invariants of `kind`:
/// tch entries in [0, 1); gph entries in (0, 1) with every column summing to 1.
void validate_incidence(const Tensor& h, IncidenceKind kind, double tol = 1e-9);

}  // namespace magnet

namespace magnet::tch {

/// Row order of flattened (time, stock) nodes: row = t * N + n.
struct TimeStockLayout {
  std::size_t stocks = 0;
  std::size_t steps = 0;

  std::size_t nodes() const { return stocks * steps; }
  std::size_t row(std::size_t t, std::size_t n) const { return t * stocks + n; }
  std::size_t time_of(std::size_t row) const { return row / stocks; }
  std::size_t stock_of(std::size_t row) const { return row % stocks; }
};

/// [N, T, D] -> [T*N, D] with row t*N+n holding z[n, t, :].
Var flatten_time_stock(Var z);
/// Inverse of flatten_time_stock.
Var unflatten_time_stock(Var z_flat, const TimeStockLayout& layout);

/// Additive mask: kMaskedScore where time(col) > time(row), 0 elsewhere
/// (same-time and earlier nodes, including self, stay visible).
Tensor causal_mask(const TimeStockLayout& layout);

struct CausalAttnParams {
  Var w_q, w_k;  // [D, D]
  std::size_t heads = 2;

  static void init(ParamStore& store, std::string_view prefix, std::size_t d_model,
                   std::size_t heads, Rng& rng);
  static CausalAttnParams bind(const ParamScope& scope, std::size_t heads);
};

/// Head-averaged pre-softmax scores Q_i K_i^T / sqrt(d_h) of z_flat [T*N, D] with
/// the causal mask applied. `mask` overrides causal_mask(layout) when given.
Var causal_mha(Var z_flat, const CausalAttnParams& p, const TimeStockLayout& layout,
               const Tensor* mask = nullptr);

/// Row softmax of the full (masked) row; only the K largest entries survive.
inline Var topk_sparsify(Var scores, std::size_t k) { return topk_softmax(scores, k); }

/// H = ReTanh(ReTanh(A_topk W1) W2); W1 [T*N, hidden], W2 [hidden, M1].
IncidenceMatrix build_incidence(Var a_topk, Var w1, Var w2);

/// ELU(H H^T z_flat P1) with no degree normalization.
Var tch_conv(const IncidenceMatrix& h, Var z_flat, Var p1);

struct TchConfig {
  std::size_t heads = 2;
  std::size_t hyperedges = 64;  // M1
  std::size_t hidden = 0;       // incidence hidden width; 0 means M1
  std::size_t top_k = 64;

  std::size_t hidden_width() const { return hidden ? hidden : hyperedges; }
};

void init_layer(ParamStore& store, std::string_view prefix, const TimeStockLayout& layout,
                std::size_t d_model, const TchConfig& cfg, Rng& rng);

struct TchResult {
  Var output;        // [N, T, D]
  Var scores;        // masked scores [T*N, T*N]
  Var sparse;        // Top-K sparsified attention
  IncidenceMatrix incidence;
};

/// flatten -> causal attention -> Top-K -> incidence -> convolution -> reshape.
TchResult tch_layer(Var z, const ParamScope& scope, const TchConfig& cfg);

}  // namespace magnet::tch

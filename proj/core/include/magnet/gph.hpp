#pragma once

// Global probabilistic hypergraph over stocks: column-stochastic soft
// memberships, Jensen-Shannon distinctiveness weights, weighted convolution.

#include <span>
#include <string_view>

#include "magnet/autodiff.hpp"
#include "magnet/attn2d.hpp"
#include "magnet/params.hpp"
#include "magnet/tch.hpp"

namespace magnet::gph {

/// Jensen-Shannon divergence in nats: 0.5 KL(p||m) + 0.5 KL(q||m), m = (p+q)/2,
/// with 0 ln(0/x) = 0. Result lies in [0, ln 2].
/// Throws std::invalid_argument unless p and q are nonnegative, equally long,
/// and each sums to 1 within `tol`.
double jsd(std::span<const double> p, std::span<const double> q, double tol = 1e-6);

/// Per-hyperedge mean divergence mu_j = (1/M) sum_i JSD(e_i, e_j) over the
/// columns of h [N, M] (self term included). Differentiable in h.
Var mean_divergence(Var h);

struct HyperedgeWeights {
  Var mu;  // [M], nats
  Var w;   // [M], softmax of the z-scored mu
};

/// z-score uses the population standard deviation; below 1e-12 the weights are uniform.
HyperedgeWeights hyperedge_weights(const IncidenceMatrix& h);

/// Column-wise softmax(ReTanh(FFN(g_flat))) for g_flat [N, T*D]; FFN is one GELU hidden layer.
IncidenceMatrix build_incidence(Var g_flat, const ParamScope& ffn);

/// ELU(H diag(w) H^T g_flat P2) with no degree normalization.
Var gph_conv(const IncidenceMatrix& h, const HyperedgeWeights& w, Var g_flat, Var p2);

struct GphConfig {
  std::size_t hyperedges = 32;  // M2
  std::size_t ffn_hidden = 128;
};

void init_layer(ParamStore& store, std::string_view prefix, std::size_t steps,
                std::size_t d_model, const GphConfig& cfg, Rng& rng);

struct GphResult {
  Var output;  // [N, T, D]
  IncidenceMatrix incidence;
  HyperedgeWeights weights;
};

/// Flattens g [N, T, D] to [N, T*D], builds the incidence and weights, convolves, reshapes back.
GphResult gph_layer(Var g, const ParamScope& scope);

}  // namespace magnet::gph

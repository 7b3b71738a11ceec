#pragma once

#include <cstddef>
#include <vector>

#include "magnet/oracles/dense.hpp"

namespace magnet::oracles {

/// Row softmax then keep the k largest entries of each row (ties to the lower column).
Dense topk_softmax(const Dense& scores, std::size_t k);

/// Head-averaged causal scores over T*N nodes (row = t*N + n): for every pair
/// the per-head dot products / sqrt(d_h), averaged; future columns hold `masked`.
Dense causal_scores(const Dense& z, const Dense& w_q, const Dense& w_k, std::size_t heads,
                    std::size_t stocks, double masked);

/// Self-attention along time for one sequence z [T, D] with `heads` heads.
Dense mha_sequence(const Dense& z, const Dense& w_q, const Dense& w_k, const Dense& w_v, const Dense& w_o,
                   std::size_t heads);

/// Literal gate sigmoid(fwd W_f + b_f + bwd W_b + b_b) for rows of width D.
Dense gate_literal(const Dense& fwd, const Dense& bwd, const Dense& w_f, const std::vector<double>& b_f,
                   const Dense& w_b, const std::vector<double>& b_b);

/// Capacity-normalized routing weights: C * p_hat / per-expert column sums.
Dense capacity_weights(const Dense& p_hat, double capacity);

struct Linear {
  Dense w;                 // [in, out]
  std::vector<double> b;   // [out]
};

struct MatrixAttentionParams {
  std::vector<Linear> q, k, v;  // per channel, S -> S'
  Linear fuse_hidden;           // C*R*R -> H
  Linear fuse_out;              // H -> 1
  Linear out;                   // C*S' -> S
};

struct MatrixAttentionResult {
  std::vector<Dense> output;  // L items of R x S
  Dense weights;              // L x L
};

/// 2D attention over L items of R x S: per-channel scores between every row
/// pair, fused by a GELU network into item-to-item weights, then aggregation.
MatrixAttentionResult matrix_attention(const std::vector<Dense>& items, const MatrixAttentionParams& p);

}  // namespace magnet::oracles

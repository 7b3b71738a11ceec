#pragma once

// Temporal MAGE block: bidirectional selective state-space scan, gate fusion,
// top-1 switched mixture of experts, and multi-head self-attention over time.

#include <optional>
#include <string_view>
#include <vector>

#include "magnet/autodiff.hpp"
#include "magnet/layers.hpp"
#include "magnet/params.hpp"

namespace magnet::mage {

// ---------------------------------------------------------------------------
// Selective state-space scan

struct SsmConfig {
  std::size_t d_model = 32;
  std::size_t state = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;

  std::size_t inner() const { return expand * d_model; }
};

/// Tape handles for one scan direction. With E = expand * d_model and S = state:
///   in_proj [D, 2E], conv_w [W, E], conv_b [E], delta_w [E, E], delta_b [E],
///   b_proj [E, S], c_proj [E, S], a_log [E, S], d_skip [E], out_proj [E, D].
/// The transition is A = -exp(a_log), so exp(delta * A) lies in (0, 1).
struct SsmParams {
  Var in_proj, conv_w, conv_b, delta_w, delta_b, b_proj, c_proj, a_log, d_skip, out_proj;

  static void init(ParamStore& store, std::string_view prefix, const SsmConfig& cfg, Rng& rng);
  static SsmParams bind(const ParamScope& scope);
};

/// Zero-order-hold selective recurrence over axis 1 of [N, T, E] inputs:
///   h_t = exp(delta_t * A) h_{t-1} + delta_t * B_t * x_t,   y_t = C_t h_t + d_skip * x_t
/// a: [E, S] (negative), b/c: [N, T, S], d_skip: [E].
Var selective_scan(Var x, Var delta, Var a, Var b, Var c, Var d_skip);

/// Depthwise causal convolution over axis 1: y_t = bias + sum_k weight[k] * x_{t-k}.
Var causal_depthwise_conv(Var x, Var weight, Var bias);

/// Forward-direction scan of [N, T, D] (or [T, D]) sequences; output has the input shape.
Var ssm_scan(Var z, const SsmParams& p);

struct Directions {
  Var fwd;
  Var bwd;
};

/// fwd = scan(z); bwd = reverse(scan(reverse(z))) with reversal along time.
Directions bidirectional(Var z, const SsmParams& fwd, const SsmParams& bwd);

// ---------------------------------------------------------------------------
// Gate fusion

enum class GateMode {
  kLiteral,  // sigmoid(W_f fwd + b_f + W_b bwd + b_b)
  kConvex,   // g * fwd + (1 - g) * bwd with g the sigmoid above
};

struct GateParams {
  Var w_f, w_b, b_f, b_b;

  static void init(ParamStore& store, std::string_view prefix, std::size_t d_model, Rng& rng);
  static GateParams bind(const ParamScope& scope);
};

Var gate_fuse(Var fwd, Var bwd, const GateParams& p, GateMode mode = GateMode::kLiteral);

// ---------------------------------------------------------------------------
// Switched mixture of experts

struct MoEConfig {
  std::size_t d_model = 32;
  std::size_t experts = 4;
  std::size_t hidden = 64;
  /// Capacity scale C. Non-positive means tokens / experts for each call.
  double capacity = 0.0;
  /// Scale each expert output by the capacity-normalized routing weight.
  bool scale_output = true;
};

struct MoEParams {
  Var w_gate;                  // [D, E]
  std::vector<Var> w1, b1;     // [D, H], [H] per expert
  std::vector<Var> w2, b2;     // [H, D], [D] per expert

  static void init(ParamStore& store, std::string_view prefix, const MoEConfig& cfg, Rng& rng);
  static MoEParams bind(const ParamScope& scope, std::size_t experts);
  std::size_t experts() const { return w1.size(); }
};

struct MoERouting {
  Var probs;                        // gate softmax, [tokens, E]
  Var selected;                     // probability at the chosen expert, [tokens, 1]
  std::vector<std::size_t> expert;  // chosen expert per token (ties to the lowest index)
  double capacity = 0.0;
  Tensor p_hat;                     // [tokens, E], one nonzero per row
  Tensor p_tilde;                   // [tokens, E], capacity-normalized
  Shape token_shape;                // leading shape of the routed input, e.g. [N, T]
};

/// Routes every token (all leading positions of z [..., D]) to its top-1 expert.
MoERouting moe_route(Var z, const MoEParams& p, double capacity = 0.0);

/// Applies each token's selected expert: W2 GELU(W1 z + b1) + b2, optionally
/// scaled by the token's capacity-normalized weight.
Var moe_apply(Var z, const MoERouting& routing, const MoEParams& p, bool scale_output = true);

/// Capacity-normalized weights: C * p_hat / (column sums of p_hat).
Tensor capacity_normalize(const Tensor& p_hat, double capacity);

/// Index of the largest entry of each row; ties resolve to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& probs);

// ---------------------------------------------------------------------------
// Multi-head self-attention

struct MhaParams {
  Var w_q, w_k, w_v;  // [D, D]; head i owns columns [i*d_h, (i+1)*d_h)
  Var w_o;            // [D, D]
  std::size_t heads = 2;

  static void init(ParamStore& store, std::string_view prefix, std::size_t d_model,
                   std::size_t heads, Rng& rng);
  static MhaParams bind(const ParamScope& scope, std::size_t heads);
};

/// Scaled dot-product attention along axis 1 of [N, T, D], independently per
/// leading index. `additive_mask` ([T, T]) is added to the scores before softmax.
Var mha(Var z, const MhaParams& p, const Tensor* additive_mask = nullptr);

/// Attention weights of head `head`: [N, T, T].
Tensor mha_weights(Var z, const MhaParams& p, std::size_t head, const Tensor* additive_mask = nullptr);

// ---------------------------------------------------------------------------
// Block

struct MageConfig {
  std::size_t d_model = 32;
  std::size_t heads = 2;
  SsmConfig ssm;
  MoEConfig moe;
  GateMode gate_mode = GateMode::kLiteral;
};

/// Registers all parameters of one block under `prefix`.
void init_block(ParamStore& store, std::string_view prefix, const MageConfig& cfg, Rng& rng);

/// z1 = LN(z + gate(bidirectional(z))), z2 = LN(z1 + MoE(z1)), out = LN(z2 + MHA(z2)).
Var mage_block(Var z, const ParamScope& scope, const MageConfig& cfg, const ForwardContext& ctx);

}  // namespace magnet::mage

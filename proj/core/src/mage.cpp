#include "magnet/mage.hpp"

#include <cmath>
#include <string>

namespace magnet::mage {

namespace {

std::string expert_name(std::size_t e, std::string_view leaf) {
  return "expert" + std::to_string(e) + "." + std::string(leaf);
}

}  // namespace

// ---------------------------------------------------------------------------
// Selective scan

void SsmParams::init(ParamStore& store, std::string_view prefix, const SsmConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model, e = cfg.inner(), s = cfg.state, w = cfg.conv_width;
  if (d == 0 || s == 0 || cfg.expand == 0 || w == 0) {
    throw std::invalid_argument("SSM dimensions must be positive");
  }
  store.add(join_name(prefix, "in_proj"), init_uniform({d, 2 * e}, d, rng));
  store.add(join_name(prefix, "conv_w"), init_uniform({w, e}, w, rng));
  store.add(join_name(prefix, "conv_b"), init_uniform({e}, w, rng));
  store.add(join_name(prefix, "delta_w"), init_uniform({e, e}, e, rng));
  // Step sizes start log-uniform in [1e-3, 1e-1]; the bias is their inverse softplus.
  Tensor delta_b({e});
  for (std::size_t i = 0; i < e; ++i) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    delta_b[i] = dt + std::log(-std::expm1(-dt));
  }
  store.add(join_name(prefix, "delta_b"), std::move(delta_b));
  store.add(join_name(prefix, "b_proj"), init_uniform({e, s}, e, rng));
  store.add(join_name(prefix, "c_proj"), init_uniform({e, s}, e, rng));
  Tensor a_log({e, s});
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t j = 0; j < s; ++j) a_log[i * s + j] = std::log(static_cast<double>(j + 1));
  store.add(join_name(prefix, "a_log"), std::move(a_log));
  store.add(join_name(prefix, "d_skip"), Tensor({e}, 1.0));
  store.add(join_name(prefix, "out_proj"), init_uniform({e, d}, e, rng));
}

SsmParams SsmParams::bind(const ParamScope& scope) {
  return SsmParams{scope("in_proj"), scope("conv_w"), scope("conv_b"), scope("delta_w"),
                   scope("delta_b"), scope("b_proj"), scope("c_proj"), scope("a_log"),
                   scope("d_skip"),  scope("out_proj")};
}

Var selective_scan(Var x, Var delta, Var a, Var b, Var c, Var d_skip) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("selective_scan expects x of shape [N, T, E]");
  const std::size_t n_seq = xv.dim(0), steps = xv.dim(1), e_dim = xv.dim(2);
  const Tensor& av = a.value();
  if (av.rank() != 2 || av.dim(0) != e_dim) throw ShapeError("selective_scan: A must be [E, S]");
  const std::size_t s_dim = av.dim(1);
  if (delta.shape() != xv.shape()) throw ShapeError("selective_scan: delta must match x");
  const Shape bs{n_seq, steps, s_dim};
  if (b.shape() != bs || c.shape() != bs) throw ShapeError("selective_scan: B and C must be [N, T, S]");
  if (d_skip.size() != e_dim) throw ShapeError("selective_scan: d_skip must be [E]");

  const Tensor& dv = delta.value();
  const Tensor& bv = b.value();
  const Tensor& cv = c.value();
  const Tensor& skip = d_skip.value();
  Tensor states({n_seq, steps, e_dim, s_dim});
  Tensor y(xv.shape());
  for (std::size_t n = 0; n < n_seq; ++n) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t row = n * steps + t;
      for (std::size_t e = 0; e < e_dim; ++e) {
        const double xe = xv[row * e_dim + e];
        const double de = dv[row * e_dim + e];
        double acc = skip[e] * xe;
        double* h = states.mutable_data().data() + (row * e_dim + e) * s_dim;
        const double* h_prev = t > 0 ? h - e_dim * s_dim : nullptr;
        for (std::size_t s = 0; s < s_dim; ++s) {
          const double decay = std::exp(de * av[e * s_dim + s]);
          h[s] = (h_prev ? decay * h_prev[s] : 0.0) + de * bv[row * s_dim + s] * xe;
          acc += cv[row * s_dim + s] * h[s];
        }
        y[row * e_dim + e] = acc;
      }
    }
  }

  Tensor saved = x.tape().grad_enabled() ? std::move(states) : Tensor();
  return x.tape().record(
      std::move(y), {x, delta, a, b, c, d_skip},
      [x, delta, a, b, c, d_skip, states = std::move(saved), n_seq, steps, e_dim, s_dim](
          Tape& t, const Tensor& g) {
        const Tensor& xv = x.value();
        const Tensor& dv = delta.value();
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const Tensor& cv = c.value();
        const Tensor& skip = d_skip.value();
        Tensor gx(xv.shape()), gdelta(xv.shape()), ga(av.shape());
        Tensor gb(bv.shape()), gc(cv.shape()), gskip(skip.shape());
        std::vector<double> carry(e_dim * s_dim);
        for (std::size_t n = 0; n < n_seq; ++n) {
          std::fill(carry.begin(), carry.end(), 0.0);
          for (std::size_t step = steps; step-- > 0;) {
            const std::size_t row = n * steps + step;
            for (std::size_t e = 0; e < e_dim; ++e) {
              const std::size_t xi = row * e_dim + e;
              const double gy = g[xi];
              const double xe = xv[xi];
              const double de = dv[xi];
              gskip[e] += gy * xe;
              gx[xi] += gy * skip[e];
              const double* h = states.data().data() + xi * s_dim;
              const double* h_prev = step > 0 ? h - e_dim * s_dim : nullptr;
              for (std::size_t s = 0; s < s_dim; ++s) {
                const std::size_t bi = row * s_dim + s;
                gc[bi] += gy * h[s];
                const double gh = gy * cv[bi] + carry[e * s_dim + s];
                const double decay = std::exp(de * av[e * s_dim + s]);
                const double g_decay = h_prev ? gh * h_prev[s] * decay : 0.0;
                gdelta[xi] += g_decay * av[e * s_dim + s] + gh * bv[bi] * xe;
                ga[e * s_dim + s] += g_decay * de;
                gb[bi] += gh * de * xe;
                gx[xi] += gh * de * bv[bi];
                carry[e * s_dim + s] = gh * decay;
              }
            }
          }
        }
        t.accumulate(x, gx);
        t.accumulate(delta, gdelta);
        t.accumulate(a, ga);
        t.accumulate(b, gb);
        t.accumulate(c, gc);
        t.accumulate(d_skip, gskip);
      });
}

Var causal_depthwise_conv(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("causal_depthwise_conv expects [N, T, E]");
  const std::size_t n_seq = xv.dim(0), steps = xv.dim(1), e_dim = xv.dim(2);
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || wv.dim(1) != e_dim || bias.size() != e_dim) {
    throw ShapeError("causal_depthwise_conv weight must be [W, E] and bias [E]");
  }
  const std::size_t width = wv.dim(0);
  const Tensor& bv = bias.value();
  Tensor y(xv.shape());
  for (std::size_t n = 0; n < n_seq; ++n)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t e = 0; e < e_dim; ++e) {
        double acc = bv[e];
        for (std::size_t k = 0; k < width && k <= t; ++k) {
          acc += wv[k * e_dim + e] * xv[((n * steps) + t - k) * e_dim + e];
        }
        y[(n * steps + t) * e_dim + e] = acc;
      }
  return x.tape().record(std::move(y), {x, weight, bias},
                         [x, weight, bias, n_seq, steps, e_dim, width](Tape& t, const Tensor& g) {
                           const Tensor& xv = x.value();
                           const Tensor& wv = weight.value();
                           Tensor gx(xv.shape()), gw(wv.shape()), gbias(bias.shape());
                           for (std::size_t n = 0; n < n_seq; ++n)
                             for (std::size_t s = 0; s < steps; ++s)
                               for (std::size_t e = 0; e < e_dim; ++e) {
                                 const double go = g[(n * steps + s) * e_dim + e];
                                 gbias[e] += go;
                                 for (std::size_t k = 0; k < width && k <= s; ++k) {
                                   const std::size_t xi = ((n * steps) + s - k) * e_dim + e;
                                   gw[k * e_dim + e] += go * xv[xi];
                                   gx[xi] += go * wv[k * e_dim + e];
                                 }
                               }
                           t.accumulate(x, gx);
                           t.accumulate(weight, gw);
                           t.accumulate(bias, gbias);
                         });
}

Var ssm_scan(Var z, const SsmParams& p) {
  const Shape in_shape = z.shape();
  if (in_shape.size() == 2) z = reshape(z, {1, in_shape[0], in_shape[1]});
  if (z.shape().size() != 3) throw ShapeError("ssm_scan expects [N, T, D] or [T, D]");
  const std::size_t e_dim = p.conv_w.dim(1);

  Var xz = matmul(z, p.in_proj);
  Var x = slice(xz, 2, 0, e_dim);
  Var gate = slice(xz, 2, e_dim, 2 * e_dim);
  x = silu(causal_depthwise_conv(x, p.conv_w, p.conv_b));
  Var delta = softplus(linear(x, p.delta_w, p.delta_b));
  Var b = matmul(x, p.b_proj);
  Var c = matmul(x, p.c_proj);
  Var a = neg(exp(p.a_log));
  Var y = selective_scan(x, delta, a, b, c, p.d_skip);
  y = mul(y, silu(gate));
  Var out = matmul(y, p.out_proj);
  return in_shape.size() == 2 ? reshape(out, in_shape) : out;
}

Directions bidirectional(Var z, const SsmParams& fwd, const SsmParams& bwd) {
  const std::size_t time_axis = z.shape().size() == 2 ? 0 : 1;
  Var f = ssm_scan(z, fwd);
  Var b = flip(ssm_scan(flip(z, time_axis), bwd), time_axis);
  return {f, b};
}

// ---------------------------------------------------------------------------
// Gate

void GateParams::init(ParamStore& store, std::string_view prefix, std::size_t d_model, Rng& rng) {
  store.add(join_name(prefix, "w_f"), init_uniform({d_model, d_model}, d_model, rng));
  store.add(join_name(prefix, "w_b"), init_uniform({d_model, d_model}, d_model, rng));
  store.add(join_name(prefix, "b_f"), init_uniform({d_model}, d_model, rng));
  store.add(join_name(prefix, "b_b"), init_uniform({d_model}, d_model, rng));
}

GateParams GateParams::bind(const ParamScope& scope) {
  return GateParams{scope("w_f"), scope("w_b"), scope("b_f"), scope("b_b")};
}

Var gate_fuse(Var fwd, Var bwd, const GateParams& p, GateMode mode) {
  if (fwd.shape() != bwd.shape()) {
    throw ShapeError("gate_fuse direction shapes differ: " + shape_str(fwd.shape()) + " vs " +
                     shape_str(bwd.shape()));
  }
  Var pre = add(add(linear(fwd, p.w_f, p.b_f), matmul(bwd, p.w_b)), p.b_b);
  Var g = sigmoid(pre);
  if (mode == GateMode::kLiteral) return g;
  // g * fwd + (1 - g) * bwd = bwd + g * (fwd - bwd)
  return add(bwd, mul(g, sub(fwd, bwd)));
}

// ---------------------------------------------------------------------------
// Mixture of experts

void MoEParams::init(ParamStore& store, std::string_view prefix, const MoEConfig& cfg, Rng& rng) {
  if (cfg.experts == 0) throw std::invalid_argument("MoE needs at least one expert");
  if (cfg.hidden == 0) throw std::invalid_argument("MoE expert hidden width must be positive");
  const std::size_t d = cfg.d_model, h = cfg.hidden;
  store.add(join_name(prefix, "gate"), init_uniform({d, cfg.experts}, d, rng));
  for (std::size_t e = 0; e < cfg.experts; ++e) {
    store.add(join_name(prefix, expert_name(e, "w1")), init_uniform({d, h}, d, rng));
    store.add(join_name(prefix, expert_name(e, "b1")), init_uniform({h}, d, rng));
    store.add(join_name(prefix, expert_name(e, "w2")), init_uniform({h, d}, h, rng));
    store.add(join_name(prefix, expert_name(e, "b2")), init_uniform({d}, h, rng));
  }
}

MoEParams MoEParams::bind(const ParamScope& scope, std::size_t experts) {
  MoEParams p;
  p.w_gate = scope("gate");
  for (std::size_t e = 0; e < experts; ++e) {
    p.w1.push_back(scope(expert_name(e, "w1")));
    p.b1.push_back(scope(expert_name(e, "b1")));
    p.w2.push_back(scope(expert_name(e, "w2")));
    p.b2.push_back(scope(expert_name(e, "b2")));
  }
  return p;
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
  const std::size_t cols = probs.shape().back();
  const std::size_t rows = probs.size() / cols;
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = probs.data().data() + r * cols;
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[r] = best;
  }
  return out;
}

Tensor capacity_normalize(const Tensor& p_hat, double capacity) {
  const std::size_t cols = p_hat.shape().back();
  const std::size_t rows = p_hat.size() / cols;
  std::vector<double> totals(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) totals[j] += p_hat[r * cols + j];
  Tensor out(p_hat.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = p_hat[r * cols + j];
      out[r * cols + j] = v > 0.0 ? capacity * v / totals[j] : 0.0;
    }
  return out;
}

MoERouting moe_route(Var z, const MoEParams& p, double capacity) {
  const Shape& zs = z.shape();
  const std::size_t d = zs.back();
  const std::size_t tokens = z.size() / d;
  const std::size_t experts = p.experts();
  if (tokens == 0) throw ShapeError("moe_route needs at least one token");

  MoERouting r;
  r.token_shape.assign(zs.begin(), zs.end() - 1);
  Var flat = reshape(z, {tokens, d});
  r.probs = softmax_last(matmul(flat, p.w_gate));
  r.expert = argmax_rows(r.probs.value());
  r.selected = pick(r.probs, r.expert);
  r.capacity = capacity > 0.0 ? capacity : static_cast<double>(tokens) / static_cast<double>(experts);
  r.p_hat = Tensor({tokens, experts});
  for (std::size_t i = 0; i < tokens; ++i) {
    r.p_hat[i * experts + r.expert[i]] = r.selected.value()[i];
  }
  r.p_tilde = capacity_normalize(r.p_hat, r.capacity);
  return r;
}

Var moe_apply(Var z, const MoERouting& routing, const MoEParams& p, bool scale_output) {
  const Shape zs = z.shape();
  const std::size_t d = zs.back();
  const std::size_t tokens = z.size() / d;
  if (routing.expert.size() != tokens) throw ShapeError("moe_apply routing does not match input");
  Var flat = reshape(z, {tokens, d});

  std::vector<std::vector<std::size_t>> members(p.experts());
  for (std::size_t i = 0; i < tokens; ++i) members[routing.expert[i]].push_back(i);

  Var out;
  for (std::size_t e = 0; e < p.experts(); ++e) {
    const auto& rows = members[e];
    if (rows.empty()) continue;
    Var x = gather_rows(flat, rows);
    Var y = linear(gelu(linear(x, p.w1[e], p.b1[e])), p.w2[e], p.b2[e]);
    if (scale_output) {
      Var share = gather_rows(routing.selected, rows);
      Var weight = scale(div(share, sum_all(share)), routing.capacity);
      y = mul(y, weight);
    }
    Var placed = scatter_rows(y, rows, tokens);
    out = out.valid() ? add(out, placed) : placed;
  }
  return reshape(out, zs);
}

// ---------------------------------------------------------------------------
// Multi-head attention

void MhaParams::init(ParamStore& store, std::string_view prefix, std::size_t d_model,
                     std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("model width " + std::to_string(d_model) +
                                " is not divisible by head count " + std::to_string(heads));
  }
  for (const char* name : {"w_q", "w_k", "w_v", "w_o"}) {
    store.add(join_name(prefix, name), init_uniform({d_model, d_model}, d_model, rng));
  }
}

MhaParams MhaParams::bind(const ParamScope& scope, std::size_t heads) {
  return MhaParams{scope("w_q"), scope("w_k"), scope("w_v"), scope("w_o"), heads};
}

namespace {

// [N, T, D] -> [N * h, T, d_h]
Var split_heads(Var x, std::size_t heads) {
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
  const std::size_t dh = d / heads;
  return reshape(permute(reshape(x, {n, t, heads, dh}), {0, 2, 1, 3}), {n * heads, t, dh});
}

Var merge_heads(Var x, std::size_t n, std::size_t heads) {
  const std::size_t t = x.dim(1), dh = x.dim(2);
  return reshape(permute(reshape(x, {n, heads, t, dh}), {0, 2, 1, 3}), {n, t, heads * dh});
}

Var attention_probs(Var z, const MhaParams& p, const Tensor* additive_mask) {
  const std::size_t d = z.dim(2);
  if (d % p.heads != 0) throw ShapeError("mha: model width not divisible by heads");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / p.heads));
  Var q = split_heads(matmul(z, p.w_q), p.heads);
  Var k = split_heads(matmul(z, p.w_k), p.heads);
  Var scores = scale(bmm(q, k, true), inv_sqrt);
  if (additive_mask) scores = add(scores, z.tape().constant(*additive_mask));
  return softmax_last(scores);
}

}  // namespace

Var mha(Var z, const MhaParams& p, const Tensor* additive_mask) {
  if (z.shape().size() != 3) throw ShapeError("mha expects [N, T, D]");
  if (p.w_q.dim(0) != z.dim(2)) throw ShapeError("mha projection width does not match input");
  Var attn = attention_probs(z, p, additive_mask);
  Var v = split_heads(matmul(z, p.w_v), p.heads);
  Var ctx = merge_heads(bmm(attn, v), z.dim(0), p.heads);
  return matmul(ctx, p.w_o);
}

Tensor mha_weights(Var z, const MhaParams& p, std::size_t head, const Tensor* additive_mask) {
  if (head >= p.heads) throw std::out_of_range("head index out of range");
  const Tensor attn = attention_probs(z, p, additive_mask).value();
  const std::size_t n = z.dim(0), t = z.dim(1);
  Tensor out({n, t, t});
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = attn.data().data() + ((i * p.heads) + head) * t * t;
    std::copy_n(src, t * t, out.mutable_data().data() + i * t * t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block

void init_block(ParamStore& store, std::string_view prefix, const MageConfig& cfg, Rng& rng) {
  SsmConfig ssm = cfg.ssm;
  ssm.d_model = cfg.d_model;
  MoEConfig moe = cfg.moe;
  moe.d_model = cfg.d_model;
  SsmParams::init(store, join_name(prefix, "ssm_fwd"), ssm, rng);
  SsmParams::init(store, join_name(prefix, "ssm_bwd"), ssm, rng);
  GateParams::init(store, join_name(prefix, "gate"), cfg.d_model, rng);
  MoEParams::init(store, join_name(prefix, "moe"), moe, rng);
  MhaParams::init(store, join_name(prefix, "mha"), cfg.d_model, cfg.heads, rng);
  for (const char* norm : {"norm_gate", "norm_moe", "norm_mha"}) {
    init_layer_norm(store, join_name(prefix, norm), cfg.d_model);
  }
}

Var mage_block(Var z, const ParamScope& scope, const MageConfig& cfg, const ForwardContext& ctx) {
  const SsmParams fwd = SsmParams::bind(scope.scope("ssm_fwd"));
  const SsmParams bwd = SsmParams::bind(scope.scope("ssm_bwd"));
  const Directions dirs = bidirectional(z, fwd, bwd);
  Var fused = gate_fuse(dirs.fwd, dirs.bwd, GateParams::bind(scope.scope("gate")), cfg.gate_mode);
  Var z1 = residual_norm(z, fused, scope.scope("norm_gate"), ctx);

  const MoEParams moe = MoEParams::bind(scope.scope("moe"), cfg.moe.experts);
  const MoERouting routing = moe_route(z1, moe, cfg.moe.capacity);
  Var z2 = residual_norm(z1, moe_apply(z1, routing, moe, cfg.moe.scale_output),
                         scope.scope("norm_moe"), ctx);

  const MhaParams attn = MhaParams::bind(scope.scope("mha"), cfg.heads);
  return residual_norm(z2, mha(z2, attn), scope.scope("norm_mha"), ctx);
}

}  // namespace magnet::mage

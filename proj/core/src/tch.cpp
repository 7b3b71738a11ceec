#include "magnet/tch.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace magnet {

void validate_incidence(const Tensor& h, IncidenceKind kind, double tol) {
  if (h.rank() != 2) throw std::domain_error("incidence matrix must be 2-D");
  const std::size_t rows = h.dim(0), cols = h.dim(1);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double v = h[i];
    const bool ok = kind == IncidenceKind::kTch ? (v >= 0.0 && v < 1.0) : (v > 0.0 && v < 1.0);
    if (!ok) {
      std::ostringstream os;
      os << "incidence entry (" << i / cols << ", " << i % cols << ") = " << v << " out of range";
      throw std::domain_error(os.str());
    }
  }
  if (kind == IncidenceKind::kGph) {
    for (std::size_t j = 0; j < cols; ++j) {
      double total = 0.0;
      for (std::size_t i = 0; i < rows; ++i) total += h[i * cols + j];
      if (std::abs(total - 1.0) > tol) {
        std::ostringstream os;
        os << "incidence column " << j << " sums to " << total;
        throw std::domain_error(os.str());
      }
    }
  }
}

}  // namespace magnet

namespace magnet::tch {

Var flatten_time_stock(Var z) {
  if (z.shape().size() != 3) throw ShapeError("flatten_time_stock expects [N, T, D]");
  const std::size_t n = z.dim(0), t = z.dim(1), d = z.dim(2);
  return reshape(permute(z, {1, 0, 2}), {t * n, d});
}

Var unflatten_time_stock(Var z_flat, const TimeStockLayout& layout) {
  if (z_flat.shape().size() != 2 || z_flat.dim(0) != layout.nodes()) {
    throw ShapeError("unflatten_time_stock: rows do not match layout");
  }
  const std::size_t d = z_flat.dim(1);
  return permute(reshape(z_flat, {layout.steps, layout.stocks, d}), {1, 0, 2});
}

Tensor causal_mask(const TimeStockLayout& layout) {
  const std::size_t m = layout.nodes();
  Tensor mask({m, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (layout.time_of(j) > layout.time_of(i)) mask[i * m + j] = kMaskedScore;
  return mask;
}

void CausalAttnParams::init(ParamStore& store, std::string_view prefix, std::size_t d_model,
                            std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("causal attention width must be divisible by the head count");
  }
  store.add(join_name(prefix, "w_q"), init_uniform({d_model, d_model}, d_model, rng));
  store.add(join_name(prefix, "w_k"), init_uniform({d_model, d_model}, d_model, rng));
}

CausalAttnParams CausalAttnParams::bind(const ParamScope& scope, std::size_t heads) {
  return CausalAttnParams{scope("w_q"), scope("w_k"), heads};
}

Var causal_mha(Var z_flat, const CausalAttnParams& p, const TimeStockLayout& layout, const Tensor* mask) {
  if (z_flat.shape().size() != 2 || z_flat.dim(0) != layout.nodes()) {
    throw ShapeError("causal_mha: input rows do not match the time-stock layout");
  }
  const std::size_t m = z_flat.dim(0), d = z_flat.dim(1);
  if (d % p.heads != 0) throw ShapeError("causal_mha: width not divisible by heads");
  const std::size_t dh = d / p.heads;
  auto heads_first = [&](Var x) {
    return permute(reshape(x, {m, p.heads, dh}), {1, 0, 2});  // [h, M, d_h]
  };
  Var q = heads_first(matmul(z_flat, p.w_q));
  Var k = heads_first(matmul(z_flat, p.w_k));
  Var scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var averaged = reshape(mean(scores, 0), {m, m});
  const Tensor built = mask ? Tensor() : causal_mask(layout);
  const Tensor& applied = mask ? *mask : built;
  if (applied.shape() != Shape{m, m}) throw ShapeError("causal_mha: mask shape mismatch");
  return add(averaged, z_flat.tape().constant(applied));
}

IncidenceMatrix build_incidence(Var a_topk, Var w1, Var w2) {
  if (a_topk.shape().size() != 2 || w1.shape().size() != 2 || w2.shape().size() != 2 ||
      a_topk.dim(1) != w1.dim(0) || w1.dim(1) != w2.dim(0)) {
    throw ShapeError("build_incidence dimension mismatch: " + shape_str(a_topk.shape()) + ", " +
                     shape_str(w1.shape()) + ", " + shape_str(w2.shape()));
  }
  return IncidenceMatrix{retanh(matmul(retanh(matmul(a_topk, w1)), w2)), IncidenceKind::kTch};
}

Var tch_conv(const IncidenceMatrix& h, Var z_flat, Var p1) {
  if (h.values.dim(0) != z_flat.dim(0)) throw ShapeError("tch_conv: incidence rows do not match nodes");
  if (p1.shape().size() != 2 || p1.dim(0) != z_flat.dim(1)) throw ShapeError("tch_conv: projection mismatch");
  Var gathered = matmul(transpose(h.values), z_flat);  // [M1, D]
  return elu(matmul(matmul(h.values, gathered), p1));
}

void init_layer(ParamStore& store, std::string_view prefix, const TimeStockLayout& layout,
                std::size_t d_model, const TchConfig& cfg, Rng& rng) {
  if (cfg.hyperedges == 0 || cfg.top_k == 0) throw std::invalid_argument("TCH needs M1 >= 1 and K >= 1");
  const std::size_t m = layout.nodes();
  const std::size_t hidden = cfg.hidden_width();
  CausalAttnParams::init(store, join_name(prefix, "attn"), d_model, cfg.heads, rng);
  store.add(join_name(prefix, "w1"), init_uniform({m, hidden}, m, rng));
  store.add(join_name(prefix, "w2"), init_uniform({hidden, cfg.hyperedges}, hidden, rng));
  store.add(join_name(prefix, "p1"), init_uniform({d_model, d_model}, d_model, rng));
}

TchResult tch_layer(Var z, const ParamScope& scope, const TchConfig& cfg) {
  const TimeStockLayout layout{z.dim(0), z.dim(1)};
  TchResult r;
  Var flat = flatten_time_stock(z);
  r.scores = causal_mha(flat, CausalAttnParams::bind(scope.scope("attn"), cfg.heads), layout);
  r.sparse = topk_sparsify(r.scores, cfg.top_k);
  r.incidence = build_incidence(r.sparse, scope("w1"), scope("w2"));
  r.output = unflatten_time_stock(tch_conv(r.incidence, flat, scope("p1")), layout);
  return r;
}

}  // namespace magnet::tch

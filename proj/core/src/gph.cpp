#include "magnet/gph.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "magnet/layers.hpp"

namespace magnet::gph {

namespace {

// sum_n x ln x with 0 ln 0 = 0
double neg_entropy_term(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

void require_distribution(std::span<const double> p, double tol, const char* which) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("jsd: ") + which + " has a negative or non-finite entry");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > tol) {
    throw std::invalid_argument(std::string("jsd: ") + which + " sums to " + std::to_string(total));
  }
}

// JSD(p, q) = 0.5 sum p ln p + 0.5 sum q ln q - sum m ln m
double jsd_unchecked(const double* p, const double* q, std::size_t n, std::size_t stride) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = p[i * stride], b = q[i * stride];
    const double m = 0.5 * (a + b);
    acc += 0.5 * neg_entropy_term(a) + 0.5 * neg_entropy_term(b) - neg_entropy_term(m);
  }
  return std::max(acc, 0.0);
}

}  // namespace

double jsd(std::span<const double> p, std::span<const double> q, double tol) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("jsd: length mismatch");
  require_distribution(p, tol, "p");
  require_distribution(q, tol, "q");
  return jsd_unchecked(p.data(), q.data(), p.size(), 1);
}

Var mean_divergence(Var h) {
  const Tensor& hv = h.value();
  if (hv.rank() != 2) throw ShapeError("mean_divergence expects [N, M]");
  const std::size_t n = hv.dim(0), m = hv.dim(1);
  Tensor mu({m});
  for (std::size_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (i != j) acc += jsd_unchecked(hv.data().data() + i, hv.data().data() + j, n, m);
    }
    mu[j] = acc / static_cast<double>(m);
  }
  return h.tape().record(std::move(mu), {h}, [h, n, m](Tape& t, const Tensor& g) {
    const Tensor& hv = h.value();
    // d JSD(e_k, e_j) / d h[r, k] = 0.5 (ln h[r, k] - ln m[r]), m = (h[r, k] + h[r, j]) / 2
    auto partial = [&](std::size_t r, std::size_t k, std::size_t j) {
      const double a = hv[r * m + k];
      if (a <= 0.0) return 0.0;
      const double mid = 0.5 * (a + hv[r * m + j]);
      return 0.5 * (std::log(a) - std::log(mid));
    };
    Tensor& gh = t.grad_buffer(h);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < m; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          if (j == k) continue;
          // column k as first argument of mu_j, and as second argument of mu_k
          acc += (g[j] + g[k]) * partial(r, k, j);
        }
        gh[r * m + k] += inv_m * acc;
      }
    }
  });
}

HyperedgeWeights hyperedge_weights(const IncidenceMatrix& h) {
  HyperedgeWeights out;
  out.mu = mean_divergence(h.values);
  const std::size_t m = out.mu.size();
  const Tensor& mu = out.mu.value();
  double mean = 0.0;
  for (double v : mu.data()) mean += v;
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (double v : mu.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m);
  if (std::sqrt(var) < 1e-12) {
    out.w = h.values.tape().constant(Tensor({m}, 1.0 / static_cast<double>(m)));
    return out;
  }
  Var centered = sub(out.mu, mean_all(out.mu));
  Var sd = sqrt(mean_all(mul(centered, centered)));
  out.w = softmax_last(div(centered, sd));
  return out;
}

IncidenceMatrix build_incidence(Var g_flat, const ParamScope& ffn) {
  if (g_flat.shape().size() != 2) throw ShapeError("gph build_incidence expects [N, T*D]");
  Var logits = linear(gelu(linear(g_flat, ffn.scope("hidden"))), ffn.scope("out"));
  return IncidenceMatrix{softmax(retanh(logits), 0), IncidenceKind::kGph};
}

Var gph_conv(const IncidenceMatrix& h, const HyperedgeWeights& w, Var g_flat, Var p2) {
  const Var& hv = h.values;
  if (hv.dim(0) != g_flat.dim(0)) throw ShapeError("gph_conv: incidence rows do not match stocks");
  if (w.w.size() != hv.dim(1)) throw ShapeError("gph_conv: weight count does not match hyperedges");
  if (p2.shape().size() != 2 || p2.dim(0) != g_flat.dim(1)) throw ShapeError("gph_conv: projection mismatch");
  Var mixing = matmul(mul(hv, w.w), transpose(hv));  // [N, N]
  return elu(matmul(matmul(mixing, g_flat), p2));
}

void init_layer(ParamStore& store, std::string_view prefix, std::size_t steps,
                std::size_t d_model, const GphConfig& cfg, Rng& rng) {
  if (cfg.hyperedges == 0 || cfg.ffn_hidden == 0) throw std::invalid_argument("GPH needs M2 >= 1");
  const std::size_t width = steps * d_model;
  init_linear(store, join_name(prefix, "ffn.hidden"), width, cfg.ffn_hidden, rng);
  init_linear(store, join_name(prefix, "ffn.out"), cfg.ffn_hidden, cfg.hyperedges, rng);
  store.add(join_name(prefix, "p2"), init_uniform({width, width}, width, rng));
}

GphResult gph_layer(Var g, const ParamScope& scope) {
  if (g.shape().size() != 3) throw ShapeError("gph_layer expects [N, T, D]");
  const Shape shape = g.shape();
  Var flat = reshape(g, {shape[0], shape[1] * shape[2]});
  GphResult r;
  r.incidence = build_incidence(flat, scope.scope("ffn"));
  r.weights = hyperedge_weights(r.incidence);
  r.output = reshape(gph_conv(r.incidence, r.weights, flat, scope("p2")), shape);
  return r;
}

}  // namespace magnet::gph

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "magnet/oracles/dense.hpp"

namespace magnet::oracles {

double elu(double x) { return x > 0.0 ? x : std::exp(x) - 1.0; }
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double retanh(double x) { return x > 0.0 ? std::tanh(x) : 0.0; }

Dense tch_conv(const Dense& h, const Dense& z, const Dense& p) {
  if (h.rows != z.rows || z.cols != p.rows) throw std::invalid_argument("tch_conv oracle: shape mismatch");
  Dense out(h.rows, p.cols);
  for (std::size_t i = 0; i < h.rows; ++i) {
    for (std::size_t c = 0; c < p.cols; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < h.rows; ++j)
        for (std::size_t e = 0; e < h.cols; ++e)
          for (std::size_t d = 0; d < z.cols; ++d) acc += h(i, e) * h(j, e) * z(j, d) * p(d, c);
      out(i, c) = elu(acc);
    }
  }
  return out;
}

Dense gph_conv(const Dense& h, const std::vector<double>& w, const Dense& g, const Dense& p) {
  if (h.rows != g.rows || w.size() != h.cols || g.cols != p.rows) {
    throw std::invalid_argument("gph_conv oracle: shape mismatch");
  }
  Dense out(h.rows, p.cols);
  for (std::size_t i = 0; i < h.rows; ++i) {
    for (std::size_t c = 0; c < p.cols; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < h.rows; ++j)
        for (std::size_t e = 0; e < h.cols; ++e)
          for (std::size_t d = 0; d < g.cols; ++d) acc += h(i, e) * w[e] * h(j, e) * g(j, d) * p(d, c);
      out(i, c) = elu(acc);
    }
  }
  return out;
}

double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("jsd oracle: length mismatch");
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2.0;
    if (p[i] > 0.0) kl_p += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log(q[i] / m);
  }
  return 0.5 * kl_p + 0.5 * kl_q;
}

std::vector<double> mean_divergence(const Dense& h) {
  auto column = [&](std::size_t j) {
    std::vector<double> c(h.rows);
    for (std::size_t i = 0; i < h.rows; ++i) c[i] = h(i, j);
    return c;
  };
  std::vector<double> mu(h.cols, 0.0);
  for (std::size_t j = 0; j < h.cols; ++j) {
    for (std::size_t i = 0; i < h.cols; ++i) mu[j] += jsd(column(i), column(j));
    mu[j] /= static_cast<double>(h.cols);
  }
  return mu;
}

std::vector<double> zscore_softmax(const std::vector<double>& mu) {
  const double m = static_cast<double>(mu.size());
  double mean = 0.0;
  for (double x : mu) mean += x / m;
  double var = 0.0;
  for (double x : mu) var += (x - mean) * (x - mean) / m;
  const double sd = std::sqrt(var);
  std::vector<double> w(mu.size(), 1.0 / m);
  if (sd < 1e-12) return w;
  double top = -INFINITY;
  for (double x : mu) top = std::max(top, (x - mean) / sd);
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    w[i] = std::exp((mu[i] - mean) / sd - top);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

Dense column_softmax(const Dense& x) {
  Dense out(x.rows, x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) {
    double top = -INFINITY;
    for (std::size_t i = 0; i < x.rows; ++i) top = std::max(top, x(i, j));
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) total += std::exp(x(i, j) - top);
    for (std::size_t i = 0; i < x.rows; ++i) out(i, j) = std::exp(x(i, j) - top) / total;
  }
  return out;
}

}  // namespace magnet::oracles

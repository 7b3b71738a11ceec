#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "magnet/oracles/attention.hpp"

namespace magnet::oracles {

namespace {

Dense matmul(const Dense& a, const Dense& b) {
  if (a.cols != b.rows) throw std::invalid_argument("oracle matmul: shape mismatch");
  Dense out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

Dense affine(const Dense& x, const Linear& l) {
  Dense out = matmul(x, l.w);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += l.b[j];
  return out;
}

std::vector<double> softmax(const std::vector<double>& row) {
  const double top = *std::max_element(row.begin(), row.end());
  std::vector<double> e(row.size());
  double total = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) total += e[i] = std::exp(row[i] - top);
  for (double& x : e) x /= total;
  return e;
}

}  // namespace

Dense topk_softmax(const Dense& scores, std::size_t k) {
  Dense out(scores.rows, scores.cols);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    std::vector<double> row(scores.v.begin() + static_cast<std::ptrdiff_t>(i * scores.cols),
                            scores.v.begin() + static_cast<std::ptrdiff_t>((i + 1) * scores.cols));
    const std::vector<double> probs = softmax(row);
    std::vector<std::size_t> order(scores.cols);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return row[a] != row[b] ? row[a] > row[b] : a < b;
    });
    for (std::size_t r = 0; r < std::min(k, order.size()); ++r) out(i, order[r]) = probs[order[r]];
  }
  return out;
}

Dense causal_scores(const Dense& z, const Dense& w_q, const Dense& w_k, std::size_t heads, std::size_t stocks,
                    double masked) {
  const Dense q = matmul(z, w_q), k = matmul(z, w_k);
  const std::size_t dh = q.cols / heads;
  Dense out(z.rows, z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) {
    for (std::size_t j = 0; j < z.rows; ++j) {
      if (j / stocks > i / stocks) {
        out(i, j) = masked;
        continue;
      }
      double total = 0.0;
      for (std::size_t h = 0; h < heads; ++h) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q(i, c) * k(j, c);
        total += dot / std::sqrt(static_cast<double>(dh));
      }
      out(i, j) = total / static_cast<double>(heads);
    }
  }
  return out;
}

Dense mha_sequence(const Dense& z, const Dense& w_q, const Dense& w_k, const Dense& w_v, const Dense& w_o,
                   std::size_t heads) {
  const Dense q = matmul(z, w_q), k = matmul(z, w_k), v = matmul(z, w_v);
  const std::size_t t = z.rows, dh = q.cols / heads;
  Dense ctx(t, q.cols);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> s(t);
      for (std::size_t j = 0; j < t; ++j) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q(i, c) * k(j, c);
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      const std::vector<double> a = softmax(s);
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < t; ++j) acc += a[j] * v(j, c);
        ctx(i, c) = acc;
      }
    }
  }
  return matmul(ctx, w_o);
}

Dense gate_literal(const Dense& fwd, const Dense& bwd, const Dense& w_f, const std::vector<double>& b_f,
                   const Dense& w_b, const std::vector<double>& b_b) {
  const Dense a = matmul(fwd, w_f), b = matmul(bwd, w_b);
  Dense out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) = sigmoid(a(i, j) + b_f[j] + b(i, j) + b_b[j]);
  return out;
}

Dense capacity_weights(const Dense& p_hat, double capacity) {
  Dense out(p_hat.rows, p_hat.cols);
  for (std::size_t e = 0; e < p_hat.cols; ++e) {
    double total = 0.0;
    for (std::size_t i = 0; i < p_hat.rows; ++i) total += p_hat(i, e);
    if (total == 0.0) continue;
    for (std::size_t i = 0; i < p_hat.rows; ++i) out(i, e) = capacity * p_hat(i, e) / total;
  }
  return out;
}

MatrixAttentionResult matrix_attention(const std::vector<Dense>& items, const MatrixAttentionParams& p) {
  const std::size_t l = items.size(), rows = items.at(0).rows, channels = p.q.size();
  std::vector<std::vector<Dense>> q(channels), k(channels), v(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (const Dense& x : items) {
      q[c].push_back(affine(x, p.q[c]));
      k[c].push_back(affine(x, p.k[c]));
      v[c].push_back(affine(x, p.v[c]));
    }
  }
  const std::size_t s_red = q[0][0].cols;
  MatrixAttentionResult res;
  res.weights = Dense(l, l);
  for (std::size_t i = 0; i < l; ++i) {
    std::vector<double> logits(l);
    for (std::size_t j = 0; j < l; ++j) {
      Dense features(1, channels * rows * rows);
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t a = 0; a < rows; ++a)
          for (std::size_t b = 0; b < rows; ++b) {
            double dot = 0.0;
            for (std::size_t s = 0; s < s_red; ++s) dot += q[c][i](a, s) * k[c][j](b, s);
            features(0, c * rows * rows + a * rows + b) = dot / std::sqrt(static_cast<double>(s_red));
          }
      Dense hidden = affine(features, p.fuse_hidden);
      for (double& x : hidden.v) x = gelu(x);
      logits[j] = affine(hidden, p.fuse_out)(0, 0);
    }
    const std::vector<double> w = softmax(logits);
    for (std::size_t j = 0; j < l; ++j) res.weights(i, j) = w[j];
  }
  for (std::size_t i = 0; i < l; ++i) {
    Dense stacked(rows, channels * s_red);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t a = 0; a < rows; ++a)
        for (std::size_t s = 0; s < s_red; ++s) {
          double acc = 0.0;
          for (std::size_t j = 0; j < l; ++j) acc += res.weights(i, j) * v[c][j](a, s);
          stacked(a, c * s_red + s) = acc;
        }
    res.output.push_back(affine(stacked, p.out));
  }
  return res;
}

}  // namespace magnet::oracles

#include "magnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace magnet {

const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  MAGNET_DEBUG_FINITE(value, "tape op output");
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw std::invalid_argument("op inputs belong to a different tape");
      if (nodes_[v.id_].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::invalid_argument("backward root belongs to a different tape");
  if (nodes_[root.id_].value.size() != 1) {
    throw ShapeError("backward root must hold a single element, got " +
                     shape_str(nodes_[root.id_].value.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& r = nodes_[root.id_];
  if (!r.requires_grad) return;
  r.grad = Tensor(r.value.shape(), 1.0);
  r.has_grad = true;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // The closure may append to other nodes' gradients but never reallocates
    // this node (deque references are stable).
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id_];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id_].requires_grad) return;
  Tensor& buf = grad_buffer(v);
  if (!buf.same_shape(g)) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                     shape_str(buf.shape()));
  }
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

// ---------------------------------------------------------------------------
// Elementwise ops with one-sided broadcasting.

namespace {

struct BroadcastPlan {
  enum class Kind { kSame, kScalar, kGeneral } kind = Kind::kSame;
  Shape out_shape;
  std::vector<std::size_t> b_strides;  // aligned to out rank; 0 on broadcast axes
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out_shape = a;
  if (a == b) return p;
  if (shape_numel(b) == 1) {
    p.kind = BroadcastPlan::Kind::kScalar;
    return p;
  }
  if (b.size() > a.size()) {
    throw ShapeError("cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
  }
  p.kind = BroadcastPlan::Kind::kGeneral;
  const std::size_t offset = a.size() - b.size();
  std::vector<std::size_t> b_full(a.size(), 1);
  for (std::size_t i = 0; i < b.size(); ++i) b_full[offset + i] = b[i];
  p.b_strides.assign(a.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = a.size(); i-- > 0;) {
    if (b_full[i] == a[i]) {
      p.b_strides[i] = stride;
    } else if (b_full[i] != 1) {
      throw ShapeError("cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
    }
    stride *= b_full[i];
  }
  return p;
}

// Calls f(a_index, b_index) for every element of the output.
template <class F>
void for_each_pair(const BroadcastPlan& p, std::size_t n, F&& f) {
  switch (p.kind) {
    case BroadcastPlan::Kind::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i);
      return;
    case BroadcastPlan::Kind::kScalar:
      for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0});
      return;
    case BroadcastPlan::Kind::kGeneral: {
      const std::size_t r = p.out_shape.size();
      std::vector<std::size_t> idx(r, 0);
      std::size_t boff = 0;
      for (std::size_t i = 0; i < n; ++i) {
        f(i, boff);
        for (std::size_t ax = r; ax-- > 0;) {
          ++idx[ax];
          boff += p.b_strides[ax];
          if (idx[ax] < p.out_shape[ax]) break;
          boff -= p.b_strides[ax] * p.out_shape[ax];
          idx[ax] = 0;
        }
      }
      return;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Var binary(Var a, Var b, BinaryKind kind) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  BroadcastPlan plan = plan_broadcast(av.shape(), bv.shape());
  Tensor out(av.shape());
  for_each_pair(plan, av.size(), [&](std::size_t i, std::size_t j) {
    switch (kind) {
      case BinaryKind::kAdd: out[i] = av[i] + bv[j]; break;
      case BinaryKind::kSub: out[i] = av[i] - bv[j]; break;
      case BinaryKind::kMul: out[i] = av[i] * bv[j]; break;
      case BinaryKind::kDiv: out[i] = av[i] / bv[j]; break;
    }
  });
  return a.tape().record(std::move(out), {a, b}, [a, b, plan, kind](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool ga_needed = t.requires_grad(a);
    const bool gb_needed = t.requires_grad(b);
    Tensor* ga = ga_needed ? &t.grad_buffer(a) : nullptr;
    Tensor* gb = gb_needed ? &t.grad_buffer(b) : nullptr;
    for_each_pair(plan, g.size(), [&](std::size_t i, std::size_t j) {
      switch (kind) {
        case BinaryKind::kAdd:
          if (ga) (*ga)[i] += g[i];
          if (gb) (*gb)[j] += g[i];
          break;
        case BinaryKind::kSub:
          if (ga) (*ga)[i] += g[i];
          if (gb) (*gb)[j] -= g[i];
          break;
        case BinaryKind::kMul:
          if (ga) (*ga)[i] += g[i] * bv[j];
          if (gb) (*gb)[j] += g[i] * av[i];
          break;
        case BinaryKind::kDiv:
          if (ga) (*ga)[i] += g[i] / bv[j];
          if (gb) (*gb)[j] -= g[i] * av[i] / (bv[j] * bv[j]);
          break;
      }
    });
  });
}

// Outer/len/inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, BinaryKind::kAdd); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::kSub); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::kMul); }
Var div(Var a, Var b) { return binary(a, b, BinaryKind::kDiv); }

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_scalar(Var a, double value) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + value;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var activation(Var a, Activation kind) {
  Tensor out = ops::activation(a.value(), kind);
  return a.tape().record(std::move(out), {a}, [a, kind](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * activate_derivative(kind, av[i]);
  });
}

Var log(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > 0)) throw NonFiniteError("log of non-positive value");
    out[i] = std::log(av[i]);
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
  });
}

Var sqrt(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] < 0) throw NonFiniteError("sqrt of negative value");
    out[i] = std::sqrt(av[i]);
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / std::sqrt(av[i]);
  });
}

Var softmax(Var a, std::size_t axis) {
  Tensor out = ops::softmax(a.value(), axis);
  const AxisSplit sp = split_axis(a.shape(), axis);
  Tensor saved = a.tape().grad_enabled() ? out : Tensor();
  return a.tape().record(std::move(out), {a}, [a, s = std::move(saved), sp](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t k = base + j * sp.inner;
          dot += g[k] * s[k];
        }
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t k = base + j * sp.inner;
          ga[k] += s[k] * (g[k] - dot);
        }
      }
    }
  });
}

Var softmax_last(Var a) { return softmax(a, a.shape().size() - 1); }

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm gain/bias must match last axis of " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.size() / d;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mean) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](
          Tape& t, const Tensor& g) {
        const Tensor& gv = gain.value();
        if (t.requires_grad(gain)) {
          Tensor& gg = t.grad_buffer(gain);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (t.requires_grad(bias)) {
          Tensor& gb = t.grad_buffer(bias);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (t.requires_grad(x)) {
          Tensor& gx = t.grad_buffer(x);
          const double dn = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gy = g[r * d + j] * gv[j];
              sum_g += gy;
              sum_gx += gy * xhat[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gy = g[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] / dn * (dn * gy - sum_g - xhat[r * d + j] * sum_gx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Products

Var matmul(Var a, Var b) {
  Tensor out = ops::matmul(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t k = bv.dim(0), n = bv.dim(1);
    const std::size_t m = av.size() / k;
    if (t.requires_grad(a)) {
      gemm(m, k, n, g.data().data(), false, bv.data().data(), true,
           t.grad_buffer(a).mutable_data().data(), true);
    }
    if (t.requires_grad(b)) {
      gemm(k, n, m, av.data().data(), true, g.data().data(), false,
           t.grad_buffer(b).mutable_data().data(), true);
    }
  });
}

Var bmm(Var a, Var b, bool transpose_b) {
  Tensor out = ops::bmm(a.value(), b.value(), transpose_b);
  return a.tape().record(std::move(out), {a, b}, [a, b, transpose_b](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
    const std::size_t n = g.dim(2);
    const bool need_a = t.requires_grad(a);
    const bool need_b = t.requires_grad(b);
    double* ga = need_a ? t.grad_buffer(a).mutable_data().data() : nullptr;
    double* gb = need_b ? t.grad_buffer(b).mutable_data().data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      const double* gi = g.data().data() + i * m * n;
      const double* ai = av.data().data() + i * m * k;
      const double* bi = bv.data().data() + i * k * n;
      if (!transpose_b) {
        // out = a b, b: [K, N]
        if (ga) gemm(m, k, n, gi, false, bi, true, ga + i * m * k, true);
        if (gb) gemm(k, n, m, ai, true, gi, false, gb + i * k * n, true);
      } else {
        // out = a b^T, b: [N, K]
        if (ga) gemm(m, k, n, gi, false, bi, false, ga + i * m * k, true);
        if (gb) gemm(n, k, m, gi, true, ai, false, gb + i * n * k, true);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var permute(Var a, std::vector<std::size_t> axes) {
  Tensor out = ops::permute(a.value(), axes);
  return a.tape().record(std::move(out), {a}, [a, axes](Tape& t, const Tensor& g) {
    std::vector<std::size_t> inverse(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
    Tensor back = ops::permute(g, inverse);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < back.size(); ++i) ga[i] += back[i];
  });
}

Var transpose(Var a) {
  if (a.shape().size() != 2) throw ShapeError("transpose expects a matrix");
  return permute(a, {1, 0});
}

Var flip(Var a, std::size_t axis) {
  Tensor out = ops::flip(a.value(), axis);
  return a.tape().record(std::move(out), {a}, [a, axis](Tape& t, const Tensor& g) {
    Tensor back = ops::flip(g, axis);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < back.size(); ++i) ga[i] += back[i];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) {
        throw ShapeError("concat extent mismatch: " + shape_str(s) + " vs " + shape_str(out_shape));
      }
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  out_shape[axis] = total;
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t start = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& pv = parts[p].value();
    const std::size_t chunk = lens[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.data().data() + o * chunk, chunk,
                  out.mutable_data().data() + (o * total + start) * sp.inner);
    }
    start += lens[p];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), std::span<const Var>(inputs),
      [inputs, lens, sp, total](Tape& t, const Tensor& g) {
        std::size_t start = 0;
        for (std::size_t p = 0; p < inputs.size(); ++p) {
          const std::size_t chunk = lens[p] * sp.inner;
          if (t.requires_grad(inputs[p])) {
            Tensor& gp = t.grad_buffer(inputs[p]);
            for (std::size_t o = 0; o < sp.outer; ++o) {
              const double* src = g.data().data() + (o * total + start) * sp.inner;
              double* dst = gp.mutable_data().data() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
          start += lens[p];
        }
      });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("invalid slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t chunk = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(a.value().data().data() + (o * sp.len + begin) * sp.inner, chunk,
                out.mutable_data().data() + o * chunk);
  }
  return a.tape().record(std::move(out), {a}, [a, sp, begin, chunk](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* src = g.data().data() + o * chunk;
      double* dst = ga.mutable_data().data() + (o * sp.len + begin) * sp.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum_all(Var a) {
  const Tensor& av = a.value();
  double total = 0.0;
  for (double v : av.data()) total += v;
  return a.tape().record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Var sum(Var a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = 1;
  Tensor out(out_shape);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.len; ++j)
      for (std::size_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += av[(o * sp.len + j) * sp.inner + in];
  return a.tape().record(std::move(out), {a}, [a, sp](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.len; ++j)
        for (std::size_t in = 0; in < sp.inner; ++in)
          ga[(o * sp.len + j) * sp.inner + in] += g[o * sp.inner + in];
  });
}

Var mean(Var a, std::size_t axis) {
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

// ---------------------------------------------------------------------------
// Indexing

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("gather_rows expects a matrix");
  if (rows.empty()) throw ShapeError("gather_rows needs at least one row");
  const std::size_t cols = av.dim(1);
  Tensor out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.dim(0)) throw std::out_of_range("gather_rows index out of range");
    std::copy_n(av.data().data() + rows[i] * cols, cols, out.mutable_data().data() + i * cols);
  }
  return a.tape().record(std::move(out), {a}, [a, rows = std::move(rows), cols](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) ga[rows[i] * cols + c] += g[i * cols + c];
  });
}

Var scatter_rows(Var a, std::vector<std::size_t> rows, std::size_t total_rows) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || av.dim(0) != rows.size()) throw ShapeError("scatter_rows shape mismatch");
  const std::size_t cols = av.dim(1);
  Tensor out({total_rows, cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total_rows) throw std::out_of_range("scatter_rows index out of range");
    for (std::size_t c = 0; c < cols; ++c) out[rows[i] * cols + c] += av[i * cols + c];
  }
  return a.tape().record(std::move(out), {a}, [a, rows = std::move(rows), cols](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) ga[i * cols + c] += g[rows[i] * cols + c];
  });
}

Var pick(Var a, std::vector<std::size_t> cols) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || av.dim(0) != cols.size()) throw ShapeError("pick shape mismatch");
  const std::size_t width = av.dim(1);
  Tensor out({cols.size(), 1});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= width) throw std::out_of_range("pick column out of range");
    out[r] = av[r * width + cols[r]];
  }
  return a.tape().record(std::move(out), {a}, [a, cols = std::move(cols), width](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < cols.size(); ++r) ga[r * width + cols[r]] += g[r];
  });
}

Var topk_softmax(Var a, std::size_t k) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("topk_softmax expects a matrix");
  if (k == 0) throw std::invalid_argument("topk_softmax needs K >= 1");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor s = ops::softmax_last(av);
  Tensor out({rows, cols});
  std::vector<unsigned char> kept(rows * cols, 0);
  std::vector<std::size_t> order(cols);
  const std::size_t keep = std::min(k, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* sr = s.data().data() + r * cols;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [sr](std::size_t x, std::size_t y) {
                        if (sr[x] != sr[y]) return sr[x] > sr[y];
                        return x < y;
                      });
    for (std::size_t i = 0; i < keep; ++i) {
      const std::size_t c = order[i];
      kept[r * cols + c] = 1;
      out[r * cols + c] = sr[c];
    }
  }
  return a.tape().record(std::move(out), {a},
                         [a, s = std::move(s), kept = std::move(kept), rows, cols](Tape& t, const Tensor& g) {
                           Tensor& ga = t.grad_buffer(a);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) {
                               const std::size_t i = r * cols + c;
                               if (kept[i]) dot += g[i] * s[i];
                             }
                             for (std::size_t c = 0; c < cols; ++c) {
                               const std::size_t i = r * cols + c;
                               ga[i] += s[i] * ((kept[i] ? g[i] : 0.0) - dot);
                             }
                           }
                         });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (!a.tape().training() || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(a.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < rate ? 0.0 : keep_scale;
  }
  return mul(a, a.tape().constant(std::move(mask)));
}

Var nll_loss(Var probs, std::span<const int> labels, double floor) {
  const Tensor& pv = probs.value();
  if (pv.rank() != 2 || pv.dim(0) != labels.size()) throw ShapeError("nll_loss shape mismatch");
  const std::size_t n = pv.dim(0), c = pv.dim(1);
  double total = 0.0;
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw std::out_of_range("label " + std::to_string(labels[r]) + " out of range");
    }
    idx[r] = static_cast<std::size_t>(labels[r]) + r * c;
    total -= std::log(std::max(pv[idx[r]], floor));
  }
  total /= static_cast<double>(n);
  return probs.tape().record(Tensor::scalar(total), {probs},
                             [probs, idx = std::move(idx), n, floor](Tape& t, const Tensor& g) {
                               const Tensor& pv = probs.value();
                               Tensor& gp = t.grad_buffer(probs);
                               for (std::size_t i : idx) {
                                 if (pv[i] >= floor) gp[i] -= g[0] / (static_cast<double>(n) * pv[i]);
                               }
                             });
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double h) {
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const Tensor& x : xs) vars.push_back(tape.constant(x));
    Var y = f(tape, vars);
    if (y.size() != 1) throw ShapeError("grad_check function must return a scalar");
    const double v = y.value()[0];
    if (!std::isfinite(v)) throw NonFiniteError("grad_check function value is not finite");
    return v;
  };

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(tape.leaf(x));
  Var y = f(tape, vars);
  if (y.size() != 1) throw ShapeError("grad_check function must return a scalar");
  if (!std::isfinite(y.value()[0])) throw NonFiniteError("grad_check function value is not finite");
  tape.backward(y);

  GradCheckReport report;
  std::vector<Tensor> work = inputs;
  for (std::size_t in = 0; in < inputs.size(); ++in) {
    const Tensor analytic = tape.grad(vars[in]);
    for (std::size_t i = 0; i < inputs[in].size(); ++i) {
      const double orig = work[in][i];
      work[in][i] = orig + h;
      const double fp = evaluate(work);
      work[in][i] = orig - h;
      const double fm = evaluate(work);
      work[in][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      if (report.coordinates++ == 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.input = in;
        report.index = i;
        report.analytic = analytic[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  ScalarFn wrapped = [&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); };
  return grad_check(wrapped, std::vector<Tensor>{x}, h).max_rel_error;
}

}  // namespace magnet

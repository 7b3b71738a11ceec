#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "magnet/tensor.hpp"

namespace magnet {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// valid topological order. Replaying is deterministic: the same inputs give
/// bit-identical gradients.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Records an op result. `backward` runs only if some input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var root);

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  /// Gradient of the last backward() root w.r.t. v; zeros if v did not contribute.
  Tensor grad(Var v) const;

  /// Adds g into v's gradient buffer (no-op if v does not require a gradient).
  void accumulate(Var v, const Tensor& g);
  /// Zero-initialized gradient buffer of v for in-place accumulation.
  Tensor& grad_buffer(Var v);

  /// When disabled, ops record values only (inference mode).
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  /// Training-mode flag consulted by dropout.
  void set_training(bool training) noexcept { training_ = training; }
  bool training() const noexcept { return training_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool training_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Binary ops broadcast the right operand onto the left
// operand's shape: b is right-aligned and each of its extents equals the
// corresponding extent of a or is 1.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

Var activation(Var a, Activation kind);
inline Var sigmoid(Var a) { return activation(a, Activation::kSigmoid); }
inline Var gelu(Var a) { return activation(a, Activation::kGelu); }
inline Var elu(Var a) { return activation(a, Activation::kElu); }
inline Var silu(Var a) { return activation(a, Activation::kSilu); }
inline Var softplus(Var a) { return activation(a, Activation::kSoftplus); }
inline Var retanh(Var a) { return activation(a, Activation::kReTanh); }
inline Var exp(Var a) { return activation(a, Activation::kExp); }
Var log(Var a);
Var sqrt(Var a);

Var softmax(Var a, std::size_t axis);
Var softmax_last(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var matmul(Var a, Var b);
Var bmm(Var a, Var b, bool transpose_b = false);

Var reshape(Var a, Shape shape);
Var permute(Var a, std::vector<std::size_t> axes);
Var transpose(Var a);
Var flip(Var a, std::size_t axis);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

Var sum_all(Var a);
Var mean_all(Var a);
/// Sum over `axis`, keeping it with extent 1.
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);

/// Rows of a 2-D tensor selected by index, in the given order.
Var gather_rows(Var a, std::vector<std::size_t> rows);
/// Inverse of gather_rows: places row i of a at output row rows[i]; other rows are zero.
Var scatter_rows(Var a, std::vector<std::size_t> rows, std::size_t total_rows);
/// out[r, 0] = a[r, cols[r]]
Var pick(Var a, std::vector<std::size_t> cols);

/// Row-wise softmax over the full row, keeping only the K largest probabilities
/// (ties to the lower column). Kept entries carry exact softmax gradients;
/// dropped entries contribute none.
Var topk_softmax(Var a, std::size_t k);

/// Inverted dropout with a mask drawn from rng; identity when the tape is not training.
Var dropout(Var a, double rate, std::mt19937_64& rng);

/// Mean negative log-likelihood of `labels` under row-probabilities `probs` [N, C],
/// with probabilities clamped at `floor` before the log.
Var nll_loss(Var probs, std::span<const int> labels, double floor = 1e-12);

// ---------------------------------------------------------------------------
// Finite-difference checking.

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t input = 0;   // input tensor holding the worst coordinate
  std::size_t index = 0;   // flat index of the worst coordinate
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape gradients with central differences at every coordinate of
/// every input: max |analytic - numeric| / max(1, |analytic|).
/// Throws NonFiniteError if f is not finite at some evaluation point.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5);

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-5);

}  // namespace magnet

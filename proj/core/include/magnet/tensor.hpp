#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace magnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Pre-softmax score for positions that must receive zero attention.
// Finite so that tensors keep the all-finite invariant; exp() underflows to 0.
inline constexpr double kMaskedScore = std::numeric_limits<double>::lowest();

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense row-major array of doubles.
///
/// Every extent is positive and the element count equals the product of the
/// extents. Construction from caller-supplied data rejects NaN and infinities.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws NonFiniteError if any entry is NaN or infinite.
void require_finite(const Tensor& t, std::string_view where);

#ifndef NDEBUG
#define MAGNET_DEBUG_FINITE(tensor, where) ::magnet::require_finite((tensor), (where))
#else
#define MAGNET_DEBUG_FINITE(tensor, where) ((void)0)
#endif

enum class Activation { kSigmoid, kTanh, kGelu, kElu, kSilu, kSoftplus, kReTanh, kExp };

std::string_view activation_name(Activation kind);

double activate(Activation kind, double x);
double activate_derivative(Activation kind, double x);

// Plain (non-differentiable) kernels. The tape ops in autodiff.hpp reuse them
// for their forward passes.
namespace ops {

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_last(const Tensor& x);

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor activation(const Tensor& x, Activation kind);

/// [..., K] x [K, N] -> [..., N]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched product of [B, M, K] with [B, K, N] (or [B, N, K] when transpose_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor flip(const Tensor& a, std::size_t axis);

}  // namespace ops

// Raw GEMM used by all matrix products: C (+)= op(A) * op(B), row-major.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, bool transpose_a,
          const double* b, bool transpose_b, double* c, bool accumulate);

}  // namespace magnet

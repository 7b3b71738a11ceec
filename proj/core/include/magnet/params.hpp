#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "magnet/autodiff.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

/// Seeded random source. Draws are derived from raw mt19937_64 output so
/// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // standard normal, Box-Muller
  std::size_t index(std::size_t n);       // [0, n)
  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Uniform in +-1/sqrt(fan_in).
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Named parameter tensors in insertion order.
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  std::size_t position(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get_mutable(std::string_view name);

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<Tensor>& tensors() const noexcept { return values_; }
  std::vector<Tensor>& tensors() noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t element_count() const;

  bool operator==(const ParamStore& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Every parameter of a store placed on a tape (as leaves or constants).
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store, bool trainable = true);
  /// Binds existing tape values, one per store entry in store order.
  BoundParams(Tape& tape, const ParamStore& store, std::vector<Var> vars);

  Var operator[](std::string_view name) const;
  const std::vector<Var>& vars() const noexcept { return vars_; }
  const ParamStore& store() const noexcept { return *store_; }
  Tape& tape() const noexcept { return *tape_; }

 private:
  Tape* tape_;
  const ParamStore* store_;
  std::vector<Var> vars_;
};

/// Prefix-qualified lookup into BoundParams: scope("mage0")("gate.w_f").
class ParamScope {
 public:
  ParamScope(const BoundParams& params, std::string prefix = {})
      : params_(&params), prefix_(std::move(prefix)) {}

  Var operator()(std::string_view name) const;
  ParamScope scope(std::string_view name) const;
  const std::string& prefix() const noexcept { return prefix_; }
  Tape& tape() const { return params_->tape(); }

 private:
  const BoundParams* params_;
  std::string prefix_;
};

std::string join_name(std::string_view prefix, std::string_view name);

}  // namespace magnet

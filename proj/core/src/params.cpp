#include "magnet/params.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace magnet {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index of empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

void ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamStore::position(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamStore::get(std::string_view name) const { return values_[position(name)]; }

Tensor& ParamStore::get_mutable(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, bool trainable)
    : tape_(&tape), store_(&store) {
  vars_.reserve(store.size());
  for (const Tensor& t : store.tensors()) {
    vars_.push_back(trainable ? tape.leaf(t) : tape.constant(t));
  }
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, std::vector<Var> vars)
    : tape_(&tape), store_(&store), vars_(std::move(vars)) {
  if (vars_.size() != store.size()) throw std::invalid_argument("BoundParams: one var per parameter required");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].shape() != store.tensors()[i].shape()) {
      throw ShapeError("BoundParams: shape mismatch for " + store.names()[i]);
    }
  }
}

Var BoundParams::operator[](std::string_view name) const { return vars_[store_->position(name)]; }

std::string join_name(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

Var ParamScope::operator()(std::string_view name) const { return (*params_)[join_name(prefix_, name)]; }

ParamScope ParamScope::scope(std::string_view name) const {
  return ParamScope(*params_, join_name(prefix_, name));
}

}  // namespace magnet

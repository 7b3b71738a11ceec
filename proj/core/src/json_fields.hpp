#pragma once

// Strict reading of flat JSON objects into config structs.

#include <set>
#include <string>

#include "json.hpp"
#include "magnet/model.hpp"

namespace magnet::detail {

class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& object, std::string context) : object_(object), context_(std::move(context)) {
    if (!object_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  /// Copies `key` into `out` when present; type mismatches are errors.
  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    const auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError(where(key) + " must be a nonnegative integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(where(key) + " must be a boolean");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(where(key) + " must be a number");
      }
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  /// Sub-object under `key`, or null when absent.
  const nlohmann::json* child(const char* key) {
    known_.insert(key);
    const auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  /// Throws on any key that was never asked for.
  void finish() const {
    for (const auto& [key, _] : object_.items()) {
      if (!known_.count(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
    }
  }

 private:
  std::string where(const char* key) const { return context_ + "." + key; }

  const nlohmann::json& object_;
  std::string context_;
  std::set<std::string> known_;
};

}  // namespace magnet::detail

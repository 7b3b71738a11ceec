#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace magnet {

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  std::uint64_t digest() const noexcept { return state_; }
  /// "fnv1a64:" followed by 16 lowercase hex digits.
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string checksum_string(std::string_view bytes);
std::string checksum_file(const std::filesystem::path& path);

/// Reads a whole file; throws std::runtime_error if it cannot be opened.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_number(double v);

}  // namespace magnet

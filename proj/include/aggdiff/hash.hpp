#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace aggdiff {

// 64-bit FNV-1a over raw bytes; used for cache keys and table identities.
class Fnv1a {
 public:
  void add_bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void add(std::string_view s) { add_bytes(s.data(), s.size()); }
  void add(std::uint64_t v) { add_bytes(&v, sizeof v); }
  void add(double v) { add_bytes(&v, sizeof v); }
  void add_doubles(std::span<const double> v) { add_bytes(v.data(), v.size_bytes()); }

  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace aggdiff

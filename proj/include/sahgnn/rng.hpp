#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sahgnn {

using Rng = std::mt19937_64;

/// splitmix64 finaliser over the pair (a, b).
constexpr std::uint64_t hash64(std::uint64_t a, std::uint64_t b) noexcept {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of a named substream; FNV-1a over the name, then mixed with base.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return hash64(base, h);
}

inline Rng make_rng(std::uint64_t base, std::string_view stream) { return Rng(derive_seed(base, stream)); }

}  // namespace sahgnn

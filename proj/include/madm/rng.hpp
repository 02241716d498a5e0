#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace madm {

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and a key path.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t s = mix64(master);
  for (auto k : keys) s = mix64(s ^ mix64(k + 0x632BE59BD9B4E019ULL));
  return s;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(master, keys));
}

}  // namespace madm

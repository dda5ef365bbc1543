#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nervcp {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Every random stream is derived from the run seed plus a fixed label, so a
// new consumer never shifts the draws of an existing one.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                           std::string_view label) {
  return splitmix64(seed ^ fnv1a(label));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view label) {
  return Rng(derive_seed(seed, label));
}

}  // namespace nervcp

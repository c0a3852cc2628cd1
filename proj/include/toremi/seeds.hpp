// Seed fan-out and portable random draws.
//
// One user-facing seed is hashed with a component label into per-component
// sub-seeds, so components can be re-run independently and still reproduce.
// Raw mt19937_64 output is mapped to doubles/indices here instead of going
// through <random> distributions, whose results vary between standard
// library implementations.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace toremi {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t fnv1a64_u64(std::uint64_t value, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xffu;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  return fnv1a64(label, fnv1a64_u64(base));
}

// Uniform double in [0, 1) built from the top 53 bits of one engine draw.
inline double next_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform index in [0, n). n must be positive.
inline std::size_t next_index(std::mt19937_64& rng, std::size_t n) {
  std::size_t i = static_cast<std::size_t>(next_unit(rng) * static_cast<double>(n));
  return i < n ? i : n - 1;
}

// Standard normal via Box-Muller on our own uniforms.
inline double next_normal(std::mt19937_64& rng) {
  double u1 = 1.0 - next_unit(rng);  // (0, 1]
  double u2 = next_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

}  // namespace toremi

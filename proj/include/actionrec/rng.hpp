#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace actionrec {

// std::mt19937_64 is specified bit-exactly by the standard, the std
// distributions are not. Everything seeded in the library draws through the
// helpers below so results match across standard libraries.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent stream seed for a named stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  return splitmix64(seed ^ fnv1a64(stage));
}

// Uniform in [0, 1).
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n), rejection sampled (no modulo bias).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

template <class It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace actionrec

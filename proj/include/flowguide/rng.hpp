#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "flowguide/common.hpp"

namespace flowguide {

// splitmix64 generator. <random> engines are portable but the standard leaves
// distribution algorithms implementation-defined, so normal draws from
// std::normal_distribution are not bit-stable across libstdc++/libc++.
// Outputs here are part of the reproducibility contract.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit mantissa
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  // Box-Muller, one value per call; u shifted into (0, 1] so log stays finite
  double normal() {
    double u = 1.0 - uniform();
    double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) *
           std::cos(6.283185307179586477 * v);
  }

  Vec normal_vec(int d) {
    Vec z(d);
    for (int i = 0; i < d; ++i) z[i] = normal();
    return z;
  }
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed-splitting rule: all randomness in an experiment flows from one
// top-level seed through these two functions (tag for a named purpose,
// index for per-item streams). Streams never share draws.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  return Rng(seed ^ fnv1a64(tag)).next();
}

inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
  return Rng(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1))).next();
}

}  // namespace flowguide

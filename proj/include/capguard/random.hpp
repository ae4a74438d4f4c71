#pragma once

// Seeded, platform-independent random helpers.
//
// std::*_distribution output is implementation-defined, so fixtures generated
// with it would differ between standard libraries. Everything here is derived
// from the raw 64-bit output of std::mt19937_64, which the standard pins down
// exactly.

#include <cstdint>
#include <random>
#include <string_view>

namespace capguard::rng {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream per (seed, key); used so per-caption output does not
// depend on processing order.
inline Engine derive(std::uint64_t seed, std::string_view key) {
  return Engine(splitmix64(seed ^ splitmix64(fnv1a64(key))));
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n). Rejection keeps it unbiased.
std::uint64_t uniform_index(Engine& eng, std::uint64_t n);

// Standard normal via Box-Muller (one value per call; the pair's sibling is
// discarded so the stream position depends only on the call count).
double standard_normal(Engine& eng);

// Gaussian with mean/stddev truncated to [lo, hi] by rejection.
double truncated_normal(Engine& eng, double mean, double stddev, double lo, double hi);

}  // namespace capguard::rng

#include "capguard/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace capguard::rng {

std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              (std::numeric_limits<std::uint64_t>::max() % n);
  std::uint64_t x = eng();
  while (x >= limit) x = eng();
  return x % n;
}

double standard_normal(Engine& eng) {
  double u1 = uniform01(eng);
  while (u1 <= 0.0) u1 = uniform01(eng);
  const double u2 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double truncated_normal(Engine& eng, double mean, double stddev, double lo, double hi) {
  for (;;) {
    const double x = mean + stddev * standard_normal(eng);
    if (x >= lo && x <= hi) return x;
  }
}

}  // namespace capguard::rng

#pragma once

// Slow, obviously-correct reference computations used only by tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "capguard/noisy_caption.hpp"
#include "capguard/series.hpp"
#include "capguard/tokenization.hpp"

namespace oracle {

// Pairwise O(n*m) span-intersection mapping.
inline std::vector<std::vector<std::size_t>> alignment(const capguard::Tokenization& a,
                                                       const capguard::Tokenization& b) {
  std::vector<std::vector<std::size_t>> out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const auto& s = a[k];
      const auto& t = b[j];
      if (s.special() || t.special()) continue;
      if (std::max(s.byte_start, t.byte_start) < std::min(s.byte_end, t.byte_end)) out[k].push_back(j);
    }
  }
  return out;
}

// Empirical CDFs compared at every sample point.
inline double ks(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> points = a;
  points.insert(points.end(), b.begin(), b.end());
  double best = 0.0;
  for (double x : points) {
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), x) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), x) - b.begin()) / b.size();
    best = std::max(best, std::abs(fa - fb));
  }
  return best;
}

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
}

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

// Mean of N(mu, sd) truncated to [lo, hi].
inline double truncated_mean(double mu, double sd, double lo, double hi) {
  const double a = (lo - mu) / sd;
  const double b = (hi - mu) / sd;
  return mu + sd * (normal_pdf(a) - normal_pdf(b)) / (normal_cdf(b) - normal_cdf(a));
}

// Quantile p of N(mu, sd) truncated to [lo, hi], by bisection on the CDF.
inline double truncated_quantile(double mu, double sd, double lo, double hi, double p) {
  const double ca = normal_cdf((lo - mu) / sd);
  const double cb = normal_cdf((hi - mu) / sd);
  double x0 = lo;
  double x1 = hi;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (x0 + x1);
    const double f = (normal_cdf((mid - mu) / sd) - ca) / (cb - ca);
    (f < p ? x0 : x1) = mid;
  }
  return 0.5 * (x0 + x1);
}

// Unshifted softmax.
inline std::vector<double> softmax(const std::vector<double>& x) {
  std::vector<double> e;
  double total = 0.0;
  for (double v : x) {
    e.push_back(std::exp(v));
    total += e.back();
  }
  for (double& v : e) v /= total;
  return e;
}

// Threshold by fully sorting the pool and counting ranks.
inline double quantile(std::vector<double> pool, double sigma) {
  std::sort(pool.begin(), pool.end());
  const double target = sigma * static_cast<double>(pool.size());
  std::size_t rank = 1;
  while (static_cast<double>(rank) < target - 1e-9) ++rank;
  return pool[rank - 1];
}

struct Counts {
  double epsilon = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  double precision = 1.0;
  double recall = 1.0;
};

inline Counts recount(const std::vector<capguard::ConfidenceSeries>& scores,
                      const std::vector<capguard::NoisyCaption>& truth, double sigma) {
  std::vector<double> pool;
  for (const auto& s : scores) {
    for (const auto& v : s.values()) {
      if (v) pool.push_back(*v);
    }
  }
  Counts c;
  c.epsilon = quantile(pool, sigma);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t k = 0; k < scores[i].size(); ++k) {
      if (!scores[i][k]) continue;
      const bool flagged = *scores[i][k] > c.epsilon;
      const bool noisy = truth[i].noise_mask[k];
      c.tp += flagged && noisy;
      c.fp += flagged && !noisy;
      c.fn += !flagged && noisy;
    }
  }
  if (c.tp + c.fp > 0) c.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) c.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return c;
}

}  // namespace oracle

#pragma once

// Captioner confidence scores.
//
// A captioner is run twice over each caption: once seeing the image and once
// text-only. The per-token probabilities of both passes arrive as a dump; from
// them we derive with-image, text-only and differential (text-only minus
// with-image) series, and summarize how the scores of hallucinated tokens are
// distributed relative to all tokens.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capguard/noisy_caption.hpp"
#include "capguard/series.hpp"

namespace capguard::confidence {

struct LogProbRecord {
  std::string caption_id;
  std::string tokenizer;
  std::vector<Score> with_image;
  std::vector<Score> text_only;

  bool operator==(const LogProbRecord&) const = default;
};

// Throws ParseError(line) on unequal lengths or disagreeing unscored
// positions, RangeError(line, field) on NaN or values outside [0, 1].
void validate(const LogProbRecord& rec, std::size_t line = 0);

std::vector<LogProbRecord> load_logprob_dump(const std::filesystem::path& path);
void write_logprob_dump(const std::filesystem::path& path, std::span<const LogProbRecord> records);

ConfidenceSeries with_image_scores(const LogProbRecord& rec);
ConfidenceSeries text_only_scores(const LogProbRecord& rec);
ConfidenceSeries differential_scores(const LogProbRecord& rec);
ConfidenceSeries scores_of_kind(const LogProbRecord& rec, ScoreKind kind);

struct Separation {
  double mean_shift = 0.0;    // mean_noisy - mean_all
  double ks_statistic = 0.0;  // sup |F_noisy - F_all|
};

struct HistogramReport {
  ScoreKind kind = ScoreKind::TextOnly;
  std::vector<double> bin_edges;
  std::vector<std::uint64_t> counts_all;
  std::vector<std::uint64_t> counts_noisy;  // empty when no masks were given
  double mean_all = 0.0;
  std::optional<double> mean_noisy;
  std::optional<Separation> separation;
};

// Two-sample Kolmogorov-Smirnov statistic. Both samples must be non-empty.
double ks_statistic(std::span<const double> a, std::span<const double> b);

// Streaming accumulator behind score_statistics. Results depend only on the
// multiset of (score, noisy) pairs added, not on the order.
class ScoreStatistics {
 public:
  // Histogram spans the kind's score range in `bins` equal-width bins; the
  // last bin is closed on the right.
  ScoreStatistics(ScoreKind kind, std::size_t bins);

  // Throws LengthMismatchError when a mask is given with the wrong length.
  void add(const ConfidenceSeries& series, const std::vector<bool>* noise_mask = nullptr);

  bool has_masks() const { return masked_; }
  std::size_t scored() const { return all_.size(); }

  // Throws EmptyInputError when no scored token was added.
  HistogramReport report() const;

 private:
  ScoreKind kind_;
  std::size_t bins_;
  bool masked_ = false;
  std::vector<double> all_;
  std::vector<double> noisy_;
};

// `noise_masks`, when given, is parallel to `series`.
HistogramReport score_statistics(std::span<const ConfidenceSeries> series,
                                 const std::vector<std::vector<bool>>* noise_masks,
                                 std::size_t bins);

// Gaussian truncated to [0, 1].
struct TruncatedGaussian {
  double mean = 0.5;
  double stddev = 0.15;
};

struct ProviderConfig {
  TruncatedGaussian clean{0.45, 0.15};
  TruncatedGaussian noisy{0.75, 0.15};
  std::uint64_t seed = 0;
};

// Throws ConfigError for non-finite parameters, stddev <= 0, or a truncation
// window holding less than 1e-4 of the probability mass.
void validate(const TruncatedGaussian& dist, const char* which);

// Emulates the two captioner passes. Noisy tokens draw text_only from the
// noisy distribution and with_image from the clean one; clean tokens draw
// both from the clean one. Each caption uses its own stream derived from
// (seed, caption_id).
std::vector<LogProbRecord> synthetic_provider(std::span<const NoisyCaption> corpus,
                                              const ProviderConfig& config);

}  // namespace capguard::confidence

#include "capguard/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capguard/errors.hpp"
#include "capguard/io.hpp"
#include "capguard/random.hpp"

namespace capguard::confidence {

void validate(const LogProbRecord& rec, std::size_t line) {
  if (rec.with_image.size() != rec.text_only.size()) {
    throw ParseError(line, "caption '" + rec.caption_id + "': with_image has " +
                               std::to_string(rec.with_image.size()) + " tokens, text_only has " +
                               std::to_string(rec.text_only.size()));
  }
  auto check = [&](const std::vector<Score>& values, const char* field) {
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (!values[k]) continue;
      const double v = *values[k];
      if (std::isnan(v)) throw RangeError(line, field, "NaN at token " + std::to_string(k));
      if (v < 0.0 || v > 1.0) {
        throw RangeError(line, field,
                         "probability " + io::format_double(v) + " at token " + std::to_string(k) +
                             " outside [0, 1]");
      }
    }
  };
  check(rec.with_image, "with_image");
  check(rec.text_only, "text_only");
  for (std::size_t k = 0; k < rec.with_image.size(); ++k) {
    if (rec.with_image[k].has_value() != rec.text_only[k].has_value()) {
      throw ParseError(line, "caption '" + rec.caption_id + "': token " + std::to_string(k) +
                                 " is unscored in only one pass");
    }
  }
}

std::vector<LogProbRecord> load_logprob_dump(const std::filesystem::path& path) {
  return io::read_all(path, io::parse_logprob);
}

void write_logprob_dump(const std::filesystem::path& path, std::span<const LogProbRecord> records) {
  io::JsonlWriter out(path);
  for (const auto& rec : records) out.write(io::to_json(rec));
  out.close();
}

ConfidenceSeries with_image_scores(const LogProbRecord& rec) {
  return ConfidenceSeries(rec.caption_id, ScoreKind::WithImage, rec.with_image);
}

ConfidenceSeries text_only_scores(const LogProbRecord& rec) {
  return ConfidenceSeries(rec.caption_id, ScoreKind::TextOnly, rec.text_only);
}

ConfidenceSeries differential_scores(const LogProbRecord& rec) {
  std::vector<Score> values(rec.text_only.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (rec.text_only[k] && rec.with_image[k]) values[k] = *rec.text_only[k] - *rec.with_image[k];
  }
  return ConfidenceSeries(rec.caption_id, ScoreKind::Differential, std::move(values));
}

ConfidenceSeries scores_of_kind(const LogProbRecord& rec, ScoreKind kind) {
  switch (kind) {
    case ScoreKind::WithImage:
      return with_image_scores(rec);
    case ScoreKind::TextOnly:
      return text_only_scores(rec);
    case ScoreKind::Differential:
      return differential_scores(rec);
  }
  throw Error("unreachable score kind");
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EmptyInputError("KS statistic needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size());
  const double ny = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double best = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    // Step past every sample equal to v on both sides before comparing the
    // two empirical CDFs, so ties never produce a spurious gap.
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return best;
}

ScoreStatistics::ScoreStatistics(ScoreKind kind, std::size_t bins) : kind_(kind), bins_(bins) {
  if (bins_ == 0) throw ConfigError("histogram needs at least one bin");
}

void ScoreStatistics::add(const ConfidenceSeries& series, const std::vector<bool>* noise_mask) {
  if (series.kind() != kind_) {
    throw MismatchError("caption '" + series.caption_id() + "': series kind " +
                        std::string(to_string(series.kind())) + " in a " +
                        std::string(to_string(kind_)) + " histogram");
  }
  if (noise_mask) {
    if (noise_mask->size() != series.size()) {
      throw LengthMismatchError("caption '" + series.caption_id() + "': mask has " +
                                std::to_string(noise_mask->size()) + " tokens, series has " +
                                std::to_string(series.size()));
    }
    masked_ = true;
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (!series[k]) continue;
    all_.push_back(*series[k]);
    if (noise_mask && (*noise_mask)[k]) noisy_.push_back(*series[k]);
  }
}

namespace {

std::size_t bin_of(double v, const std::vector<double>& edges) {
  const std::size_t bins = edges.size() - 1;
  const double lo = edges.front();
  const double hi = edges.back();
  auto idx = static_cast<std::ptrdiff_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
  idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1);
  auto i = static_cast<std::size_t>(idx);
  // Snap against the stored edges so counts agree with the edges we report.
  while (i > 0 && v < edges[i]) --i;
  while (i + 1 < bins && v >= edges[i + 1]) ++i;
  return i;
}

// Sum of an ascending-sorted sample; sorting first makes the result
// independent of input order.
double sorted_mean(const std::vector<double>& sorted) {
  return std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
}

}  // namespace

HistogramReport ScoreStatistics::report() const {
  if (all_.empty()) throw EmptyInputError("no scored tokens to summarize");
  HistogramReport r;
  r.kind = kind_;
  const ScoreRange range = score_range(kind_);
  r.bin_edges.resize(bins_ + 1);
  for (std::size_t i = 0; i <= bins_; ++i) {
    r.bin_edges[i] = range.lo + (range.hi - range.lo) * static_cast<double>(i) / static_cast<double>(bins_);
  }
  r.bin_edges.back() = range.hi;

  std::vector<double> all = all_;
  std::sort(all.begin(), all.end());
  r.counts_all.assign(bins_, 0);
  for (double v : all) ++r.counts_all[bin_of(v, r.bin_edges)];
  r.mean_all = sorted_mean(all);

  if (masked_) {
    std::vector<double> noisy = noisy_;
    std::sort(noisy.begin(), noisy.end());
    r.counts_noisy.assign(bins_, 0);
    for (double v : noisy) ++r.counts_noisy[bin_of(v, r.bin_edges)];
    if (!noisy.empty()) {
      r.mean_noisy = sorted_mean(noisy);
      r.separation = Separation{*r.mean_noisy - r.mean_all, ks_statistic(noisy, all)};
    }
  }
  return r;
}

HistogramReport score_statistics(std::span<const ConfidenceSeries> series,
                                 const std::vector<std::vector<bool>>* noise_masks,
                                 std::size_t bins) {
  if (series.empty()) throw EmptyInputError("no series to summarize");
  if (noise_masks && noise_masks->size() != series.size()) {
    throw LengthMismatchError("got " + std::to_string(noise_masks->size()) + " masks for " +
                              std::to_string(series.size()) + " series");
  }
  ScoreStatistics acc(series.front().kind(), bins);
  for (std::size_t i = 0; i < series.size(); ++i) {
    acc.add(series[i], noise_masks ? &(*noise_masks)[i] : nullptr);
  }
  return acc.report();
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

void validate(const TruncatedGaussian& dist, const char* which) {
  const std::string name(which);
  if (!std::isfinite(dist.mean) || !std::isfinite(dist.stddev)) {
    throw ConfigError(name + " distribution: parameters must be finite");
  }
  if (dist.stddev <= 0.0) throw ConfigError(name + " distribution: stddev must be positive");
  const double mass = normal_cdf((1.0 - dist.mean) / dist.stddev) - normal_cdf((0.0 - dist.mean) / dist.stddev);
  if (mass < 1e-4) {
    throw ConfigError(name + " distribution: less than 1e-4 of its mass lies in [0, 1]");
  }
}

std::vector<LogProbRecord> synthetic_provider(std::span<const NoisyCaption> corpus,
                                              const ProviderConfig& config) {
  validate(config.clean, "clean");
  validate(config.noisy, "noisy");
  auto draw = [](rng::Engine& eng, const TruncatedGaussian& d) {
    return rng::truncated_normal(eng, d.mean, d.stddev, 0.0, 1.0);
  };
  std::vector<LogProbRecord> out;
  out.reserve(corpus.size());
  for (const NoisyCaption& nc : corpus) {
    rng::Engine eng = rng::derive(config.seed, nc.caption.id);
    LogProbRecord rec;
    rec.caption_id = nc.caption.id;
    rec.tokenizer = nc.tokenizer;
    rec.with_image.reserve(nc.noise_mask.size());
    rec.text_only.reserve(nc.noise_mask.size());
    for (bool noisy : nc.noise_mask) {
      // Fixed draw order: with_image first, then text_only.
      rec.with_image.emplace_back(draw(eng, config.clean));
      rec.text_only.emplace_back(draw(eng, noisy ? config.noisy : config.clean));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace capguard::confidence

#include "capguard/reweighting.hpp"

#include <algorithm>
#include <cmath>

#include "capguard/errors.hpp"
#include "capguard/io.hpp"

namespace capguard::reweight {

std::string_view to_string(Population p) {
  return p == Population::Corpus ? "corpus" : "batch";
}

Population parse_population(std::string_view name) {
  if (name == "corpus") return Population::Corpus;
  if (name == "batch") return Population::Batch;
  throw ConfigError("unknown population '" + std::string(name) + "' (expected corpus or batch)");
}

std::string_view to_string(ReweightMode m) {
  return m == ReweightMode::LiteralMultiply ? "literal_multiply" : "clamp_renorm";
}

ReweightMode parse_reweight_mode(std::string_view name) {
  if (name == "literal_multiply") return ReweightMode::LiteralMultiply;
  if (name == "clamp_renorm") return ReweightMode::ClampRenorm;
  throw ConfigError("unknown reweight mode '" + std::string(name) +
                    "' (expected literal_multiply or clamp_renorm)");
}

void check_sigma(double sigma) {
  if (!(sigma > 0.0 && sigma < 1.0)) {
    throw SigmaRangeError("sigma must lie in (0, 1), got " + io::format_double(sigma));
  }
}

std::size_t quantile_index(std::size_t n, double sigma) {
  const double x = sigma * static_cast<double>(n);
  const double nearest = std::round(x);
  const double rank = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
  const auto k = static_cast<std::size_t>(std::max(rank, 1.0));
  return std::min(k, n) - 1;
}

ThresholdConfig select_threshold(std::span<const double> pool, double sigma, Population population,
                                 ScoreKind score_kind) {
  check_sigma(sigma);
  if (pool.empty()) throw EmptyPoolError("threshold pool holds no scored tokens");
  std::vector<double> sorted(pool.begin(), pool.end());
  const std::size_t idx = quantile_index(sorted.size(), sigma);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
  return {sigma, sorted[idx], population, score_kind};
}

std::vector<double> score_pool(std::span<const ConfidenceSeries> series) {
  std::vector<double> pool;
  for (const auto& s : series) {
    for (const Score& v : s.values()) {
      if (v) pool.push_back(*v);
    }
  }
  return pool;
}

std::vector<std::size_t> flag_tokens(const ConfidenceSeries& scores, double epsilon) {
  std::vector<std::size_t> flagged;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (scores[k] && *scores[k] > epsilon) flagged.push_back(k);
  }
  return flagged;
}

WeightVector compute_weights(const ConfidenceSeries& scores, const ThresholdConfig& cfg) {
  WeightVector w;
  w.caption_id = scores.caption_id();
  w.weights.assign(scores.size(), 1.0);
  w.flagged = flag_tokens(scores, cfg.epsilon);
  if (w.flagged.empty()) return w;

  double top = *scores[w.flagged.front()];
  for (std::size_t k : w.flagged) top = std::max(top, *scores[k]);
  double total = 0.0;
  for (std::size_t k : w.flagged) total += std::exp(*scores[k] - top);
  for (std::size_t k : w.flagged) w.weights[k] = -std::exp(*scores[k] - top) / total;
  return w;
}

AttentionMatrix::AttentionMatrix(std::size_t rows, std::size_t cols, Stage stage, std::vector<double> values)
    : rows_(rows), cols_(cols), stage_(stage), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ShapeError("attention matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

AttentionMatrix AttentionMatrix::post_softmax(std::size_t rows, std::size_t cols, std::vector<double> values) {
  AttentionMatrix a(rows, cols, Stage::PostSoftmax, std::move(values));
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (double v : a.row(r)) {
      if (!(v >= 0.0)) throw InvariantError("attention row " + std::to_string(r) + " has a negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvariantError("attention row " + std::to_string(r) + " sums to " + io::format_double(sum));
    }
  }
  return a;
}

AttentionMatrix AttentionMatrix::reweighted(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return AttentionMatrix(rows, cols, Stage::Reweighted, std::move(values));
}

AttentionMatrix apply_attention_reweight(const AttentionMatrix& a, const WeightVector& w, ReweightMode mode) {
  if (a.cols() != w.weights.size()) {
    throw ShapeError("attention has " + std::to_string(a.cols()) + " key columns, weight vector has " +
                     std::to_string(w.weights.size()) + " entries");
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const std::size_t cols = a.cols();
  if (mode == ReweightMode::LiteralMultiply) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= w.weights[c];
    }
    return AttentionMatrix::reweighted(a.rows(), cols, std::move(out));
  }
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] *= std::max(w.weights[c], 0.0);
      sum += out[r * cols + c];
    }
    if (!(sum > 0.0)) {
      throw DegenerateRowError("attention row " + std::to_string(r) + " has zero mass after clamping weights");
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= sum;
  }
  return AttentionMatrix::reweighted(a.rows(), cols, std::move(out));
}

Caption drop_tokens(const Tokenization& tok, std::span<const std::size_t> flagged) {
  std::vector<bool> removed(tok.size(), false);
  for (std::size_t k : flagged) removed.at(k) = true;

  const std::string& text = tok.text();
  std::string out;
  std::size_t prev_end = 0;  // end of the last kept token, or 0
  bool kept_any = false;
  bool gap_removed = false;  // a token was removed since prev_end
  for (std::size_t k = 0; k < tok.size(); ++k) {
    const TokenSpan& s = tok[k];
    if (s.special()) continue;
    if (removed[k]) {
      gap_removed = true;
      continue;
    }
    if (!gap_removed) {
      out.append(text, prev_end, s.byte_start - prev_end);
    } else if (kept_any) {
      out.push_back(' ');
    }
    out.append(text, s.byte_start, s.byte_end - s.byte_start);
    prev_end = s.byte_end;
    kept_any = true;
    gap_removed = false;
  }
  if (!gap_removed) out.append(text, prev_end, std::string::npos);
  return {tok.caption_id(), std::move(out)};
}

Caption filter_noisy_tokens(const Tokenization& tok, const ConfidenceSeries& scores, const ThresholdConfig& cfg) {
  if (scores.size() != tok.size()) {
    throw LengthMismatchError("caption '" + tok.caption_id() + "': " + std::to_string(scores.size()) +
                              " scores for " + std::to_string(tok.size()) + " tokens");
  }
  const auto flagged = flag_tokens(scores, cfg.epsilon);
  const auto scored = static_cast<std::size_t>(
      std::count_if(scores.values().begin(), scores.values().end(), [](const Score& s) { return s.has_value(); }));
  if (scored > 0 && flagged.size() == scored) {
    throw AllRemovedError("caption '" + tok.caption_id() + "': every scored token is flagged");
  }
  return drop_tokens(tok, flagged);
}

}  // namespace capguard::reweight

#pragma once

// Threshold selection, per-token attention weights, and the token-removal
// baseline.
//
// The threshold epsilon is the sigma-quantile of a score pool: the value at
// 0-based index ceil(sigma * n) - 1 of the ascending-sorted pool. Tokens
// scoring strictly above epsilon are flagged. Flagged tokens get
// w_k = -softmax(s)_k over the flagged tokens of their caption; everything
// else keeps w_k = 1.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "capguard/series.hpp"
#include "capguard/tokenization.hpp"

namespace capguard::reweight {

enum class Population { Corpus, Batch };

std::string_view to_string(Population p);
Population parse_population(std::string_view name);

struct ThresholdConfig {
  double sigma = 0.30;
  double epsilon = 0.0;
  Population population = Population::Corpus;
  ScoreKind score_kind = ScoreKind::TextOnly;
};

// Throws SigmaRangeError unless 0 < sigma < 1.
void check_sigma(double sigma);

// Index ceil(sigma * n) - 1, with sigma * n snapped to the nearest integer
// when within 1e-9 of it so that e.g. 0.7 * 10 selects index 6.
std::size_t quantile_index(std::size_t n, double sigma);

// Throws EmptyPoolError, SigmaRangeError.
ThresholdConfig select_threshold(std::span<const double> pool, double sigma,
                                 Population population = Population::Corpus,
                                 ScoreKind score_kind = ScoreKind::TextOnly);

// Scored values of every series, in order; the pool for select_threshold.
std::vector<double> score_pool(std::span<const ConfidenceSeries> series);

struct WeightVector {
  std::string caption_id;
  std::vector<double> weights;
  std::vector<std::size_t> flagged;

  bool operator==(const WeightVector&) const = default;
};

// Indices of scored tokens with score > epsilon, ascending.
std::vector<std::size_t> flag_tokens(const ConfidenceSeries& scores, double epsilon);

WeightVector compute_weights(const ConfidenceSeries& scores, const ThresholdConfig& cfg);

enum class ReweightMode { LiteralMultiply, ClampRenorm };

std::string_view to_string(ReweightMode m);
ReweightMode parse_reweight_mode(std::string_view name);

// Row-major cross-attention matrix: rows are image-side queries, columns are
// caption tokens.
class AttentionMatrix {
 public:
  enum class Stage { PostSoftmax, Reweighted };

  // Validated: every row non-negative and summing to 1 within 1e-6.
  // Throws ShapeError on a size mismatch, InvariantError otherwise.
  static AttentionMatrix post_softmax(std::size_t rows, std::size_t cols, std::vector<double> values);

  // Unconstrained result of a reweighting.
  static AttentionMatrix reweighted(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Stage stage() const { return stage_; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols_, cols_);
  }
  std::span<const double> values() const { return values_; }

 private:
  AttentionMatrix(std::size_t rows, std::size_t cols, Stage stage, std::vector<double> values);

  std::size_t rows_;
  std::size_t cols_;
  Stage stage_;
  std::vector<double> values_;
};

// LiteralMultiply scales column k by w_k, negative weights included.
// ClampRenorm scales by max(w_k, 0) and renormalizes every row to sum to 1;
// throws DegenerateRowError when a row's weighted sum is 0.
// Throws ShapeError when a.cols() != w.weights.size().
AttentionMatrix apply_attention_reweight(const AttentionMatrix& a, const WeightVector& w, ReweightMode mode);

// Rebuilds a caption from the unflagged tokens. Text between two kept tokens
// is copied verbatim when nothing was removed in between, otherwise replaced
// by a single space; leading/trailing text survives only when no token was
// removed on that side. Throws LengthMismatchError, AllRemovedError.
Caption filter_noisy_tokens(const Tokenization& tok, const ConfidenceSeries& scores, const ThresholdConfig& cfg);

// Same rule with an explicit flagged set.
Caption drop_tokens(const Tokenization& tok, std::span<const std::size_t> flagged);

}  // namespace capguard::reweight

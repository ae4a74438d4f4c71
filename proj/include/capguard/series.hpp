#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capguard {

enum class ScoreKind { WithImage, TextOnly, Differential };

// "with_image" | "text_only" | "differential"
std::string_view to_string(ScoreKind kind);
// Throws ConfigError for an unknown name.
ScoreKind parse_score_kind(std::string_view name);

// Inclusive value range a score of this kind may take.
struct ScoreRange {
  double lo;
  double hi;
};
ScoreRange score_range(ScoreKind kind);

// nullopt marks an unscored (special) token.
using Score = std::optional<double>;

// Per-token scores of one kind for one caption. Values are range-checked on
// construction (InvariantError).
class ConfidenceSeries {
 public:
  ConfidenceSeries(std::string caption_id, ScoreKind kind, std::vector<Score> values);

  const std::string& caption_id() const { return caption_id_; }
  ScoreKind kind() const { return kind_; }
  std::span<const Score> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  const Score& operator[](std::size_t k) const { return values_[k]; }

  bool operator==(const ConfidenceSeries&) const = default;

 private:
  std::string caption_id_;
  ScoreKind kind_;
  std::vector<Score> values_;
};

}  // namespace capguard

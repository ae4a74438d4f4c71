#include "capguard/series.hpp"

#include <cmath>

#include "capguard/errors.hpp"

namespace capguard {

std::string_view to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::WithImage:
      return "with_image";
    case ScoreKind::TextOnly:
      return "text_only";
    case ScoreKind::Differential:
      return "differential";
  }
  return "unknown";
}

ScoreKind parse_score_kind(std::string_view name) {
  if (name == "with_image") return ScoreKind::WithImage;
  if (name == "text_only") return ScoreKind::TextOnly;
  if (name == "differential") return ScoreKind::Differential;
  throw ConfigError("unknown score kind '" + std::string(name) +
                    "' (expected with_image, text_only or differential)");
}

ScoreRange score_range(ScoreKind kind) {
  if (kind == ScoreKind::Differential) return {-1.0, 1.0};
  return {0.0, 1.0};
}

ConfidenceSeries::ConfidenceSeries(std::string caption_id, ScoreKind kind,
                                   std::vector<Score> values)
    : caption_id_(std::move(caption_id)), kind_(kind), values_(std::move(values)) {
  const ScoreRange range = score_range(kind_);
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (!values_[k]) continue;
    const double v = *values_[k];
    if (!std::isfinite(v) || v < range.lo || v > range.hi) {
      throw InvariantError("caption '" + caption_id_ + "': " + std::string(to_string(kind_)) +
                           " score " + std::to_string(v) + " at token " + std::to_string(k) +
                           " outside [" + std::to_string(range.lo) + ", " +
                           std::to_string(range.hi) + "]");
    }
  }
}

}  // namespace capguard

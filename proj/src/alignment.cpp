#include "capguard/alignment.hpp"

#include <string>

#include "capguard/errors.hpp"

namespace capguard {

AlignmentMap::AlignmentMap(std::size_t source_len, std::size_t target_len,
                           std::vector<std::vector<std::size_t>> entries)
    : source_len_(source_len), target_len_(target_len), entries_(std::move(entries)) {
  if (entries_.size() != source_len_) {
    throw InvariantError("alignment has " + std::to_string(entries_.size()) +
                         " entries for source length " + std::to_string(source_len_));
  }
  bool seen_any = false;
  std::size_t last_max = 0;
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const auto& v = entries_[k];
    if (v.empty()) continue;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] >= target_len_) {
        throw InvariantError("alignment V(" + std::to_string(k) + ") references target " +
                             std::to_string(v[i]) + " >= " + std::to_string(target_len_));
      }
      if (i > 0 && v[i] <= v[i - 1]) {
        throw InvariantError("alignment V(" + std::to_string(k) + ") is not strictly ascending");
      }
    }
    if (seen_any && v.front() < last_max) {
      throw InvariantError("alignment is not monotone at source token " + std::to_string(k));
    }
    seen_any = true;
    last_max = v.back();
  }
}

AlignmentMap AlignmentMap::identity(std::size_t n) {
  std::vector<std::vector<std::size_t>> entries(n);
  for (std::size_t k = 0; k < n; ++k) entries[k] = {k};
  return AlignmentMap(n, n, std::move(entries));
}

AlignmentMap build_alignment(const Tokenization& source, const Tokenization& target) {
  if (source.caption_id() != target.caption_id()) {
    throw MismatchError("alignment between different captions '" + source.caption_id() +
                        "' and '" + target.caption_id() + "'");
  }
  if (source.text() != target.text()) {
    throw MismatchError("caption '" + source.caption_id() + "': texts differ between tokenizers '" +
                        source.tokenizer_name() + "' and '" + target.tokenizer_name() + "'");
  }
  if (source.empty() || target.empty()) {
    throw DegenerateError("caption '" + source.caption_id() + "': empty tokenization");
  }

  const auto src = source.spans();
  const auto tgt = target.spans();
  std::vector<std::vector<std::size_t>> entries(src.size());

  // Non-special spans on each side are ordered and disjoint, so both their
  // starts and ends ascend and a single forward cursor suffices.
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const TokenSpan& s = src[k];
    if (s.special()) continue;
    while (cursor < tgt.size() && (tgt[cursor].special() || tgt[cursor].byte_end <= s.byte_start)) {
      ++cursor;
    }
    for (std::size_t j = cursor; j < tgt.size() && tgt[j].byte_start < s.byte_end; ++j) {
      if (tgt[j].special()) continue;
      if (std::max(s.byte_start, tgt[j].byte_start) < std::min(s.byte_end, tgt[j].byte_end)) {
        entries[k].push_back(j);
      }
    }
  }
  return AlignmentMap(src.size(), tgt.size(), std::move(entries));
}

AlignmentMap invert_alignment(const AlignmentMap& m) {
  std::vector<std::vector<std::size_t>> entries(m.target_len());
  for (std::size_t k = 0; k < m.source_len(); ++k) {
    for (std::size_t j : m.targets(k)) entries[j].push_back(k);
  }
  return AlignmentMap(m.target_len(), m.source_len(), std::move(entries));
}

std::vector<Score> project_values(std::span<const Score> values, const AlignmentMap& m) {
  if (values.size() != m.target_len()) {
    throw LengthMismatchError("score series has " + std::to_string(values.size()) +
                              " tokens, alignment expects " + std::to_string(m.target_len()));
  }
  std::vector<Score> out(m.source_len());
  for (std::size_t k = 0; k < m.source_len(); ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t v : m.targets(k)) {
      if (!values[v]) continue;
      sum += *values[v];
      ++n;
    }
    if (n > 0) out[k] = sum / static_cast<double>(n);
  }
  return out;
}

ConfidenceSeries project_scores(const ConfidenceSeries& target_scores, const AlignmentMap& m) {
  return ConfidenceSeries(target_scores.caption_id(), target_scores.kind(),
                          project_values(target_scores.values(), m));
}

}  // namespace capguard

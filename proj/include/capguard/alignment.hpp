#pragma once

// Cross-tokenizer alignment.
//
// An AlignmentMap sends each source token k to the sorted set V(k) of target
// tokens whose byte span has a non-empty intersection with k's span on the
// shared caption string. Scores live on the target side and are pulled back
// onto the source side by averaging over V(k).

#include <cstddef>
#include <span>
#include <vector>

#include "capguard/series.hpp"
#include "capguard/tokenization.hpp"

namespace capguard {

class AlignmentMap {
 public:
  // Throws InvariantError unless every V(k) is strictly ascending, in range,
  // and the map is monotone: max V(k1) <= min V(k2) for k1 < k2 whenever
  // both are non-empty.
  AlignmentMap(std::size_t source_len, std::size_t target_len,
               std::vector<std::vector<std::size_t>> entries);

  static AlignmentMap identity(std::size_t n);

  std::size_t source_len() const { return source_len_; }
  std::size_t target_len() const { return target_len_; }
  std::span<const std::size_t> targets(std::size_t k) const { return entries_[k]; }
  const std::vector<std::vector<std::size_t>>& entries() const { return entries_; }

  bool operator==(const AlignmentMap&) const = default;

 private:
  std::size_t source_len_;
  std::size_t target_len_;
  std::vector<std::vector<std::size_t>> entries_;
};

// Linear sweep over both span lists. Throws MismatchError when the two
// tokenizations are of different captions or texts, DegenerateError when
// either is empty.
AlignmentMap build_alignment(const Tokenization& source, const Tokenization& target);

// Relational transpose; an involution.
AlignmentMap invert_alignment(const AlignmentMap& m);

// s_k = mean of the scored target values over V(k); unscored when V(k) holds
// no scored value. Throws LengthMismatchError unless values.size() equals
// m.target_len().
std::vector<Score> project_values(std::span<const Score> values, const AlignmentMap& m);

ConfidenceSeries project_scores(const ConfidenceSeries& target_scores, const AlignmentMap& m);

}  // namespace capguard

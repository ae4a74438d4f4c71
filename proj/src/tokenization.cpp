#include "capguard/tokenization.hpp"

#include <algorithm>
#include <array>

#include "capguard/errors.hpp"
#include "capguard/random.hpp"

namespace capguard {

namespace {

std::string span_desc(std::size_t k, const TokenSpan& s) {
  return "token " + std::to_string(k) + " [" + std::to_string(s.byte_start) + "," +
         std::to_string(s.byte_end) + ")";
}

void add_specials_front(std::vector<TokenSpan>& out, const SpecialTokens& sp) {
  if (sp.bos) out.push_back({kBosId, "<bos>", 0, 0});
}

void add_specials_back(std::vector<TokenSpan>& out, const SpecialTokens& sp, std::size_t len) {
  if (sp.eos) out.push_back({kEosId, "<eos>", len, len});
}

// Pieces appended to the printable-ASCII base of the default vocabulary.
// Some common words are deliberately absent so that they split into several
// pieces ("unlocked" -> "un" "lock" "ed").
constexpr std::array kDefaultPieces = {
    "a",      "an",     "and",   "the",    "of",     "in",     "on",     "at",     "to",
    "is",     "are",    "with",  "row",    "side",   "all",    "there",  "this",   "that",
    "photo",  "image",  "shows", "dog",    "cat",    "red",    "blue",   "light",  "navy",
    "white",  "green",  "pink",  "brown",  "yel",    "low",    "or",     "ange",   "pur",
    "ple",    "one",    "two",   "three",  "four",   "five",   "six",    "jar",    "door",
    "chest",  "left",   "right", "top",    "bottom", "mid",    "dle",    "corner", "verti",
    "cal",    "hori",   "zon",   "tal",    "open",   "closed", "full",   "empty",  "lock",
    "ed",     "un",     "s",     "es",     "ing",    "er",     "ly",     "th",     "he",
    "st",     "ch",     "ou",    "re",     "en",     "ion",    "tion",   "at",     "it",
};

}  // namespace

Tokenization::Tokenization(std::string caption_id, std::string tokenizer_name, std::string text,
                           std::vector<TokenSpan> spans)
    : caption_id_(std::move(caption_id)),
      tokenizer_name_(std::move(tokenizer_name)),
      text_(std::move(text)),
      spans_(std::move(spans)) {
  const std::size_t len = text_.size();
  std::size_t prev_start = 0;
  std::size_t covered_to = 0;  // end of the last non-special span
  for (std::size_t k = 0; k < spans_.size(); ++k) {
    const TokenSpan& s = spans_[k];
    if (s.byte_start > s.byte_end || s.byte_end > len) {
      throw CoverageError("caption '" + caption_id_ + "': " + span_desc(k, s) +
                          " out of bounds for text of " + std::to_string(len) + " bytes");
    }
    if (s.byte_start < prev_start) {
      throw CoverageError("caption '" + caption_id_ + "': " + span_desc(k, s) +
                          " is not ordered by byte_start");
    }
    prev_start = s.byte_start;
    if (s.special()) continue;
    if (s.byte_start < covered_to) {
      throw CoverageError("caption '" + caption_id_ + "': " + span_desc(k, s) +
                          " overlaps the previous token");
    }
    for (std::size_t b = covered_to; b < s.byte_start; ++b) {
      if (!is_space_byte(static_cast<unsigned char>(text_[b]))) {
        throw CoverageError("caption '" + caption_id_ + "': byte " + std::to_string(b) +
                            " is not covered by any token");
      }
    }
    covered_to = s.byte_end;
  }
  for (std::size_t b = covered_to; b < len; ++b) {
    if (!is_space_byte(static_cast<unsigned char>(text_[b]))) {
      throw CoverageError("caption '" + caption_id_ + "': byte " + std::to_string(b) +
                          " is not covered by any token");
    }
  }
}

std::string_view Tokenization::covered(std::size_t k) const {
  const TokenSpan& s = spans_.at(k);
  return std::string_view(text_).substr(s.byte_start, s.byte_end - s.byte_start);
}

bool Tokenization::blank(std::size_t k) const {
  const std::string_view bytes = covered(k);
  return std::all_of(bytes.begin(), bytes.end(),
                     [](char c) { return is_space_byte(static_cast<unsigned char>(c)); });
}

WhitespaceTokenizer::WhitespaceTokenizer(SpecialTokens specials, std::string name)
    : specials_(specials), name_(std::move(name)) {}

std::vector<TokenSpan> WhitespaceTokenizer::encode(std::string_view text) const {
  std::vector<TokenSpan> out;
  add_specials_front(out, specials_);
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space_byte(static_cast<unsigned char>(text[j]))) ++j;
    std::string surface(text.substr(i, j - i));
    const auto id = static_cast<std::int64_t>(rng::fnv1a64(surface) & 0x7fffffffULL) | 2;
    out.push_back({id, std::move(surface), i, j});
    i = j;
  }
  add_specials_back(out, specials_, text.size());
  return out;
}

GreedyVocabTokenizer::GreedyVocabTokenizer(std::vector<std::string> vocab, SpecialTokens specials,
                                           std::string name)
    : specials_(specials), name_(std::move(name)) {
  if (vocab.empty()) throw VocabError("greedy tokenizer '" + name_ + "': empty vocabulary");
  std::int64_t next_id = 2;
  for (auto& entry : vocab) {
    if (entry.empty()) throw VocabError("greedy tokenizer '" + name_ + "': empty vocabulary entry");
    max_len_ = std::max(max_len_, entry.size());
    if (vocab_.emplace(std::move(entry), next_id).second) ++next_id;
  }
}

GreedyVocabTokenizer GreedyVocabTokenizer::default_subword(SpecialTokens specials,
                                                           std::string name) {
  std::vector<std::string> vocab;
  for (char c = 0x21; c < 0x7f; ++c) vocab.emplace_back(1, c);
  for (const char* piece : kDefaultPieces) vocab.emplace_back(piece);
  return GreedyVocabTokenizer(std::move(vocab), specials, std::move(name));
}

std::vector<TokenSpan> GreedyVocabTokenizer::encode(std::string_view text) const {
  std::vector<TokenSpan> out;
  add_specials_front(out, specials_);
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    bool matched = false;
    for (std::size_t n = std::min(max_len_, text.size() - i); n > 0; --n) {
      const auto it = vocab_.find(text.substr(i, n));
      if (it == vocab_.end()) continue;
      out.push_back({it->second, it->first, i, i + n});
      i += n;
      matched = true;
      break;
    }
    if (!matched) {
      throw VocabError("greedy tokenizer '" + name_ + "': no vocabulary entry matches byte " +
                       std::to_string(i) + " ('" + std::string(1, text[i]) + "')");
    }
  }
  add_specials_back(out, specials_, text.size());
  return out;
}

Tokenization tokenize_with_spans(const Caption& caption, const SpanTokenizer& tokenizer) {
  return Tokenization(caption.id, tokenizer.name(), caption.text, tokenizer.encode(caption.text));
}

}  // namespace capguard

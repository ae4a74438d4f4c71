#pragma once

// Span-annotated tokenizations over a shared caption string.
//
// Every token carries half-open byte offsets into the caption text it was
// produced from, so two tokenizations of the same caption can be compared
// without either tokenizer's normalization rules. Tokens with an empty span
// are special (BOS/EOS/pad) and never take part in alignment.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capguard {

struct Caption {
  std::string id;
  std::string text;

  bool operator==(const Caption&) const = default;
};

struct TokenSpan {
  std::int64_t token_id = 0;
  std::string surface;
  std::size_t byte_start = 0;
  std::size_t byte_end = 0;

  bool special() const { return byte_start == byte_end; }
  bool operator==(const TokenSpan&) const = default;
};

inline bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

class Tokenization {
 public:
  // Throws CoverageError when the spans are out of bounds, out of order,
  // overlapping, or leave a non-whitespace byte of `text` uncovered.
  Tokenization(std::string caption_id, std::string tokenizer_name, std::string text,
               std::vector<TokenSpan> spans);

  const std::string& caption_id() const { return caption_id_; }
  const std::string& tokenizer_name() const { return tokenizer_name_; }
  const std::string& text() const { return text_; }
  std::span<const TokenSpan> spans() const { return spans_; }
  std::size_t size() const { return spans_.size(); }
  bool empty() const { return spans_.empty(); }
  const TokenSpan& operator[](std::size_t k) const { return spans_[k]; }

  // Caption bytes covered by token k.
  std::string_view covered(std::size_t k) const;

  // True when token k covers no non-whitespace byte (special tokens and
  // lone whitespace-marker tokens). Such tokens may end up without any
  // alignment edge.
  bool blank(std::size_t k) const;

  bool operator==(const Tokenization&) const = default;

 private:
  std::string caption_id_;
  std::string tokenizer_name_;
  std::string text_;
  std::vector<TokenSpan> spans_;
};

// Built-in special-token ids, shared by both toy tokenizers.
inline constexpr std::int64_t kBosId = 0;
inline constexpr std::int64_t kEosId = 1;

struct SpecialTokens {
  bool bos = false;
  bool eos = false;
};

class SpanTokenizer {
 public:
  virtual ~SpanTokenizer() = default;
  virtual const std::string& name() const = 0;
  virtual std::vector<TokenSpan> encode(std::string_view text) const = 0;
};

// Splits on ASCII whitespace. Ids are a stable 31-bit hash of the surface
// (open vocabulary), offset past the special ids.
class WhitespaceTokenizer final : public SpanTokenizer {
 public:
  explicit WhitespaceTokenizer(SpecialTokens specials = {}, std::string name = "whitespace");

  const std::string& name() const override { return name_; }
  std::vector<TokenSpan> encode(std::string_view text) const override;

 private:
  SpecialTokens specials_;
  std::string name_;
};

// Greedy longest-match over a fixed vocabulary. Whitespace is skipped, never
// tokenized. Vocabulary entry i gets id i + 2.
class GreedyVocabTokenizer final : public SpanTokenizer {
 public:
  // Throws VocabError for an empty vocabulary or an empty entry.
  explicit GreedyVocabTokenizer(std::vector<std::string> vocab, SpecialTokens specials = {},
                                std::string name = "greedy");

  // Every printable ASCII character plus a few hundred common English
  // pieces; never raises VocabError on printable ASCII input.
  static GreedyVocabTokenizer default_subword(SpecialTokens specials = {},
                                              std::string name = "greedy");

  const std::string& name() const override { return name_; }
  // Throws VocabError when no entry matches at some non-whitespace byte.
  std::vector<TokenSpan> encode(std::string_view text) const override;

  std::size_t vocab_size() const { return vocab_.size(); }

 private:
  std::map<std::string, std::int64_t, std::less<>> vocab_;
  std::size_t max_len_ = 0;
  SpecialTokens specials_;
  std::string name_;
};

Tokenization tokenize_with_spans(const Caption& caption, const SpanTokenizer& tokenizer);

}  // namespace capguard

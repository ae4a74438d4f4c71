#pragma once

// JSONL file contracts. One record per caption per line; every parser
// reports the 1-based line it failed on.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capguard/alignment.hpp"
#include "capguard/confidence.hpp"
#include "capguard/noisy_caption.hpp"
#include "capguard/series.hpp"
#include "capguard/tokenization.hpp"

namespace capguard::io {

using nlohmann::json;

class JsonlReader {
 public:
  // Throws Error when the file cannot be opened.
  explicit JsonlReader(const std::filesystem::path& path);

  // Blank lines are skipped. Returns false at end of file; throws
  // ParseError(line) on malformed JSON or a non-object line.
  bool next(json& record);

  std::size_t line() const { return line_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_ = 0;
};

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write(const json& record);
  // Flushes and throws Error if any write failed.
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Field access helpers. All throw ParseError(line) on a missing field or a
// wrong type.
const json& require(const json& rec, const char* field, std::size_t line);
std::string require_string(const json& rec, const char* field, std::size_t line);
std::size_t require_index(const json& rec, const char* field, std::size_t line);

// --- token dumps ------------------------------------------------------------
// {"caption_id", "tokenizer", "tokens": [{"id", "surface", "start", "end"}],
//  "text"?}  "text" is optional in the wire format but needed to validate
// coverage; callers may supply it separately.
struct TokenDumpRecord {
  std::string caption_id;
  std::string tokenizer;
  std::optional<std::string> text;
  std::vector<TokenSpan> spans;
};
TokenDumpRecord parse_token_dump(const json& rec, std::size_t line);
json to_json(const Tokenization& tok, bool include_text = true);

// Builds the Tokenization, rethrowing CoverageError with the line number.
Tokenization to_tokenization(const TokenDumpRecord& rec, const std::string& text, std::size_t line);

// --- captions {"caption_id", "text"} ----------------------------------------
Caption parse_caption(const json& rec, std::size_t line);
json to_json(const Caption& caption);

// --- logprob dumps {"caption_id", "tokenizer", "with_image", "text_only"} ----
confidence::LogProbRecord parse_logprob(const json& rec, std::size_t line);
json to_json(const confidence::LogProbRecord& rec);

// --- score series {"caption_id", "tokenizer", "kind", "values"} -------------
struct SeriesRecord {
  std::string tokenizer;
  ConfidenceSeries series;
};
SeriesRecord parse_series(const json& rec, std::size_t line);
json to_json(const ConfidenceSeries& series, const std::string& tokenizer);

// --- alignments {"caption_id", "source_tokenizer", "target_tokenizer",
//                 "source_len", "target_len", "map": [[int]]} ----------------
struct AlignmentRecord {
  std::string caption_id;
  std::string source_tokenizer;
  std::string target_tokenizer;
  AlignmentMap map;
};
AlignmentRecord parse_alignment(const json& rec, std::size_t line);
json to_json(const AlignmentRecord& rec);

// --- noisy corpora {"caption_id", "text", "clean_text", "mask",
//                     "categories", "seed", "tokenizer"} ---------------------
NoisyCaption parse_noisy_caption(const json& rec, std::size_t line);
json to_json(const NoisyCaption& nc);

// Scores as a JSON array with null for unscored entries.
json scores_to_json(const std::vector<Score>& values);
std::vector<Score> parse_scores(const json& array, const char* field, std::size_t line);

// Shortest round-trip decimal form, as used in CSV reports.
std::string format_double(double v);

// Reads a whole JSONL file with `parse` applied to each record.
template <typename Parse>
auto read_all(const std::filesystem::path& path, Parse parse) {
  JsonlReader reader(path);
  json rec;
  std::vector<decltype(parse(rec, std::size_t{}))> out;
  while (reader.next(rec)) out.push_back(parse(rec, reader.line()));
  return out;
}

}  // namespace capguard::io

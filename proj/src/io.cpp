#include "capguard/io.hpp"

#include <charconv>
#include <cmath>

#include "capguard/errors.hpp"

namespace capguard::io {

JsonlReader::JsonlReader(const std::filesystem::path& path) : path_(path), in_(path) {
  if (!in_) throw Error("cannot open '" + path.string() + "' for reading");
}

bool JsonlReader::next(json& record) {
  std::string text;
  while (std::getline(in_, text)) {
    ++line_;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line_, path_.string() + ": malformed JSON: " + e.what());
    }
    if (!record.is_object()) throw ParseError(line_, path_.string() + ": record is not an object");
    return true;
  }
  return false;
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw Error("cannot open '" + path.string() + "' for writing");
}

void JsonlWriter::write(const json& record) {
  out_ << record.dump() << '\n';
}

void JsonlWriter::close() {
  out_.flush();
  if (!out_) throw Error("write to '" + path_.string() + "' failed");
  out_.close();
}

const json& require(const json& rec, const char* field, std::size_t line) {
  const auto it = rec.find(field);
  if (it == rec.end()) throw ParseError(line, std::string("missing field '") + field + "'");
  return *it;
}

std::string require_string(const json& rec, const char* field, std::size_t line) {
  const json& v = require(rec, field, line);
  if (!v.is_string()) throw ParseError(line, std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

std::size_t require_index(const json& rec, const char* field, std::size_t line) {
  const json& v = require(rec, field, line);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ParseError(line, std::string("field '") + field + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

namespace {

std::int64_t require_int(const json& rec, const char* field, std::size_t line) {
  const json& v = require(rec, field, line);
  if (!v.is_number_integer()) {
    throw ParseError(line, std::string("field '") + field + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

const json& require_array(const json& rec, const char* field, std::size_t line) {
  const json& v = require(rec, field, line);
  if (!v.is_array()) throw ParseError(line, std::string("field '") + field + "' must be an array");
  return v;
}

}  // namespace

TokenDumpRecord parse_token_dump(const json& rec, std::size_t line) {
  TokenDumpRecord out;
  out.caption_id = require_string(rec, "caption_id", line);
  out.tokenizer = require_string(rec, "tokenizer", line);
  if (rec.contains("text")) out.text = require_string(rec, "text", line);
  for (const json& t : require_array(rec, "tokens", line)) {
    if (!t.is_object()) throw ParseError(line, "token entries must be objects");
    TokenSpan s;
    s.token_id = require_int(t, "id", line);
    s.surface = require_string(t, "surface", line);
    s.byte_start = require_index(t, "start", line);
    s.byte_end = require_index(t, "end", line);
    out.spans.push_back(std::move(s));
  }
  return out;
}

json to_json(const Tokenization& tok, bool include_text) {
  json tokens = json::array();
  for (const TokenSpan& s : tok.spans()) {
    tokens.push_back({{"id", s.token_id}, {"surface", s.surface}, {"start", s.byte_start}, {"end", s.byte_end}});
  }
  json out = {{"caption_id", tok.caption_id()}, {"tokenizer", tok.tokenizer_name()}, {"tokens", std::move(tokens)}};
  if (include_text) out["text"] = tok.text();
  return out;
}

Tokenization to_tokenization(const TokenDumpRecord& rec, const std::string& text, std::size_t line) {
  try {
    return Tokenization(rec.caption_id, rec.tokenizer, text, rec.spans);
  } catch (const CoverageError& e) {
    throw CoverageError("line " + std::to_string(line) + ": " + e.what());
  }
}

Caption parse_caption(const json& rec, std::size_t line) {
  return {require_string(rec, "caption_id", line), require_string(rec, "text", line)};
}

json to_json(const Caption& caption) {
  return {{"caption_id", caption.id}, {"text", caption.text}};
}

json scores_to_json(const std::vector<Score>& values) {
  json out = json::array();
  for (const Score& v : values) {
    if (v) {
      out.push_back(*v);
    } else {
      out.push_back(nullptr);
    }
  }
  return out;
}

std::vector<Score> parse_scores(const json& array, const char* field, std::size_t line) {
  if (!array.is_array()) throw ParseError(line, std::string("field '") + field + "' must be an array");
  std::vector<Score> out;
  out.reserve(array.size());
  for (const json& v : array) {
    if (v.is_null()) {
      out.emplace_back();
    } else if (v.is_number()) {
      out.emplace_back(v.get<double>());
    } else {
      throw ParseError(line, std::string("field '") + field + "' holds a non-numeric entry");
    }
  }
  return out;
}

confidence::LogProbRecord parse_logprob(const json& rec, std::size_t line) {
  confidence::LogProbRecord out;
  out.caption_id = require_string(rec, "caption_id", line);
  out.tokenizer = require_string(rec, "tokenizer", line);
  out.with_image = parse_scores(require(rec, "with_image", line), "with_image", line);
  out.text_only = parse_scores(require(rec, "text_only", line), "text_only", line);
  confidence::validate(out, line);
  return out;
}

json to_json(const confidence::LogProbRecord& rec) {
  return {{"caption_id", rec.caption_id},
          {"tokenizer", rec.tokenizer},
          {"with_image", scores_to_json(rec.with_image)},
          {"text_only", scores_to_json(rec.text_only)}};
}

SeriesRecord parse_series(const json& rec, std::size_t line) {
  const std::string id = require_string(rec, "caption_id", line);
  std::string tokenizer = require_string(rec, "tokenizer", line);
  ScoreKind kind;
  try {
    kind = parse_score_kind(require_string(rec, "kind", line));
  } catch (const ConfigError& e) {
    throw ParseError(line, e.what());
  }
  auto values = parse_scores(require(rec, "values", line), "values", line);
  const ScoreRange range = score_range(kind);
  for (const Score& v : values) {
    if (v && (!std::isfinite(*v) || *v < range.lo || *v > range.hi)) {
      throw RangeError(line, "values", "score outside the range of kind " + std::string(to_string(kind)));
    }
  }
  return {std::move(tokenizer), ConfidenceSeries(id, kind, std::move(values))};
}

json to_json(const ConfidenceSeries& series, const std::string& tokenizer) {
  return {{"caption_id", series.caption_id()},
          {"tokenizer", tokenizer},
          {"kind", to_string(series.kind())},
          {"values", scores_to_json(std::vector<Score>(series.values().begin(), series.values().end()))}};
}

AlignmentRecord parse_alignment(const json& rec, std::size_t line) {
  std::string id = require_string(rec, "caption_id", line);
  std::string src = require_string(rec, "source_tokenizer", line);
  std::string tgt = require_string(rec, "target_tokenizer", line);
  const std::size_t source_len = require_index(rec, "source_len", line);
  const std::size_t target_len = require_index(rec, "target_len", line);
  std::vector<std::vector<std::size_t>> entries;
  for (const json& row : require_array(rec, "map", line)) {
    if (!row.is_array()) throw ParseError(line, "field 'map' must be an array of arrays");
    std::vector<std::size_t> v;
    for (const json& j : row) {
      if (!j.is_number_integer() || j.get<std::int64_t>() < 0) {
        throw ParseError(line, "field 'map' holds a non-index entry");
      }
      v.push_back(j.get<std::size_t>());
    }
    entries.push_back(std::move(v));
  }
  try {
    return {std::move(id), std::move(src), std::move(tgt), AlignmentMap(source_len, target_len, std::move(entries))};
  } catch (const InvariantError& e) {
    throw ParseError(line, e.what());
  }
}

json to_json(const AlignmentRecord& rec) {
  return {{"caption_id", rec.caption_id},
          {"source_tokenizer", rec.source_tokenizer},
          {"target_tokenizer", rec.target_tokenizer},
          {"source_len", rec.map.source_len()},
          {"target_len", rec.map.target_len()},
          {"map", rec.map.entries()}};
}

NoisyCaption parse_noisy_caption(const json& rec, std::size_t line) {
  NoisyCaption nc;
  nc.caption.id = require_string(rec, "caption_id", line);
  nc.caption.text = require_string(rec, "text", line);
  nc.clean_text = require_string(rec, "clean_text", line);
  nc.tokenizer = rec.contains("tokenizer") ? require_string(rec, "tokenizer", line) : "whitespace";
  for (const json& m : require_array(rec, "mask", line)) {
    if (!m.is_number_integer() || (m.get<int>() != 0 && m.get<int>() != 1)) {
      throw RangeError(line, "mask", "entries must be 0 or 1");
    }
    nc.noise_mask.push_back(m.get<int>() == 1);
  }
  for (const json& c : require_array(rec, "categories", line)) {
    if (c.is_null()) {
      nc.categories.emplace_back();
    } else if (c.is_string()) {
      try {
        nc.categories.emplace_back(parse_category(c.get<std::string>()));
      } catch (const ConfigError& e) {
        throw RangeError(line, "categories", e.what());
      }
    } else {
      throw ParseError(line, "field 'categories' entries must be strings or null");
    }
  }
  if (nc.categories.size() != nc.noise_mask.size()) {
    throw ParseError(line, "fields 'mask' and 'categories' differ in length");
  }
  for (std::size_t k = 0; k < nc.noise_mask.size(); ++k) {
    if (nc.noise_mask[k] != nc.categories[k].has_value()) {
      throw ParseError(line, "token " + std::to_string(k) + ": category must be set exactly on masked tokens");
    }
  }
  const json& seed = require(rec, "seed", line);
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    throw ParseError(line, "field 'seed' must be a non-negative integer");
  }
  nc.injection_seed = seed.get<std::uint64_t>();
  return nc;
}

json to_json(const NoisyCaption& nc) {
  json mask = json::array();
  for (bool m : nc.noise_mask) mask.push_back(m ? 1 : 0);
  json cats = json::array();
  for (const auto& c : nc.categories) {
    if (c) {
      cats.push_back(to_string(*c));
    } else {
      cats.push_back(nullptr);
    }
  }
  return {{"caption_id", nc.caption.id},
          {"text", nc.caption.text},
          {"clean_text", nc.clean_text},
          {"mask", std::move(mask)},
          {"categories", std::move(cats)},
          {"seed", nc.injection_seed},
          {"tokenizer", nc.tokenizer}};
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace capguard::io

#include "capguard/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <future>
#include <iostream>
#include <memory>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "capguard/alignment.hpp"
#include "capguard/digest.hpp"
#include "capguard/errors.hpp"
#include "capguard/io.hpp"
#include "capguard/noise_bench.hpp"
#include "capguard/tokenization.hpp"

#ifndef CAPGUARD_VERSION
#define CAPGUARD_VERSION "0.0.0"
#endif

namespace capguard::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const SchemaError*>(&e)) return kExitSchema;
  if (dynamic_cast<const ConsistencyError*>(&e)) return kExitConsistency;
  return kExitInternal;
}

// --- configuration -----------------------------------------------------------

namespace {

const std::vector<std::string> kPathKeys = {"tokens", "source",    "target",    "captions", "logprobs", "series",
                                            "alignment", "corpus", "judgments", "vocab",    "out"};

bool is_path_key(const std::string& key) {
  return std::find(kPathKeys.begin(), kPathKeys.end(), key) != kPathKeys.end();
}

std::string as_string(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  throw ConfigError("config '" + key + "' must be a string");
}

double as_double(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc() && ptr == s.data() + s.size()) return out;
  }
  throw ConfigError("config '" + key + "' must be a number");
}

std::uint64_t as_uint(const json& v, const std::string& key) {
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc() && ptr == s.data() + s.size() && !s.empty()) return out;
  }
  throw ConfigError("config '" + key + "' must be a non-negative integer");
}

bool as_bool(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
  }
  throw ConfigError("config '" + key + "' must be a boolean");
}

std::vector<std::string> as_list(const json& v, const std::string& key) {
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const json& e : v) {
      if (e.is_string()) {
        out.push_back(e.get<std::string>());
      } else if (e.is_number()) {
        out.push_back(e.dump());
      } else {
        throw ConfigError("config '" + key + "' entries must be strings or numbers");
      }
    }
    return out;
  }
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t comma = std::min(s.find(',', start), s.size());
      if (comma > start) out.push_back(s.substr(start, comma - start));
      start = comma + 1;
    }
    return out;
  }
  throw ConfigError("config '" + key + "' must be a list or a comma-separated string");
}

template <typename Parse>
auto reraise_as_config(Parse parse) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

const std::vector<std::string>& PipelineConfig::config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = {"score_kind", "sigma",      "population", "batch_size", "reweight_mode",
                                  "seed",       "bins",       "sigmas",     "rate",       "categories",
                                  "clean_mean", "clean_std",  "noisy_mean", "noisy_std",  "count",
                                  "tokenizer",  "tokenizer_name", "specials", "terms"};
    k.insert(k.end(), kPathKeys.begin(), kPathKeys.end());
    return k;
  }();
  return keys;
}

PipelineConfig PipelineConfig::resolve(const json& file_layer, const json& flag_layer) {
  json merged = json::object();
  for (const json* layer : {&file_layer, &flag_layer}) {
    if (layer->is_null()) continue;
    if (!layer->is_object()) throw ConfigError("configuration must be a JSON object");
    json flat = *layer;
    // Manifests nest paths; accept that shape so a manifest's config can be replayed.
    if (flat.contains("paths")) {
      const json paths = flat["paths"];
      flat.erase("paths");
      if (!paths.is_object()) throw ConfigError("configuration key 'paths' must be an object");
      for (const auto& [key, value] : paths.items()) {
        if (std::find(kPathKeys.begin(), kPathKeys.end(), key) == kPathKeys.end()) {
          throw ConfigError("unknown path key '" + key + "'");
        }
        flat[key] = value;
      }
    }
    for (const auto& [key, value] : flat.items()) {
      const auto& keys = config_keys();
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw ConfigError("unknown configuration key '" + key + "'");
      }
      merged[key] = value;
    }
  }

  PipelineConfig cfg;
  for (const auto& [key, v] : merged.items()) {
    if (key == "score_kind") {
      cfg.score_kind = parse_score_kind(as_string(v, key));
    } else if (key == "sigma") {
      cfg.sigma = as_double(v, key);
    } else if (key == "population") {
      cfg.population = reweight::parse_population(as_string(v, key));
    } else if (key == "batch_size") {
      cfg.batch_size = as_uint(v, key);
    } else if (key == "reweight_mode") {
      cfg.reweight_mode = reweight::parse_reweight_mode(as_string(v, key));
    } else if (key == "seed") {
      cfg.seed = as_uint(v, key);
    } else if (key == "bins") {
      cfg.bins = as_uint(v, key);
    } else if (key == "sigmas") {
      cfg.sigmas.clear();
      for (const auto& s : as_list(v, key)) cfg.sigmas.push_back(as_double(json(s), key));
    } else if (key == "rate") {
      cfg.rate = as_double(v, key);
    } else if (key == "categories") {
      cfg.categories.clear();
      for (const auto& s : as_list(v, key)) cfg.categories.push_back(parse_category(s));
    } else if (key == "clean_mean") {
      cfg.clean.mean = as_double(v, key);
    } else if (key == "clean_std") {
      cfg.clean.stddev = as_double(v, key);
    } else if (key == "noisy_mean") {
      cfg.noisy.mean = as_double(v, key);
    } else if (key == "noisy_std") {
      cfg.noisy.stddev = as_double(v, key);
    } else if (key == "count") {
      cfg.count = as_uint(v, key);
    } else if (key == "tokenizer") {
      cfg.tokenizer = as_string(v, key);
    } else if (key == "tokenizer_name") {
      cfg.tokenizer_name = as_string(v, key);
    } else if (key == "specials") {
      cfg.specials = as_bool(v, key);
    } else if (key == "terms") {
      cfg.terms = as_list(v, key);
    } else if (is_path_key(key)) {
      cfg.paths[key] = as_string(v, key);
    }
  }

  reweight::check_sigma(cfg.sigma);
  for (double s : cfg.sigmas) reweight::check_sigma(s);
  if (cfg.sigmas.empty()) throw ConfigError("sigmas must not be empty");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (cfg.bins == 0) throw ConfigError("bins must be positive");
  if (cfg.tokenizer != "whitespace" && cfg.tokenizer != "greedy") {
    throw ConfigError("tokenizer must be 'whitespace' or 'greedy', got '" + cfg.tokenizer + "'");
  }
  return cfg;
}

const fs::path& PipelineConfig::path(const std::string& role) const {
  const auto it = paths.find(role);
  if (it == paths.end()) throw ConfigError("missing required path --" + role);
  return it->second;
}

json PipelineConfig::to_json() const {
  json cats = json::array();
  for (Category c : categories) cats.push_back(capguard::to_string(c));
  json p = json::object();
  for (const auto& [role, path] : paths) p[role] = path.generic_string();
  return {{"score_kind", capguard::to_string(score_kind)},
          {"sigma", sigma},
          {"population", reweight::to_string(population)},
          {"batch_size", batch_size},
          {"reweight_mode", reweight::to_string(reweight_mode)},
          {"seed", seed},
          {"bins", bins},
          {"sigmas", sigmas},
          {"rate", rate},
          {"categories", std::move(cats)},
          {"clean_mean", clean.mean},
          {"clean_std", clean.stddev},
          {"noisy_mean", noisy.mean},
          {"noisy_std", noisy.stddev},
          {"count", count},
          {"tokenizer", tokenizer},
          {"tokenizer_name", tokenizer_name.empty() ? tokenizer : tokenizer_name},
          {"specials", specials},
          {"terms", terms},
          {"paths", std::move(p)}};
}

json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config file '" + path.string() + "' must hold a JSON object");
  return cfg;
}

// --- manifest ------------------------------------------------------------------

StageRecord& RunManifest::stage(const std::string& name) {
  for (auto& s : stages) {
    if (s.name == name) return s;
  }
  stages.push_back({name, 0, 0});
  return stages.back();
}

json RunManifest::to_json() const {
  auto digests = [](const std::vector<FileDigest>& files) {
    json out = json::array();
    for (const auto& f : files) out.push_back({{"role", f.role}, {"path", f.path}, {"sha256", f.sha256}});
    return out;
  };
  json st = json::array();
  for (const auto& s : stages) st.push_back({{"name", s.name}, {"records", s.records}, {"errors", s.errors}});
  json out = {{"tool", "capguard"},
              {"version", CAPGUARD_VERSION},
              {"command", command},
              {"config", config},
              {"inputs", digests(inputs)},
              {"outputs", digests(outputs)},
              {"stages", std::move(st)},
              {"summary", summary},
              {"status", status},
              {"exit_code", exit_code}};
  if (!error.empty()) out["error"] = error;
  return out;
}

fs::path manifest_path(const fs::path& out) {
  return fs::path(out.string() + ".manifest.json");
}

unsigned worker_count() {
  const char* env = std::getenv("CAPGUARD_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  unsigned n = 0;
  const std::string s(env);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || ptr != s.data() + s.size() || n == 0) {
    throw ConfigError("CAPGUARD_WORKERS must be a positive integer, got '" + s + "'");
  }
  return std::min(n, 256u);
}

// --- streaming helpers -----------------------------------------------------------

namespace {

constexpr std::size_t kChunk = 512;

struct Line {
  json rec;
  std::size_t line = 0;
};

// One record from each input file, all for the same caption.
class Row {
 public:
  void put(const std::string& role, Line line) { cols_.emplace_back(role, std::move(line)); }
  const Line* get(const std::string& role) const {
    for (const auto& [r, l] : cols_) {
      if (r == role) return &l;
    }
    return nullptr;
  }
  const Line& at(const std::string& role) const {
    const Line* l = get(role);
    if (l == nullptr) throw Error("internal: no '" + role + "' column");
    return *l;
  }

 private:
  std::vector<std::pair<std::string, Line>> cols_;
};

std::string caption_id_of(const json& rec) {
  const auto it = rec.find("caption_id");
  return it != rec.end() && it->is_string() ? it->get<std::string>() : std::string();
}

// Reads several JSONL files in lockstep. Files must list the same captions in
// the same order; any divergence is an input-consistency error.
class InputSet {
 public:
  InputSet(const PipelineConfig& cfg, const std::vector<std::string>& required,
           const std::vector<std::string>& optional_roles) {
    for (const auto& role : required) open(role, cfg.path(role));
    for (const auto& role : optional_roles) {
      if (cfg.has_path(role)) open(role, cfg.path(role));
    }
  }

  std::vector<Row> read_chunk(std::size_t n) {
    std::vector<Row> rows;
    while (rows.size() < n) {
      Row row;
      std::size_t ended = 0;
      std::string id;
      std::string id_role;
      for (auto& [role, reader] : readers_) {
        Line l;
        if (!reader->next(l.rec)) {
          ++ended;
          continue;
        }
        l.line = reader->line();
        const std::string this_id = caption_id_of(l.rec);
        if (!this_id.empty()) {
          if (id.empty()) {
            id = this_id;
            id_role = role;
          } else if (this_id != id) {
            throw ConsistencyError("record " + std::to_string(index_ + 1) + ": " + id_role + " has caption '" + id +
                                   "' but " + role + " has '" + this_id +
                                   "' (inputs must list the same captions in the same order)");
          }
        }
        row.put(role, std::move(l));
      }
      if (ended == readers_.size()) break;
      if (ended != 0) {
        throw ConsistencyError("record " + std::to_string(index_ + 1) +
                               ": input files hold different numbers of captions");
      }
      ++index_;
      rows.push_back(std::move(row));
    }
    return rows;
  }

  std::size_t records() const { return index_; }

 private:
  void open(const std::string& role, const fs::path& path) {
    readers_.emplace_back(role, std::make_unique<io::JsonlReader>(path));
  }

  std::vector<std::pair<std::string, std::unique_ptr<io::JsonlReader>>> readers_;
  std::size_t index_ = 0;
};

// fn(i) for i in [0, n) on up to `workers` threads; results in index order.
// The exception of the lowest failing index wins, so failures are
// deterministic regardless of the worker count.
template <typename T, typename Fn>
std::vector<T> parallel_map(std::size_t n, unsigned workers, Fn fn) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
        return;
      }
    }
  };
  if (workers <= 1 || n < 2) {
    run_range(0, n);
  } else {
    const std::size_t blocks = std::min<std::size_t>(workers, n);
    std::vector<std::future<void>> futures;
    for (std::size_t b = 0; b < blocks; ++b) {
      futures.push_back(std::async(std::launch::async, run_range, b * n / blocks, (b + 1) * n / blocks));
    }
    for (auto& f : futures) f.get();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// Re-raises a module error with caption context, keeping its exit-code family.
[[noreturn]] void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const SchemaError& e) {
    throw SchemaError(context + ": " + e.what());
  } catch (const ConsistencyError& e) {
    throw ConsistencyError(context + ": " + e.what());
  } catch (const Error& e) {
    throw Error(context + ": " + e.what());
  }
}

std::string where(const Row& row, const std::string& role) {
  const Line& l = row.at(role);
  const std::string id = caption_id_of(l.rec);
  return role + " line " + std::to_string(l.line) + (id.empty() ? "" : " (caption '" + id + "')");
}

std::unique_ptr<SpanTokenizer> make_tokenizer(const PipelineConfig& cfg) {
  const std::string name = cfg.tokenizer_name.empty() ? cfg.tokenizer : cfg.tokenizer_name;
  const SpecialTokens specials{cfg.specials, cfg.specials};
  if (cfg.tokenizer == "whitespace") return std::make_unique<WhitespaceTokenizer>(specials, name);
  if (!cfg.has_path("vocab")) {
    return std::make_unique<GreedyVocabTokenizer>(GreedyVocabTokenizer::default_subword(specials, name));
  }
  std::ifstream in(cfg.path("vocab"), std::ios::binary);
  if (!in) throw ConfigError("cannot open vocabulary '" + cfg.path("vocab").string() + "'");
  std::vector<std::string> vocab;
  std::string entry;
  while (std::getline(in, entry)) {
    if (!entry.empty() && entry.back() == '\r') entry.pop_back();
    if (!entry.empty()) vocab.push_back(entry);
  }
  return std::make_unique<GreedyVocabTokenizer>(std::move(vocab), specials, name);
}

// A caption's scores on the tokenization that weights and masks live on.
struct Scored {
  std::string caption_id;
  std::string tokenizer;
  ConfidenceSeries series;
  std::optional<Tokenization> tokens;
  std::optional<NoisyCaption> truth;
};

// Logprobs -> score kind -> (projection through the alignment) -> checks
// against the optional token dump and noisy corpus columns.
Scored score_row(const Row& row, const PipelineConfig& cfg) {
  try {
    const Line& lp_line = row.at("logprobs");
    const auto lp = io::parse_logprob(lp_line.rec, lp_line.line);
    Scored out{lp.caption_id, lp.tokenizer, confidence::scores_of_kind(lp, cfg.score_kind), std::nullopt, std::nullopt};
    if (const Line* al = row.get("alignment")) {
      const auto rec = io::parse_alignment(al->rec, al->line);
      if (rec.target_tokenizer != lp.tokenizer) {
        throw MismatchError("alignment targets tokenizer '" + rec.target_tokenizer + "' but logprobs use '" +
                            lp.tokenizer + "'");
      }
      out.series = project_scores(out.series, rec.map);
      out.tokenizer = rec.source_tokenizer;
    }
    if (const Line* tk = row.get("tokens")) {
      const auto dump = io::parse_token_dump(tk->rec, tk->line);
      if (!dump.text) throw ParseError(tk->line, "token dump record needs a 'text' field for filtering");
      if (dump.tokenizer != out.tokenizer) {
        throw MismatchError("token dump uses tokenizer '" + dump.tokenizer + "', scores are on '" + out.tokenizer + "'");
      }
      out.tokens = io::to_tokenization(dump, *dump.text, tk->line);
      if (out.tokens->size() != out.series.size()) {
        throw LengthMismatchError(std::to_string(out.tokens->size()) + " tokens for " +
                                  std::to_string(out.series.size()) + " scores");
      }
    }
    if (const Line* nc = row.get("corpus")) {
      auto truth = io::parse_noisy_caption(nc->rec, nc->line);
      if (truth.tokenizer != out.tokenizer) {
        throw MismatchError("noisy corpus masks use tokenizer '" + truth.tokenizer + "', scores are on '" +
                            out.tokenizer + "'");
      }
      if (truth.noise_mask.size() != out.series.size()) {
        throw AlignmentError(std::to_string(truth.noise_mask.size()) + " mask entries for " +
                             std::to_string(out.series.size()) + " scores");
      }
      out.truth = std::move(truth);
    }
    return out;
  } catch (const Error&) {
    rethrow_with_context(where(row, "logprobs"));
  }
}

std::vector<Scored> score_chunk(const std::vector<Row>& rows, const PipelineConfig& cfg, unsigned workers) {
  return parallel_map<Scored>(rows.size(), workers, [&](std::size_t i) { return score_row(rows[i], cfg); });
}

// Outcome of one caption in a thresholded pass: a record to write, or a
// per-caption diagnostic that is counted and skipped.
struct Emitted {
  std::optional<json> record;
  std::string diagnostic;
};

using EmitFn = std::function<Emitted(const Scored&, const reweight::ThresholdConfig&)>;

// Resolves epsilon over the configured population and emits one record per
// caption. Corpus: two passes over the inputs. Batch: one pass in groups of
// batch_size captions.
void thresholded_pass(const PipelineConfig& cfg, const std::vector<std::string>& required,
                      const std::vector<std::string>& optional_roles, RunManifest& manifest, const EmitFn& emit) {
  const unsigned workers = worker_count();
  io::JsonlWriter out(cfg.path("out"));
  StageRecord& read = manifest.stage("score");
  StageRecord& written = manifest.stage("emit");

  auto write_chunk = [&](const std::vector<Scored>& scored, const reweight::ThresholdConfig& tc) {
    auto results = parallel_map<Emitted>(scored.size(), workers, [&](std::size_t i) { return emit(scored[i], tc); });
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i].record) {
        out.write(*results[i].record);
        ++written.records;
      } else {
        std::cerr << "capguard " << manifest.command << ": caption '" << scored[i].caption_id
                  << "': " << results[i].diagnostic << '\n';
        ++written.errors;
      }
    }
  };

  if (cfg.population == reweight::Population::Corpus) {
    std::vector<double> pool;
    {
      InputSet inputs(cfg, required, optional_roles);
      for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
        for (const auto& s : score_chunk(rows, cfg, workers)) {
          for (const Score& v : s.series.values()) {
            if (v) pool.push_back(*v);
          }
        }
      }
      manifest.stage("pool").records = inputs.records();
    }
    const auto tc = reweight::select_threshold(pool, cfg.sigma, cfg.population, cfg.score_kind);
    manifest.summary["epsilon"] = tc.epsilon;
    manifest.summary["pool_size"] = pool.size();
    InputSet inputs(cfg, required, optional_roles);
    for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
      const auto scored = score_chunk(rows, cfg, workers);
      read.records += scored.size();
      write_chunk(scored, tc);
    }
  } else {
    InputSet inputs(cfg, required, optional_roles);
    std::size_t batches = 0;
    for (auto rows = inputs.read_chunk(cfg.batch_size); !rows.empty(); rows = inputs.read_chunk(cfg.batch_size)) {
      const auto scored = score_chunk(rows, cfg, workers);
      read.records += scored.size();
      std::vector<double> pool;
      for (const auto& s : scored) {
        for (const Score& v : s.series.values()) {
          if (v) pool.push_back(*v);
        }
      }
      try {
        write_chunk(scored, reweight::select_threshold(pool, cfg.sigma, cfg.population, cfg.score_kind));
      } catch (const Error&) {
        rethrow_with_context("batch " + std::to_string(batches));
      }
      ++batches;
    }
    manifest.summary["batches"] = batches;
  }
  out.close();
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

fs::path summary_path(const fs::path& out) {
  return fs::path(out.string() + ".summary.json");
}

// Reads `role` in chunks and writes fn(line) for each record, in order.
void map_records(const PipelineConfig& cfg, const std::string& role, RunManifest& manifest,
                 const std::function<json(const Line&)>& fn) {
  const unsigned workers = worker_count();
  InputSet inputs(cfg, {role}, {});
  io::JsonlWriter out(cfg.path("out"));
  StageRecord& stage = manifest.stage("records");
  for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
    auto records = parallel_map<json>(rows.size(), workers, [&](std::size_t i) {
      try {
        return fn(rows[i].at(role));
      } catch (const Error&) {
        rethrow_with_context(where(rows[i], role));
      }
    });
    for (const auto& r : records) out.write(r);
    stage.records += records.size();
  }
  out.close();
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

}  // namespace

// --- commands --------------------------------------------------------------------

void cmd_tokenize(const PipelineConfig& cfg, RunManifest& manifest) {
  const auto tokenizer = make_tokenizer(cfg);
  map_records(cfg, "captions", manifest, [&](const Line& l) {
    return io::to_json(tokenize_with_spans(io::parse_caption(l.rec, l.line), *tokenizer));
  });
}

void cmd_align(const PipelineConfig& cfg, RunManifest& manifest) {
  const unsigned workers = worker_count();
  InputSet inputs(cfg, {"source", "target"}, {"captions"});
  io::JsonlWriter out(cfg.path("out"));
  StageRecord& stage = manifest.stage("align");
  for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
    auto records = parallel_map<json>(rows.size(), workers, [&](std::size_t i) {
      const Row& row = rows[i];
      try {
        const Line& sl = row.at("source");
        const Line& tl = row.at("target");
        const auto src = io::parse_token_dump(sl.rec, sl.line);
        const auto tgt = io::parse_token_dump(tl.rec, tl.line);
        std::optional<std::string> shared;
        if (const Line* cl = row.get("captions")) shared = io::parse_caption(cl->rec, cl->line).text;
        const auto text_for = [&](const io::TokenDumpRecord& d, std::size_t line) {
          if (d.text) return *d.text;
          if (shared) return *shared;
          if (src.text) return *src.text;
          if (tgt.text) return *tgt.text;
          throw ParseError(line, "no caption text: the dump has no 'text' field and no --captions file was given");
        };
        const Tokenization a = io::to_tokenization(src, text_for(src, sl.line), sl.line);
        const Tokenization b = io::to_tokenization(tgt, text_for(tgt, tl.line), tl.line);
        if (shared && (a.text() != *shared || b.text() != *shared)) {
          throw MismatchError("token dump text differs from the captions file");
        }
        return io::to_json(io::AlignmentRecord{a.caption_id(), a.tokenizer_name(), b.tokenizer_name(),
                                               build_alignment(a, b)});
      } catch (const Error&) {
        rethrow_with_context(where(row, "source"));
      }
    });
    for (const auto& r : records) out.write(r);
    stage.records += records.size();
  }
  out.close();
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

void cmd_score(const PipelineConfig& cfg, RunManifest& manifest) {
  map_records(cfg, "logprobs", manifest, [&](const Line& l) {
    const auto lp = io::parse_logprob(l.rec, l.line);
    return io::to_json(confidence::scores_of_kind(lp, cfg.score_kind), lp.tokenizer);
  });
}

void cmd_project(const PipelineConfig& cfg, RunManifest& manifest) {
  const unsigned workers = worker_count();
  InputSet inputs(cfg, {"series", "alignment"}, {});
  io::JsonlWriter out(cfg.path("out"));
  StageRecord& stage = manifest.stage("project");
  for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
    auto records = parallel_map<json>(rows.size(), workers, [&](std::size_t i) {
      const Row& row = rows[i];
      try {
        const Line& sl = row.at("series");
        const Line& al = row.at("alignment");
        const auto series = io::parse_series(sl.rec, sl.line);
        const auto alignment = io::parse_alignment(al.rec, al.line);
        if (alignment.target_tokenizer != series.tokenizer) {
          throw MismatchError("alignment targets tokenizer '" + alignment.target_tokenizer + "' but scores use '" +
                              series.tokenizer + "'");
        }
        return io::to_json(project_scores(series.series, alignment.map), alignment.source_tokenizer);
      } catch (const Error&) {
        rethrow_with_context(where(row, "series"));
      }
    });
    for (const auto& r : records) out.write(r);
    stage.records += records.size();
  }
  out.close();
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

void cmd_weight(const PipelineConfig& cfg, RunManifest& manifest) {
  std::size_t flagged_total = 0;
  std::size_t scored_total = 0;
  std::mutex counts_mutex;
  thresholded_pass(cfg, {"logprobs"}, {"alignment"}, manifest,
                   [&](const Scored& s, const reweight::ThresholdConfig& tc) {
                     const auto w = reweight::compute_weights(s.series, tc);
                     {
                       const std::lock_guard lock(counts_mutex);
                       flagged_total += w.flagged.size();
                       scored_total += static_cast<std::size_t>(std::count_if(
                           s.series.values().begin(), s.series.values().end(), [](const Score& v) { return v.has_value(); }));
                     }
                     return Emitted{json{{"caption_id", s.caption_id},
                                         {"tokenizer", s.tokenizer},
                                         {"sigma", tc.sigma},
                                         {"epsilon", tc.epsilon},
                                         {"score_kind", capguard::to_string(tc.score_kind)},
                                         {"weights", w.weights},
                                         {"flagged", w.flagged}},
                                    {}};
                   });
  manifest.summary["flagged_tokens"] = flagged_total;
  manifest.summary["scored_tokens"] = scored_total;
}

void cmd_filter(const PipelineConfig& cfg, RunManifest& manifest) {
  thresholded_pass(cfg, {"logprobs", "tokens"}, {"alignment"}, manifest,
                   [&](const Scored& s, const reweight::ThresholdConfig& tc) {
                     try {
                       return Emitted{io::to_json(reweight::filter_noisy_tokens(*s.tokens, s.series, tc)), {}};
                     } catch (const AllRemovedError& e) {
                       return Emitted{std::nullopt, e.what()};
                     }
                   });
}

void cmd_templates(const PipelineConfig& cfg, RunManifest& manifest) {
  const auto corpus = bench::generate_template_corpus(cfg.count, cfg.seed);
  io::JsonlWriter out(cfg.path("out"));
  for (const auto& tc : corpus.captions) out.write(bench::to_json(tc));
  out.close();
  manifest.stage("generate").records = corpus.captions.size();
  manifest.summary["slot_word_tally"] = corpus.slot_word_tally;
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

void cmd_inject(const PipelineConfig& cfg, RunManifest& manifest) {
  const auto tokenizer = make_tokenizer(cfg);
  bench::InjectionConfig ic;
  ic.rate = cfg.rate;
  ic.categories = std::set<Category>(cfg.categories.begin(), cfg.categories.end());
  ic.seed = cfg.seed;

  InputSet inputs(cfg, {"corpus"}, {});
  io::JsonlWriter out(cfg.path("out"));
  StageRecord& stage = manifest.stage("inject");
  std::size_t eligible = 0;
  std::size_t substituted = 0;
  for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
    std::vector<bench::TemplateCaption> chunk;
    for (const auto& row : rows) {
      const Line& l = row.at("corpus");
      try {
        chunk.push_back(bench::parse_template_caption(l.rec, l.line));
      } catch (const Error&) {
        rethrow_with_context(where(row, "corpus"));
      }
    }
    const auto result = bench::inject_hallucinations(chunk, ic, *tokenizer);
    for (const auto& nc : result.captions) out.write(io::to_json(nc));
    eligible += result.eligible_slots;
    substituted += result.substituted_slots;
    stage.records += result.captions.size();
  }
  out.close();
  manifest.summary["eligible_slots"] = eligible;
  manifest.summary["substituted_slots"] = substituted;
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

void cmd_synth(const PipelineConfig& cfg, RunManifest& manifest) {
  confidence::ProviderConfig pc{cfg.clean, cfg.noisy, cfg.seed};
  confidence::validate(pc.clean, "clean");
  confidence::validate(pc.noisy, "noisy");
  map_records(cfg, "corpus", manifest, [&](const Line& l) {
    const NoisyCaption nc = io::parse_noisy_caption(l.rec, l.line);
    return io::to_json(confidence::synthetic_provider(std::span(&nc, 1), pc).front());
  });
}

void cmd_evaluate(const PipelineConfig& cfg, RunManifest& manifest) {
  const unsigned workers = worker_count();
  InputSet inputs(cfg, {"logprobs", "corpus"}, {"alignment"});
  std::vector<ConfidenceSeries> series;
  std::vector<NoisyCaption> truth;
  for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
    for (auto& s : score_chunk(rows, cfg, workers)) {
      series.push_back(std::move(s.series));
      truth.push_back(std::move(*s.truth));
    }
  }
  manifest.stage("score").records = series.size();
  const auto report = bench::detection_metrics(series, truth, cfg.sigmas);

  std::string csv = "threshold,precision,recall,tp,fp,fn\n";
  json eps = json::array();
  for (const auto& r : report.rows) {
    csv += io::format_double(r.sigma) + "," + io::format_double(r.precision) + "," + io::format_double(r.recall) +
           "," + std::to_string(r.tp) + "," + std::to_string(r.fp) + "," + std::to_string(r.fn) + "\n";
    eps.push_back({{"sigma", r.sigma}, {"epsilon", r.epsilon}});
  }
  write_text(cfg.path("out"), csv);
  manifest.summary["thresholds"] = std::move(eps);
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

void cmd_stats(const PipelineConfig& cfg, RunManifest& manifest) {
  const unsigned workers = worker_count();
  InputSet inputs(cfg, {"logprobs"}, {"corpus", "alignment"});
  confidence::ScoreStatistics acc(cfg.score_kind, cfg.bins);
  for (auto rows = inputs.read_chunk(kChunk); !rows.empty(); rows = inputs.read_chunk(kChunk)) {
    for (const auto& s : score_chunk(rows, cfg, workers)) {
      acc.add(s.series, s.truth ? &s.truth->noise_mask : nullptr);
    }
  }
  manifest.stage("score").records = inputs.records();
  const auto report = acc.report();

  std::string csv = "bin_lo,bin_hi,count_all,count_noisy\n";
  for (std::size_t b = 0; b + 1 < report.bin_edges.size(); ++b) {
    csv += io::format_double(report.bin_edges[b]) + "," + io::format_double(report.bin_edges[b + 1]) + "," +
           std::to_string(report.counts_all[b]) + "," +
           (report.counts_noisy.empty() ? std::string() : std::to_string(report.counts_noisy[b])) + "\n";
  }
  write_text(cfg.path("out"), csv);

  json summary = {{"kind", capguard::to_string(report.kind)},
                  {"scored_tokens", acc.scored()},
                  {"mean_all", report.mean_all},
                  {"mean_noisy", report.mean_noisy ? json(*report.mean_noisy) : json(nullptr)}};
  if (report.separation) {
    summary["mean_shift"] = report.separation->mean_shift;
    summary["ks_statistic"] = report.separation->ks_statistic;
  } else {
    summary["mean_shift"] = nullptr;
    summary["ks_statistic"] = nullptr;
  }
  write_text(summary_path(cfg.path("out")), summary.dump(2) + "\n");
  manifest.summary = summary;
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
  manifest.outputs.push_back({"summary", summary_path(cfg.path("out")).generic_string(), ""});
}

void cmd_halrate(const PipelineConfig& cfg, RunManifest& manifest) {
  const auto judgments = io::read_all(cfg.path("judgments"), bench::parse_judgment);
  manifest.stage("read").records = judgments.size();
  const auto report = bench::hal_rate(judgments);
  std::string csv = "caption_id,num_objects,rate\n";
  for (const auto& c : report.per_caption) {
    csv += c.caption_id + "," + std::to_string(c.num_objects) + "," + io::format_double(c.rate) + "\n";
  }
  write_text(cfg.path("out"), csv);
  const json summary = {{"captions", report.per_caption.size()},
                        {"corpus_mean_rate", report.corpus_mean_rate},
                        {"corpus_mean_num_obj", report.corpus_mean_num_obj}};
  write_text(summary_path(cfg.path("out")), summary.dump(2) + "\n");
  manifest.summary = summary;
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
  manifest.outputs.push_back({"summary", summary_path(cfg.path("out")).generic_string(), ""});
}

void cmd_terms(const PipelineConfig& cfg, RunManifest& manifest) {
  if (cfg.terms.empty()) throw ConfigError("terms: at least one --terms entry is required");
  std::vector<std::string> texts;
  io::JsonlReader in(cfg.path("corpus"));
  json rec;
  while (in.next(rec)) texts.push_back(io::require_string(rec, "text", in.line()));
  manifest.stage("read").records = texts.size();
  const auto counts = bench::corpus_term_stats(texts, cfg.terms);
  std::string csv = "term,count\n";
  for (const auto& t : cfg.terms) csv += t + "," + std::to_string(counts.at(t)) + "\n";
  write_text(cfg.path("out"), csv);
  manifest.outputs.push_back({"out", cfg.path("out").generic_string(), ""});
}

// --- dispatch --------------------------------------------------------------------

namespace {

struct CommandSpec {
  const char* name;
  const char* help;
  void (*fn)(const PipelineConfig&, RunManifest&);
  std::vector<std::string> knobs;
};

const std::vector<CommandSpec>& commands() {
  static const std::vector<CommandSpec> specs = {
      {"tokenize", "Tokenize captions into a span-annotated token dump", cmd_tokenize,
       {"captions", "tokenizer", "tokenizer_name", "vocab", "specials"}},
      {"align", "Build source->target token alignments from two token dumps", cmd_align,
       {"source", "target", "captions"}},
      {"score", "Turn a logprob dump into confidence series of one kind", cmd_score, {"logprobs", "score_kind"}},
      {"project", "Project confidence series through alignments", cmd_project, {"series", "alignment"}},
      {"weight", "Emit per-token attention weight sidecars", cmd_weight,
       {"logprobs", "alignment", "score_kind", "sigma", "population", "batch_size", "reweight_mode"}},
      {"filter", "Drop flagged tokens and emit filtered captions", cmd_filter,
       {"tokens", "logprobs", "alignment", "score_kind", "sigma", "population", "batch_size"}},
      {"templates", "Generate a slot-annotated template caption corpus", cmd_templates, {"count"}},
      {"inject", "Inject labeled hallucinations into a template corpus", cmd_inject,
       {"corpus", "rate", "categories", "tokenizer", "tokenizer_name", "vocab", "specials"}},
      {"synth", "Emit a synthetic logprob dump for a noisy corpus", cmd_synth,
       {"corpus", "clean_mean", "clean_std", "noisy_mean", "noisy_std"}},
      {"evaluate", "Precision/recall of flagging against ground-truth masks", cmd_evaluate,
       {"logprobs", "corpus", "alignment", "score_kind", "sigmas"}},
      {"stats", "Histogram and separation statistics of confidence scores", cmd_stats,
       {"logprobs", "corpus", "alignment", "score_kind", "bins"}},
      {"halrate", "Hallucination rate from judge votes", cmd_halrate, {"judgments"}},
      {"terms", "Whole-word term counts over a caption corpus", cmd_terms, {"corpus", "terms"}},
  };
  return specs;
}

const CommandSpec* find_command(const std::string& name) {
  for (const auto& spec : commands()) {
    if (name == spec.name) return &spec;
  }
  return nullptr;
}

const char* knob_help(const std::string& key) {
  static const std::map<std::string, const char*> help = {
      {"score_kind", "with_image | text_only | differential (default text_only)"},
      {"sigma", "quantile fraction in (0,1) setting the threshold (default 0.30)"},
      {"population", "corpus | batch: pool the threshold quantile is taken over (default corpus)"},
      {"batch_size", "captions per batch when population=batch (default 192)"},
      {"reweight_mode", "literal_multiply | clamp_renorm, recorded for trainers (default literal_multiply)"},
      {"seed", "random seed (default 0)"},
      {"bins", "histogram bins (default 20)"},
      {"sigmas", "comma-separated sigma sweep (default 0.1,...,0.9)"},
      {"rate", "per-slot substitution probability in [0,1] (default 0.17)"},
      {"categories", "comma-separated subset of color,spatial,quantity,feature"},
      {"clean_mean", "mean of the clean-token probability distribution"},
      {"clean_std", "stddev of the clean-token probability distribution"},
      {"noisy_mean", "mean of the noisy-token text-only probability distribution"},
      {"noisy_std", "stddev of the noisy-token text-only probability distribution"},
      {"count", "number of captions to generate"},
      {"tokenizer", "whitespace | greedy"},
      {"tokenizer_name", "tag written to dumps (default: the tokenizer type)"},
      {"specials", "add <bos>/<eos> special tokens"},
      {"terms", "comma-separated terms to count"},
      {"tokens", "token dump JSONL"},
      {"source", "source-side token dump JSONL"},
      {"target", "target-side token dump JSONL"},
      {"captions", "caption JSONL with caption_id and text"},
      {"logprobs", "logprob dump JSONL"},
      {"series", "confidence series JSONL"},
      {"alignment", "alignment JSONL"},
      {"corpus", "corpus JSONL"},
      {"judgments", "judgment JSONL"},
      {"vocab", "vocabulary file, one entry per line"},
      {"out", "output file"},
  };
  const auto it = help.find(key);
  return it == help.end() ? "" : it->second;
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

void print_error(const std::string& command, const std::string& what) {
  std::cerr << "capguard " << command << ": error: " << what << '\n';
}

}  // namespace

int execute(const std::string& command, const PipelineConfig& cfg) {
  const CommandSpec* spec = find_command(command);
  if (spec == nullptr) {
    print_error(command, "unknown command");
    return kExitSchema;
  }
  RunManifest manifest;
  manifest.command = command;
  manifest.config = cfg.to_json();
  try {
    cfg.path("out");
    for (const auto& key : spec->knobs) {
      if (!is_path_key(key) || !cfg.has_path(key)) continue;
      const fs::path& p = cfg.path(key);
      if (!fs::is_regular_file(p)) throw ConfigError("input --" + key + " '" + p.string() + "' does not exist");
      manifest.inputs.push_back({key, p.generic_string(), sha256_file(p)});
    }
    spec->fn(cfg, manifest);
    for (auto& o : manifest.outputs) o.sha256 = sha256_file(o.path);
  } catch (const std::exception& e) {
    manifest.status = "failed";
    manifest.error = e.what();
    manifest.exit_code = exit_code_for(e);
    manifest.outputs.clear();
    print_error(command, e.what());
  }
  if (cfg.has_path("out")) {
    try {
      write_text(manifest_path(cfg.path("out")), manifest.to_json().dump(2) + "\n");
    } catch (const std::exception& e) {
      print_error(command, e.what());
      return manifest.exit_code == kExitOk ? kExitInternal : manifest.exit_code;
    }
  }
  return manifest.exit_code;
}

int run(int argc, char** argv) {
  CLI::App app{"capguard: caption hallucination scoring, tokenizer alignment and attention reweighting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CAPGUARD_VERSION);

  struct Bound {
    CLI::App* sub = nullptr;
    std::string config_path;
    std::map<std::string, std::string> raw;
    std::vector<std::pair<std::string, CLI::Option*>> options;
    bool specials = false;
  };
  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& spec : commands()) {
    auto b = std::make_unique<Bound>();
    b->sub = app.add_subcommand(spec.name, spec.help);
    b->sub->add_option("--config", b->config_path, "JSON config file (flags override it)");
    std::vector<std::string> keys = spec.knobs;
    keys.push_back("seed");
    keys.push_back("out");
    for (const auto& key : keys) {
      if (key == "specials") {
        b->options.emplace_back(key, b->sub->add_flag(flag_name(key), b->specials, knob_help(key)));
      } else {
        b->options.emplace_back(key, b->sub->add_option(flag_name(key), b->raw[key], knob_help(key)));
      }
    }
    bound.push_back(std::move(b));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitSchema;
  }

  for (const auto& b : bound) {
    if (!b->sub->parsed()) continue;
    const std::string command = b->sub->get_name();
    try {
      json flags = json::object();
      for (const auto& [key, opt] : b->options) {
        if (opt->count() == 0) continue;
        flags[key] = key == "specials" ? json(b->specials) : json(b->raw[key]);
      }
      const json file = b->config_path.empty() ? json::object() : load_config_file(b->config_path);
      const PipelineConfig cfg = PipelineConfig::resolve(file, flags);
      return execute(command, cfg);
    } catch (const std::exception& e) {
      print_error(command, e.what());
      return exit_code_for(e);
    }
  }
  return kExitSchema;
}

}  // namespace capguard::pipeline

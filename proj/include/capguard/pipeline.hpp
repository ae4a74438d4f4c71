#pragma once

// Batch command-line pipeline over the JSONL file contracts.
//
// Every command is a pure function of its input files and resolved
// configuration, writes its main output to `out`, and leaves exactly one run
// manifest next to it (`<out>.manifest.json`) with the configuration
// snapshot, SHA-256 digests of every input and output, and per-stage record
// and error counts.
//
// Exit codes: 0 success, 1 internal error, 2 schema/config error,
// 3 input-consistency error.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capguard/confidence.hpp"
#include "capguard/noisy_caption.hpp"
#include "capguard/reweighting.hpp"
#include "capguard/series.hpp"

namespace capguard::pipeline {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitSchema = 2;
inline constexpr int kExitConsistency = 3;

int exit_code_for(const std::exception& e);

// Resolved runtime choices. Precedence: flags > config file > defaults.
struct PipelineConfig {
  ScoreKind score_kind = ScoreKind::TextOnly;
  double sigma = 0.30;
  reweight::Population population = reweight::Population::Corpus;
  std::size_t batch_size = 192;
  reweight::ReweightMode reweight_mode = reweight::ReweightMode::LiteralMultiply;
  std::uint64_t seed = 0;

  std::size_t bins = 20;
  std::vector<double> sigmas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double rate = 0.17;
  std::vector<Category> categories{Category::Color, Category::Spatial, Category::Quantity, Category::Feature};
  confidence::TruncatedGaussian clean{0.45, 0.15};
  confidence::TruncatedGaussian noisy{0.75, 0.15};
  std::size_t count = 1000;
  std::string tokenizer = "whitespace";
  std::string tokenizer_name;  // empty: same as `tokenizer`
  bool specials = false;
  std::vector<std::string> terms;

  // Role -> file. Roles: tokens, source, target, captions, logprobs, series,
  // alignment, corpus, judgments, vocab, out.
  std::map<std::string, std::filesystem::path> paths;

  // Layers are JSON objects keyed by the names in config_keys(); values may be
  // JSON-typed (config files) or strings (command-line flags). Throws
  // ConfigError on unknown keys or unparsable values, SigmaRangeError on a
  // sigma outside (0, 1).
  static PipelineConfig resolve(const nlohmann::json& file_layer, const nlohmann::json& flag_layer);
  static const std::vector<std::string>& config_keys();

  bool has_path(const std::string& role) const { return paths.contains(role); }
  // Throws ConfigError when the role is not configured.
  const std::filesystem::path& path(const std::string& role) const;

  nlohmann::json to_json() const;
};

// Reads a JSON config file into a layer for PipelineConfig::resolve.
nlohmann::json load_config_file(const std::filesystem::path& path);

struct StageRecord {
  std::string name;
  std::size_t records = 0;
  std::size_t errors = 0;
};

struct FileDigest {
  std::string role;
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  std::deque<StageRecord> stages;  // stage() hands out references that must stay valid
  nlohmann::json summary = nlohmann::json::object();
  std::string status = "ok";
  std::string error;
  int exit_code = kExitOk;

  StageRecord& stage(const std::string& name);
  nlohmann::json to_json() const;
};

std::filesystem::path manifest_path(const std::filesystem::path& out);

// Worker threads for per-caption work; CAPGUARD_WORKERS, default 1.
unsigned worker_count();

// Commands. Each reads the roles it needs from cfg.paths and writes cfg.paths["out"].
void cmd_tokenize(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_align(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_score(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_project(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_weight(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_filter(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_templates(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_inject(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_synth(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_evaluate(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_stats(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_halrate(const PipelineConfig& cfg, RunManifest& manifest);
void cmd_terms(const PipelineConfig& cfg, RunManifest& manifest);

// Runs one command with a resolved config, writes the manifest, and returns
// the exit code. Diagnostics go to stderr.
int execute(const std::string& command, const PipelineConfig& cfg);

// Full command-line entry point.
int run(int argc, char** argv);

}  // namespace capguard::pipeline

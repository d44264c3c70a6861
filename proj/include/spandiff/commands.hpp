#pragma once

// Operator workflows behind the `spandiff` executable. Every command writes
// human-readable output to `out`, throws on failure, and leaves exit-code
// mapping to error_exit_code().
//
// Data directory layout (produced by preprocess):
//   <data>/train.jsonl  <data>/dev.jsonl  <data>/test.jsonl  <data>/vocab.json

#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spandiff/config.hpp"
#include "spandiff/corpus.hpp"

namespace spandiff {

/// Config sources for a command: optional file plus explicit flag overrides
/// (--seed, --encoder and --set key=value all land in `flags`).
struct ConfigSources {
  std::optional<std::filesystem::path> file;
  std::map<std::string, std::string> flags;
  bool use_environment = true;

  TrainConfig resolve() const;
};

struct PreprocessOptions {
  std::filesystem::path raw_dir;          // <split>_triplets.txt (or <split>.txt)
  std::filesystem::path annotations_dir;  // <split>.conllu
  std::filesystem::path out_dir;
  std::vector<std::string> splits = {"train", "dev", "test"};
};

/// Triplet file line: `sentence####[([a...], [o...], 'POS'), ...]` with
/// 0-based token indices. Returns (tokens, aspects), one aspect per triplet.
std::pair<std::vector<std::string>, std::vector<AspectAnnotation>> parse_triplet_line(const std::string& line);

struct ConlluSentence {
  std::vector<std::string> forms;
  std::vector<std::string> pos;
  std::vector<DependencyEdge> edges;  // label_id unset; root attachments dropped
};
std::vector<ConlluSentence> read_conllu(const std::filesystem::path& path);

struct PreprocessResult {
  std::map<std::string, DatasetStats> stats;
  std::vector<std::string> errors;  // one entry per failing example
};
PreprocessResult cmd_preprocess(const PreprocessOptions& opts, std::ostream& out);

struct TrainCommandOptions {
  ConfigSources config;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  bool resume = false;
};
nlohmann::json cmd_train(const TrainCommandOptions& opts, std::ostream& out);
nlohmann::json cmd_train_baseline(const TrainCommandOptions& opts, std::ostream& out);

/// Decode-time overrides accepted by eval/predict/trace: seed, gamma,
/// threshold, x0_estimate.
struct DecodeOptions {
  std::filesystem::path checkpoint;
  std::map<std::string, std::string> overrides;
};

struct EvalCommandOptions {
  DecodeOptions decode;  // checkpoint may be empty when `predictions` is set
  std::filesystem::path data_dir;
  std::string split = "test";
  std::optional<std::filesystem::path> predictions;
  std::optional<std::filesystem::path> out;  // report JSON
};
/// Returns {"AE": report, "AESC": report}.
nlohmann::json cmd_eval(const EvalCommandOptions& opts, std::ostream& out);

struct PredictCommandOptions {
  DecodeOptions decode;
  std::filesystem::path input;  // canonical JSONL
  std::optional<std::filesystem::path> out;
};
void cmd_predict(const PredictCommandOptions& opts, std::ostream& out);

struct TraceCommandOptions {
  DecodeOptions decode;
  std::optional<std::filesystem::path> input;  // JSONL; the sentence at `index`
  std::size_t index = 0;
  std::optional<std::string> text;  // raw whitespace-tokenised sentence, no syntax
  bool json = false;
};
nlohmann::json cmd_trace(const TraceCommandOptions& opts, std::ostream& out);

struct CompareCommandOptions {
  std::filesystem::path report;
  std::filesystem::path baseline;
  std::string mode = "AESC";
  std::string name = "spandiff";
  std::string baseline_name = "SeqLab";
};
void cmd_compare(const CompareCommandOptions& opts, std::ostream& out);

/// SHA-256 of a file as lowercase hex.
std::string sha256_file(const std::filesystem::path& path);

/// Exit code for an escaped exception: 2 config/usage, 3 input data,
/// 4 checkpoint, 5 training, 1 anything else.
int error_exit_code(const std::exception& e);
/// {"error": {"type": ..., "message": ...}}
nlohmann::json error_json(const std::exception& e);

}  // namespace spandiff

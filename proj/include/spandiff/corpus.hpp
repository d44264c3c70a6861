#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace spandiff {

/// Raised for malformed or invariant-violating corpus input.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Polarity { kPositive = 0, kNegative = 1, kNeutral = 2 };

inline constexpr int kNumPolarities = 3;

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view s);

/// A gold aspect span. Indices are 0-based and inclusive in memory; the
/// serialized form is 1-based.
struct AspectAnnotation {
  int start = 0;
  int end = 0;
  Polarity polarity = Polarity::kNeutral;

  friend bool operator==(const AspectAnnotation&, const AspectAnnotation&) = default;
};

/// 0-based head and dependent word indices.
struct DependencyEdge {
  int head = 0;
  int dependent = 0;
  int label_id = 0;
  std::string label;
};

struct AnnotatedExample {
  std::vector<std::string> tokens;
  std::vector<std::string> pos_tags;
  std::vector<int> pos_ids;
  std::vector<DependencyEdge> edges;
  std::vector<AspectAnnotation> gold;
  // 1-based line in the source file, 0 when built in memory.
  std::size_t source_line = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  std::string describe() const;
};

/// String-to-id map with dense ids and a fixed set of reserved entries at the
/// front. Lookup of an unseen string returns the unknown id once frozen.
class Vocabulary {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  explicit Vocabulary(std::vector<std::string> reserved = {std::string(kUnknown)});

  int unknown_id() const { return 0; }
  int size() const { return static_cast<int>(itos_.size()); }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  /// Adds the string when not frozen; otherwise behaves like lookup().
  int add(const std::string& s);
  int lookup(const std::string& s) const;
  bool contains(const std::string& s) const { return stoi_.count(s) != 0; }
  const std::string& at(int id) const { return itos_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& strings() const { return itos_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.itos_ == b.itos_; }

 private:
  std::vector<std::string> itos_;
  std::unordered_map<std::string, int> stoi_;
  bool frozen_ = false;
};

struct Vocabularies {
  static constexpr std::string_view kSelfLoop = "<self>";

  Vocabulary pos{{std::string(Vocabulary::kUnknown)}};
  Vocabulary dep{{std::string(Vocabulary::kUnknown), std::string(kSelfLoop)}};

  int self_loop_id() const { return 1; }
  bool frozen() const { return pos.frozen() && dep.frozen(); }
  void freeze() {
    pos.freeze();
    dep.freeze();
  }

  nlohmann::json to_json() const;
  static Vocabularies from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabularies load(const std::filesystem::path& path);

  friend bool operator==(const Vocabularies& a, const Vocabularies& b) {
    return a.pos == b.pos && a.dep == b.dep;
  }
};

struct DatasetStats {
  std::size_t sentences = 0;
  std::size_t targets = 0;
  std::size_t max_aspects = 0;
};

struct Dataset {
  std::vector<AnnotatedExample> examples;
  Vocabularies vocabs;
  DatasetStats stats;
};

/// Parses a single JSONL record. Throws CorpusError naming `line_no`.
AnnotatedExample parse_example(std::string_view line, std::size_t line_no, Vocabularies& vocabs);

/// Loads a canonical JSONL file. When `vocabs` is empty (or not frozen) the
/// vocabularies are grown from the data and frozen afterwards; a frozen
/// vocabulary is applied with unknown-fallback.
Dataset load_dataset(const std::filesystem::path& path, std::optional<Vocabularies> vocabs = std::nullopt);

/// Same as load_dataset but reading from an in-memory buffer.
Dataset load_dataset_from_string(std::string_view text, std::optional<Vocabularies> vocabs = std::nullopt);

void validate(const AnnotatedExample& example, const Vocabularies* vocabs = nullptr);

/// Re-applies a vocabulary to the stored tag/label strings.
void apply_vocabularies(AnnotatedExample& example, const Vocabularies& vocabs);

std::string serialize_example(const AnnotatedExample& example);
void save_dataset(const std::filesystem::path& path, const std::vector<AnnotatedExample>& examples);

DatasetStats compute_stats(const std::vector<AnnotatedExample>& examples);

/// Symmetric label matrix. Cell value is label_id + 1 for an edge, the
/// self-loop label + 1 on the diagonal and 0 elsewhere.
Eigen::MatrixXi build_adjacency(const AnnotatedExample& example, int self_loop_id = 1);

/// Inclusive 0-based subword range owned by a word.
struct SubwordRange {
  int first = 0;
  int last = 0;
  friend bool operator==(const SubwordRange&, const SubwordRange&) = default;
};

/// Maps each word to the contiguous range of subword pieces it produced.
/// `pieces` excludes the sentence markers. Continuation markers ("##",
/// "Ġ", "▁") are stripped before matching; matching is
/// case-insensitive.
std::vector<SubwordRange> align_subwords(const std::vector<std::string>& tokens,
                                         const std::vector<std::string>& pieces);

/// Variant driven by an explicit piece-to-word index (-1 for markers), as
/// produced by most subword tokenizers.
std::vector<SubwordRange> align_subwords(int num_words, const std::vector<int>& word_ids);

}  // namespace spandiff

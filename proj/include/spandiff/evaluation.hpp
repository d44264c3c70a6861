#pragma once

// Exact-match micro-F1 for aspect extraction (AE) and joint extraction with
// sentiment (AESC), plus the length-bucketed breakdown.

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spandiff/corpus.hpp"
#include "spandiff/inference.hpp"

namespace spandiff {

class EvaluationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class EvalMode { kAE, kAESC };
std::string_view to_string(EvalMode m);

struct Counts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  long predicted() const { return tp + fp; }
  long gold() const { return tp + fn; }
  double precision() const;
  double recall() const;
  double f1() const;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

enum LengthBucket { kLen1 = 0, kLen2 = 1, kLenOver2 = 2 };
inline constexpr std::array<const char*, 3> kBucketNames = {"LEN=1", "LEN=2", "LEN>2"};
LengthBucket bucket_for_length(int length);

struct EvalReport {
  EvalMode mode = EvalMode::kAESC;
  Counts overall;
  std::array<Counts, 3> buckets{};
};

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

using PredictionSet = std::vector<Prediction>;
using GoldSet = std::vector<AspectAnnotation>;

/// Corpus-level exact-match scoring. Duplicate gold entries count once.
/// Also fills the length buckets.
EvalReport score(const std::vector<PredictionSet>& predictions, const std::vector<GoldSet>& golds, EvalMode mode);

/// Bucket rows: golds by their own length; a prediction by the length of the
/// gold it matches, or its own length when unmatched.
std::array<Counts, 3> bucket_by_length(const std::vector<PredictionSet>& predictions,
                                       const std::vector<GoldSet>& golds, EvalMode mode);

/// F1 (in percent) for the columns ALL, LEN=1, LEN=2, LEN>2.
using F1Row = std::array<double, 4>;
inline constexpr std::array<const char*, 4> kColumnNames = {"ALL", "LEN=1", "LEN=2", "LEN>2"};
F1Row f1_row(const EvalReport& r);

/// Relative improvement (a - b) / b * 100 per column; nullopt when b == 0.
using ImprovementRow = std::array<std::optional<double>, 4>;
ImprovementRow compare(const F1Row& a, const F1Row& b);
ImprovementRow compare(const EvalReport& a, const EvalReport& b);

/// Aligned text table: one row per (name, F1Row) plus an "Improvement" row
/// computed from the last row over the first.
std::string render_length_table(const std::vector<std::pair<std::string, F1Row>>& rows);
std::string render_report(const EvalReport& r);

}  // namespace spandiff

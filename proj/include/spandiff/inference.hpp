#pragma once

// Deterministic DDIM decoding of aspect spans.

#include <filesystem>
#include <random>
#include <vector>

#include <json.hpp>

#include "spandiff/corpus.hpp"
#include "spandiff/schedule.hpp"
#include "spandiff/syntanet.hpp"

namespace spandiff {

/// 0-based inclusive span with its polarity and joint confidence
/// p_start[start] * p_end[end] * max p_polarity.
struct Prediction {
  int start = 0;
  int end = 0;
  Polarity polarity = Polarity::kNeutral;
  double score = 0.0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Hard-argmax decode of every slot; a start after the end is swapped.
std::vector<Prediction> decode_slots(const SlotPrediction& prediction);

/// One prediction per distinct span, keeping the highest-scoring polarity;
/// sorted by (start, end).
std::vector<Prediction> dedup(const std::vector<Prediction>& predictions);

std::vector<Prediction> apply_threshold(const std::vector<Prediction>& predictions, double threshold);

/// Standard normal draw of shape (slots x 2).
Eigen::MatrixX2d draw_noise(int slots, std::mt19937_64& rng);

struct SamplerOptions {
  int slots = 1;
  double lambda = 1.0;
  double threshold = 0.0;
};

/// Runs the plan from `x_T` and decodes the terminal prediction.
std::vector<Prediction> sample(const AnnotatedExample& example, const Denoiser& denoiser, const NoiseSchedule& sched,
                               const DdimPlan& plan, double threshold, const SpanTensor& x_T);

/// Draws x_T from `rng` and runs sample().
std::vector<Prediction> sample(const AnnotatedExample& example, const Denoiser& denoiser, const NoiseSchedule& sched,
                               const DdimPlan& plan, const SamplerOptions& options, std::mt19937_64& rng);

struct TraceStep {
  int index = 0;  // 1-based position in the chain
  int t = 0;
  int t_prev = 0;
  std::vector<IntSpan> input_spans;  // x_t read as integer spans
  std::vector<Prediction> decoded;   // after dedup and threshold
};

/// Like sample(), recording the decoded spans after every DDIM step. The last
/// row's `decoded` equals sample()'s result.
std::vector<TraceStep> trace_denoising(const AnnotatedExample& example, const Denoiser& denoiser,
                                       const NoiseSchedule& sched, const DdimPlan& plan, double threshold,
                                       const SpanTensor& x_T);

std::string render_trace(const AnnotatedExample& example, const std::vector<TraceStep>& steps);
nlohmann::json trace_to_json(const AnnotatedExample& example, const std::vector<TraceStep>& steps);

/// Prediction-file record:
///   {"tokens": [...], "pred": [[s, e, polarity, score]], "gold": [[s, e, polarity]]}
/// with 1-based indices.
std::string prediction_record(const AnnotatedExample& example, const std::vector<Prediction>& predictions);

struct PredictionFileEntry {
  std::vector<std::string> tokens;
  std::vector<Prediction> predictions;
  std::vector<AspectAnnotation> gold;
};

std::vector<PredictionFileEntry> read_prediction_file(const std::filesystem::path& path);

}  // namespace spandiff

#pragma once

// Slot supervision, the denoising loss, and the optimisation loop.
//
// Output directory layout written by fit():
//   best.ckpt      model with the highest dev AESC F1 so far
//   last.ckpt      full training state (model, optimiser moments, RNG, data cursor)
//   metrics.jsonl  one row per completed epoch: {step, epoch, loss, dev_f1}
//   vocab.json     POS and dependency-label vocabularies

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spandiff/autograd.hpp"
#include "spandiff/checkpoint.hpp"
#include "spandiff/config.hpp"
#include "spandiff/corpus.hpp"
#include "spandiff/evaluation.hpp"
#include "spandiff/schedule.hpp"
#include "spandiff/syntanet.hpp"

namespace spandiff {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SlotTargets {
  std::vector<IntSpan> spans;
  std::vector<int> starts;
  std::vector<int> ends;
  std::vector<int> polarities;
  // Index into the gold list supervising each slot; -1 for aspect-free sentences.
  std::vector<int> slot_to_gold;

  int slots() const { return static_cast<int>(spans.size()); }
};

/// The first |gold| slots copy the gold list; every further slot draws a gold
/// uniformly with replacement. Without gold every slot targets the whole
/// sentence with neutral polarity.
SlotTargets expand_gold(const std::vector<AspectAnnotation>& gold, int N, int sentence_len, std::mt19937_64& rng);

/// Sum over slots of start, end and polarity cross-entropy (1x1).
autograd::Var compute_loss(const DenoiseVars& pred, const SlotTargets& targets, BoundaryLoss mode);
double compute_loss(const SlotPrediction& pred, const SlotTargets& targets, BoundaryLoss mode);

/// Adam with decoupled weight decay. Biases and normalisation parameters are
/// not decayed.
class AdamW {
 public:
  struct Options {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // <= 0 disables clipping
  };

  explicit AdamW(Options options) : options_(options) {}
  static Options from_config(const TrainConfig& c);

  /// Clips the global gradient norm, updates every parameter and returns the
  /// norm measured before clipping.
  double step(autograd::ParameterStore& params);

  std::int64_t steps() const { return t_; }
  const Options& options() const { return options_; }
  Options& options() { return options_; }

  void append_tensors(const autograd::ParameterStore& params, std::vector<NamedTensor>& out) const;
  void restore(const autograd::ParameterStore& params, const Checkpoint& ckpt, std::int64_t steps);

 private:
  static bool decays(const std::string& name);

  Options options_;
  std::int64_t t_ = 0;
  std::vector<autograd::Matrix> m_;
  std::vector<autograd::Matrix> v_;
};

double gradient_norm(const autograd::ParameterStore& params);

/// Slot count for a training set: the configured N, or the largest gold
/// count when N is 0. A configured N below that count is an error.
int resolve_slot_count(const TrainConfig& config, const std::vector<AnnotatedExample>& train);

/// Everything needed to continue a run bit-identically.
struct TrainState {
  std::unique_ptr<SyntaNet> model;
  AdamW optimizer{AdamW::Options{}};
  std::int64_t step = 0;
  int epoch = 0;
  std::mt19937_64 rng;
  std::vector<std::size_t> order;  // shuffled example order of the current epoch
  std::size_t cursor = 0;          // next position in `order`
  double epoch_loss_sum = 0.0;     // running sum over the current epoch
  std::int64_t epoch_loss_count = 0;
  double best_dev_f1 = -1.0;
  int best_epoch = -1;
};

/// Fresh state: model initialised from config.seed, N resolved from `train`.
TrainState init_train_state(TrainConfig config, const Vocabularies& vocabs, const std::vector<AnnotatedExample>& train);

struct StepMetrics {
  double loss = 0.0;       // mean per-example loss of the batch
  double grad_norm = 0.0;  // before clipping
};

/// One optimiser update on `batch`: per example expand_gold, sample t, corrupt
/// with fresh noise, denoise and accumulate the loss.
StepMetrics train_step(TrainState& state, const std::vector<const AnnotatedExample*>& batch,
                       const NoiseSchedule& sched);

/// Builds the noise schedule and DDIM plan from a model's config.
NoiseSchedule schedule_for(const TrainConfig& c);

/// Deterministic corpus decoding: example i draws its x_T from an RNG seeded
/// with (seed, i), so results do not depend on evaluation order.
std::vector<PredictionSet> predict_corpus(const SyntaNet& model, const std::vector<AnnotatedExample>& examples,
                                          std::uint64_t seed);
EvalReport evaluate_model(const SyntaNet& model, const std::vector<AnnotatedExample>& examples, EvalMode mode,
                          std::uint64_t seed);

struct FitOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  // Called after every optimiser step.
  std::function<void(const TrainState&, const StepMetrics&)> on_step;
};

struct FitResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_state;
  std::filesystem::path metrics_log;
  double best_dev_f1 = 0.0;
  int best_epoch = 0;
  std::int64_t steps = 0;
  std::vector<double> losses;  // per step, this invocation only
};

FitResult fit(const std::vector<AnnotatedExample>& train, const std::vector<AnnotatedExample>& dev,
              const TrainConfig& config, const Vocabularies& vocabs, const FitOptions& options);

Checkpoint model_checkpoint(const SyntaNet& model);
void save_model(const std::filesystem::path& path, const SyntaNet& model);
std::unique_ptr<SyntaNet> model_from_checkpoint(const Checkpoint& ckpt);
std::unique_ptr<SyntaNet> load_model(const std::filesystem::path& path);

void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

/// Copies tensors named like the parameters (after `prefix`) into the store.
void load_parameters(autograd::ParameterStore& params, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace spandiff

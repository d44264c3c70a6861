#pragma once

// BIO sequence-labelling baseline with polarity-fused tags.

#include <filesystem>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "spandiff/autograd.hpp"
#include "spandiff/checkpoint.hpp"
#include "spandiff/config.hpp"
#include "spandiff/corpus.hpp"
#include "spandiff/encoder.hpp"
#include "spandiff/evaluation.hpp"
#include "spandiff/inference.hpp"

namespace spandiff {

enum class BioTag { kO = 0, kBPos, kIPos, kBNeg, kINeg, kBNeu, kINeu };
inline constexpr int kNumBioTags = 7;

std::string_view to_string(BioTag t);
BioTag parse_bio_tag(std::string_view s);
BioTag begin_tag(Polarity p);
BioTag inside_tag(Polarity p);

/// Tags for the gold spans of `example`. Identical duplicates collapse;
/// any other overlap is rejected with an error naming the example.
std::vector<BioTag> spans_to_tags(const AnnotatedExample& example);

/// Decodes a tag sequence. An I- tag that does not continue an open span of
/// the same polarity opens a new span (begin-repair).
std::vector<AspectAnnotation> tags_to_spans(const std::vector<BioTag>& tags);

class SeqLab {
 public:
  SeqLab(const TrainConfig& config, const nlohmann::json* encoder_state,
         const std::vector<AnnotatedExample>& training_examples);

  /// |S| x 7 tag logits.
  autograd::Var logits(autograd::Graph& g, const AnnotatedExample& example) const;
  std::vector<Prediction> predict(const AnnotatedExample& example) const;

  const TrainConfig& config() const { return config_; }
  const Encoder& encoder() const { return *encoder_; }
  autograd::ParameterStore& parameters() const { return *params_; }

 private:
  TrainConfig config_;
  std::unique_ptr<autograd::ParameterStore> params_;
  std::unique_ptr<Encoder> encoder_;
  autograd::Parameter* hidden_;
  autograd::Parameter* hidden_bias_;
  autograd::Parameter* out_;
  autograd::Parameter* out_bias_;
};

struct SeqLabFitOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::function<void(std::int64_t step, double loss)> on_step;
};

struct SeqLabFitResult {
  std::unique_ptr<SeqLab> best;
  double best_dev_f1 = 0.0;
  int best_epoch = 0;
  std::int64_t steps = 0;
  std::vector<double> losses;
};

/// Per-token cross-entropy under the shared optimiser defaults; keeps the
/// weights with the best dev AESC F1 (train F1 without a dev split).
SeqLabFitResult train_seqlab(const std::vector<AnnotatedExample>& train, const std::vector<AnnotatedExample>& dev,
                             const TrainConfig& config, const SeqLabFitOptions& options = {});

std::vector<Prediction> predict_seqlab(const AnnotatedExample& example, const SeqLab& model);
EvalReport evaluate_seqlab(const SeqLab& model, const std::vector<AnnotatedExample>& examples, EvalMode mode);

void save_seqlab(const std::filesystem::path& path, const SeqLab& model);
std::unique_ptr<SeqLab> load_seqlab(const std::filesystem::path& path);
std::unique_ptr<SeqLab> seqlab_from_checkpoint(const Checkpoint& ckpt);

}  // namespace spandiff

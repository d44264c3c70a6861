#pragma once

// The span denoiser g(x_t, t, S).
//
//   encode -> label/POS-aware GCN -> average-pool the spans read off x_t
//   -> slot self-attention + slot-to-sentence cross-attention
//   -> timestep conditioning -> boundary heads + polarity classifier
//
// The clean-span estimate x0_hat is the expected boundary position under the
// predicted start/end distributions, mapped back into coordinate space.

#include <memory>
#include <random>
#include <vector>

#include <json.hpp>

#include "spandiff/autograd.hpp"
#include "spandiff/config.hpp"
#include "spandiff/corpus.hpp"
#include "spandiff/encoder.hpp"
#include "spandiff/schedule.hpp"

namespace spandiff {

/// Per-slot boundary and polarity distributions (rows are slots).
struct SlotPrediction {
  autograd::Matrix start_logits;     // N x |S|
  autograd::Matrix end_logits;       // N x |S|
  autograd::Matrix polarity_logits;  // N x 3
  autograd::Matrix p_start;
  autograd::Matrix p_end;
  autograd::Matrix p_polarity;

  static SlotPrediction from_logits(autograd::Matrix start, autograd::Matrix end, autograd::Matrix polarity);
};

struct DenoiseOutput {
  SlotPrediction prediction;
  SpanTensor x0_hat;
};

/// Anything that maps (x_t, t, sentence) to slot predictions. Implemented by
/// the network and by test oracles.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiseOutput denoise(const SpanTensor& x_t, int t, const AnnotatedExample& example) const = 0;
};

/// Maps boundary distributions to coordinates: soft mode takes the expected
/// 1-based position, hard mode the argmax.
SpanTensor estimate_x0(const autograd::Matrix& p_start, const autograd::Matrix& p_end, int sentence_len, double lambda,
                       X0Estimate mode = X0Estimate::kSoft);

/// Sinusoidal embedding of a timestep, 1 x dim.
autograd::Matrix sinusoidal_embedding(int t, int dim);

/// Rows of the N x |S| average-pooling matrix for integer spans.
autograd::Matrix span_pooling_matrix(const std::vector<IntSpan>& spans, int sentence_len);

struct AttentionParams {
  autograd::Parameter* query = nullptr;
  autograd::Parameter* key = nullptr;
  autograd::Parameter* value = nullptr;
};

struct AttentionResult {
  autograd::Var output;
  autograd::Matrix weights;
};

/// Single-head scaled dot-product attention of `queries_in` over `keys_in`.
AttentionResult attend(autograd::Graph& g, const autograd::Var& queries_in, const autograd::Var& keys_in,
                       const AttentionParams& p);

struct BoundaryLogits {
  autograd::Var start;
  autograd::Var end;
};

struct DenoiseVars {
  autograd::Var start_logits;
  autograd::Var end_logits;
  autograd::Var polarity_logits;
};

class SyntaNet final : public Denoiser {
 public:
  struct GcnLayer {
    autograd::Parameter* w_hidden;
    autograd::Parameter* w_dep;
    autograd::Parameter* w_pos;
    autograd::Parameter* bias;
    autograd::Parameter* gate_hidden;
    autograd::Parameter* gate_dep;
    autograd::Parameter* gate_pos;
  };
  struct SyntaLayer {
    AttentionParams self;
    autograd::Parameter* self_norm_gain;
    autograd::Parameter* self_norm_bias;
    AttentionParams cross;
    autograd::Parameter* cross_norm_gain;
    autograd::Parameter* cross_norm_bias;
  };
  struct BoundaryHead {
    autograd::Parameter* slot;
    autograd::Parameter* token;
    autograd::Parameter* bias;
    autograd::Parameter* out;
  };

  /// Fresh network. `encoder_state` rebuilds the encoder from a checkpoint;
  /// when null the toy encoder vocabulary comes from `training_examples`.
  SyntaNet(const TrainConfig& config, const Vocabularies& vocabs, const nlohmann::json* encoder_state,
           const std::vector<AnnotatedExample>& training_examples);

  const TrainConfig& config() const { return config_; }
  TrainConfig& mutable_config() { return config_; }
  const Vocabularies& vocabularies() const { return vocabs_; }
  const Encoder& encoder() const { return *encoder_; }
  autograd::ParameterStore& parameters() const { return *params_; }

  EncoderOutput encode(autograd::Graph& g, const AnnotatedExample& example) const;
  autograd::Var gcn_forward(autograd::Graph& g, const autograd::Var& h0, const Eigen::MatrixXi& adjacency,
                            const std::vector<int>& pos_ids) const;
  autograd::Var pool_spans(autograd::Graph& g, const autograd::Var& hhat, const SpanTensor& x_t) const;
  autograd::Var synta_attend(autograd::Graph& g, const autograd::Var& slots, const autograd::Var& hhat) const;
  autograd::Var time_embed(autograd::Graph& g, const autograd::Var& slots, int t) const;
  BoundaryLogits predict_boundaries(autograd::Graph& g, const autograd::Var& slots, const autograd::Var& hhat) const;
  autograd::Var classify_sentiment(autograd::Graph& g, const autograd::Var& slots) const;

  /// Full differentiable pass.
  DenoiseVars forward(autograd::Graph& g, const SpanTensor& x_t, int t, const AnnotatedExample& example) const;

  DenoiseOutput denoise(const SpanTensor& x_t, int t, const AnnotatedExample& example) const override;

  const std::vector<GcnLayer>& gcn_layers() const { return gcn_; }
  const std::vector<SyntaLayer>& synta_layers() const { return synta_; }
  const BoundaryHead& start_head() const { return start_head_; }
  const BoundaryHead& end_head() const { return end_head_; }

 private:
  BoundaryHead make_head(const std::string& prefix, std::mt19937_64& rng);
  autograd::Var boundary_logits(autograd::Graph& g, const BoundaryHead& head, const autograd::Var& slots,
                                const autograd::Var& hhat) const;

  TrainConfig config_;
  Vocabularies vocabs_;
  std::unique_ptr<autograd::ParameterStore> params_;
  std::unique_ptr<Encoder> encoder_;

  autograd::Parameter* pos_embedding_;
  autograd::Parameter* dep_embedding_;
  std::vector<GcnLayer> gcn_;
  std::vector<SyntaLayer> synta_;
  autograd::Parameter* time_add_weight_ = nullptr;
  autograd::Parameter* time_add_bias_ = nullptr;
  autograd::Parameter* time_scale_weight_ = nullptr;
  autograd::Parameter* time_scale_bias_ = nullptr;
  autograd::Parameter* time_shift_weight_ = nullptr;
  autograd::Parameter* time_shift_bias_ = nullptr;
  BoundaryHead start_head_;
  BoundaryHead end_head_;
  autograd::Parameter* cls_hidden_;
  autograd::Parameter* cls_hidden_bias_;
  autograd::Parameter* cls_out_;
  autograd::Parameter* cls_out_bias_;
};

std::unique_ptr<Encoder> make_encoder(const TrainConfig& config, const nlohmann::json* encoder_state,
                                      const std::vector<AnnotatedExample>& training_examples,
                                      autograd::ParameterStore& store, std::mt19937_64& rng);

}  // namespace spandiff

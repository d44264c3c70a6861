#include "spandiff/syntanet.hpp"

#include <cmath>

namespace spandiff {

using autograd::Graph;
using autograd::Matrix;
using autograd::Parameter;
using autograd::Var;

SlotPrediction SlotPrediction::from_logits(Matrix start, Matrix end, Matrix polarity) {
  SlotPrediction p;
  p.p_start = autograd::softmax_rows(start);
  p.p_end = autograd::softmax_rows(end);
  p.p_polarity = autograd::softmax_rows(polarity);
  p.start_logits = std::move(start);
  p.end_logits = std::move(end);
  p.polarity_logits = std::move(polarity);
  return p;
}

SpanTensor estimate_x0(const Matrix& p_start, const Matrix& p_end, int sentence_len, double lambda, X0Estimate mode) {
  SpanTensor x;
  x.lambda = lambda;
  x.sentence_len = sentence_len;
  x.values.resize(p_start.rows(), 2);
  Eigen::VectorXd positions = Eigen::VectorXd::LinSpaced(sentence_len, 1.0, static_cast<double>(sentence_len));
  auto coordinate = [&](const Matrix& p, Eigen::Index row) {
    double pos = 0.0;
    if (mode == X0Estimate::kSoft) {
      pos = p.row(row).dot(positions.transpose()) / p.row(row).sum();
    } else {
      Eigen::Index arg = 0;
      p.row(row).maxCoeff(&arg);
      pos = static_cast<double>(arg + 1);
    }
    return lambda * (pos / sentence_len - 0.5);
  };
  for (Eigen::Index r = 0; r < p_start.rows(); ++r) {
    x.values(r, 0) = coordinate(p_start, r);
    x.values(r, 1) = coordinate(p_end, r);
  }
  return x;
}

Matrix sinusoidal_embedding(int t, int dim) {
  Matrix e(1, dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e(0, 2 * i) = std::sin(t * freq);
    e(0, 2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

Matrix span_pooling_matrix(const std::vector<IntSpan>& spans, int sentence_len) {
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(spans.size()), sentence_len);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    const double w = 1.0 / (s.end - s.start + 1);
    for (int k = s.start; k <= s.end; ++k) p(static_cast<Eigen::Index>(i), k) = w;
  }
  return p;
}

AttentionResult attend(Graph& g, const Var& queries_in, const Var& keys_in, const AttentionParams& p) {
  Var q = matmul(queries_in, g.param(*p.query));
  Var k = matmul(keys_in, g.param(*p.key));
  Var v = matmul(keys_in, g.param(*p.value));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var weights = autograd::softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
  return {matmul(weights, v), weights.value()};
}

std::unique_ptr<Encoder> make_encoder(const TrainConfig& config, const nlohmann::json* encoder_state,
                                      const std::vector<AnnotatedExample>& training_examples,
                                      autograd::ParameterStore& store, std::mt19937_64& rng) {
  if (config.encoder == "toy") {
    Vocabulary words = ToyEncoder::build_vocabulary(training_examples);
    if (encoder_state != nullptr) {
      auto strings = encoder_state->at("vocabulary").get<std::vector<std::string>>();
      words = Vocabulary({std::string(Vocabulary::kUnknown), ToyEncoder::kStart, ToyEncoder::kEnd});
      for (const auto& s : strings) words.add(s);
      words.freeze();
    }
    return std::make_unique<ToyEncoder>(std::move(words), config.hidden_size, config.max_len, store, rng,
                                        config.init_scale);
  }
  const std::string path = config.encoder.substr(std::string("pretrained:").size());
  return std::make_unique<PrecomputedEncoder>(path, config.hidden_size, config.max_len, store, rng, config.init_scale);
}

SyntaNet::SyntaNet(const TrainConfig& config, const Vocabularies& vocabs, const nlohmann::json* encoder_state,
                   const std::vector<AnnotatedExample>& training_examples)
    : config_(config), vocabs_(vocabs), params_(std::make_unique<autograd::ParameterStore>()) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const double s = config_.init_scale;
  auto& store = *params_;
  encoder_ = make_encoder(config_, encoder_state, training_examples, store, rng);

  const int d = config_.hidden_size;
  const int dp = config_.pos_dim;
  const int dd = config_.dep_dim;
  const int h = config_.head_hidden;
  pos_embedding_ = &store.create("syntax.pos_embedding", glorot(vocabs_.pos.size(), dp, rng, s));
  // Row index is the adjacency cell value (label id + 1); row 0 is unused.
  dep_embedding_ = &store.create("syntax.dep_embedding", glorot(vocabs_.dep.size() + 1, dd, rng, s));
  for (int k = 0; k < config_.gcn_layers; ++k) {
    const std::string p = "gcn." + std::to_string(k) + ".";
    gcn_.push_back(GcnLayer{
        &store.create(p + "w_hidden", glorot(d, d, rng, s)),
        &store.create(p + "w_dep", glorot(dd, d, rng, s)),
        &store.create(p + "w_pos", glorot(dp, d, rng, s)),
        &store.create(p + "bias", Matrix::Zero(1, d)),
        &store.create(p + "gate_hidden", glorot(d, 1, rng, s)),
        &store.create(p + "gate_dep", glorot(dd, 1, rng, s)),
        &store.create(p + "gate_pos", glorot(dp, 1, rng, s)),
    });
  }
  for (int l = 0; l < config_.synta_layers; ++l) {
    const std::string p = "synta." + std::to_string(l) + ".";
    SyntaLayer layer;
    layer.self = {&store.create(p + "self.query", glorot(d, d, rng, s)),
                  &store.create(p + "self.key", glorot(d, d, rng, s)),
                  &store.create(p + "self.value", glorot(d, d, rng, s))};
    layer.self_norm_gain = &store.create(p + "self.norm_gain", Matrix::Ones(1, d));
    layer.self_norm_bias = &store.create(p + "self.norm_bias", Matrix::Zero(1, d));
    layer.cross = {&store.create(p + "cross.query", glorot(d, d, rng, s)),
                   &store.create(p + "cross.key", glorot(d, d, rng, s)),
                   &store.create(p + "cross.value", glorot(d, d, rng, s))};
    layer.cross_norm_gain = &store.create(p + "cross.norm_gain", Matrix::Ones(1, d));
    layer.cross_norm_bias = &store.create(p + "cross.norm_bias", Matrix::Zero(1, d));
    synta_.push_back(layer);
  }
  // Conditioning projections start at zero so the block is an identity map.
  if (config_.time_mode == TimeMode::kAdd) {
    time_add_weight_ = &store.create("time.add_weight", Matrix::Zero(d, d));
    time_add_bias_ = &store.create("time.add_bias", Matrix::Zero(1, d));
  } else {
    time_scale_weight_ = &store.create("time.scale_weight", Matrix::Zero(d, d));
    time_scale_bias_ = &store.create("time.scale_bias", Matrix::Zero(1, d));
    time_shift_weight_ = &store.create("time.shift_weight", Matrix::Zero(d, d));
    time_shift_bias_ = &store.create("time.shift_bias", Matrix::Zero(1, d));
  }
  start_head_ = make_head("boundary.start.", rng);
  end_head_ = make_head("boundary.end.", rng);
  cls_hidden_ = &store.create("sentiment.hidden", glorot(d, h, rng, s));
  cls_hidden_bias_ = &store.create("sentiment.hidden_bias", Matrix::Zero(1, h));
  cls_out_ = &store.create("sentiment.out", glorot(h, kNumPolarities, rng, s));
  cls_out_bias_ = &store.create("sentiment.out_bias", Matrix::Zero(1, kNumPolarities));
}

SyntaNet::BoundaryHead SyntaNet::make_head(const std::string& prefix, std::mt19937_64& rng) {
  const int d = config_.hidden_size;
  const int h = config_.head_hidden;
  const double s = config_.init_scale;
  auto& store = *params_;
  return BoundaryHead{
      &store.create(prefix + "slot", glorot(d, h, rng, s)),
      &store.create(prefix + "token", glorot(d, h, rng, s)),
      &store.create(prefix + "bias", Matrix::Zero(1, h)),
      &store.create(prefix + "out", glorot(h, 1, rng, s)),
  };
}

EncoderOutput SyntaNet::encode(Graph& g, const AnnotatedExample& example) const {
  return encoder_->encode(g, example);
}

Var SyntaNet::gcn_forward(Graph& g, const Var& h0, const Eigen::MatrixXi& adjacency,
                          const std::vector<int>& pos_ids) const {
  const auto n = h0.rows();
  if (adjacency.rows() != n || adjacency.cols() != n || static_cast<Eigen::Index>(pos_ids.size()) != n) {
    throw std::invalid_argument("gcn_forward: adjacency/pos/hidden size mismatch");
  }
  if (h0.cols() != config_.hidden_size) throw std::invalid_argument("gcn_forward: hidden width mismatch");
  const int num_labels = static_cast<int>(dep_embedding_->value.rows());
  Var pos = gather_rows(g.param(*pos_embedding_), pos_ids);
  Var dep = g.param(*dep_embedding_);
  Var h = h0;
  for (const auto& layer : gcn_) {
    // Pair (i, j) sees [h_j ; dep(l_ij) ; pos_j]; both the gate score and the
    // message split additively over the three blocks.
    Var message = add(matmul(h, g.param(*layer.w_hidden)), matmul(pos, g.param(*layer.w_pos)));
    Var label_message = matmul(dep, g.param(*layer.w_dep));
    Var node_score = add(matmul(h, g.param(*layer.gate_hidden)), matmul(pos, g.param(*layer.gate_pos)));
    Var label_score = matmul(dep, g.param(*layer.gate_dep));
    Var scores = add_row(gather_pairs(label_score, adjacency), transpose(node_score));
    Var gate = masked_softmax_rows(scores, adjacency);
    Var aggregated = add(matmul(gate, message), matmul(scatter_pairs(gate, adjacency, num_labels), label_message));
    h = relu(add_row(aggregated, g.param(*layer.bias)));
  }
  return h;
}

Var SyntaNet::pool_spans(Graph& g, const Var& hhat, const SpanTensor& x_t) const {
  return matmul(g.constant(span_pooling_matrix(denormalize_spans(x_t), static_cast<int>(hhat.rows()))), hhat);
}

Var SyntaNet::synta_attend(Graph& g, const Var& slots, const Var& hhat) const {
  Var h = slots;
  for (const auto& layer : synta_) {
    auto self = attend(g, h, h, layer.self);
    h = layer_norm_rows(add(h, self.output), g.param(*layer.self_norm_gain), g.param(*layer.self_norm_bias));
    auto cross = attend(g, h, hhat, layer.cross);
    h = layer_norm_rows(add(h, cross.output), g.param(*layer.cross_norm_gain), g.param(*layer.cross_norm_bias));
  }
  return h;
}

Var SyntaNet::time_embed(Graph& g, const Var& slots, int t) const {
  if (t < 0 || t > config_.T) throw std::invalid_argument("time_embed: timestep out of range");
  Var e = g.constant(sinusoidal_embedding(t, config_.hidden_size));
  if (config_.time_mode == TimeMode::kAdd) {
    Var shift = add(matmul(e, g.param(*time_add_weight_)), g.param(*time_add_bias_));
    return add_row(slots, shift);
  }
  Var scale_row = add(matmul(e, g.param(*time_scale_weight_)), g.param(*time_scale_bias_));
  Var shift_row = add(matmul(e, g.param(*time_shift_weight_)), g.param(*time_shift_bias_));
  return add_row(add(slots, mul_row(slots, scale_row)), shift_row);
}

Var SyntaNet::boundary_logits(Graph& g, const BoundaryHead& head, const Var& slots, const Var& hhat) const {
  const auto n = slots.rows();
  const auto len = hhat.rows();
  Var slot_part = repeat_rows(matmul(slots, g.param(*head.slot)), static_cast<int>(len));
  Var token_part = tile_rows(matmul(hhat, g.param(*head.token)), static_cast<int>(n));
  Var hidden = sigmoid(add_row(add(slot_part, token_part), g.param(*head.bias)));
  return reshape(matmul(hidden, g.param(*head.out)), n, len);
}

BoundaryLogits SyntaNet::predict_boundaries(Graph& g, const Var& slots, const Var& hhat) const {
  return {boundary_logits(g, start_head_, slots, hhat), boundary_logits(g, end_head_, slots, hhat)};
}

Var SyntaNet::classify_sentiment(Graph& g, const Var& slots) const {
  Var hidden = tanh(add_row(matmul(slots, g.param(*cls_hidden_)), g.param(*cls_hidden_bias_)));
  return add_row(matmul(hidden, g.param(*cls_out_)), g.param(*cls_out_bias_));
}

DenoiseVars SyntaNet::forward(Graph& g, const SpanTensor& x_t, int t, const AnnotatedExample& example) const {
  if (x_t.sentence_len != example.size()) throw std::invalid_argument("denoise: span tensor sentence length mismatch");
  auto enc = encode(g, example);
  Var hhat = gcn_forward(g, enc.H, build_adjacency(example, vocabs_.self_loop_id()), example.pos_ids);
  Var slots = pool_spans(g, hhat, x_t);
  slots = synta_attend(g, slots, hhat);
  slots = time_embed(g, slots, t);
  auto bounds = predict_boundaries(g, slots, hhat);
  return {bounds.start, bounds.end, classify_sentiment(g, slots)};
}

DenoiseOutput SyntaNet::denoise(const SpanTensor& x_t, int t, const AnnotatedExample& example) const {
  Graph g(false);
  auto vars = forward(g, x_t, t, example);
  DenoiseOutput out;
  out.prediction =
      SlotPrediction::from_logits(vars.start_logits.value(), vars.end_logits.value(), vars.polarity_logits.value());
  out.x0_hat = estimate_x0(out.prediction.p_start, out.prediction.p_end, example.size(), x_t.lambda,
                           config_.x0_estimate);
  return out;
}

}  // namespace spandiff

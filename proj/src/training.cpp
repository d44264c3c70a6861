#include "spandiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spandiff/inference.hpp"

namespace spandiff {

using autograd::Graph;
using autograd::Matrix;
using autograd::Var;
using nlohmann::json;

namespace {

constexpr const char* kModelKind = "spandiff-model";
constexpr const char* kStateKind = "spandiff-train-state";

bool finite(double v) { return std::isfinite(v); }

}  // namespace

SlotTargets expand_gold(const std::vector<AspectAnnotation>& gold, int N, int sentence_len, std::mt19937_64& rng) {
  if (N < 1) throw TrainingError("expand_gold: N must be >= 1");
  if (static_cast<int>(gold.size()) > N) {
    throw TrainingError("expand_gold: " + std::to_string(gold.size()) + " gold aspects exceed N = " + std::to_string(N));
  }
  SlotTargets out;
  out.spans.reserve(static_cast<std::size_t>(N));
  auto push = [&](int start, int end, Polarity p, int source) {
    out.spans.push_back({start, end});
    out.starts.push_back(start);
    out.ends.push_back(end);
    out.polarities.push_back(static_cast<int>(p));
    out.slot_to_gold.push_back(source);
  };
  if (gold.empty()) {
    for (int i = 0; i < N; ++i) push(0, sentence_len - 1, Polarity::kNeutral, -1);
    return out;
  }
  for (std::size_t i = 0; i < gold.size(); ++i) push(gold[i].start, gold[i].end, gold[i].polarity, static_cast<int>(i));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(gold.size()) - 1);
  while (out.slots() < N) {
    const int k = pick(rng);
    const auto& a = gold[static_cast<std::size_t>(k)];
    push(a.start, a.end, a.polarity, k);
  }
  return out;
}

Var compute_loss(const DenoiseVars& pred, const SlotTargets& targets, BoundaryLoss mode) {
  if (pred.start_logits.rows() != targets.slots() || pred.end_logits.rows() != targets.slots() ||
      pred.polarity_logits.rows() != targets.slots()) {
    throw TrainingError("compute_loss: prediction has " + std::to_string(pred.start_logits.rows()) +
                        " slots, targets have " + std::to_string(targets.slots()));
  }
  Var boundary;
  if (mode == BoundaryLoss::kCategorical) {
    boundary = add(autograd::cross_entropy_rows(pred.start_logits, targets.starts),
                   autograd::cross_entropy_rows(pred.end_logits, targets.ends));
  } else {
    boundary = add(autograd::binary_cross_entropy_rows(pred.start_logits, targets.starts),
                   autograd::binary_cross_entropy_rows(pred.end_logits, targets.ends));
  }
  return add(boundary, autograd::cross_entropy_rows(pred.polarity_logits, targets.polarities));
}

double compute_loss(const SlotPrediction& pred, const SlotTargets& targets, BoundaryLoss mode) {
  Graph g(false);
  DenoiseVars vars{g.constant(pred.start_logits), g.constant(pred.end_logits), g.constant(pred.polarity_logits)};
  return compute_loss(vars, targets, mode).value()(0, 0);
}

AdamW::Options AdamW::from_config(const TrainConfig& c) {
  return {c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps, c.weight_decay, c.clip_norm};
}

bool AdamW::decays(const std::string& name) {
  return name.find("bias") == std::string::npos && name.find("norm_gain") == std::string::npos;
}

double gradient_norm(const autograd::ParameterStore& params) {
  double sq = 0.0;
  for (const auto& p : params.all()) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

double AdamW::step(autograd::ParameterStore& params) {
  auto& all = params.all();
  if (m_.size() != all.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : all) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  const double norm = gradient_norm(params);
  const double factor =
      options_.clip_norm > 0 && norm > options_.clip_norm ? options_.clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& p = all[i];
    const Matrix g = p.grad * factor;
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    const Matrix update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + options_.eps);
    if (decays(p.name)) p.value *= 1.0 - options_.learning_rate * options_.weight_decay;
    p.value -= options_.learning_rate * update;
  }
  return norm;
}

void AdamW::append_tensors(const autograd::ParameterStore& params, std::vector<NamedTensor>& out) const {
  const auto& all = params.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const bool have = i < m_.size();
    const auto& p = all[i];
    out.push_back({"adam.m/" + p.name, have ? m_[i] : Matrix::Zero(p.value.rows(), p.value.cols())});
    out.push_back({"adam.v/" + p.name, have ? v_[i] : Matrix::Zero(p.value.rows(), p.value.cols())});
  }
}

void AdamW::restore(const autograd::ParameterStore& params, const Checkpoint& ckpt, std::int64_t steps) {
  m_.clear();
  v_.clear();
  for (const auto& p : params.all()) {
    m_.push_back(ckpt.tensor("adam.m/" + p.name));
    v_.push_back(ckpt.tensor("adam.v/" + p.name));
  }
  t_ = steps;
}

int resolve_slot_count(const TrainConfig& config, const std::vector<AnnotatedExample>& train) {
  const auto needed = static_cast<int>(compute_stats(train).max_aspects);
  if (config.N == 0) return std::max(1, needed);
  if (config.N < needed) {
    throw ConfigError("config: N = " + std::to_string(config.N) + " is below the largest gold count " +
                      std::to_string(needed) + " in the training set");
  }
  return config.N;
}

TrainState init_train_state(TrainConfig config, const Vocabularies& vocabs, const std::vector<AnnotatedExample>& train) {
  if (train.empty()) throw TrainingError("empty training set");
  config.N = resolve_slot_count(config, train);
  TrainState state;
  state.model = std::make_unique<SyntaNet>(config, vocabs, nullptr, train);
  state.optimizer = AdamW(AdamW::from_config(config));
  // Separate stream from the one that initialised the weights.
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 1u};
  state.rng.seed(seq);
  return state;
}

StepMetrics train_step(TrainState& state, const std::vector<const AnnotatedExample*>& batch,
                       const NoiseSchedule& sched) {
  if (batch.empty()) throw TrainingError("train_step: empty batch");
  auto& model = *state.model;
  const auto& cfg = model.config();
  model.parameters().zero_grad();
  Graph g;
  Var total;
  std::uniform_int_distribution<int> pick_t(1, cfg.T);
  for (const auto* ex : batch) {
    const auto targets = expand_gold(ex->gold, cfg.N, ex->size(), state.rng);
    const auto x0 = normalize_spans(targets.spans, ex->size(), cfg.lambda);
    const int t = pick_t(state.rng);
    const auto x_t = forward_sample(x0, t, draw_noise(cfg.N, state.rng), sched);
    const auto vars = model.forward(g, x_t, t, *ex);
    Var loss = compute_loss(vars, targets, cfg.boundary_loss);
    if (!finite(loss.value()(0, 0))) {
      std::ostringstream os;
      os << "non-finite loss at step " << state.step + 1 << " (epoch " << state.epoch << ", t = " << t << ") on "
         << ex->describe() << "; start logits range [" << vars.start_logits.value().minCoeff() << ", "
         << vars.start_logits.value().maxCoeff() << "]";
      throw TrainingError(os.str());
    }
    total = total.valid() ? add(total, loss) : loss;
  }
  Var mean = scale(total, 1.0 / static_cast<double>(batch.size()));
  g.backward(mean);
  StepMetrics m;
  m.loss = mean.value()(0, 0);
  m.grad_norm = state.optimizer.step(model.parameters());
  if (!finite(m.grad_norm)) {
    throw TrainingError("non-finite gradient norm at step " + std::to_string(state.step + 1));
  }
  ++state.step;
  return m;
}

NoiseSchedule schedule_for(const TrainConfig& c) { return build_schedule(c.T, c.schedule_kind); }

std::vector<PredictionSet> predict_corpus(const SyntaNet& model, const std::vector<AnnotatedExample>& examples,
                                          std::uint64_t seed) {
  const auto& cfg = model.config();
  const auto sched = schedule_for(cfg);
  const auto plan = make_ddim_plan(cfg.T, cfg.gamma);
  const SamplerOptions options{cfg.N, cfg.lambda, cfg.threshold};
  std::vector<PredictionSet> out(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    std::mt19937_64 rng(seq);
    out[i] = sample(examples[i], model, sched, plan, options, rng);
  }
  return out;
}

EvalReport evaluate_model(const SyntaNet& model, const std::vector<AnnotatedExample>& examples, EvalMode mode,
                          std::uint64_t seed) {
  std::vector<GoldSet> golds;
  golds.reserve(examples.size());
  for (const auto& ex : examples) golds.push_back(ex.gold);
  return score(predict_corpus(model, examples, seed), golds, mode);
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json model_meta(const SyntaNet& model) {
  return {{"config", to_json(model.config())},
          {"vocab", model.vocabularies().to_json()},
          {"encoder", model.encoder().state()}};
}

void append_parameters(const autograd::ParameterStore& params, std::vector<NamedTensor>& out) {
  for (const auto& p : params.all()) out.push_back({p.name, p.value});
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::istringstream is(s);
  std::mt19937_64 rng;
  is >> rng;
  if (!is) throw CheckpointError("corrupt RNG state in training checkpoint");
  return rng;
}

}  // namespace

void load_parameters(autograd::ParameterStore& params, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& p : params.all()) {
    const std::string name = prefix + p.name;
    if (!ckpt.has_tensor(name)) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
    const auto& v = ckpt.tensor(name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw CheckpointError("parameter '" + name + "' has shape " + std::to_string(v.rows()) + "x" +
                            std::to_string(v.cols()) + ", model expects " + std::to_string(p.value.rows()) + "x" +
                            std::to_string(p.value.cols()));
    }
    p.value = v;
  }
}

Checkpoint model_checkpoint(const SyntaNet& model) {
  Checkpoint ckpt;
  ckpt.kind = kModelKind;
  ckpt.meta = model_meta(model);
  append_parameters(model.parameters(), ckpt.tensors);
  return ckpt;
}

void save_model(const std::filesystem::path& path, const SyntaNet& model) { write_checkpoint(path, model_checkpoint(model)); }

std::unique_ptr<SyntaNet> model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != kModelKind && ckpt.kind != kStateKind) {
    throw CheckpointError("expected a model checkpoint, found kind '" + ckpt.kind + "'");
  }
  try {
    const auto config = apply_json(TrainConfig{}, ckpt.meta.at("config"));
    const auto vocabs = Vocabularies::from_json(ckpt.meta.at("vocab"));
    const json encoder_state = ckpt.meta.at("encoder");
    auto model = std::make_unique<SyntaNet>(config, vocabs, &encoder_state, std::vector<AnnotatedExample>{});
    load_parameters(model->parameters(), ckpt);
    return model;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed model metadata: ") + e.what());
  }
}

std::unique_ptr<SyntaNet> load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
  Checkpoint ckpt;
  ckpt.kind = kStateKind;
  ckpt.meta = model_meta(*state.model);
  ckpt.meta["step"] = state.step;
  ckpt.meta["epoch"] = state.epoch;
  ckpt.meta["optimizer_steps"] = state.optimizer.steps();
  ckpt.meta["rng"] = rng_to_string(state.rng);
  ckpt.meta["order"] = state.order;
  ckpt.meta["cursor"] = state.cursor;
  ckpt.meta["epoch_loss_sum"] = state.epoch_loss_sum;
  ckpt.meta["epoch_loss_count"] = state.epoch_loss_count;
  ckpt.meta["best_dev_f1"] = state.best_dev_f1;
  ckpt.meta["best_epoch"] = state.best_epoch;
  append_parameters(state.model->parameters(), ckpt.tensors);
  state.optimizer.append_tensors(state.model->parameters(), ckpt.tensors);
  write_checkpoint(path, ckpt);
}

TrainState load_train_state(const std::filesystem::path& path) {
  const auto ckpt = read_checkpoint(path);
  if (ckpt.kind != kStateKind) throw CheckpointError(path.string() + " is not a training-state checkpoint");
  TrainState state;
  state.model = model_from_checkpoint(ckpt);
  try {
    const auto& m = ckpt.meta;
    state.optimizer = AdamW(AdamW::from_config(state.model->config()));
    state.optimizer.restore(state.model->parameters(), ckpt, m.at("optimizer_steps").get<std::int64_t>());
    state.step = m.at("step").get<std::int64_t>();
    state.epoch = m.at("epoch").get<int>();
    state.rng = rng_from_string(m.at("rng").get<std::string>());
    state.order = m.at("order").get<std::vector<std::size_t>>();
    state.cursor = m.at("cursor").get<std::size_t>();
    state.epoch_loss_sum = m.at("epoch_loss_sum").get<double>();
    state.epoch_loss_count = m.at("epoch_loss_count").get<std::int64_t>();
    state.best_dev_f1 = m.at("best_dev_f1").get<double>();
    state.best_epoch = m.at("best_epoch").get<int>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed training state: ") + e.what());
  }
  return state;
}

// ---------------------------------------------------------------------------
// fit

FitResult fit(const std::vector<AnnotatedExample>& train, const std::vector<AnnotatedExample>& dev,
              const TrainConfig& config, const Vocabularies& vocabs, const FitOptions& options) {
  if (train.empty()) throw TrainingError("empty training set");
  config.validate();
  std::filesystem::create_directories(options.out_dir);
  FitResult result;
  result.best_checkpoint = options.out_dir / "best.ckpt";
  result.last_state = options.out_dir / "last.ckpt";
  result.metrics_log = options.out_dir / "metrics.jsonl";

  const bool resuming = options.resume && std::filesystem::exists(result.last_state);
  TrainState state = resuming ? load_train_state(result.last_state) : init_train_state(config, vocabs, train);
  if (resuming) {
    // Run length may be extended on resume; everything else comes from the state.
    state.model->mutable_config().epochs = config.epochs;
    state.model->mutable_config().max_steps = config.max_steps;
  }
  state.model->vocabularies().save(options.out_dir / "vocab.json");
  const auto& cfg = state.model->config();
  const auto sched = schedule_for(cfg);

  std::ofstream metrics(result.metrics_log, resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw TrainingError("cannot write " + result.metrics_log.string());

  // Model selection falls back to the training set when there is no dev split.
  const auto& selection = dev.empty() ? train : dev;
  auto evaluate_and_record = [&](std::optional<double> mean_loss) {
    const double f1 = evaluate_model(*state.model, selection, EvalMode::kAESC, cfg.seed).overall.f1();
    json row = {{"step", state.step}, {"epoch", state.epoch}, {"loss", nullptr}, {"dev_f1", f1}};
    if (mean_loss) row["loss"] = *mean_loss;
    metrics << row.dump() << '\n';
    metrics.flush();
    if (f1 > state.best_dev_f1) {
      state.best_dev_f1 = f1;
      state.best_epoch = state.epoch;
      save_model(result.best_checkpoint, *state.model);
    }
  };

  bool evaluated = false;
  bool stopped = false;
  while (state.epoch < cfg.epochs) {
    if (state.order.empty()) {
      state.order.resize(train.size());
      std::iota(state.order.begin(), state.order.end(), std::size_t{0});
      std::shuffle(state.order.begin(), state.order.end(), state.rng);
      state.cursor = 0;
      state.epoch_loss_sum = 0.0;
      state.epoch_loss_count = 0;
    }
    while (state.cursor < state.order.size()) {
      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) {
        stopped = true;
        break;
      }
      std::vector<const AnnotatedExample*> batch;
      const auto end = std::min(state.order.size(), state.cursor + static_cast<std::size_t>(cfg.batch_size));
      for (auto i = state.cursor; i < end; ++i) batch.push_back(&train.at(state.order[i]));
      state.cursor = end;
      const auto m = train_step(state, batch, sched);
      state.epoch_loss_sum += m.loss;
      ++state.epoch_loss_count;
      result.losses.push_back(m.loss);
      if (options.on_step) options.on_step(state, m);
    }
    if (stopped) break;
    ++state.epoch;
    state.order.clear();
    state.cursor = 0;
    evaluate_and_record(state.epoch_loss_sum / static_cast<double>(std::max<std::int64_t>(1, state.epoch_loss_count)));
    evaluated = true;
    save_train_state(result.last_state, state);
  }
  if (!evaluated || !std::filesystem::exists(result.best_checkpoint)) {
    std::optional<double> partial;
    if (state.epoch_loss_count > 0) partial = state.epoch_loss_sum / static_cast<double>(state.epoch_loss_count);
    evaluate_and_record(partial);
  }
  save_train_state(result.last_state, state);

  result.best_dev_f1 = state.best_dev_f1;
  result.best_epoch = state.best_epoch;
  result.steps = state.step;
  return result;
}

}  // namespace spandiff

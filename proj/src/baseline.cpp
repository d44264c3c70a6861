#include "spandiff/baseline.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "spandiff/syntanet.hpp"
#include "spandiff/training.hpp"

namespace spandiff {

using autograd::Graph;
using autograd::Matrix;
using autograd::Var;

namespace {

constexpr const char* kSeqLabKind = "seqlab";
constexpr std::array<std::string_view, kNumBioTags> kTagNames = {"O", "B-pos", "I-pos", "B-neg", "I-neg", "B-neu", "I-neu"};

bool is_begin(BioTag t) { return t == BioTag::kBPos || t == BioTag::kBNeg || t == BioTag::kBNeu; }

Polarity polarity_of(BioTag t) {
  switch (t) {
    case BioTag::kBPos:
    case BioTag::kIPos:
      return Polarity::kPositive;
    case BioTag::kBNeg:
    case BioTag::kINeg:
      return Polarity::kNegative;
    default:
      return Polarity::kNeutral;
  }
}

}  // namespace

std::string_view to_string(BioTag t) { return kTagNames.at(static_cast<std::size_t>(t)); }

BioTag parse_bio_tag(std::string_view s) {
  for (std::size_t i = 0; i < kTagNames.size(); ++i)
    if (kTagNames[i] == s) return static_cast<BioTag>(i);
  throw CorpusError("unknown BIO tag '" + std::string(s) + "'");
}

BioTag begin_tag(Polarity p) { return static_cast<BioTag>(1 + 2 * static_cast<int>(p)); }
BioTag inside_tag(Polarity p) { return static_cast<BioTag>(2 + 2 * static_cast<int>(p)); }

std::vector<BioTag> spans_to_tags(const AnnotatedExample& example) {
  std::set<std::tuple<int, int, int>> unique;
  for (const auto& a : example.gold) unique.insert({a.start, a.end, static_cast<int>(a.polarity)});
  std::vector<BioTag> tags(static_cast<std::size_t>(example.size()), BioTag::kO);
  std::vector<bool> taken(tags.size(), false);
  for (const auto& [start, end, pol] : unique) {
    if (start < 0 || end >= example.size() || start > end) {
      throw CorpusError(example.describe() + ": aspect span out of bounds");
    }
    for (int i = start; i <= end; ++i) {
      if (taken[static_cast<std::size_t>(i)]) {
        throw CorpusError(example.describe() + ": overlapping aspect spans at token " + std::to_string(i + 1) +
                          " cannot be BIO-tagged");
      }
      taken[static_cast<std::size_t>(i)] = true;
      tags[static_cast<std::size_t>(i)] =
          i == start ? begin_tag(static_cast<Polarity>(pol)) : inside_tag(static_cast<Polarity>(pol));
    }
  }
  return tags;
}

std::vector<AspectAnnotation> tags_to_spans(const std::vector<BioTag>& tags) {
  std::vector<AspectAnnotation> out;
  bool open = false;
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const BioTag t = tags[static_cast<std::size_t>(i)];
    if (t == BioTag::kO) {
      open = false;
      continue;
    }
    const Polarity p = polarity_of(t);
    if (!is_begin(t) && open && out.back().polarity == p) {
      out.back().end = i;
      continue;
    }
    out.push_back({i, i, p});
    open = true;
  }
  return out;
}

SeqLab::SeqLab(const TrainConfig& config, const nlohmann::json* encoder_state,
               const std::vector<AnnotatedExample>& training_examples)
    : config_(config), params_(std::make_unique<autograd::ParameterStore>()) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  encoder_ = make_encoder(config_, encoder_state, training_examples, *params_, rng);
  const int d = config_.hidden_size;
  const int h = config_.head_hidden;
  hidden_ = &params_->create("seqlab.hidden", glorot(d, h, rng, config_.init_scale));
  hidden_bias_ = &params_->create("seqlab.hidden_bias", Matrix::Zero(1, h));
  out_ = &params_->create("seqlab.out", glorot(h, kNumBioTags, rng, config_.init_scale));
  out_bias_ = &params_->create("seqlab.out_bias", Matrix::Zero(1, kNumBioTags));
}

Var SeqLab::logits(Graph& g, const AnnotatedExample& example) const {
  Var H = encoder_->encode(g, example).H;
  Var hidden = tanh(add_row(matmul(H, g.param(*hidden_)), g.param(*hidden_bias_)));
  return add_row(matmul(hidden, g.param(*out_)), g.param(*out_bias_));
}

std::vector<Prediction> SeqLab::predict(const AnnotatedExample& example) const {
  Graph g(false);
  const Matrix probs = autograd::softmax_rows(logits(g, example).value());
  std::vector<BioTag> tags(static_cast<std::size_t>(example.size()));
  std::vector<double> conf(tags.size());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg = 0;
    conf[static_cast<std::size_t>(i)] = probs.row(i).maxCoeff(&arg);
    tags[static_cast<std::size_t>(i)] = static_cast<BioTag>(arg);
  }
  std::vector<Prediction> out;
  for (const auto& a : tags_to_spans(tags)) {
    double score = 1.0;
    for (int i = a.start; i <= a.end; ++i) score *= conf[static_cast<std::size_t>(i)];
    out.push_back({a.start, a.end, a.polarity, score});
  }
  return out;
}

std::vector<Prediction> predict_seqlab(const AnnotatedExample& example, const SeqLab& model) {
  return model.predict(example);
}

EvalReport evaluate_seqlab(const SeqLab& model, const std::vector<AnnotatedExample>& examples, EvalMode mode) {
  std::vector<PredictionSet> preds;
  std::vector<GoldSet> golds;
  for (const auto& ex : examples) {
    preds.push_back(model.predict(ex));
    golds.push_back(ex.gold);
  }
  return score(preds, golds, mode);
}

namespace {

Checkpoint seqlab_checkpoint(const SeqLab& model) {
  Checkpoint ckpt;
  ckpt.kind = kSeqLabKind;
  ckpt.meta = {{"config", to_json(model.config())}, {"encoder", model.encoder().state()}};
  for (const auto& p : model.parameters().all()) ckpt.tensors.push_back({p.name, p.value});
  return ckpt;
}

}  // namespace

void save_seqlab(const std::filesystem::path& path, const SeqLab& model) {
  write_checkpoint(path, seqlab_checkpoint(model));
}

std::unique_ptr<SeqLab> seqlab_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != kSeqLabKind) throw CheckpointError("expected a seqlab checkpoint, found kind '" + ckpt.kind + "'");
  try {
    const auto config = apply_json(TrainConfig{}, ckpt.meta.at("config"));
    const nlohmann::json encoder_state = ckpt.meta.at("encoder");
    auto model = std::make_unique<SeqLab>(config, &encoder_state, std::vector<AnnotatedExample>{});
    load_parameters(model->parameters(), ckpt);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed seqlab metadata: ") + e.what());
  }
}

std::unique_ptr<SeqLab> load_seqlab(const std::filesystem::path& path) {
  return seqlab_from_checkpoint(read_checkpoint(path));
}

SeqLabFitResult train_seqlab(const std::vector<AnnotatedExample>& train, const std::vector<AnnotatedExample>& dev,
                             const TrainConfig& config, const SeqLabFitOptions& options) {
  if (train.empty()) throw TrainingError("empty training set");
  std::vector<std::vector<int>> targets;
  for (const auto& ex : train) {
    std::vector<int> row;
    for (auto t : spans_to_tags(ex)) row.push_back(static_cast<int>(t));
    targets.push_back(std::move(row));
  }

  auto model = std::make_unique<SeqLab>(config, nullptr, train);
  AdamW optimizer(AdamW::from_config(config));
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 2u};
  std::mt19937_64 rng(seq);

  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    metrics.open(options.out_dir / "metrics.jsonl", std::ios::trunc);
  }

  SeqLabFitResult result;
  result.best_dev_f1 = -1.0;
  const auto& selection = dev.empty() ? train : dev;
  auto evaluate = [&](int epoch, std::optional<double> loss) {
    const double f1 = evaluate_seqlab(*model, selection, EvalMode::kAESC).overall.f1();
    if (metrics.is_open()) {
      nlohmann::json row = {{"step", result.steps}, {"epoch", epoch}, {"loss", nullptr}, {"dev_f1", f1}};
      if (loss) row["loss"] = *loss;
      metrics << row.dump() << '\n';
    }
    if (f1 > result.best_dev_f1) {
      result.best_dev_f1 = f1;
      result.best_epoch = epoch;
      result.best = seqlab_from_checkpoint(seqlab_checkpoint(*model));
      if (!options.out_dir.empty()) save_seqlab(options.out_dir / "best.ckpt", *model);
    }
  };

  std::vector<std::size_t> order(train.size());
  bool stopped = false;
  int epoch = 0;
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  for (; epoch < config.epochs && !stopped; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    loss_sum = 0.0;
    loss_count = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        stopped = true;
        break;
      }
      const auto end = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      model->parameters().zero_grad();
      Graph g;
      Var total;
      for (auto i = b; i < end; ++i) {
        Var l = autograd::cross_entropy_rows(model->logits(g, train[order[i]]), targets[order[i]]);
        total = total.valid() ? add(total, l) : l;
      }
      Var mean = scale(total, 1.0 / static_cast<double>(end - b));
      g.backward(mean);
      const double loss = mean.value()(0, 0);
      if (!std::isfinite(loss)) throw TrainingError("seqlab: non-finite loss at step " + std::to_string(result.steps + 1));
      optimizer.step(model->parameters());
      ++result.steps;
      result.losses.push_back(loss);
      loss_sum += loss;
      ++loss_count;
      if (options.on_step) options.on_step(result.steps, loss);
    }
    if (!stopped) evaluate(epoch + 1, loss_sum / static_cast<double>(std::max<std::int64_t>(1, loss_count)));
  }
  if (stopped || !result.best) {
    std::optional<double> loss;
    if (loss_count > 0) loss = loss_sum / static_cast<double>(loss_count);
    evaluate(epoch, loss);
  }
  return result;
}

}  // namespace spandiff

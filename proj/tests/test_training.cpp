#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "spandiff/checkpoint.hpp"
#include "spandiff/training.hpp"
#include "support.hpp"

using namespace spandiff;
using autograd::Matrix;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.hidden_size = 16;
  c.pos_dim = 4;
  c.dep_dim = 4;
  c.head_hidden = 16;
  c.gcn_layers = 1;
  c.synta_layers = 1;
  c.T = 20;
  c.gamma = 2;
  c.batch_size = 4;
  c.epochs = 3;
  c.learning_rate = 3e-3;
  c.seed = 5;
  return c;
}

struct Data {
  std::vector<AnnotatedExample> train = testing::synthetic_corpus(10, 2, 31);
  std::vector<AnnotatedExample> dev = testing::synthetic_corpus(4, 2, 32);
  Vocabularies vocabs;
  Data() {
    vocabs = testing::index_corpus(train);
    for (auto& ex : dev) apply_vocabularies(ex, vocabs);
  }
};

SlotPrediction logits_prediction(const Matrix& s, const Matrix& e, const Matrix& p) {
  return SlotPrediction::from_logits(s, e, p);
}

std::vector<Matrix> tensors(const std::filesystem::path& ckpt) {
  std::vector<Matrix> out;
  for (const auto& t : read_checkpoint(ckpt).tensors) out.push_back(t.value);
  return out;
}

}  // namespace

TEST_CASE("expand_gold copies the gold list first") {
  std::mt19937_64 rng(1);
  const std::vector<AspectAnnotation> gold = {{1, 2, Polarity::kNegative}, {4, 4, Polarity::kPositive}};
  const auto t = expand_gold(gold, 5, 6, rng);
  REQUIRE(t.slots() == 5);
  CHECK(t.spans[0] == IntSpan{1, 2});
  CHECK(t.spans[1] == IntSpan{4, 4});
  CHECK(t.polarities[0] == static_cast<int>(Polarity::kNegative));
  for (int i = 2; i < 5; ++i) {
    const int k = t.slot_to_gold[static_cast<std::size_t>(i)];
    REQUIRE((k == 0 || k == 1));
    CHECK(t.starts[static_cast<std::size_t>(i)] == gold[static_cast<std::size_t>(k)].start);
    CHECK(t.ends[static_cast<std::size_t>(i)] == gold[static_cast<std::size_t>(k)].end);
  }
}

TEST_CASE("expand_gold edge cases") {
  std::mt19937_64 rng(1);
  const auto empty = expand_gold({}, 3, 7, rng);
  for (int i = 0; i < 3; ++i) {
    CHECK(empty.spans[static_cast<std::size_t>(i)] == IntSpan{0, 6});
    CHECK(empty.polarities[static_cast<std::size_t>(i)] == static_cast<int>(Polarity::kNeutral));
    CHECK(empty.slot_to_gold[static_cast<std::size_t>(i)] == -1);
  }
  const std::vector<AspectAnnotation> two = {{0, 0, Polarity::kPositive}, {1, 1, Polarity::kPositive}};
  CHECK_THROWS_AS(expand_gold(two, 1, 3, rng), TrainingError);
  CHECK_THROWS_AS(expand_gold(two, 0, 3, rng), TrainingError);
  const auto exact = expand_gold(two, 2, 3, rng);
  CHECK(exact.slot_to_gold == std::vector<int>{0, 1});
}

TEST_CASE("extra slots pick each gold uniformly") {
  std::mt19937_64 rng(77);
  const std::vector<AspectAnnotation> two = {{0, 0, Polarity::kPositive}, {2, 3, Polarity::kNeutral}};
  long first = 0;
  long total = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    const auto t = expand_gold(two, 3, 5, rng);
    first += t.slot_to_gold[2] == 0;
    ++total;
  }
  CHECK(static_cast<double>(first) / static_cast<double>(total) == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("loss on uniform and point-mass predictions") {
  const int n = 3;
  const int len = 4;
  std::mt19937_64 rng(2);
  const auto targets = expand_gold({{1, 2, Polarity::kNegative}}, n, len, rng);

  const auto uniform = logits_prediction(Matrix::Zero(n, len), Matrix::Zero(n, len), Matrix::Zero(n, 3));
  CHECK(compute_loss(uniform, targets, BoundaryLoss::kCategorical) ==
        doctest::Approx(n * (2.0 * std::log(4.0) + std::log(3.0))));
  CHECK(compute_loss(uniform, targets, BoundaryLoss::kBinary) ==
        doctest::Approx(n * (2.0 * len * std::log(2.0) + std::log(3.0))));

  Matrix s = Matrix::Constant(n, len, -500.0);
  Matrix e = Matrix::Constant(n, len, -500.0);
  Matrix p = Matrix::Constant(n, 3, -500.0);
  for (int i = 0; i < n; ++i) {
    s(i, 1) = 500.0;
    e(i, 2) = 500.0;
    p(i, static_cast<int>(Polarity::kNegative)) = 500.0;
  }
  const auto exact = logits_prediction(s, e, p);
  CHECK(compute_loss(exact, targets, BoundaryLoss::kCategorical) < 1e-12);
  CHECK(compute_loss(exact, targets, BoundaryLoss::kBinary) < 1e-12);

  auto mismatched = targets;
  mismatched.spans.pop_back();
  mismatched.starts.pop_back();
  mismatched.ends.pop_back();
  mismatched.polarities.pop_back();
  CHECK_THROWS_AS(compute_loss(uniform, mismatched, BoundaryLoss::kCategorical), TrainingError);
}

TEST_CASE("loss matches a brute-force sum and ignores slot order") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const int n = 4;
  const int len = 6;
  Matrix s(n, len), e(n, len), p(n, 3);
  for (auto* m : {&s, &e, &p}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) = 2.0 * nd(rng);
  }
  const std::vector<AspectAnnotation> gold = {{0, 1, Polarity::kPositive}, {3, 5, Polarity::kNeutral}};
  const auto targets = expand_gold(gold, n, len, rng);

  auto log_softmax_at = [](const Matrix& m, int r, int c) {
    double z = 0.0;
    for (int k = 0; k < m.cols(); ++k) z += std::exp(m(r, k));
    return m(r, c) - std::log(z);
  };
  double want = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    want -= log_softmax_at(s, i, targets.starts[u]) + log_softmax_at(e, i, targets.ends[u]) +
            log_softmax_at(p, i, targets.polarities[u]);
  }
  const auto pred = logits_prediction(s, e, p);
  CHECK(compute_loss(pred, targets, BoundaryLoss::kCategorical) == doctest::Approx(want).epsilon(1e-12));

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix ps(n, len), pe(n, len), pp(n, 3);
  SlotTargets pt;
  for (int i = 0; i < n; ++i) {
    const int j = perm[static_cast<std::size_t>(i)];
    const auto u = static_cast<std::size_t>(j);
    ps.row(i) = s.row(j);
    pe.row(i) = e.row(j);
    pp.row(i) = p.row(j);
    pt.spans.push_back(targets.spans[u]);
    pt.starts.push_back(targets.starts[u]);
    pt.ends.push_back(targets.ends[u]);
    pt.polarities.push_back(targets.polarities[u]);
    pt.slot_to_gold.push_back(targets.slot_to_gold[u]);
  }
  for (auto mode : {BoundaryLoss::kCategorical, BoundaryLoss::kBinary}) {
    CHECK(compute_loss(logits_prediction(ps, pe, pp), pt, mode) ==
          doctest::Approx(compute_loss(pred, targets, mode)).epsilon(1e-12));
  }
}

TEST_CASE("AdamW first step, decay exclusions and clipping") {
  autograd::ParameterStore store;
  auto& w = store.create("layer.weight", Matrix::Constant(1, 2, 2.0));
  auto& b = store.create("layer.bias", Matrix::Constant(1, 1, 2.0));
  AdamW::Options o;
  o.learning_rate = 0.1;
  o.weight_decay = 0.5;
  o.clip_norm = 1.0;
  AdamW opt(o);
  w.grad << 3.0, 0.0;
  b.grad << 4.0;
  // Pre-clip norm 5; clipped gradients (0.6, 0, 0.8).
  CHECK(opt.step(store) == doctest::Approx(5.0));
  auto first = [&](double g) {
    const double m = (1 - o.beta1) * g / (1 - o.beta1);
    const double v = (1 - o.beta2) * g * g / (1 - o.beta2);
    return m / (std::sqrt(v) + o.eps);
  };
  CHECK(w.value(0, 0) == doctest::Approx(2.0 * (1 - 0.05) - 0.1 * first(0.6)).epsilon(1e-12));
  CHECK(w.value(0, 1) == doctest::Approx(2.0 * (1 - 0.05)).epsilon(1e-12));
  CHECK(b.value(0, 0) == doctest::Approx(2.0 - 0.1 * first(0.8)).epsilon(1e-12));
  CHECK(opt.steps() == 1);
}

TEST_CASE("slot count resolution") {
  Data d;
  auto c = small_config();
  c.N = 0;
  const int needed = static_cast<int>(compute_stats(d.train).max_aspects);
  CHECK(resolve_slot_count(c, d.train) == needed);
  c.N = needed + 2;
  CHECK(resolve_slot_count(c, d.train) == needed + 2);
  c.N = needed - 1;
  CHECK_THROWS_AS(resolve_slot_count(c, d.train), ConfigError);
}

TEST_CASE("training lowers the loss and is deterministic") {
  Data d;
  auto c = small_config();
  c.epochs = 100;
  c.max_steps = 60;
  const auto a = fit(d.train, {}, c, d.vocabs, {testing::scratch_dir("fit_a"), false, nullptr});
  const auto b = fit(d.train, {}, c, d.vocabs, {testing::scratch_dir("fit_b"), false, nullptr});
  REQUIRE(a.losses.size() == 60);
  CHECK(a.losses == b.losses);
  const double head = std::accumulate(a.losses.begin(), a.losses.begin() + 10, 0.0);
  const double tail = std::accumulate(a.losses.end() - 10, a.losses.end(), 0.0);
  CHECK(tail < head);
  CHECK(tensors(a.last_state) == tensors(b.last_state));
}

TEST_CASE("resuming reproduces an uninterrupted run bit for bit") {
  Data d;
  auto c = small_config();
  const auto full = fit(d.train, d.dev, c, d.vocabs, {testing::scratch_dir("resume_full"), false, nullptr});

  const auto dir = testing::scratch_dir("resume_split");
  auto first = c;
  first.max_steps = 4;  // stops mid-epoch 2 (3 batches per epoch)
  const auto part = fit(d.train, d.dev, first, d.vocabs, {dir, false, nullptr});
  CHECK(part.steps == 4);
  const auto rest = fit(d.train, d.dev, c, d.vocabs, {dir, true, nullptr});

  std::vector<double> joined = part.losses;
  joined.insert(joined.end(), rest.losses.begin(), rest.losses.end());
  CHECK(joined == full.losses);
  CHECK(rest.steps == full.steps);
  CHECK(tensors(rest.last_state) == tensors(full.last_state));
}

TEST_CASE("a reloaded checkpoint reproduces its evaluation") {
  Data d;
  auto c = small_config();
  c.epochs = 2;
  const auto r = fit(d.train, d.dev, c, d.vocabs, {testing::scratch_dir("reload"), false, nullptr});
  const auto model = load_model(r.best_checkpoint);
  CHECK(evaluate_model(*model, d.dev, EvalMode::kAESC, c.seed).overall.f1() == r.best_dev_f1);

  const auto state = load_train_state(r.last_state);
  CHECK(state.step == r.steps);
  CHECK(state.epoch == 2);
  CHECK(model_checkpoint(*state.model).tensors.size() == model_checkpoint(*model).tensors.size());
  CHECK_THROWS_AS(load_train_state(r.best_checkpoint), CheckpointError);
}

TEST_CASE("zero epochs evaluates the initial model once") {
  Data d;
  auto c = small_config();
  c.epochs = 0;
  const auto dir = testing::scratch_dir("zero_epochs");
  const auto r = fit(d.train, d.dev, c, d.vocabs, {dir, false, nullptr});
  CHECK(r.steps == 0);
  CHECK(std::filesystem::exists(r.best_checkpoint));
  CHECK(std::filesystem::exists(dir / "vocab.json"));
  std::ifstream in(r.metrics_log);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("loss").is_null());
    CHECK(j.at("step") == 0);
    ++rows;
  }
  CHECK(rows == 1);
}

TEST_CASE("a non-finite loss stops training with a diagnostic") {
  Data d;
  auto state = init_train_state(small_config(), d.vocabs, d.train);
  state.model->parameters().get("boundary.start.out").value(0, 0) = std::nan("");
  const auto sched = schedule_for(state.model->config());
  try {
    train_step(state, {&d.train[0]}, sched);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
  }
  CHECK_THROWS_AS(fit({}, {}, small_config(), d.vocabs, {testing::scratch_dir("empty"), false, nullptr}),
                  TrainingError);
}

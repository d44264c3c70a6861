#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "spandiff/inference.hpp"
#include "spandiff/training.hpp"
#include "support.hpp"

using namespace spandiff;
using autograd::Matrix;

namespace {

// Puts (almost) all mass on the gold spans, slot i following gold[i % |gold|],
// and counts its calls.
class GoldOracle final : public Denoiser {
 public:
  DenoiseOutput denoise(const SpanTensor& x_t, int t, const AnnotatedExample& ex) const override {
    ++calls;
    seen_t.push_back(t);
    const int n = x_t.slots();
    const int len = ex.size();
    Matrix s = Matrix::Constant(n, len, -50.0);
    Matrix e = Matrix::Constant(n, len, -50.0);
    Matrix p = Matrix::Constant(n, 3, -50.0);
    std::vector<IntSpan> spans;
    for (int i = 0; i < n; ++i) {
      const auto& g = ex.gold[static_cast<std::size_t>(i) % ex.gold.size()];
      s(i, g.start) = 50.0;
      e(i, g.end) = 50.0;
      p(i, static_cast<int>(g.polarity)) = 50.0;
      spans.push_back({g.start, g.end});
    }
    return {SlotPrediction::from_logits(s, e, p), normalize_spans(spans, len, x_t.lambda)};
  }
  mutable int calls = 0;
  mutable std::vector<int> seen_t;
};

AnnotatedExample sentence() {
  auto corpus = testing::synthetic_corpus(1, 3, 4);
  testing::index_corpus(corpus);
  return corpus[0];
}

}  // namespace

TEST_CASE("decode_slots takes per-row argmaxes and orders boundaries") {
  Matrix ps(2, 4), pe(2, 4), py(2, 3);
  ps << 0.1, 0.2, 0.6, 0.1, 0.7, 0.1, 0.1, 0.1;
  pe << 0.5, 0.2, 0.2, 0.1, 0.1, 0.1, 0.2, 0.6;
  py << 0.2, 0.3, 0.5, 0.9, 0.05, 0.05;
  SlotPrediction p;
  p.p_start = ps;
  p.p_end = pe;
  p.p_polarity = py;
  const auto d = decode_slots(p);
  REQUIRE(d.size() == 2);
  CHECK(d[0].start == 0);
  CHECK(d[0].end == 2);
  CHECK(d[0].polarity == Polarity::kNeutral);
  CHECK(d[0].score == doctest::Approx(0.6 * 0.5 * 0.5));
  CHECK(d[1] == Prediction{0, 3, Polarity::kPositive, 0.7 * 0.6 * 0.9});
}

TEST_CASE("dedup keeps the best polarity per span and sorts") {
  const std::vector<Prediction> in = {{3, 4, Polarity::kNegative, 0.2},
                                      {0, 0, Polarity::kPositive, 0.5},
                                      {3, 4, Polarity::kPositive, 0.4},
                                      {0, 0, Polarity::kPositive, 0.5}};
  const auto out = dedup(in);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == Prediction{0, 0, Polarity::kPositive, 0.5});
  CHECK(out[1] == Prediction{3, 4, Polarity::kPositive, 0.4});
  CHECK(apply_threshold(out, 0.4).size() == 1);
  CHECK(apply_threshold(out, 0.0).size() == 2);
  CHECK(apply_threshold(out, 0.5).empty());
}

TEST_CASE("an oracle denoiser recovers the gold set from any starting noise") {
  const auto ex = sentence();
  const auto sched = build_schedule(100, ScheduleKind::kCosine);
  std::mt19937_64 rng(5);
  for (int gamma : {1, 5, 20}) {
    const auto plan = make_ddim_plan(100, gamma);
    for (int trial = 0; trial < 10; ++trial) {
      GoldOracle oracle;
      const auto preds = sample(ex, oracle, sched, plan, {6, 3.0, 0.5}, rng);
      CHECK(oracle.calls == gamma);
      std::vector<AspectAnnotation> got;
      for (const auto& p : preds) got.push_back({p.start, p.end, p.polarity});
      auto want = ex.gold;
      std::sort(want.begin(), want.end(), [](auto& a, auto& b) { return std::pair(a.start, a.end) < std::pair(b.start, b.end); });
      CHECK(got == want);
    }
  }
}

TEST_CASE("trace rows follow the plan and end at the sampled result") {
  const auto ex = sentence();
  const auto sched = build_schedule(100, ScheduleKind::kCosine);
  const auto plan = make_ddim_plan(100, 5);
  std::mt19937_64 rng(9);
  SpanTensor x_T{draw_noise(4, rng), 1.0, ex.size()};
  GoldOracle oracle;
  const auto rows = trace_denoising(ex, oracle, sched, plan, 0.0, x_T);
  REQUIRE(rows.size() == 5);
  const auto pairs = plan.steps();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].index == static_cast<int>(i) + 1);
    CHECK(rows[i].t == pairs[i].first);
    CHECK(rows[i].t_prev == pairs[i].second);
    CHECK(rows[i].input_spans.size() == 4);
  }
  CHECK(rows.back().t_prev == 0);
  CHECK(oracle.seen_t == std::vector<int>{100, 80, 60, 40, 20});
  GoldOracle again;
  CHECK(rows.back().decoded == sample(ex, again, sched, plan, 0.0, x_T));

  const auto j = trace_to_json(ex, rows);
  CHECK(j.at("steps").size() == 5);
  CHECK(j.at("steps").back().at("t_prev") == 0);
  const auto text = render_trace(ex, rows);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}

TEST_CASE("corpus decoding is reproducible per seed") {
  auto corpus = testing::synthetic_corpus(6, 2, 8);
  const auto vocabs = testing::index_corpus(corpus);
  TrainConfig c;
  c.hidden_size = 8;
  c.pos_dim = 4;
  c.dep_dim = 4;
  c.head_hidden = 8;
  c.T = 50;
  c.N = 3;
  SyntaNet net(c, vocabs, nullptr, corpus);
  const auto a = predict_corpus(net, corpus, 11);
  const auto b = predict_corpus(net, corpus, 11);
  CHECK(a == b);
  // Example i depends only on (seed, i).
  const std::vector<AnnotatedExample> prefix(corpus.begin(), corpus.begin() + 3);
  const auto p = predict_corpus(net, prefix, 11);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == a[i]);
}

TEST_CASE("prediction files round-trip") {
  const auto ex = sentence();
  const std::vector<Prediction> preds = {{0, 1, Polarity::kNegative, 0.123456789}, {2, 2, Polarity::kPositive, 1.0}};
  const auto path = testing::scratch_dir("predfile") / "p.jsonl";
  {
    std::ofstream out(path);
    out << prediction_record(ex, preds) << "\n\n" << prediction_record(ex, {}) << '\n';
  }
  const auto back = read_prediction_file(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].tokens == ex.tokens);
  CHECK(back[0].predictions == preds);
  CHECK(back[0].gold == ex.gold);
  CHECK(back[1].predictions.empty());

  {
    std::ofstream out(path);
    out << R"({"tokens": ["a"], "pred": [[1, 1, "happy"]], "gold": []})" << '\n';
  }
  CHECK_THROWS_AS(read_prediction_file(path), CorpusError);
  CHECK_THROWS_AS(read_prediction_file(path.parent_path() / "missing.jsonl"), CorpusError);
}

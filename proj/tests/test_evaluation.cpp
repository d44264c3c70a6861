#include <doctest.h>

#include <map>
#include <random>

#include "spandiff/evaluation.hpp"

using namespace spandiff;

namespace {

struct Corpus {
  std::vector<PredictionSet> preds;
  std::vector<GoldSet> golds;
};

// With `single_polarity`, a span keeps one polarity within a sentence on each side.
Corpus random_corpus(std::mt19937_64& rng, bool single_polarity = false) {
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Corpus c;
  const int sentences = uni(1, 5);
  for (int s = 0; s < sentences; ++s) {
    const int len = uni(1, 6);
    auto span = [&] {
      const int a = uni(0, len - 1);
      const int b = uni(a, std::min(len - 1, a + 3));
      return std::pair(a, b);
    };
    std::map<std::pair<int, int>, Polarity> gold_pol, pred_pol;
    auto pick = [&](std::map<std::pair<int, int>, Polarity>& seen, int a, int b, Polarity p) {
      if (!single_polarity) return p;
      return seen.try_emplace({a, b}, p).first->second;
    };
    GoldSet g;
    for (int k = uni(0, 3); k > 0; --k) {
      auto [a, b] = span();
      g.push_back({a, b, pick(gold_pol, a, b, static_cast<Polarity>(uni(0, 2)))});
    }
    PredictionSet p;
    for (int k = uni(0, 4); k > 0; --k) {
      // Half the time copy a gold span so matches are common.
      if (!g.empty() && uni(0, 1) == 0) {
        const auto& src = g[static_cast<std::size_t>(uni(0, static_cast<int>(g.size()) - 1))];
        const auto pol = uni(0, 2) == 0 ? static_cast<Polarity>(uni(0, 2)) : src.polarity;
        p.push_back({src.start, src.end, pick(pred_pol, src.start, src.end, pol), 1.0});
      } else {
        auto [a, b] = span();
        p.push_back({a, b, pick(pred_pol, a, b, static_cast<Polarity>(uni(0, 2))), 0.5});
      }
    }
    c.golds.push_back(std::move(g));
    c.preds.push_back(std::move(p));
  }
  return c;
}

// Set intersection over (sentence, start, end[, polarity]) with plain vectors.
Counts brute_force(const Corpus& c, EvalMode mode) {
  using Item = std::array<int, 4>;
  auto item = [&](std::size_t s, int a, int b, Polarity p) {
    return Item{static_cast<int>(s), a, b, mode == EvalMode::kAE ? 0 : static_cast<int>(p) + 1};
  };
  std::vector<Item> gold, pred;
  auto add_unique = [](std::vector<Item>& v, Item x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (std::size_t s = 0; s < c.golds.size(); ++s) {
    for (const auto& g : c.golds[s]) add_unique(gold, item(s, g.start, g.end, g.polarity));
    for (const auto& p : c.preds[s]) add_unique(pred, item(s, p.start, p.end, p.polarity));
  }
  Counts out;
  for (const auto& p : pred) {
    if (std::find(gold.begin(), gold.end(), p) != gold.end()) {
      ++out.tp;
    } else {
      ++out.fp;
    }
  }
  out.fn = static_cast<long>(gold.size()) - out.tp;
  return out;
}

}  // namespace

TEST_CASE("hand-computed scores") {
  const std::vector<GoldSet> gold = {{{0, 0, Polarity::kPositive}, {2, 3, Polarity::kNegative}}, {}};
  const std::vector<PredictionSet> pred = {{{0, 0, Polarity::kPositive, 1}, {2, 3, Polarity::kPositive, 1}},
                                           {{1, 1, Polarity::kNeutral, 1}}};
  const auto aesc = score(pred, gold, EvalMode::kAESC);
  CHECK(aesc.overall == Counts{1, 2, 1});
  CHECK(aesc.overall.precision() == doctest::Approx(1.0 / 3.0));
  CHECK(aesc.overall.recall() == doctest::Approx(0.5));
  CHECK(aesc.overall.f1() == doctest::Approx(0.4));
  const auto ae = score(pred, gold, EvalMode::kAE);
  CHECK(ae.overall == Counts{2, 1, 0});
  CHECK(ae.buckets[kLen1] == Counts{1, 1, 0});
  CHECK(ae.buckets[kLen2] == Counts{1, 0, 0});

  CHECK(score({{}}, {{}}, EvalMode::kAESC).overall.f1() == 0.0);
  CHECK_THROWS_AS(score({{}, {}}, {{}}, EvalMode::kAE), EvaluationError);
}

TEST_CASE("duplicate gold and predictions count once") {
  const std::vector<GoldSet> gold = {{{1, 2, Polarity::kNeutral}, {1, 2, Polarity::kNeutral}}};
  const std::vector<PredictionSet> pred = {{{1, 2, Polarity::kNeutral, 1}, {1, 2, Polarity::kNeutral, 0.2}}};
  CHECK(score(pred, gold, EvalMode::kAESC).overall == Counts{1, 0, 0});
}

TEST_CASE("score agrees with a brute-force counter on random corpora") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const bool single = trial % 2 == 1;
    const auto c = random_corpus(rng, single);
    const auto ae = score(c.preds, c.golds, EvalMode::kAE);
    const auto aesc = score(c.preds, c.golds, EvalMode::kAESC);
    CHECK(ae.overall == brute_force(c, EvalMode::kAE));
    CHECK(aesc.overall == brute_force(c, EvalMode::kAESC));
    // A span labelled with two polarities counts twice under AESC and once under AE.
    if (single) CHECK(ae.overall.f1() >= aesc.overall.f1());
    for (const auto* r : {&ae, &aesc}) {
      Counts sum;
      for (const auto& b : r->buckets) sum += b;
      CHECK(sum == r->overall);
    }
  }
}

TEST_CASE("length buckets") {
  CHECK(bucket_for_length(1) == kLen1);
  CHECK(bucket_for_length(2) == kLen2);
  CHECK(bucket_for_length(3) == kLenOver2);
  CHECK(bucket_for_length(9) == kLenOver2);
  const std::vector<GoldSet> gold = {{{0, 2, Polarity::kPositive}}};
  const std::vector<PredictionSet> pred = {{{0, 1, Polarity::kPositive, 1}}};
  const auto b = bucket_by_length(pred, gold, EvalMode::kAE);
  CHECK(b[kLenOver2] == Counts{0, 0, 1});
  CHECK(b[kLen2] == Counts{0, 1, 0});
}

TEST_CASE("reports round-trip through JSON") {
  std::mt19937_64 rng(5);
  const auto c = random_corpus(rng);
  const auto r = score(c.preds, c.golds, EvalMode::kAE);
  const auto back = report_from_json(to_json(r));
  CHECK(back.mode == r.mode);
  CHECK(back.overall == r.overall);
  CHECK(back.buckets == r.buckets);
  auto bad = to_json(r);
  bad["mode"] = "SC";
  CHECK_THROWS_AS(report_from_json(bad), EvaluationError);
}

TEST_CASE("relative improvement on the published length table") {
  // Rows: baseline then model, columns ALL / LEN=1 / LEN=2 / LEN>2.
  struct Case {
    F1Row base, model, improvement;
  };
  const Case cases[] = {
      {{66.17, 58.88, 16.11, 4.36}, {79.13, 71.68, 20.82, 7.51}, {19.59, 21.74, 29.24, 72.25}},
      {{68.60, 58.94, 19.37, 4.73}, {78.87, 68.97, 21.61, 8.49}, {14.97, 17.02, 11.56, 79.49}},
  };
  for (const auto& c : cases) {
    const auto imp = compare(c.model, c.base);
    for (std::size_t i = 0; i < 4; ++i) {
      REQUIRE(imp[i].has_value());
      CHECK(std::abs(*imp[i] - c.improvement[i]) <= 0.01);
    }
  }
  const auto none = compare(F1Row{10, 0, 5, 0}, F1Row{5, 0, 0, 2});
  CHECK(none[0] == doctest::Approx(100.0));
  CHECK_FALSE(none[1].has_value());
  CHECK_FALSE(none[2].has_value());
  CHECK(none[3] == doctest::Approx(-100.0));
}

TEST_CASE("length table rendering") {
  const auto text = render_length_table({{"SeqLab", {66.17, 58.88, 16.11, 4.36}}, {"spandiff", {79.13, 71.68, 20.82, 7.51}}});
  CHECK(text.find("Improvement") != std::string::npos);
  CHECK(text.find("19.59%") != std::string::npos);
  CHECK(text.find("72.25%") != std::string::npos);
  CHECK(text.find("LEN>2") != std::string::npos);
  const auto zero = render_length_table({{"a", {0, 0, 0, 0}}, {"b", {1, 1, 1, 1}}});
  CHECK(zero.find("n/a") != std::string::npos);
  CHECK(render_report(EvalReport{}).find("LEN=2") != std::string::npos);
}

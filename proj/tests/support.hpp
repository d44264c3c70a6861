#pragma once

// Shared fixtures: a seeded synthetic ABSA corpus and finite-difference helpers.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spandiff/autograd.hpp"
#include "spandiff/corpus.hpp"

namespace spandiff::testing {

// 50 word types: 10 aspect nouns, 3 x 4 sentiment adjectives, 28 fillers.
inline std::vector<std::string> aspect_words() {
  return {"pizza", "service", "staff", "wine", "menu", "pasta", "battery", "screen", "keyboard", "price"};
}
inline std::vector<std::vector<std::string>> sentiment_words() {
  return {{"great", "tasty", "friendly", "superb"},
          {"awful", "rude", "slow", "bland"},
          {"okay", "average", "standard", "plain"}};
}
inline std::vector<std::string> filler_words() {
  return {"the", "a", "was", "is", "and", "but", "very", "really", "we", "they", "it", "our", "here", "there",
          "today", "also", "quite", "so", "then", "with", "for", "of", "to", "in", "on", "at", "this", "that"};
}

/// Sentence of fillers with 1..max_aspects aspect phrases (1 to 3 nouns long),
/// each preceded by an adjective fixing its polarity. POS: NN / JJ / DT; the
/// dependency tree attaches adjectives and nouns to the phrase head and
/// chains fillers.
inline std::vector<AnnotatedExample> synthetic_corpus(int sentences, int max_aspects, std::uint64_t seed,
                                                      bool with_empty = false) {
  std::mt19937_64 rng(seed);
  const auto nouns = aspect_words();
  const auto adjectives = sentiment_words();
  const auto fillers = filler_words();
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  std::vector<AnnotatedExample> out;
  for (int s = 0; s < sentences; ++s) {
    AnnotatedExample ex;
    auto add = [&](const std::string& w, const std::string& pos) {
      ex.tokens.push_back(w);
      ex.pos_tags.push_back(pos);
    };
    const int k = with_empty && s % 7 == 6 ? 0 : 1 + pick(max_aspects);
    add(fillers[static_cast<std::size_t>(pick(4))], "DT");
    for (int a = 0; a < k; ++a) {
      const int pol = pick(3);
      const int adj_at = ex.size();
      add(adjectives[static_cast<std::size_t>(pol)][static_cast<std::size_t>(pick(4))], "JJ");
      const int len = 1 + pick(3);
      const int start = ex.size();
      for (int i = 0; i < len; ++i) add(nouns[static_cast<std::size_t>(pick(10))], "NN");
      const int head = start + len - 1;
      ex.edges.push_back({head, adj_at, 0, "amod"});
      for (int i = start; i < head; ++i) ex.edges.push_back({head, i, 0, "compound"});
      ex.gold.push_back({start, head, static_cast<Polarity>(pol)});
      const int gap = 1 + pick(2);
      for (int i = 0; i < gap; ++i) {
        ex.edges.push_back({ex.size() - 1, ex.size(), 0, "dep"});
        add(fillers[static_cast<std::size_t>(4 + pick(24))], "DT");
      }
    }
    ex.edges.push_back({1 < ex.size() ? 1 : 0, 0, 0, "det"});
    if (ex.edges.back().head == ex.edges.back().dependent) ex.edges.pop_back();
    out.push_back(std::move(ex));
  }
  return out;
}

/// Assigns vocabulary ids (built from `examples`) and validates.
inline Vocabularies index_corpus(std::vector<AnnotatedExample>& examples) {
  Vocabularies v;
  for (const auto& ex : examples) {
    for (const auto& p : ex.pos_tags) v.pos.add(p);
    for (const auto& e : ex.edges) v.dep.add(e.label);
  }
  v.freeze();
  for (auto& ex : examples) {
    apply_vocabularies(ex, v);
    validate(ex, &v);
  }
  return v;
}

/// Largest relative error between analytic and central-difference gradients
/// of `loss` with respect to `p`. Relative error uses max(|a|, |n|, floor).
inline double gradient_check(autograd::Parameter& p, const std::function<double()>& loss,
                             const autograd::Matrix& analytic, double h = 1e-6, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    const double orig = p.value(i);
    p.value(i) = orig + h;
    const double up = loss();
    p.value(i) = orig - h;
    const double down = loss();
    p.value(i) = orig;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic(i);
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

/// Writes `<split>_triplets.txt` (opinion index: the token before each
/// aspect) and `<split>.conllu` in the raw input formats.
inline void write_raw_split(const std::filesystem::path& raw_dir, const std::filesystem::path& ann_dir,
                            const std::string& split, const std::vector<AnnotatedExample>& examples) {
  std::filesystem::create_directories(raw_dir);
  std::filesystem::create_directories(ann_dir);
  std::ofstream triplets(raw_dir / (split + "_triplets.txt"));
  std::ofstream conllu(ann_dir / (split + ".conllu"));
  const char* labels[] = {"POS", "NEG", "NEU"};
  for (const auto& ex : examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) triplets << (i ? " " : "") << ex.tokens[i];
    triplets << "####[";
    for (std::size_t k = 0; k < ex.gold.size(); ++k) {
      const auto& a = ex.gold[k];
      triplets << (k ? ", " : "") << "([";
      for (int i = a.start; i <= a.end; ++i) triplets << (i > a.start ? ", " : "") << i;
      triplets << "], [" << std::max(0, a.start - 1) << "], '" << labels[static_cast<int>(a.polarity)] << "')";
    }
    triplets << "]\n";
    std::vector<int> head(ex.tokens.size(), -1);
    std::vector<std::string> rel(ex.tokens.size(), "root");
    for (const auto& e : ex.edges) {
      head[static_cast<std::size_t>(e.dependent)] = e.head;
      rel[static_cast<std::size_t>(e.dependent)] = e.label;
    }
    conllu << "# text = sentence\n";
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      conllu << i + 1 << '\t' << ex.tokens[i] << "\t_\tX\t" << ex.pos_tags[i] << "\t_\t" << head[i] + 1 << '\t'
             << rel[i] << "\t_\t_\n";
    }
    conllu << '\n';
  }
}

/// Fresh scratch directory under $SPANDIFF_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* root = std::getenv("SPANDIFF_TEST_TMP");
  const auto dir = (root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "spandiff") / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace spandiff::testing

#include "spandiff/evaluation.hpp"

#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

namespace spandiff {

std::string_view to_string(EvalMode m) { return m == EvalMode::kAE ? "AE" : "AESC"; }

double Counts::precision() const { return predicted() == 0 ? 0.0 : static_cast<double>(tp) / predicted(); }
double Counts::recall() const { return gold() == 0 ? 0.0 : static_cast<double>(tp) / gold(); }
double Counts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

LengthBucket bucket_for_length(int length) {
  if (length <= 1) return kLen1;
  if (length == 2) return kLen2;
  return kLenOver2;
}

namespace {

// Polarity is folded to -1 in AE mode so the key ignores it.
using Key = std::tuple<int, int, int>;

Key key_of(int start, int end, Polarity p, EvalMode mode) {
  return {start, end, mode == EvalMode::kAE ? -1 : static_cast<int>(p)};
}

void check_sizes(const std::vector<PredictionSet>& predictions, const std::vector<GoldSet>& golds) {
  if (predictions.size() != golds.size()) {
    throw EvaluationError("prediction corpus has " + std::to_string(predictions.size()) +
                          " sentences but gold has " + std::to_string(golds.size()));
  }
}

std::set<Key> gold_keys(const GoldSet& gold, EvalMode mode) {
  std::set<Key> keys;
  for (const auto& a : gold) keys.insert(key_of(a.start, a.end, a.polarity, mode));
  return keys;
}

std::set<Key> pred_keys(const PredictionSet& preds, EvalMode mode) {
  std::set<Key> keys;
  for (const auto& p : preds) keys.insert(key_of(p.start, p.end, p.polarity, mode));
  return keys;
}

int key_length(const Key& k) { return std::get<1>(k) - std::get<0>(k) + 1; }

}  // namespace

std::array<Counts, 3> bucket_by_length(const std::vector<PredictionSet>& predictions,
                                       const std::vector<GoldSet>& golds, EvalMode mode) {
  check_sizes(predictions, golds);
  std::array<Counts, 3> buckets{};
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const auto gold = gold_keys(golds[i], mode);
    const auto pred = pred_keys(predictions[i], mode);
    for (const auto& g : gold) {
      auto& b = buckets[bucket_for_length(key_length(g))];
      if (pred.count(g)) {
        ++b.tp;
      } else {
        ++b.fn;
      }
    }
    for (const auto& p : pred) {
      if (!gold.count(p)) ++buckets[bucket_for_length(key_length(p))].fp;
    }
  }
  return buckets;
}

EvalReport score(const std::vector<PredictionSet>& predictions, const std::vector<GoldSet>& golds, EvalMode mode) {
  EvalReport r;
  r.mode = mode;
  r.buckets = bucket_by_length(predictions, golds, mode);
  for (const auto& b : r.buckets) r.overall += b;
  return r;
}

namespace {

nlohmann::json counts_json(const Counts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()}};
}

Counts counts_from(const nlohmann::json& j) {
  return {j.at("tp").get<long>(), j.at("fp").get<long>(), j.at("fn").get<long>()};
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mode"] = std::string(to_string(r.mode));
  j["overall"] = counts_json(r.overall);
  auto buckets = nlohmann::json::object();
  for (std::size_t b = 0; b < r.buckets.size(); ++b) buckets[kBucketNames[b]] = counts_json(r.buckets[b]);
  j["buckets"] = std::move(buckets);
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "AE") {
    r.mode = EvalMode::kAE;
  } else if (mode == "AESC") {
    r.mode = EvalMode::kAESC;
  } else {
    throw EvaluationError("unknown report mode '" + mode + "'");
  }
  r.overall = counts_from(j.at("overall"));
  for (std::size_t b = 0; b < r.buckets.size(); ++b) r.buckets[b] = counts_from(j.at("buckets").at(kBucketNames[b]));
  return r;
}

F1Row f1_row(const EvalReport& r) {
  return {100.0 * r.overall.f1(), 100.0 * r.buckets[0].f1(), 100.0 * r.buckets[1].f1(), 100.0 * r.buckets[2].f1()};
}

ImprovementRow compare(const F1Row& a, const F1Row& b) {
  ImprovementRow out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] != 0.0) out[i] = (a[i] - b[i]) / b[i] * 100.0;
  }
  return out;
}

ImprovementRow compare(const EvalReport& a, const EvalReport& b) { return compare(f1_row(a), f1_row(b)); }

std::string render_length_table(const std::vector<std::pair<std::string, F1Row>>& rows) {
  std::ostringstream os;
  std::size_t name_width = std::string("Improvement").size();
  for (const auto& [name, row] : rows) name_width = std::max(name_width, name.size());
  os << std::left << std::setw(static_cast<int>(name_width + 2)) << "MODEL";
  for (const auto* c : kColumnNames) os << std::right << std::setw(10) << c;
  os << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& [name, row] : rows) {
    os << std::left << std::setw(static_cast<int>(name_width + 2)) << name;
    for (double v : row) os << std::right << std::setw(10) << v;
    os << '\n';
  }
  if (rows.size() >= 2) {
    const auto imp = compare(rows.back().second, rows.front().second);
    os << std::left << std::setw(static_cast<int>(name_width + 2)) << "Improvement";
    for (const auto& v : imp) {
      std::ostringstream cell;
      if (v) {
        cell << std::fixed << std::setprecision(2) << *v << '%';
      } else {
        cell << "n/a";
      }
      os << std::right << std::setw(10) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

std::string render_report(const EvalReport& r) {
  std::ostringstream os;
  os << to_string(r.mode) << '\n';
  os << std::left << std::setw(8) << "" << std::right << std::setw(7) << "tp" << std::setw(7) << "fp" << std::setw(7)
     << "fn" << std::setw(10) << "P" << std::setw(10) << "R" << std::setw(10) << "F1" << '\n';
  auto line = [&](const char* name, const Counts& c) {
    os << std::left << std::setw(8) << name << std::right << std::setw(7) << c.tp << std::setw(7) << c.fp
       << std::setw(7) << c.fn << std::fixed << std::setprecision(2) << std::setw(10) << 100 * c.precision()
       << std::setw(10) << 100 * c.recall() << std::setw(10) << 100 * c.f1() << '\n';
  };
  line("ALL", r.overall);
  for (std::size_t b = 0; b < r.buckets.size(); ++b) line(kBucketNames[b], r.buckets[b]);
  return os.str();
}

}  // namespace spandiff

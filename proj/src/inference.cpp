#include "spandiff/inference.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace spandiff {

std::vector<Prediction> decode_slots(const SlotPrediction& p) {
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(p.p_start.rows()));
  for (Eigen::Index r = 0; r < p.p_start.rows(); ++r) {
    Eigen::Index s = 0;
    Eigen::Index e = 0;
    Eigen::Index y = 0;
    const double ps = p.p_start.row(r).maxCoeff(&s);
    const double pe = p.p_end.row(r).maxCoeff(&e);
    const double py = p.p_polarity.row(r).maxCoeff(&y);
    if (s > e) std::swap(s, e);
    out.push_back({static_cast<int>(s), static_cast<int>(e), static_cast<Polarity>(y), ps * pe * py});
  }
  return out;
}

std::vector<Prediction> dedup(const std::vector<Prediction>& predictions) {
  std::map<std::pair<int, int>, Prediction> best;
  for (const auto& p : predictions) {
    auto [it, inserted] = best.try_emplace({p.start, p.end}, p);
    if (!inserted && p.score > it->second.score) it->second = p;
  }
  std::vector<Prediction> out;
  out.reserve(best.size());
  for (auto& [key, p] : best) out.push_back(p);
  return out;
}

std::vector<Prediction> apply_threshold(const std::vector<Prediction>& predictions, double threshold) {
  std::vector<Prediction> out;
  std::copy_if(predictions.begin(), predictions.end(), std::back_inserter(out),
               [threshold](const Prediction& p) { return p.score > threshold; });
  return out;
}

Eigen::MatrixX2d draw_noise(int slots, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixX2d eps(slots, 2);
  for (int r = 0; r < slots; ++r) {
    eps(r, 0) = normal(rng);
    eps(r, 1) = normal(rng);
  }
  return eps;
}

std::vector<TraceStep> trace_denoising(const AnnotatedExample& example, const Denoiser& denoiser,
                                       const NoiseSchedule& sched, const DdimPlan& plan, double threshold,
                                       const SpanTensor& x_T) {
  std::vector<TraceStep> steps;
  SpanTensor x = x_T;
  int index = 0;
  for (const auto& [t, t_prev] : plan.steps()) {
    TraceStep row;
    row.index = ++index;
    row.t = t;
    row.t_prev = t_prev;
    row.input_spans = denormalize_spans(x);
    auto out = denoiser.denoise(x, t, example);
    row.decoded = apply_threshold(dedup(decode_slots(out.prediction)), threshold);
    x = ddim_step(x, out.x0_hat, t, t_prev, sched);
    steps.push_back(std::move(row));
  }
  return steps;
}

std::vector<Prediction> sample(const AnnotatedExample& example, const Denoiser& denoiser, const NoiseSchedule& sched,
                               const DdimPlan& plan, double threshold, const SpanTensor& x_T) {
  auto steps = trace_denoising(example, denoiser, sched, plan, threshold, x_T);
  return steps.empty() ? std::vector<Prediction>{} : std::move(steps.back().decoded);
}

std::vector<Prediction> sample(const AnnotatedExample& example, const Denoiser& denoiser, const NoiseSchedule& sched,
                               const DdimPlan& plan, const SamplerOptions& options, std::mt19937_64& rng) {
  SpanTensor x_T;
  x_T.values = draw_noise(options.slots, rng);
  x_T.lambda = options.lambda;
  x_T.sentence_len = example.size();
  return sample(example, denoiser, sched, plan, options.threshold, x_T);
}

namespace {

std::string span_text(const AnnotatedExample& ex, int start, int end) {
  std::string s;
  for (int i = start; i <= end && i < ex.size(); ++i) {
    if (!s.empty()) s += ' ';
    s += ex.tokens[static_cast<std::size_t>(i)];
  }
  return s;
}

}  // namespace

std::string render_trace(const AnnotatedExample& example, const std::vector<TraceStep>& steps) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "STEP" << std::setw(7) << "t" << std::setw(8) << "t_prev" << "DECODED\n";
  for (const auto& s : steps) {
    os << std::left << std::setw(6) << s.index << std::setw(7) << s.t << std::setw(8) << s.t_prev;
    if (s.decoded.empty()) os << "(none)";
    for (std::size_t i = 0; i < s.decoded.size(); ++i) {
      const auto& p = s.decoded[i];
      os << (i ? " | " : "") << '[' << p.start + 1 << ',' << p.end + 1 << "] \"" << span_text(example, p.start, p.end)
         << "\" " << to_string(p.polarity) << ' ' << std::fixed << std::setprecision(3) << p.score;
      os.unsetf(std::ios::fixed);
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json trace_to_json(const AnnotatedExample& example, const std::vector<TraceStep>& steps) {
  nlohmann::json j;
  j["tokens"] = example.tokens;
  auto rows = nlohmann::json::array();
  for (const auto& s : steps) {
    auto input = nlohmann::json::array();
    for (const auto& sp : s.input_spans) input.push_back({sp.start + 1, sp.end + 1});
    auto decoded = nlohmann::json::array();
    for (const auto& p : s.decoded) decoded.push_back({p.start + 1, p.end + 1, std::string(to_string(p.polarity)), p.score});
    rows.push_back({{"step", s.index}, {"t", s.t}, {"t_prev", s.t_prev}, {"input", input}, {"decoded", decoded}});
  }
  j["steps"] = std::move(rows);
  return j;
}

std::string prediction_record(const AnnotatedExample& example, const std::vector<Prediction>& predictions) {
  nlohmann::ordered_json j;
  j["tokens"] = example.tokens;
  auto pred = nlohmann::ordered_json::array();
  for (const auto& p : predictions) pred.push_back({p.start + 1, p.end + 1, std::string(to_string(p.polarity)), p.score});
  j["pred"] = std::move(pred);
  auto gold = nlohmann::ordered_json::array();
  for (const auto& a : example.gold) gold.push_back({a.start + 1, a.end + 1, std::string(to_string(a.polarity))});
  j["gold"] = std::move(gold);
  return j.dump();
}

std::vector<PredictionFileEntry> read_prediction_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open prediction file " + path.string());
  std::vector<PredictionFileEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PredictionFileEntry e;
      e.tokens = j.at("tokens").get<std::vector<std::string>>();
      for (const auto& p : j.at("pred")) {
        Prediction pr;
        pr.start = p.at(0).get<int>() - 1;
        pr.end = p.at(1).get<int>() - 1;
        pr.polarity = parse_polarity(p.at(2).get<std::string>());
        pr.score = p.size() > 3 ? p.at(3).get<double>() : 1.0;
        e.predictions.push_back(pr);
      }
      for (const auto& g : j.at("gold")) {
        e.gold.push_back({g.at(0).get<int>() - 1, g.at(1).get<int>() - 1, parse_polarity(g.at(2).get<std::string>())});
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const CorpusError& e) {
      throw CorpusError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace spandiff

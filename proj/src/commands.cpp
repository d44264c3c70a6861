#include "spandiff/commands.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "spandiff/baseline.hpp"
#include "spandiff/checkpoint.hpp"
#include "spandiff/encoder.hpp"
#include "spandiff/evaluation.hpp"
#include "spandiff/inference.hpp"
#include "spandiff/training.hpp"

namespace spandiff {

using nlohmann::json;
namespace fs = std::filesystem;

TrainConfig ConfigSources::resolve() const {
  const auto env = use_environment ? environment_overrides() : std::map<std::string, std::string>{};
  return resolve_config(file ? &*file : nullptr, env, flags);
}

// ---------------------------------------------------------------------------
// preprocess

std::pair<std::vector<std::string>, std::vector<AspectAnnotation>> parse_triplet_line(const std::string& line) {
  const auto sep = line.find("####");
  if (sep == std::string::npos) throw CorpusError("missing '####' separator");
  std::vector<std::string> tokens;
  {
    std::istringstream is(line.substr(0, sep));
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
  }
  if (tokens.empty()) throw CorpusError("empty sentence");

  // The annotation is a Python literal; map it onto JSON.
  std::string lit = line.substr(sep + 4);
  for (char& c : lit) {
    if (c == '(') c = '[';
    if (c == ')') c = ']';
    if (c == '\'') c = '"';
  }
  json triplets;
  try {
    triplets = json::parse(lit);
  } catch (const json::exception& e) {
    throw CorpusError(std::string("malformed triplet list: ") + e.what());
  }
  std::vector<AspectAnnotation> aspects;
  for (const auto& t : triplets) {
    auto idx = t.at(0).get<std::vector<int>>();
    if (idx.empty()) throw CorpusError("aspect with no tokens");
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 1; i < idx.size(); ++i) {
      if (idx[i] != idx[i - 1] + 1) throw CorpusError("aspect tokens are not contiguous");
    }
    if (idx.front() < 0 || idx.back() >= static_cast<int>(tokens.size())) {
      throw CorpusError("aspect index out of range");
    }
    const auto label = t.at(2).get<std::string>();
    Polarity p;
    if (label == "POS") {
      p = Polarity::kPositive;
    } else if (label == "NEG") {
      p = Polarity::kNegative;
    } else if (label == "NEU") {
      p = Polarity::kNeutral;
    } else {
      throw CorpusError("unknown sentiment label '" + label + "'");
    }
    aspects.push_back({idx.front(), idx.back(), p});
  }
  return {std::move(tokens), std::move(aspects)};
}

std::vector<ConlluSentence> read_conllu(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open annotation file " + path.string());
  std::vector<ConlluSentence> out;
  ConlluSentence cur;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!cur.forms.empty()) out.push_back(std::move(cur));
    cur = {};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> cols;
    std::istringstream is(line);
    std::string col;
    while (std::getline(is, col, '\t')) cols.push_back(col);
    if (cols.size() < 8) {
      throw CorpusError(path.string() + " line " + std::to_string(line_no) + ": expected 10 tab-separated columns");
    }
    // Multi-word token ranges and empty nodes carry no tree position.
    if (cols[0].find_first_of("-.") != std::string::npos) continue;
    try {
      const int id = std::stoi(cols[0]);
      const int head = std::stoi(cols[6]);
      if (id != static_cast<int>(cur.forms.size()) + 1) throw CorpusError("non-consecutive token id");
      cur.forms.push_back(cols[1]);
      cur.pos.push_back(cols[4] != "_" ? cols[4] : cols[3]);
      if (head > 0) cur.edges.push_back({head - 1, id - 1, 0, cols[7]});
    } catch (const std::logic_error& e) {
      throw CorpusError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  flush();
  return out;
}

namespace {

fs::path triplet_path(const fs::path& dir, const std::string& split) {
  for (const auto& name : {split + "_triplets.txt", split + ".txt"}) {
    if (fs::exists(dir / name)) return dir / name;
  }
  throw CorpusError("no triplet file for split '" + split + "' in " + dir.string());
}

}  // namespace

PreprocessResult cmd_preprocess(const PreprocessOptions& opts, std::ostream& out) {
  PreprocessResult result;
  Vocabularies vocabs;
  std::map<std::string, std::vector<AnnotatedExample>> splits;
  for (const auto& split : opts.splits) {
    const auto tpath = triplet_path(opts.raw_dir, split);
    const auto apath = opts.annotations_dir / (split + ".conllu");
    std::vector<ConlluSentence> annotations;
    if (fs::exists(apath)) annotations = read_conllu(apath);
    std::ifstream in(tpath);
    if (!in) throw CorpusError("cannot open " + tpath.string());
    std::string line;
    std::size_t line_no = 0;
    std::size_t sentence = 0;
    auto& examples = splits[split];
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const std::string where = tpath.filename().string() + ":" + std::to_string(line_no);
      const std::size_t k = sentence++;
      try {
        auto [tokens, aspects] = parse_triplet_line(line);
        if (k >= annotations.size()) {
          result.errors.push_back(where + ": no annotation (sentence " + std::to_string(k + 1) + ")");
          continue;
        }
        const auto& ann = annotations[k];
        if (ann.forms != tokens) {
          result.errors.push_back(where + ": annotation tokens do not match the sentence (" +
                                  std::to_string(ann.forms.size()) + " vs " + std::to_string(tokens.size()) + ")");
          continue;
        }
        AnnotatedExample ex;
        ex.tokens = std::move(tokens);
        ex.pos_tags = ann.pos;
        ex.edges = ann.edges;
        ex.gold = std::move(aspects);
        examples.push_back(std::move(ex));
      } catch (const CorpusError& e) {
        result.errors.push_back(where + ": " + e.what());
      }
    }
    if (annotations.size() > sentence) {
      result.errors.push_back(split + ": " + std::to_string(annotations.size() - sentence) +
                              " annotated sentences have no triplet line");
    }
  }
  if (!result.errors.empty()) {
    for (const auto& e : result.errors) out << "error: " << e << '\n';
    throw CorpusError("preprocess failed for " + std::to_string(result.errors.size()) + " example(s)");
  }

  // Vocabularies come from the training split only; other splits fall back to <unk>.
  const std::string vocab_split = splits.count("train") ? "train" : opts.splits.front();
  for (auto& ex : splits[vocab_split]) {
    for (const auto& p : ex.pos_tags) vocabs.pos.add(p);
    for (const auto& e : ex.edges) vocabs.dep.add(e.label);
  }
  vocabs.freeze();

  fs::create_directories(opts.out_dir);
  out << std::left << std::setw(8) << "split" << std::right << std::setw(11) << "sentences" << std::setw(9)
      << "targets" << '\n';
  for (const auto& split : opts.splits) {
    auto& examples = splits[split];
    for (auto& ex : examples) {
      apply_vocabularies(ex, vocabs);
      validate(ex, &vocabs);
    }
    save_dataset(opts.out_dir / (split + ".jsonl"), examples);
    const auto stats = compute_stats(examples);
    result.stats[split] = stats;
    out << std::left << std::setw(8) << split << std::right << std::setw(11) << stats.sentences << std::setw(9)
        << stats.targets << '\n';
  }
  vocabs.save(opts.out_dir / "vocab.json");
  return result;
}

// ---------------------------------------------------------------------------
// shared helpers

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

namespace {

fs::path split_path(const fs::path& data_dir, const std::string& split) { return data_dir / (split + ".jsonl"); }

std::optional<Vocabularies> data_vocabs(const fs::path& data_dir) {
  if (fs::exists(data_dir / "vocab.json")) return Vocabularies::load(data_dir / "vocab.json");
  return std::nullopt;
}

json dataset_entry(const fs::path& path, const std::vector<AnnotatedExample>& examples) {
  const auto stats = compute_stats(examples);
  return {{"path", path.string()},
          {"sha256", sha256_file(path)},
          {"sentences", stats.sentences},
          {"targets", stats.targets}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct LoadedModel {
  std::unique_ptr<SyntaNet> diffusion;
  std::unique_ptr<SeqLab> seqlab;

  const Vocabularies* vocabs() const { return diffusion ? &diffusion->vocabularies() : nullptr; }
};

LoadedModel load_any_model(const DecodeOptions& opts) {
  const auto ckpt = read_checkpoint(opts.checkpoint);
  LoadedModel m;
  if (ckpt.kind == "seqlab") {
    m.seqlab = seqlab_from_checkpoint(ckpt);
    if (!opts.overrides.empty()) throw ConfigError("decode overrides do not apply to a seqlab checkpoint");
    return m;
  }
  m.diffusion = model_from_checkpoint(ckpt);
  auto& cfg = m.diffusion->mutable_config();
  for (const auto& [key, value] : opts.overrides) {
    if (key != "seed" && key != "gamma" && key != "threshold" && key != "x0_estimate") {
      throw ConfigError("'" + key + "' cannot be changed at decode time (allowed: seed, gamma, threshold, x0_estimate)");
    }
    apply_override(cfg, key, value);
  }
  cfg.validate();
  return m;
}

std::vector<PredictionSet> predict_all(const LoadedModel& m, const std::vector<AnnotatedExample>& examples) {
  if (m.diffusion) return predict_corpus(*m.diffusion, examples, m.diffusion->config().seed);
  std::vector<PredictionSet> out;
  for (const auto& ex : examples) out.push_back(m.seqlab->predict(ex));
  return out;
}

Dataset load_for_model(const fs::path& path, const LoadedModel& m, const fs::path& fallback_vocab_dir) {
  if (const auto* v = m.vocabs()) return load_dataset(path, *v);
  return load_dataset(path, data_vocabs(fallback_vocab_dir));
}

json report_pair(const std::vector<PredictionSet>& preds, const std::vector<GoldSet>& golds) {
  return {{"AE", to_json(score(preds, golds, EvalMode::kAE))}, {"AESC", to_json(score(preds, golds, EvalMode::kAESC))}};
}

}  // namespace

// ---------------------------------------------------------------------------
// train

nlohmann::json cmd_train(const TrainCommandOptions& opts, std::ostream& out) {
  const TrainConfig config = opts.config.resolve();
  const auto train_path = split_path(opts.data_dir, "train");
  const auto dev_path = split_path(opts.data_dir, "dev");
  auto train = load_dataset(train_path, data_vocabs(opts.data_dir));
  std::vector<AnnotatedExample> dev;
  if (fs::exists(dev_path)) dev = load_dataset(dev_path, train.vocabs).examples;
  out << "train: " << train.stats.sentences << " sentences, " << train.stats.targets << " targets\n";
  out << "dev:   " << dev.size() << " sentences\n";

  FitOptions fo;
  fo.out_dir = opts.out_dir;
  fo.resume = opts.resume;
  const auto result = fit(train.examples, dev, config, train.vocabs, fo);

  const auto best = load_model(result.best_checkpoint);
  write_json(opts.out_dir / "config.json", to_json(best->config()));
  json datasets = {{"train", dataset_entry(train_path, train.examples)}};
  if (fs::exists(dev_path)) datasets["dev"] = dataset_entry(dev_path, dev);
  const auto manifest_path = opts.out_dir / "manifest.json";
  json manifest = {
      {"command", "train"},
      {"config", to_json(best->config())},
      {"seed", best->config().seed},
      {"datasets", datasets},
      {"checkpoint", result.best_checkpoint.string()},
      {"metrics",
       {{"best_dev_f1", result.best_dev_f1}, {"best_epoch", result.best_epoch}, {"steps", result.steps},
        {"log", result.metrics_log.string()}}},
      {"artifacts",
       {result.best_checkpoint.string(), result.last_state.string(), result.metrics_log.string(),
        (opts.out_dir / "vocab.json").string(), (opts.out_dir / "config.json").string(), manifest_path.string()}},
  };
  write_json(manifest_path, manifest);
  out << "steps " << result.steps << ", best dev AESC F1 " << std::fixed << std::setprecision(4) << result.best_dev_f1
      << " at epoch " << result.best_epoch << '\n'
      << "checkpoint " << result.best_checkpoint.string() << '\n';
  return manifest;
}

nlohmann::json cmd_train_baseline(const TrainCommandOptions& opts, std::ostream& out) {
  const TrainConfig config = opts.config.resolve();
  const auto train_path = split_path(opts.data_dir, "train");
  const auto dev_path = split_path(opts.data_dir, "dev");
  auto train = load_dataset(train_path, data_vocabs(opts.data_dir));
  std::vector<AnnotatedExample> dev;
  if (fs::exists(dev_path)) dev = load_dataset(dev_path, train.vocabs).examples;

  SeqLabFitOptions fo;
  fo.out_dir = opts.out_dir;
  const auto result = train_seqlab(train.examples, dev, config, fo);
  const auto ckpt = opts.out_dir / "best.ckpt";
  write_json(opts.out_dir / "config.json", to_json(config));
  json datasets = {{"train", dataset_entry(train_path, train.examples)}};
  if (fs::exists(dev_path)) datasets["dev"] = dataset_entry(dev_path, dev);
  const auto manifest_path = opts.out_dir / "manifest.json";
  json manifest = {
      {"command", "train-baseline"},
      {"config", to_json(config)},
      {"seed", config.seed},
      {"datasets", datasets},
      {"checkpoint", ckpt.string()},
      {"metrics", {{"best_dev_f1", result.best_dev_f1}, {"best_epoch", result.best_epoch}, {"steps", result.steps}}},
      {"artifacts",
       {ckpt.string(), (opts.out_dir / "metrics.jsonl").string(), (opts.out_dir / "config.json").string(),
        manifest_path.string()}},
  };
  write_json(manifest_path, manifest);
  out << "seqlab steps " << result.steps << ", best dev AESC F1 " << std::fixed << std::setprecision(4)
      << result.best_dev_f1 << '\n'
      << "checkpoint " << ckpt.string() << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// eval / predict / trace / compare

nlohmann::json cmd_eval(const EvalCommandOptions& opts, std::ostream& out) {
  std::vector<PredictionSet> preds;
  std::vector<GoldSet> golds;
  if (opts.predictions) {
    for (auto& e : read_prediction_file(*opts.predictions)) {
      preds.push_back(dedup(e.predictions));
      golds.push_back(std::move(e.gold));
    }
  } else {
    const auto model = load_any_model(opts.decode);
    const auto data = load_for_model(split_path(opts.data_dir, opts.split), model, opts.data_dir);
    preds = predict_all(model, data.examples);
    for (const auto& ex : data.examples) golds.push_back(ex.gold);
  }
  const json reports = report_pair(preds, golds);
  out << render_report(report_from_json(reports.at("AE"))) << '\n' << render_report(report_from_json(reports.at("AESC")));
  if (opts.out) {
    if (opts.out->has_parent_path()) fs::create_directories(opts.out->parent_path());
    write_json(*opts.out, reports);
  }
  return reports;
}

void cmd_predict(const PredictCommandOptions& opts, std::ostream& out) {
  const auto model = load_any_model(opts.decode);
  const auto data = load_for_model(opts.input, model, opts.input.parent_path());
  const auto preds = predict_all(model, data.examples);
  std::ofstream file;
  if (opts.out) {
    if (opts.out->has_parent_path()) fs::create_directories(opts.out->parent_path());
    file.open(*opts.out, std::ios::trunc);
    if (!file) throw CorpusError("cannot write " + opts.out->string());
  }
  std::ostream& sink = opts.out ? static_cast<std::ostream&>(file) : out;
  for (std::size_t i = 0; i < data.examples.size(); ++i) sink << prediction_record(data.examples[i], preds[i]) << '\n';
}

nlohmann::json cmd_trace(const TraceCommandOptions& opts, std::ostream& out) {
  const auto model = load_any_model(opts.decode);
  if (!model.diffusion) throw ConfigError("trace needs a diffusion checkpoint");
  const auto& net = *model.diffusion;
  AnnotatedExample ex;
  if (opts.text) {
    std::istringstream is(*opts.text);
    std::string tok;
    while (is >> tok) ex.tokens.push_back(tok);
    if (ex.tokens.empty()) throw CorpusError("trace: empty sentence");
    ex.pos_tags.assign(ex.tokens.size(), std::string(Vocabulary::kUnknown));
    apply_vocabularies(ex, net.vocabularies());
  } else if (opts.input) {
    auto data = load_dataset(*opts.input, net.vocabularies());
    if (opts.index >= data.examples.size()) {
      throw CorpusError("trace: index " + std::to_string(opts.index) + " out of range for " +
                        std::to_string(data.examples.size()) + " sentences");
    }
    ex = std::move(data.examples[opts.index]);
  } else {
    throw ConfigError("trace needs --text or --input");
  }
  const auto& cfg = net.config();
  const auto sched = schedule_for(cfg);
  const auto plan = make_ddim_plan(cfg.T, cfg.gamma);
  // Same noise stream as predict_corpus uses for this sentence.
  const std::size_t stream = opts.text ? 0 : opts.index;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(std::uint64_t{stream} >> 32)};
  std::mt19937_64 rng(seq);
  SpanTensor x_T;
  x_T.values = draw_noise(cfg.N, rng);
  x_T.lambda = cfg.lambda;
  x_T.sentence_len = ex.size();
  const auto steps = trace_denoising(ex, net, sched, plan, cfg.threshold, x_T);
  const auto j = trace_to_json(ex, steps);
  if (opts.json) {
    out << j.dump(2) << '\n';
  } else {
    out << render_trace(ex, steps);
  }
  return j;
}

void cmd_compare(const CompareCommandOptions& opts, std::ostream& out) {
  auto load = [&](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw EvaluationError("cannot open report " + p.string());
    json j;
    try {
      j = json::parse(in);
      return report_from_json(j.contains(opts.mode) ? j.at(opts.mode) : j);
    } catch (const json::exception& e) {
      throw EvaluationError("malformed report " + p.string() + ": " + e.what());
    }
  };
  const auto ours = load(opts.report);
  const auto base = load(opts.baseline);
  out << render_length_table({{opts.baseline_name, f1_row(base)}, {opts.name, f1_row(ours)}});
}

// ---------------------------------------------------------------------------
// errors

int error_exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ScheduleError*>(&e)) return 2;
  if (dynamic_cast<const CorpusError*>(&e) || dynamic_cast<const EvaluationError*>(&e) ||
      dynamic_cast<const EncoderError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const CheckpointError*>(&e)) return 4;
  if (dynamic_cast<const TrainingError*>(&e)) return 5;
  return 1;
}

nlohmann::json error_json(const std::exception& e) {
  std::string type = "error";
  switch (error_exit_code(e)) {
    case 2:
      type = "config";
      break;
    case 3:
      type = "data";
      break;
    case 4:
      type = "checkpoint";
      break;
    case 5:
      type = "training";
      break;
    default:
      break;
  }
  return {{"error", {{"type", type}, {"message", e.what()}}}};
}

}  // namespace spandiff

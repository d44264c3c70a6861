// spandiff: preprocess / train / eval / predict / trace / compare / train-baseline.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spandiff/commands.hpp"

namespace {

using spandiff::ConfigSources;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string encoder;
  std::vector<std::string> sets;
  std::string split = "test";
  std::string out;
};

std::map<std::string, std::string> parse_sets(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> out;
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw spandiff::ConfigError("--set expects key=value, got '" + kv + "'");
    out[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

ConfigSources config_sources(const Globals& g) {
  ConfigSources c;
  if (!g.config.empty()) c.file = g.config;
  c.flags = parse_sets(g.sets);
  if (g.seed) c.flags["seed"] = std::to_string(*g.seed);
  if (!g.encoder.empty()) c.flags["encoder"] = g.encoder;
  return c;
}

std::map<std::string, std::string> decode_overrides(const Globals& g) {
  auto o = parse_sets(g.sets);
  if (g.seed) o["seed"] = std::to_string(*g.seed);
  return o;
}

std::optional<std::filesystem::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aspect span extraction by diffusion over boundary coordinates"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (overrides config and environment)");
  app.add_option("--encoder", g.encoder, "toy or pretrained:<features.jsonl>");
  app.add_option("--set", g.sets, "Config override key=value (repeatable)");
  app.add_option("--split", g.split, "Data split for eval")->capture_default_str();
  app.add_option("--out", g.out, "Output path (directory for preprocess/train)");

  auto* pre = app.add_subcommand("preprocess", "Triplet files + CoNLL-U annotations -> canonical JSONL");
  spandiff::PreprocessOptions pre_opts;
  pre->add_option("--raw", pre_opts.raw_dir, "Directory with <split>_triplets.txt")->required();
  pre->add_option("--annotations", pre_opts.annotations_dir, "Directory with <split>.conllu")->required();
  pre->add_option("--splits", pre_opts.splits, "Splits to convert")->capture_default_str();

  std::string data_dir;
  bool resume = false;
  auto* train = app.add_subcommand("train", "Train the diffusion model");
  train->add_option("--data", data_dir, "Preprocessed data directory")->required();
  train->add_flag("--resume", resume, "Continue from <out>/last.ckpt");

  auto* baseline = app.add_subcommand("train-baseline", "Train the BIO sequence-labelling baseline");
  baseline->add_option("--data", data_dir, "Preprocessed data directory")->required();

  std::string checkpoint;
  std::string predictions;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a split, or a predictions file");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval->add_option("--data", data_dir, "Preprocessed data directory");
  eval->add_option("--predictions", predictions, "Prediction JSONL instead of a checkpoint");

  std::string input;
  auto* predict = app.add_subcommand("predict", "Write prediction JSONL for an input file");
  predict->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  predict->add_option("--input", input, "Canonical JSONL input")->required();

  std::string text;
  std::size_t index = 0;
  bool as_json = false;
  auto* trace = app.add_subcommand("trace", "Show decoded spans after every denoising step");
  trace->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  trace->add_option("--text", text, "Whitespace-tokenised sentence");
  trace->add_option("--input", input, "Canonical JSONL input");
  trace->add_option("--index", index, "0-based sentence index within --input");
  trace->add_flag("--json", as_json, "Emit JSON instead of a table");

  spandiff::CompareCommandOptions cmp;
  auto* compare = app.add_subcommand("compare", "Length-bucket table and relative improvement");
  compare->add_option("report", cmp.report, "Report JSON of the model")->required();
  compare->add_option("baseline", cmp.baseline, "Report JSON of the baseline")->required();
  compare->add_option("--mode", cmp.mode, "AE or AESC")->check(CLI::IsMember({"AE", "AESC"}))->capture_default_str();
  compare->add_option("--name", cmp.name, "Row label of the model")->capture_default_str();
  compare->add_option("--baseline-name", cmp.baseline_name, "Row label of the baseline")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", {{"type", "usage"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }

  try {
    if (*pre) {
      if (g.out.empty()) throw spandiff::ConfigError("preprocess needs --out");
      pre_opts.out_dir = g.out;
      spandiff::cmd_preprocess(pre_opts, std::cout);
    } else if (*train || *baseline) {
      if (g.out.empty()) throw spandiff::ConfigError("training needs --out");
      spandiff::TrainCommandOptions o{config_sources(g), data_dir, g.out, resume};
      if (*train) {
        spandiff::cmd_train(o, std::cout);
      } else {
        spandiff::cmd_train_baseline(o, std::cout);
      }
    } else if (*eval) {
      spandiff::EvalCommandOptions o;
      o.decode = {checkpoint, decode_overrides(g)};
      o.data_dir = data_dir;
      o.split = g.split;
      o.predictions = optional_path(predictions);
      o.out = optional_path(g.out);
      if (!o.predictions && (checkpoint.empty() || data_dir.empty())) {
        throw spandiff::ConfigError("eval needs --predictions, or --checkpoint with --data");
      }
      spandiff::cmd_eval(o, std::cout);
    } else if (*predict) {
      spandiff::cmd_predict({{checkpoint, decode_overrides(g)}, input, optional_path(g.out)}, std::cout);
    } else if (*trace) {
      spandiff::TraceCommandOptions o;
      o.decode = {checkpoint, decode_overrides(g)};
      o.input = optional_path(input);
      o.index = index;
      if (!text.empty()) o.text = text;
      o.json = as_json;
      spandiff::cmd_trace(o, std::cout);
    } else if (*compare) {
      spandiff::cmd_compare(cmp, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << spandiff::error_json(e).dump() << '\n';
    return spandiff::error_exit_code(e);
  }
  return 0;
}

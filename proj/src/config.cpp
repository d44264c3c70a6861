#include "spandiff/config.hpp"

#include <cctype>
#include <sstream>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <vector>

extern char** environ;

namespace spandiff {

using nlohmann::json;

std::string_view to_string(TimeMode m) { return m == TimeMode::kAdd ? "add" : "scale_shift"; }
std::string_view to_string(BoundaryLoss m) { return m == BoundaryLoss::kCategorical ? "categorical" : "binary"; }
std::string_view to_string(X0Estimate m) { return m == X0Estimate::kSoft ? "soft" : "hard"; }

TimeMode parse_time_mode(std::string_view s) {
  if (s == "add") return TimeMode::kAdd;
  if (s == "scale_shift") return TimeMode::kScaleShift;
  throw ConfigError("unknown time_mode '" + std::string(s) + "'");
}

BoundaryLoss parse_boundary_loss(std::string_view s) {
  if (s == "categorical") return BoundaryLoss::kCategorical;
  if (s == "binary") return BoundaryLoss::kBinary;
  throw ConfigError("unknown boundary_loss '" + std::string(s) + "'");
}

X0Estimate parse_x0_estimate(std::string_view s) {
  if (s == "soft") return X0Estimate::kSoft;
  if (s == "hard") return X0Estimate::kHard;
  throw ConfigError("unknown x0_estimate '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  positive(N >= 0, "N must be >= 0");
  positive(T >= 1, "T must be >= 1");
  positive(gamma >= 1 && gamma <= T, "gamma must lie in [1, T]");
  positive(lambda > 0, "lambda must be > 0");
  positive(learning_rate > 0, "learning_rate must be > 0");
  positive(batch_size >= 1, "batch_size must be >= 1");
  positive(epochs >= 0, "epochs must be >= 0");
  positive(max_steps >= 0, "max_steps must be >= 0");
  positive(weight_decay >= 0, "weight_decay must be >= 0");
  positive(clip_norm >= 0, "clip_norm must be >= 0");
  positive(hidden_size >= 2 && hidden_size % 2 == 0, "hidden_size must be even and >= 2");
  positive(pos_dim >= 1 && dep_dim >= 1 && head_hidden >= 1, "embedding sizes must be >= 1");
  positive(gcn_layers >= 1, "gcn_layers must be >= 1");
  positive(synta_layers >= 0, "synta_layers must be >= 0");
  positive(max_len >= 3, "max_len must be >= 3");
  positive(threshold >= 0 && threshold < 1, "threshold must lie in [0, 1)");
  positive(encoder == "toy" || encoder.rfind("pretrained:", 0) == 0, "encoder must be 'toy' or 'pretrained:<path>'");
}

json to_json(const TrainConfig& c) {
  json j;
  j["N"] = c.N;
  j["T"] = c.T;
  j["gamma"] = c.gamma;
  j["lambda"] = c.lambda;
  j["schedule_kind"] = std::string(to_string(c.schedule_kind));
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["weight_decay"] = c.weight_decay;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["clip_norm"] = c.clip_norm;
  j["boundary_loss"] = std::string(to_string(c.boundary_loss));
  j["seed"] = c.seed;
  j["encoder"] = c.encoder;
  j["hidden_size"] = c.hidden_size;
  j["pos_dim"] = c.pos_dim;
  j["dep_dim"] = c.dep_dim;
  j["head_hidden"] = c.head_hidden;
  j["gcn_layers"] = c.gcn_layers;
  j["synta_layers"] = c.synta_layers;
  j["time_mode"] = std::string(to_string(c.time_mode));
  j["x0_estimate"] = std::string(to_string(c.x0_estimate));
  j["max_len"] = c.max_len;
  j["init_scale"] = c.init_scale;
  j["threshold"] = c.threshold;
  return j;
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      out = static_cast<T>(std::stod(std::string(v), &used));
      if (used != v.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("config key '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
    }
  } else {
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
    }
  }
  return out;
}

// One setter per key, taking the textual value.
using Setter = std::function<void(TrainConfig&, std::string_view key, std::string_view value)>;

template <typename T>
Setter number(T TrainConfig::*field) {
  return [field](TrainConfig& c, std::string_view k, std::string_view v) { c.*field = parse_number<T>(k, v); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"N", number(&TrainConfig::N)},
      {"T", number(&TrainConfig::T)},
      {"gamma", number(&TrainConfig::gamma)},
      {"lambda", number(&TrainConfig::lambda)},
      {"schedule_kind",
       [](TrainConfig& c, std::string_view, std::string_view v) { c.schedule_kind = parse_schedule_kind(v); }},
      {"learning_rate", number(&TrainConfig::learning_rate)},
      {"batch_size", number(&TrainConfig::batch_size)},
      {"epochs", number(&TrainConfig::epochs)},
      {"max_steps", number(&TrainConfig::max_steps)},
      {"weight_decay", number(&TrainConfig::weight_decay)},
      {"adam_beta1", number(&TrainConfig::adam_beta1)},
      {"adam_beta2", number(&TrainConfig::adam_beta2)},
      {"adam_eps", number(&TrainConfig::adam_eps)},
      {"clip_norm", number(&TrainConfig::clip_norm)},
      {"boundary_loss",
       [](TrainConfig& c, std::string_view, std::string_view v) { c.boundary_loss = parse_boundary_loss(v); }},
      {"seed", number(&TrainConfig::seed)},
      {"encoder", [](TrainConfig& c, std::string_view, std::string_view v) { c.encoder = std::string(v); }},
      {"hidden_size", number(&TrainConfig::hidden_size)},
      {"pos_dim", number(&TrainConfig::pos_dim)},
      {"dep_dim", number(&TrainConfig::dep_dim)},
      {"head_hidden", number(&TrainConfig::head_hidden)},
      {"gcn_layers", number(&TrainConfig::gcn_layers)},
      {"synta_layers", number(&TrainConfig::synta_layers)},
      {"time_mode", [](TrainConfig& c, std::string_view, std::string_view v) { c.time_mode = parse_time_mode(v); }},
      {"x0_estimate",
       [](TrainConfig& c, std::string_view, std::string_view v) { c.x0_estimate = parse_x0_estimate(v); }},
      {"max_len", number(&TrainConfig::max_len)},
      {"init_scale", number(&TrainConfig::init_scale)},
      {"threshold", number(&TrainConfig::threshold)},
  };
  return table;
}

std::string json_scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  throw ConfigError("config values must be strings or numbers, got " + v.dump());
}

}  // namespace

void apply_override(TrainConfig& c, std::string_view key, std::string_view value) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second(c, key, value);
}

TrainConfig apply_json(TrainConfig base, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) apply_override(base, key, json_scalar_text(value));
  return base;
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config file " + path.string() + ": " + e.what());
  }
  return apply_json(std::move(base), j);
}

std::map<std::string, std::string> environment_overrides() {
  constexpr std::string_view kPrefix = "SPANDIFF_";
  std::map<std::string, std::string> out;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view entry(*e);
    if (entry.substr(0, kPrefix.size()) != kPrefix) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string upper(entry.substr(kPrefix.size(), eq - kPrefix.size()));
    // Match case-insensitively against known keys; unrelated SPANDIFF_*
    // variables (e.g. data locations) are ignored.
    for (const auto& [key, setter] : setters()) {
      std::string k = key;
      for (auto& ch : k) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      if (k == upper) out[key] = std::string(entry.substr(eq + 1));
    }
  }
  return out;
}

TrainConfig resolve_config(const std::filesystem::path* config_file, const std::map<std::string, std::string>& env,
                           const std::map<std::string, std::string>& flags) {
  TrainConfig c;
  if (config_file != nullptr) c = load_config_file(*config_file, c);
  for (const auto& [k, v] : env) apply_override(c, k, v);
  for (const auto& [k, v] : flags) apply_override(c, k, v);
  c.validate();
  return c;
}

}  // namespace spandiff

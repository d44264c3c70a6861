#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "spandiff/schedule.hpp"

namespace spandiff {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TimeMode { kAdd, kScaleShift };
enum class BoundaryLoss { kCategorical, kBinary };
enum class X0Estimate { kSoft, kHard };

std::string_view to_string(TimeMode m);
std::string_view to_string(BoundaryLoss m);
std::string_view to_string(X0Estimate m);
TimeMode parse_time_mode(std::string_view s);
BoundaryLoss parse_boundary_loss(std::string_view s);
X0Estimate parse_x0_estimate(std::string_view s);

/// Every tunable knob of a run. Keys in the config file, the environment
/// (SPANDIFF_<KEY in upper case>) and `--set key=value` share these names.
struct TrainConfig {
  // diffusion
  int N = 0;  // 0: derive from the training set (max gold aspects per sentence)
  int T = 1000;
  int gamma = 5;
  double lambda = 1.0;
  ScheduleKind schedule_kind = ScheduleKind::kCosine;

  // optimisation
  double learning_rate = 2e-4;
  int batch_size = 16;
  int epochs = 100;
  int max_steps = 0;  // 0: no cap
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  BoundaryLoss boundary_loss = BoundaryLoss::kCategorical;
  std::uint64_t seed = 42;

  // network
  std::string encoder = "toy";
  int hidden_size = 64;
  int pos_dim = 16;
  int dep_dim = 16;
  int head_hidden = 64;
  int gcn_layers = 2;
  int synta_layers = 2;
  TimeMode time_mode = TimeMode::kScaleShift;
  X0Estimate x0_estimate = X0Estimate::kSoft;
  int max_len = 256;
  double init_scale = 1.0;

  // decoding
  double threshold = 0.0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Applies the keys present in `j` on top of `base`. Unknown keys are an error.
TrainConfig apply_json(TrainConfig base, const nlohmann::json& j);
/// Applies one `key=value` override; the value is parsed per the key's type.
void apply_override(TrainConfig& c, std::string_view key, std::string_view value);

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});

/// Reads SPANDIFF_<KEY> variables from the process environment.
std::map<std::string, std::string> environment_overrides();

/// Resolution order, lowest to highest: defaults, config file, environment,
/// command-line flags.
TrainConfig resolve_config(const std::filesystem::path* config_file, const std::map<std::string, std::string>& env,
                           const std::map<std::string, std::string>& flags);

}  // namespace spandiff

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dp2fl/aggregation.hpp"
#include "dp2fl/data_synth.hpp"
#include "dp2fl/surrogate_model.hpp"

namespace dp2fl {

enum class Method { kDp2fl, kLocal, kFedAvgPrompt, kFedProxPrompt };

std::string_view method_name(Method m);
/// Throws ConfigError on unknown names.
Method parse_method(std::string_view name);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int num_clients = 10;
  int rounds = 10;
  ModelDims dims;
  SamplerConfig sampler;
  TrainHyper train;  // shuffle_seed is derived per client and round
  AggregationParams agg;
  Method method = Method::kDp2fl;
  double fedprox_mu = 0.01;
  double logit_scale = 10.0;
  double mean_radius = 3.0;
  double noise_sigma = 1.0;
  double prompt_init_scale = 0.02;
  std::string output_dir = "out";
  int threads = 0;  // 0 = auto

  /// K=10, R=10 with the published training hyperparameters.
  static ExperimentConfig full_profile();
  /// K=5, R=5: the same model at a size the acceptance suite can sweep.
  static ExperimentConfig desk_profile();

  void validate() const;
};

/// Flat `key = value` text. `[section]` lines prefix following keys with
/// `section.`; `#` starts a comment. A `profile = desk|full` key, if present,
/// is applied before every other key regardless of position.
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::string& path);

/// Applies one dotted key. Throws ConfigError on unknown keys or bad values.
void apply_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);

nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Worker count: DP2FL_THREADS if set and > 0, else cfg.threads if > 0, else
/// hardware concurrency.
int resolve_threads(const ExperimentConfig& cfg);

}  // namespace dp2fl

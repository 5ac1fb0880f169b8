#include "dp2fl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>
#include <vector>

namespace dp2fl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter int_field(T ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
    c.*field = static_cast<T>(to_int(k, v));
  };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"num_clients", int_field(&ExperimentConfig::num_clients)},
      {"rounds", int_field(&ExperimentConfig::rounds)},
      {"classes", [](auto& c, auto& k, auto& v) { c.dims.classes = static_cast<int>(to_int(k, v)); }},
      {"method", [](auto& c, auto&, auto& v) { c.method = parse_method(v); }},
      {"logit_scale", [](auto& c, auto& k, auto& v) { c.logit_scale = to_double(k, v); }},
      {"output_dir", [](auto& c, auto&, auto& v) { c.output_dir = v; }},
      {"threads", int_field(&ExperimentConfig::threads)},
      {"dims.input", [](auto& c, auto& k, auto& v) { c.dims.input = static_cast<int>(to_int(k, v)); }},
      {"dims.embedding", [](auto& c, auto& k, auto& v) { c.dims.embedding = static_cast<int>(to_int(k, v)); }},
      {"dims.task_prompt", [](auto& c, auto& k, auto& v) { c.dims.task_prompt = static_cast<int>(to_int(k, v)); }},
      {"dims.image_prompt", [](auto& c, auto& k, auto& v) { c.dims.image_prompt = static_cast<int>(to_int(k, v)); }},
      {"dims.feature", [](auto& c, auto& k, auto& v) { c.dims.feature = static_cast<int>(to_int(k, v)); }},
      {"sampler.shot", [](auto& c, auto& k, auto& v) { c.sampler.shot = static_cast<int>(to_int(k, v)); }},
      {"sampler.drop_frac", [](auto& c, auto& k, auto& v) { c.sampler.drop_frac = to_double(k, v); }},
      {"sampler.retain_frac", [](auto& c, auto& k, auto& v) { c.sampler.retain_frac = to_double(k, v); }},
      {"sampler.dominant_frac", [](auto& c, auto& k, auto& v) { c.sampler.dominant_frac = to_double(k, v); }},
      {"sampler.val_per_class", [](auto& c, auto& k, auto& v) { c.sampler.val_per_class = static_cast<int>(to_int(k, v)); }},
      {"sampler.test_per_class", [](auto& c, auto& k, auto& v) { c.sampler.test_per_class = static_cast<int>(to_int(k, v)); }},
      {"sampler.dominant_additive", [](auto& c, auto& k, auto& v) { c.sampler.dominant_additive = to_bool(k, v); }},
      {"sampler.test_skewed", [](auto& c, auto& k, auto& v) { c.sampler.test_skewed = to_bool(k, v); }},
      {"train.learning_rate", [](auto& c, auto& k, auto& v) { c.train.learning_rate = to_double(k, v); }},
      {"train.epochs", [](auto& c, auto& k, auto& v) { c.train.epochs = static_cast<int>(to_int(k, v)); }},
      {"train.batch_size", [](auto& c, auto& k, auto& v) { c.train.batch_size = static_cast<int>(to_int(k, v)); }},
      {"agg.alpha", [](auto& c, auto& k, auto& v) { c.agg.alpha = to_double(k, v); }},
      {"agg.beta", [](auto& c, auto& k, auto& v) { c.agg.beta = to_double(k, v); }},
      {"agg.gamma",
       [](auto& c, auto& k, auto& v) {
         if (v == "adaptive") {
           c.agg.gamma_mode = GammaMode::kAdaptive;
         } else {
           c.agg.gamma_mode = GammaMode::kFixed;
           c.agg.gamma_fixed = to_double(k, v);
         }
       }},
      {"agg.distance_floor", [](auto& c, auto& k, auto& v) { c.agg.distance_floor = to_double(k, v); }},
      {"agg.zero_sum_floor", [](auto& c, auto& k, auto& v) { c.agg.zero_sum_floor = to_double(k, v); }},
      {"agg.conditioning_floor", [](auto& c, auto& k, auto& v) { c.agg.conditioning_floor = to_double(k, v); }},
      {"task.mean_radius", [](auto& c, auto& k, auto& v) { c.mean_radius = to_double(k, v); }},
      {"task.noise_sigma", [](auto& c, auto& k, auto& v) { c.noise_sigma = to_double(k, v); }},
      {"init.scale", [](auto& c, auto& k, auto& v) { c.prompt_init_scale = to_double(k, v); }},
      {"baseline.mu", [](auto& c, auto& k, auto& v) { c.fedprox_mu = to_double(k, v); }},
  };
  return table;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kDp2fl: return "dp2fl";
    case Method::kLocal: return "local";
    case Method::kFedAvgPrompt: return "fedavg_prompt";
    case Method::kFedProxPrompt: return "fedprox_prompt";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::kDp2fl, Method::kLocal, Method::kFedAvgPrompt, Method::kFedProxPrompt})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

ExperimentConfig ExperimentConfig::full_profile() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::desk_profile() {
  ExperimentConfig c;
  c.num_clients = 5;
  c.rounds = 5;
  return c;
}

void ExperimentConfig::validate() const {
  if (num_clients < 2) throw ConfigError("config: num_clients must be >= 2");
  if (rounds < 0) throw ConfigError("config: rounds must be >= 0");
  if (threads < 0) throw ConfigError("config: threads must be >= 0");
  if (!(fedprox_mu >= 0.0)) throw ConfigError("config: baseline.mu must be >= 0");
  if (!(prompt_init_scale >= 0.0)) throw ConfigError("config: init.scale must be >= 0");
  if (!(logit_scale > 0.0)) throw ConfigError("config: logit_scale must be > 0");
  if (dims.input < 2 || dims.classes < 2) throw ConfigError("config: need classes >= 2 and dims.input >= 2");
  try {
    dims.validate();
    train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  sampler.validate();
  agg.validate();
  if (!(mean_radius >= 0.0) || !(noise_sigma > 0.0))
    throw ConfigError("config: task.mean_radius >= 0 and task.noise_sigma > 0 required");
}

void apply_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "profile") {
    if (value == "desk")
      cfg = ExperimentConfig::desk_profile();
    else if (value == "full")
      cfg = ExperimentConfig::full_profile();
    else
      throw ConfigError("config: unknown profile '" + value + "'");
    return;
  }
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

ExperimentConfig parse_config(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    entries.emplace_back(std::move(key), value);
  }

  ExperimentConfig cfg;
  for (const auto& [k, v] : entries)
    if (k == "profile") apply_config_key(cfg, k, v);
  for (const auto& [k, v] : entries)
    if (k != "profile") apply_config_key(cfg, k, v);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["num_clients"] = c.num_clients;
  j["rounds"] = c.rounds;
  j["classes"] = c.dims.classes;
  j["method"] = std::string(method_name(c.method));
  j["logit_scale"] = c.logit_scale;
  j["dims"] = {{"input", c.dims.input},
               {"embedding", c.dims.embedding},
               {"task_prompt", c.dims.task_prompt},
               {"image_prompt", c.dims.image_prompt},
               {"feature", c.dims.feature}};
  j["sampler"] = {{"shot", c.sampler.shot},
                  {"drop_frac", c.sampler.drop_frac},
                  {"retain_frac", c.sampler.retain_frac},
                  {"dominant_frac", c.sampler.dominant_frac},
                  {"val_per_class", c.sampler.val_per_class},
                  {"test_per_class", c.sampler.test_per_class},
                  {"dominant_additive", c.sampler.dominant_additive},
                  {"test_skewed", c.sampler.test_skewed}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size}};
  j["agg"] = {{"alpha", c.agg.alpha},
              {"beta", c.agg.beta},
              {"gamma", c.agg.gamma_mode == GammaMode::kAdaptive ? nlohmann::json("adaptive")
                                                                 : nlohmann::json(c.agg.gamma_fixed)},
              {"distance_floor", c.agg.distance_floor},
              {"zero_sum_floor", c.agg.zero_sum_floor},
              {"conditioning_floor", c.agg.conditioning_floor}};
  j["task"] = {{"mean_radius", c.mean_radius}, {"noise_sigma", c.noise_sigma}};
  j["init"] = {{"scale", c.prompt_init_scale}};
  j["baseline"] = {{"mu", c.fedprox_mu}};
  return j;
}

int resolve_threads(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("DP2FL_THREADS"); env && *env) {
    const std::string v(env);
    long long n = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), n);
    if (res.ec == std::errc() && n > 0) return static_cast<int>(n);
  }
  if (cfg.threads > 0) return cfg.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace dp2fl

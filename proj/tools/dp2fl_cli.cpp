#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dp2fl/harness.hpp"
#include "dp2fl/selftest.hpp"

#ifdef DP2FL_MUTATION_HOOKS
#include "dp2fl/aggregation.hpp"
#endif

namespace fs = std::filesystem;
using namespace dp2fl;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value); desk profile if omitted");
  cmd->add_option("--set", f.overrides, "Override a config key, e.g. --set rounds=3")
      ->allow_extra_args(false);
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig cfg = ExperimentConfig::desk_profile();
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw ConfigError("config file not found: " + f.config);
    cfg = load_config(f.config);
  }
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::uint64_t parse_seed(const std::string& s) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad seed '" + s + "'");
}

// "0..9" or "1,4,7"
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = parse_seed(text.substr(0, dots));
    const auto hi = parse_seed(text.substr(dots + 2));
    if (hi < lo) throw ConfigError("empty seed range '" + text + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  } else {
    for (const auto& s : split(text, ',')) seeds.push_back(parse_seed(s));
  }
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

int cmd_run(const CommonFlags& f, const std::string& out, const std::string& seed,
            const std::string& method) {
  ExperimentConfig cfg = resolve_config(f);
  if (!seed.empty()) cfg.seed = parse_seed(seed);
  if (!method.empty()) cfg.method = parse_method(method);
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
  const ExperimentResult res = run_method(cfg);
  write_run_outputs(res, dir);
  const MeanMetrics m = mean_metrics(res.metrics.back().personalized);
  std::cout << method_name(cfg.method) << " seed " << cfg.seed << " after " << cfg.rounds
            << " rounds: mean accuracy " << format_number(m.accuracy);
  if (res.metrics.back().global)
    std::cout << ", global model " << format_number(mean_metrics(*res.metrics.back().global).accuracy);
  std::cout << "\nwrote " << dir.string() << "\n";
  return 0;
}

int cmd_compare(const CommonFlags& f, const std::string& out, const std::string& methods_text,
                const std::string& seeds_text) {
  const ExperimentConfig cfg = resolve_config(f);
  std::vector<Method> methods;
  for (const auto& m : split(methods_text, ',')) methods.push_back(parse_method(m));
  if (methods.empty()) throw ConfigError("no methods given");
  const auto seeds = parse_seeds(seeds_text);
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
  fs::create_directories(dir);
  const ComparisonReport report = run_comparison(cfg, methods, seeds, dir / "runs");

  std::ostringstream rows, agg;
  write_comparison_csv(rows, report);
  write_comparison_aggregate_csv(agg, report);
  write_text(dir / "comparison.csv", rows.str());
  write_text(dir / "comparison_aggregate.csv", agg.str());

  std::cout << std::left << std::setw(16) << "method" << std::setw(7) << "seeds" << std::setw(18)
            << "accuracy" << std::setw(18) << "micro_f1" << std::setw(18) << "macro_f1"
            << "global_acc\n";
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& a : report.aggregates) {
    auto pm = [](double m, double s) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(4) << m << " +- " << s;
      return os.str();
    };
    std::cout << std::setw(16) << method_name(a.method) << std::setw(7) << a.seeds
              << std::setw(18) << pm(a.mean_acc, a.std_acc) << std::setw(18)
              << pm(a.mean_micro_f1, a.std_micro_f1) << std::setw(18)
              << pm(a.mean_macro_f1, a.std_macro_f1);
    if (a.mean_global_acc) std::cout << *a.mean_global_acc;
    else std::cout << "-";
    std::cout << '\n';
  }
  std::cout << "wrote " << (dir / "comparison.csv").string() << "\n";
  return 0;
}

int cmd_new_client(const CommonFlags& f, const std::string& out, int join_round,
                   const std::string& init, const std::string& seeds_text) {
  const ExperimentConfig cfg = resolve_config(f);
  const int J = join_round < 0 ? cfg.rounds : join_round;
  if (J > cfg.rounds)
    throw ConfigError("--join-round " + std::to_string(J) + " exceeds rounds " +
                      std::to_string(cfg.rounds));
  std::vector<InitMode> modes;
  if (init == "all")
    modes = {InitMode::kGlobal, InitMode::kInitGlo, InitMode::kInit};
  else
    modes = {parse_init_mode(init)};
  std::vector<NewClientRow> rows;
  for (auto seed : parse_seeds(seeds_text)) {
    ExperimentConfig c = cfg;
    c.seed = seed;
    const auto r = run_new_client(c, J, modes);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
  fs::create_directories(dir);
  std::ostringstream csv;
  write_new_client_csv(csv, rows);
  write_text(dir / "new_client.csv", csv.str());

  std::cout << std::left << std::setw(10) << "init" << std::setw(12) << "zero_shot"
            << std::setw(12) << "ave_local" << std::setw(10) << "new" << std::setw(10)
            << "local" << "all\n"
            << std::fixed << std::setprecision(4);
  for (InitMode m : modes) {
    double z = 0, a = 0, n = 0, l = 0, all = 0;
    int count = 0;
    for (const auto& r : rows) {
      if (r.mode != m) continue;
      z += r.zero_shot.accuracy;
      a += r.ave_local_acc;
      n += r.new_after.accuracy;
      l += r.local_acc_after;
      all += r.all_acc_after;
      ++count;
    }
    std::cout << std::setw(10) << init_mode_name(m) << std::setw(12) << z / count
              << std::setw(12) << a / count << std::setw(10) << n / count << std::setw(10)
              << l / count << all / count << '\n';
  }
  std::cout << "wrote " << (dir / "new_client.csv").string() << "\n";
  return 0;
}

int cmd_selftest() {
#ifdef DP2FL_MUTATION_HOOKS
  testing::set_task_weight_mutation(true);
  std::cout << "task-weight mutation enabled\n";
#endif
  return print_checks(std::cout, run_selftest()) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated prompt learning simulator"};
  app.require_subcommand(1);

  CommonFlags run_flags, cmp_flags, nc_flags;
  std::string run_out, run_seed, run_method_name;
  auto* run = app.add_subcommand("run", "Run one experiment and write its outputs");
  add_common(run, run_flags);
  run->add_option("--out", run_out, "Output directory");
  run->add_option("--seed", run_seed, "Experiment seed");
  run->add_option("--method", run_method_name, "dp2fl, local, fedavg_prompt or fedprox_prompt");

  std::string cmp_out, cmp_methods = "dp2fl,local,fedavg_prompt,fedprox_prompt", cmp_seeds = "0..9";
  auto* compare = app.add_subcommand("compare", "Run a method x seed grid");
  add_common(compare, cmp_flags);
  compare->add_option("--out", cmp_out, "Output directory");
  compare->add_option("--methods", cmp_methods, "Comma-separated methods")->capture_default_str();
  compare->add_option("--seeds", cmp_seeds, "Seed list (1,2,3) or range (0..9)")->capture_default_str();

  std::string nc_out, nc_init = "all", nc_seeds = "0";
  int nc_join = -1;
  auto* newc = app.add_subcommand("new-client", "Add a client to a trained federation");
  add_common(newc, nc_flags);
  newc->add_option("--out", nc_out, "Output directory");
  newc->add_option("--join-round", nc_join, "Rounds trained before the client joins (default: all)");
  newc->add_option("--init", nc_init, "global, init, initglo or all")->capture_default_str();
  newc->add_option("--seeds", nc_seeds, "Seed list or range")->capture_default_str();

  auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) return cmd_run(run_flags, run_out, run_seed, run_method_name);
    if (*compare) return cmd_compare(cmp_flags, cmp_out, cmp_methods, cmp_seeds);
    if (*newc) return cmd_new_client(nc_flags, nc_out, nc_join, nc_init, nc_seeds);
    if (*selftest) return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

#include "dp2fl/harness.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dp2fl/parallel.hpp"

namespace dp2fl {

namespace fs = std::filesystem;

namespace {

nlohmann::json metrics_json(const ClientMetrics& m) {
  return {{"client_id", m.client_id},
          {"accuracy", m.test.accuracy},
          {"micro_f1", m.test.micro_f1},
          {"macro_f1", m.test.macro_f1},
          {"val_loss", m.val_loss}};
}

nlohmann::json mean_json(const MeanMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"micro_f1", m.micro_f1},
          {"macro_f1", m.macro_f1},
          {"val_loss", m.val_loss}};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("write failed: " + path.string());
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(v.size() - 1))};
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

MeanMetrics mean_metrics(const std::vector<ClientMetrics>& clients) {
  MeanMetrics m;
  if (clients.empty()) return m;
  for (const auto& c : clients) {
    m.accuracy += c.test.accuracy;
    m.micro_f1 += c.test.micro_f1;
    m.macro_f1 += c.test.macro_f1;
    m.val_loss += c.val_loss;
  }
  const double n = static_cast<double>(clients.size());
  m.accuracy /= n;
  m.micro_f1 /= n;
  m.macro_f1 /= n;
  m.val_loss /= n;
  return m;
}

void write_metrics_csv(std::ostream& os, const ExperimentResult& res) {
  os << "method,seed,round,client_id,split,accuracy,micro_f1,macro_f1,val_loss\n";
  const std::string prefix =
      std::string(method_name(res.config.method)) + "," + std::to_string(res.config.seed) + ",";
  auto row = [&](int round, const ClientMetrics& m, const char* split) {
    os << prefix << round << ',' << m.client_id << ',' << split << ','
       << format_number(m.test.accuracy) << ',' << format_number(m.test.micro_f1) << ','
       << format_number(m.test.macro_f1) << ',' << format_number(m.val_loss) << '\n';
  };
  for (const auto& rm : res.metrics) {
    for (const auto& m : rm.personalized) row(rm.round, m, "test");
    if (rm.global)
      for (const auto& m : *rm.global) row(rm.round, m, "global");
  }
}

nlohmann::json summary_json(const ExperimentResult& res) {
  nlohmann::json j;
  j["method"] = std::string(method_name(res.config.method));
  j["seed"] = res.config.seed;
  j["config"] = config_to_json(res.config);
  j["messages"] = res.messages;
  auto rounds = nlohmann::json::array();
  for (const auto& rm : res.metrics) {
    nlohmann::json r;
    r["round"] = rm.round;
    r["personalized"] = nlohmann::json::array();
    for (const auto& m : rm.personalized) r["personalized"].push_back(metrics_json(m));
    r["mean_personalized"] = mean_json(mean_metrics(rm.personalized));
    if (rm.global) {
      r["global"] = nlohmann::json::array();
      for (const auto& m : *rm.global) r["global"].push_back(metrics_json(m));
      r["mean_global"] = mean_json(mean_metrics(*rm.global));
    }
    rounds.push_back(std::move(r));
  }
  j["rounds"] = std::move(rounds);
  if (!res.metrics.empty()) {
    const auto& last = res.metrics.back();
    j["final"]["personalized"] = mean_json(mean_metrics(last.personalized));
    if (last.global) j["final"]["global"] = mean_json(mean_metrics(*last.global));
  }
  return j;
}

std::string round_file_name(int round) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "round_%04d.json", round);
  return buf;
}

void write_run_outputs(const ExperimentResult& res, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream csv;
  write_metrics_csv(csv, res);
  write_file(dir / "metrics.csv", csv.str());
  write_file(dir / "summary.json", summary_json(res).dump(2) + "\n");
  for (const auto& rec : res.records)
    write_file(dir / round_file_name(rec.round), to_json(rec).dump(2) + "\n");
}

ComparisonAggregate aggregate_rows(Method method, const std::vector<ComparisonRow>& rows) {
  std::vector<double> acc, micro, macro, global;
  for (const auto& r : rows) {
    if (r.method != method) continue;
    acc.push_back(r.personalized.accuracy);
    micro.push_back(r.personalized.micro_f1);
    macro.push_back(r.personalized.macro_f1);
    if (r.global) global.push_back(r.global->accuracy);
  }
  ComparisonAggregate a;
  a.method = method;
  a.seeds = static_cast<int>(acc.size());
  std::tie(a.mean_acc, a.std_acc) = mean_std(acc);
  std::tie(a.mean_micro_f1, a.std_micro_f1) = mean_std(micro);
  std::tie(a.mean_macro_f1, a.std_macro_f1) = mean_std(macro);
  if (!global.empty() && global.size() == acc.size()) a.mean_global_acc = mean_std(global).first;
  return a;
}

ComparisonReport run_comparison(const ExperimentConfig& base, const std::vector<Method>& methods,
                                const std::vector<std::uint64_t>& seeds,
                                const std::optional<fs::path>& out_dir) {
  if (methods.empty() || seeds.empty())
    throw InvalidArgument("run_comparison: need at least one method and one seed");
  ComparisonReport report;
  report.rows.resize(methods.size() * seeds.size());
  parallel_for(report.rows.size(), resolve_threads(base), [&](std::size_t cell) {
    ExperimentConfig cfg = base;
    cfg.method = methods[cell / seeds.size()];
    cfg.seed = seeds[cell % seeds.size()];
    const ExperimentResult res = run_method(cfg);
    auto& row = report.rows[cell];
    row.method = cfg.method;
    row.seed = cfg.seed;
    row.personalized = mean_metrics(res.metrics.back().personalized);
    if (res.metrics.back().global) row.global = mean_metrics(*res.metrics.back().global);
    if (out_dir)
      write_run_outputs(res, *out_dir / std::string(method_name(cfg.method)) /
                                 ("seed_" + std::to_string(cfg.seed)));
  });
  for (Method m : methods) report.aggregates.push_back(aggregate_rows(m, report.rows));
  return report;
}

void write_comparison_csv(std::ostream& os, const ComparisonReport& report) {
  os << "method,seed,mean_acc,mean_micro_f1,mean_macro_f1\n";
  for (const auto& r : report.rows) {
    os << method_name(r.method) << ',' << r.seed << ',' << format_number(r.personalized.accuracy)
       << ',' << format_number(r.personalized.micro_f1) << ','
       << format_number(r.personalized.macro_f1) << '\n';
  }
}

void write_comparison_aggregate_csv(std::ostream& os, const ComparisonReport& report) {
  os << "method,seeds,mean_acc,std_acc,mean_micro_f1,std_micro_f1,mean_macro_f1,std_macro_f1,"
        "mean_global_acc\n";
  for (const auto& a : report.aggregates) {
    os << method_name(a.method) << ',' << a.seeds << ',' << format_number(a.mean_acc) << ','
       << format_number(a.std_acc) << ',' << format_number(a.mean_micro_f1) << ','
       << format_number(a.std_micro_f1) << ',' << format_number(a.mean_macro_f1) << ','
       << format_number(a.std_macro_f1) << ','
       << (a.mean_global_acc ? format_number(*a.mean_global_acc) : std::string()) << '\n';
  }
}

InitMode parse_init_mode(std::string_view name) {
  for (InitMode m : {InitMode::kGlobal, InitMode::kInit, InitMode::kInitGlo})
    if (init_mode_name(m) == name) return m;
  throw ConfigError("unknown init mode '" + std::string(name) + "'");
}

std::vector<NewClientRow> run_new_client(const ExperimentConfig& cfg, int join_round,
                                         const std::vector<InitMode>& modes) {
  if (join_round < 0 || join_round > cfg.rounds)
    throw ConfigError("join round must be in [0, rounds]");
  Federation base(cfg);
  for (int r = 0; r < join_round; ++r) base.run_round();

  const int K = cfg.num_clients;
  const ClientDataset newcomer = make_new_client(base.fixture().task, cfg.seed, K, cfg.sampler);

  double ave_local = 0.0;
  for (int k = 0; k < K; ++k) ave_local += base.client_metrics_on(k, newcomer.test).test.accuracy;
  ave_local /= K;

  std::vector<NewClientRow> rows;
  for (InitMode mode : modes) {
    Federation fed(base);
    fed.add_client(newcomer, mode);
    NewClientRow row;
    row.seed = cfg.seed;
    row.mode = mode;
    row.join_round = join_round;
    row.zero_shot = fed.client_metrics_on(K, newcomer.test).test;
    row.ave_local_acc = ave_local;

    fed.run_round();
    row.new_after = fed.client_metrics_on(K, newcomer.test).test;
    Batch all_tests;
    all_tests.features = Matrix(0, cfg.dims.input);
    for (const auto& c : fed.clients()) all_tests = Batch::concat(all_tests, c.dataset.test);
    for (const auto& c : fed.clients()) {
      if (c.client_id != K)
        row.local_acc_after += fed.client_metrics_on(c.client_id, c.dataset.test).test.accuracy;
      row.all_acc_after += fed.client_metrics_on(c.client_id, all_tests).test.accuracy;
    }
    row.local_acc_after /= K;
    row.all_acc_after /= static_cast<double>(fed.clients().size());
    rows.push_back(row);
  }
  return rows;
}

void write_new_client_csv(std::ostream& os, const std::vector<NewClientRow>& rows) {
  os << "seed,init,join_round,zero_shot_acc,zero_shot_micro_f1,zero_shot_macro_f1,ave_local_acc,"
        "new_acc,local_acc,all_acc\n";
  for (const auto& r : rows) {
    os << r.seed << ',' << init_mode_name(r.mode) << ',' << r.join_round << ','
       << format_number(r.zero_shot.accuracy) << ',' << format_number(r.zero_shot.micro_f1) << ','
       << format_number(r.zero_shot.macro_f1) << ',' << format_number(r.ave_local_acc) << ','
       << format_number(r.new_after.accuracy) << ',' << format_number(r.local_acc_after) << ','
       << format_number(r.all_acc_after) << '\n';
  }
}

}  // namespace dp2fl

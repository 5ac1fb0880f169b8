#pragma once

// Experiment outputs (metrics.csv, summary.json, round_NNNN.json), the
// method x seed comparison and the new-client experiment.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dp2fl/baselines.hpp"

namespace dp2fl {

/// Shortest round-trip decimal, independent of the global locale.
std::string format_number(double v);

struct MeanMetrics {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double val_loss = 0.0;
};

MeanMetrics mean_metrics(const std::vector<ClientMetrics>& clients);

// Columns: method,seed,round,client_id,split,accuracy,micro_f1,macro_f1,val_loss.
// split is "test" for each client's own model and "global" for (PT, PD).
void write_metrics_csv(std::ostream& os, const ExperimentResult& res);
nlohmann::json summary_json(const ExperimentResult& res);

/// Writes metrics.csv, summary.json and one round_NNNN.json per record.
void write_run_outputs(const ExperimentResult& res, const std::filesystem::path& dir);

std::string round_file_name(int round);

struct ComparisonRow {
  Method method = Method::kDp2fl;
  std::uint64_t seed = 0;
  MeanMetrics personalized;
  std::optional<MeanMetrics> global;
};

struct ComparisonAggregate {
  Method method = Method::kDp2fl;
  int seeds = 0;
  double mean_acc = 0.0, std_acc = 0.0;
  double mean_micro_f1 = 0.0, std_micro_f1 = 0.0;
  double mean_macro_f1 = 0.0, std_macro_f1 = 0.0;
  std::optional<double> mean_global_acc;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;  // method-major, seeds in the given order
  std::vector<ComparisonAggregate> aggregates;
};

/// Runs every (method, seed) cell on `base` with the seed and method replaced.
/// When `out_dir` is set each cell writes its run outputs to
/// out_dir/<method>/seed_<n>/.
ComparisonReport run_comparison(const ExperimentConfig& base, const std::vector<Method>& methods,
                                const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& out_dir = {});

ComparisonAggregate aggregate_rows(Method method, const std::vector<ComparisonRow>& rows);

// comparison.csv: method,seed,mean_acc,mean_micro_f1,mean_macro_f1
void write_comparison_csv(std::ostream& os, const ComparisonReport& report);
// method,seeds,mean_acc,std_acc,mean_micro_f1,std_micro_f1,mean_macro_f1,std_macro_f1,mean_global_acc
void write_comparison_aggregate_csv(std::ostream& os, const ComparisonReport& report);

struct NewClientRow {
  std::uint64_t seed = 0;
  InitMode mode = InitMode::kGlobal;
  int join_round = 0;
  ClassificationMetrics zero_shot;  // new client's granted model on its test split
  double ave_local_acc = 0.0;       // existing personalized models on the new client's test split
  ClassificationMetrics new_after;  // new client after one more round
  double local_acc_after = 0.0;     // existing clients on their own test splits
  double all_acc_after = 0.0;       // every client on the union of all test splits
};

/// Trains cfg.num_clients clients for `join_round` rounds, then adds client
/// K once per mode and runs one more round for each.
std::vector<NewClientRow> run_new_client(const ExperimentConfig& cfg, int join_round,
                                         const std::vector<InitMode>& modes);

// new_client.csv: seed,init,join_round,zero_shot_acc,zero_shot_micro_f1,
// zero_shot_macro_f1,ave_local_acc,new_acc,local_acc,all_acc
void write_new_client_csv(std::ostream& os, const std::vector<NewClientRow>& rows);

InitMode parse_init_mode(std::string_view name);

}  // namespace dp2fl

#pragma once

// Loss-driven prompt aggregation.
//
// Global (server side): each client's task prompt is weighted by how small its
// summed validation loss across all clients is relative to the federation
// total. Local (client side): client k sorts peers into positive (improved on
// k's validation set), retained negative (worse, but within alpha of k's last
// loss) and discarded negative sets, weights positives and retained negatives
// by loss improvement per unit of prompt distance, and moves its data prompt
// toward theirs.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dp2fl/tensor.hpp"

namespace dp2fl {

/// K×K validation losses. Entry (i, j): client i's trained prompts on V_j.
struct LossMatrix {
  Matrix entries;
  int round = 0;

  std::size_t size() const { return entries.rows(); }
  /// Column j: every client's loss on V_j.
  Vector column(std::size_t j) const;
  /// Throws unless square with finite, non-negative entries.
  void validate() const;
};

struct ClientPartition {
  std::vector<int> pc;   // positive clients
  std::vector<int> rnc;  // retained negative clients
  std::vector<int> dnc;  // discarded negative clients
  friend bool operator==(const ClientPartition&, const ClientPartition&) = default;
};

enum class GammaMode { kAdaptive, kFixed };

struct AggregationParams {
  double alpha = 1.2;
  double beta = 0.2;
  GammaMode gamma_mode = GammaMode::kAdaptive;
  double gamma_fixed = 0.0;  // used when gamma_mode == kFixed
  double distance_floor = 1e-6;
  double zero_sum_floor = 1e-12;
  // Second-branch denominators below conditioning_floor × (PC mass) fall back
  // to PC-only weights. 0 disables the check.
  double conditioning_floor = 0.5;

  void validate() const;
};

struct WeightVector {
  enum class Context { kGlobalTask, kLocalData };
  Vector values;
  Context context = Context::kGlobalTask;
  int target = -1;  // client k for kLocalData
};

WeightVector global_task_weights(const LossMatrix& losses, double zero_sum_floor = 1e-12);

/// Σ_k w_k · rows_k
Vector aggregate_prompt_rows(const Matrix& rows, std::span<const double> weights);

ClientPartition classify_clients(double prev_self_loss, std::span<const double> losses_on_k,
                                 double alpha);

Vector initial_local_weights(double prev_self_loss, std::span<const double> losses_on_k,
                             const Matrix& trained_pd, std::span<const double> pd_prev_k,
                             double distance_floor);

/// Throws InvalidArgument when PC or RNC is empty.
double gamma_adaptive(std::span<const double> wtilde, const ClientPartition& part,
                      double zero_sum_floor = 1e-12);

WeightVector normalize_local_weights(std::span<const double> wtilde,
                                     const ClientPartition& part,
                                     const AggregationParams& params, double gamma);

/// Convenience overload that resolves gamma from params.
WeightVector normalize_local_weights(std::span<const double> wtilde,
                                     const ClientPartition& part,
                                     const AggregationParams& params);

Vector aggregate_data_prompt(std::span<const double> pd_prev_k, const Matrix& trained_pd,
                             std::span<const double> weights);

struct LocalAggregation {
  Vector data_prompt;
  ClientPartition partition;
  Vector initial_weights;
  WeightVector weights;
  std::optional<double> gamma;  // set only when PC and RNC are both non-empty
};

LocalAggregation local_aggregate(int k, double prev_self_loss, std::span<const double> losses_on_k,
                                 const Matrix& trained_pd, std::span<const double> pd_prev_k,
                                 const AggregationParams& params);

Vector global_data_prompt(const Matrix& trained_pd, const WeightVector& task_weights);

#ifdef DP2FL_MUTATION_HOOKS
namespace testing {
/// Corrupts global_task_weights (drops the (K-1) normalizer) while enabled.
void set_task_weight_mutation(bool enabled);
}  // namespace testing
#endif

}  // namespace dp2fl

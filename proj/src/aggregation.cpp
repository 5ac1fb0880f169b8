#include "dp2fl/aggregation.hpp"

#include <algorithm>
#include <cmath>

namespace dp2fl {

#ifdef DP2FL_MUTATION_HOOKS
namespace testing {
namespace {
bool g_task_weight_mutation = false;
}
void set_task_weight_mutation(bool enabled) { g_task_weight_mutation = enabled; }
}  // namespace testing
#endif

Vector LossMatrix::column(std::size_t j) const {
  Vector col(entries.rows());
  for (std::size_t i = 0; i < entries.rows(); ++i) col[i] = entries(i, j);
  return col;
}

void LossMatrix::validate() const {
  if (entries.rows() != entries.cols())
    throw ShapeError("loss matrix must be square, got " + std::to_string(entries.rows()) + "x" +
                     std::to_string(entries.cols()));
  for (double v : entries.data())
    if (!std::isfinite(v) || v < 0.0)
      throw InvalidArgument("loss matrix entries must be finite and >= 0");
}

void AggregationParams::validate() const {
  if (!(alpha > 1.0)) throw ConfigError("aggregation: alpha must be > 1");
  if (!(beta > 0.0) || beta > 1.0) throw ConfigError("aggregation: beta must be in (0, 1]");
  if (!(distance_floor > 0.0) || !(zero_sum_floor > 0.0))
    throw ConfigError("aggregation: floors must be positive");
  if (!(conditioning_floor >= 0.0) || conditioning_floor >= 1.0)
    throw ConfigError("aggregation: conditioning_floor must be in [0, 1)");
  if (gamma_mode == GammaMode::kFixed && !(gamma_fixed >= 0.0))
    throw ConfigError("aggregation: fixed gamma must be >= 0");
}

WeightVector global_task_weights(const LossMatrix& losses, double zero_sum_floor) {
  losses.validate();
  const std::size_t K = losses.size();
  if (K < 2) throw InvalidArgument("global_task_weights: need K >= 2");

  Vector row_sums(K, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    for (double v : losses.entries.row(i)) row_sums[i] += v;
    total += row_sums[i];
  }
  WeightVector w{Vector(K), WeightVector::Context::kGlobalTask, -1};
  if (total < zero_sum_floor) {
    std::fill(w.values.begin(), w.values.end(), 1.0 / static_cast<double>(K));
    return w;
  }
  double denom = total * static_cast<double>(K - 1);
#ifdef DP2FL_MUTATION_HOOKS
  if (testing::g_task_weight_mutation) denom = total;
#endif
  for (std::size_t k = 0; k < K; ++k) w.values[k] = (total - row_sums[k]) / denom;
  return w;
}

Vector aggregate_prompt_rows(const Matrix& rows, std::span<const double> weights) {
  require_size(weights.size(), rows.rows(), "aggregate_prompt_rows weights");
  return matvec_transposed(rows, weights);
}

ClientPartition classify_clients(double prev_self_loss, std::span<const double> losses_on_k,
                                 double alpha) {
  if (!(prev_self_loss >= 0.0)) throw InvalidArgument("classify_clients: prev_self_loss < 0");
  if (!(alpha > 1.0)) throw InvalidArgument("classify_clients: alpha must be > 1");
  ClientPartition part;
  const double tolerance = alpha * prev_self_loss;
  for (std::size_t i = 0; i < losses_on_k.size(); ++i) {
    const double l = losses_on_k[i];
    if (!(l >= 0.0)) throw InvalidArgument("classify_clients: negative loss");
    const int idx = static_cast<int>(i);
    if (l < prev_self_loss)
      part.pc.push_back(idx);
    else if (l < tolerance)
      part.rnc.push_back(idx);
    else
      part.dnc.push_back(idx);
  }
  return part;
}

Vector initial_local_weights(double prev_self_loss, std::span<const double> losses_on_k,
                             const Matrix& trained_pd, std::span<const double> pd_prev_k,
                             double distance_floor) {
  require_size(trained_pd.rows(), losses_on_k.size(), "initial_local_weights rows");
  require_size(pd_prev_k.size(), trained_pd.cols(), "initial_local_weights prompt");
  Vector w(losses_on_k.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto row = trained_pd.row(i);
    double sq = 0.0;
    for (std::size_t d = 0; d < row.size(); ++d) sq += (row[d] - pd_prev_k[d]) * (row[d] - pd_prev_k[d]);
    w[i] = (prev_self_loss - losses_on_k[i]) / std::max(std::sqrt(sq), distance_floor);
  }
  return w;
}

double gamma_adaptive(std::span<const double> wtilde, const ClientPartition& part,
                      double zero_sum_floor) {
  if (part.pc.empty() || part.rnc.empty())
    throw InvalidArgument("gamma_adaptive: PC and RNC must both be non-empty");
  double min_pc = std::abs(wtilde[part.pc.front()]);
  for (int i : part.pc) min_pc = std::min(min_pc, std::abs(wtilde[i]));
  double max_rnc = 0.0;
  for (int i : part.rnc) max_rnc = std::max(max_rnc, std::abs(wtilde[i]));
  if (max_rnc < zero_sum_floor) return 0.0;
  return (1.0 / 3.0) * min_pc / max_rnc;
}

WeightVector normalize_local_weights(std::span<const double> wtilde,
                                     const ClientPartition& part,
                                     const AggregationParams& params, double gamma) {
  const std::size_t K = wtilde.size();
  WeightVector w{Vector(K, 0.0), WeightVector::Context::kLocalData, -1};
  auto& out = w.values;

  if (part.pc.empty()) {
    const auto& rnc = part.rnc;
    if (rnc.size() == 1) {
      out[rnc.front()] = params.beta;
    } else if (rnc.size() >= 2) {
      double s = 0.0;
      for (int i : rnc) s += wtilde[i];
      const double m = static_cast<double>(rnc.size());
      if (std::abs(s) < params.zero_sum_floor) {
        for (int i : rnc) out[i] = params.beta / m;
      } else {
        for (int i : rnc) out[i] = params.beta * (s - wtilde[i]) / (s * (m - 1.0));
      }
    }
    return w;
  }

  // sgn(x) = 1 for x >= 0, so non-negative weights pass through unscaled.
  auto transform = [gamma](double x) { return x >= 0.0 ? x : gamma * x; };
  double denom = 0.0;
  for (int i : part.pc) denom += transform(wtilde[i]);
  for (int i : part.rnc) denom += transform(wtilde[i]);

  double pc_mass = 0.0;
  for (int i : part.pc) pc_mass += transform(wtilde[i]);
  // A denominator far below the PC mass turns the weights into a large
  // extrapolation; treat it like a vanishing one.
  if (denom < params.zero_sum_floor || denom < params.conditioning_floor * pc_mass) {
    double pc_sum = 0.0;
    for (int i : part.pc) pc_sum += wtilde[i];
    // pc_sum > 0 whenever PC members strictly improved with finite distance.
    if (pc_sum < params.zero_sum_floor) {
      for (int i : part.pc) out[i] = 1.0 / static_cast<double>(part.pc.size());
    } else {
      for (int i : part.pc) out[i] = wtilde[i] / pc_sum;
    }
    return w;
  }
  for (int i : part.pc) out[i] = transform(wtilde[i]) / denom;
  for (int i : part.rnc) out[i] = transform(wtilde[i]) / denom;
  return w;
}

WeightVector normalize_local_weights(std::span<const double> wtilde,
                                     const ClientPartition& part,
                                     const AggregationParams& params) {
  double gamma = 0.0;
  if (params.gamma_mode == GammaMode::kFixed)
    gamma = params.gamma_fixed;
  else if (!part.pc.empty() && !part.rnc.empty())
    gamma = gamma_adaptive(wtilde, part, params.zero_sum_floor);
  return normalize_local_weights(wtilde, part, params, gamma);
}

Vector aggregate_data_prompt(std::span<const double> pd_prev_k, const Matrix& trained_pd,
                             std::span<const double> weights) {
  require_size(weights.size(), trained_pd.rows(), "aggregate_data_prompt weights");
  require_size(pd_prev_k.size(), trained_pd.cols(), "aggregate_data_prompt prompt");
  Vector out(pd_prev_k.begin(), pd_prev_k.end());
  for (std::size_t i = 0; i < trained_pd.rows(); ++i) {
    if (weights[i] == 0.0) continue;
    const auto row = trained_pd.row(i);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += weights[i] * (row[d] - pd_prev_k[d]);
  }
  return out;
}

LocalAggregation local_aggregate(int k, double prev_self_loss, std::span<const double> losses_on_k,
                                 const Matrix& trained_pd, std::span<const double> pd_prev_k,
                                 const AggregationParams& params) {
  params.validate();
  require_size(losses_on_k.size(), trained_pd.rows(), "local_aggregate losses");
  if (k < 0 || static_cast<std::size_t>(k) >= losses_on_k.size())
    throw InvalidArgument("local_aggregate: target client out of range");

  LocalAggregation out;
  out.partition = classify_clients(prev_self_loss, losses_on_k, params.alpha);
  out.initial_weights = initial_local_weights(prev_self_loss, losses_on_k, trained_pd, pd_prev_k,
                                              params.distance_floor);
  double gamma = 0.0;
  if (!out.partition.pc.empty() && !out.partition.rnc.empty()) {
    gamma = params.gamma_mode == GammaMode::kFixed
                ? params.gamma_fixed
                : gamma_adaptive(out.initial_weights, out.partition, params.zero_sum_floor);
    out.gamma = gamma;
  }
  out.weights = normalize_local_weights(out.initial_weights, out.partition, params, gamma);
  out.weights.target = k;
  out.data_prompt = aggregate_data_prompt(pd_prev_k, trained_pd, out.weights.values);
  return out;
}

Vector global_data_prompt(const Matrix& trained_pd, const WeightVector& task_weights) {
  return aggregate_prompt_rows(trained_pd, task_weights.values);
}

}  // namespace dp2fl

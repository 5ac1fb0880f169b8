#pragma once

// Synthetic class-conditional Gaussian tasks and the label-skewed client
// sampler: drop a fraction of classes, keep a few shots per class, and give
// one randomly chosen class a much larger share of the training split.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dp2fl/surrogate_model.hpp"

namespace dp2fl {

struct TaskSpec {
  Matrix class_means;  // C × d_in
  double noise_sigma = 1.0;
  double mean_radius = 3.0;
  std::uint64_t seed = 0;

  int classes() const { return static_cast<int>(class_means.rows()); }
  int input_dim() const { return static_cast<int>(class_means.cols()); }
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct SamplerConfig {
  int shot = 16;
  double drop_frac = 0.20;
  double retain_frac = 0.25;
  double dominant_frac = 0.75;
  int val_per_class = 2;
  int test_per_class = 8;
  // When set, the dominant class gets its retained shots plus the dominant
  // share (4 + 12 under defaults) instead of the dominant share alone.
  bool dominant_additive = false;
  // When set, the test split keeps the training split's class proportions:
  // the dominant class gets test_per_class·dominant_shots/retained_shots
  // samples. When clear, every present class gets test_per_class.
  bool test_skewed = true;

  void validate() const;
  int retained_shots() const;
  int dominant_shots() const;
  int dominant_test_count() const;
};

struct ClientDataset {
  int client_id = 0;
  std::vector<int> present_classes;  // sorted ascending
  int dominant_class = 0;
  Batch train;
  Batch validation;
  Batch test;

  friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

/// Means sit on a sphere of radius mean_radius along random directions whose
/// pairwise cosine stays below a separation threshold.
TaskSpec make_task(std::uint64_t seed, int classes, int input_dim, double mean_radius,
                   double noise_sigma);

ClientDataset sample_client(const TaskSpec& task, std::uint64_t client_seed,
                            const SamplerConfig& cfg, int client_id = 0);

/// Seed used for client `client_id` under `base_seed`.
std::uint64_t client_data_seed(std::uint64_t base_seed, int client_id);

std::vector<ClientDataset> make_federation_data(const TaskSpec& task, int num_clients,
                                                std::uint64_t base_seed,
                                                const SamplerConfig& cfg);

/// The client that would have been index `existing_clients` of the federation.
ClientDataset make_new_client(const TaskSpec& task, std::uint64_t base_seed,
                              int existing_clients, const SamplerConfig& cfg);

// Archival CSV: "dp2fl-data v1", a key=value header line, the column line,
// then rows split,client_id,label,v0..v{d_in-1}.
void write_datasets_csv(std::ostream& os, const std::vector<ClientDataset>& clients,
                        const SamplerConfig& cfg);
std::vector<ClientDataset> read_datasets_csv(std::istream& is);

}  // namespace dp2fl

#pragma once

// Server/client round engine.
//
// Initialization: clients upload validation sets, the server scores the
// initial prompts on each and broadcasts prompts, validation sets and losses.
// Each round: clients train from (PT, Pd_k), score their trained prompts on
// every validation set and upload; the server aggregates PT and PD from the
// loss matrix and broadcasts PT, the loss matrix and every trained data
// prompt; each client aggregates its own Pd_k and reports its new self loss.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "dp2fl/aggregation.hpp"
#include "dp2fl/config.hpp"
#include "dp2fl/data_synth.hpp"
#include "dp2fl/surrogate_model.hpp"
#include "dp2fl/transport.hpp"

namespace dp2fl {

/// Everything every method derives from a config: backbone, task, client
/// datasets and the shared round-0 prompts.
struct FederationFixture {
  Backbone backbone;
  TaskSpec task;
  std::vector<ClientDataset> datasets;
  TaskPrompt initial_task_prompt;
  DataPrompt initial_data_prompt;
};

FederationFixture make_fixture(const ExperimentConfig& cfg);

/// Shuffle seed for one client's local training in one round.
std::uint64_t shuffle_seed_for(std::uint64_t experiment_seed, int client_id, int round);

struct ClientMetrics {
  int client_id = 0;
  ClassificationMetrics test;
  double val_loss = 0.0;
};

struct RoundMetrics {
  int round = 0;
  std::vector<ClientMetrics> personalized;
  std::optional<std::vector<ClientMetrics>> global;  // absent for local-only
};

struct ServerState {
  int round = 0;
  TaskPrompt global_task_prompt;  // PT(r)
  DataPrompt global_data_prompt;  // PD(r)
  TaskPrompt initial_task_prompt; // PT(0)
  DataPrompt initial_data_prompt; // PD(0)
  std::map<int, Batch> validation_registry;
  std::map<int, double> last_self_losses;
  int planned_rounds = 0;
};

struct ClientState {
  int client_id = 0;
  TaskPrompt task_prompt;  // starting task prompt for the next local training
  DataPrompt data_prompt;  // Pd_k
  ClientDataset dataset;
  std::map<int, Batch> peer_validations;
  double prev_self_loss = 0.0;
  std::optional<double> learning_rate_override;
};

struct ClientRoundRecord {
  int client_id = 0;
  ClientPartition partition;
  Vector initial_weights;
  Vector local_weights;
  std::optional<double> gamma;
  double prev_self_loss = 0.0;
  double post_self_loss = 0.0;
  Vector data_prompt_prev;  // Pd_k(r-1), flattened
  Vector data_prompt_new;   // Pd_k(r), flattened
  ClientMetrics metrics;         // personalized model on own test split
  ClientMetrics global_metrics;  // (PT, PD) on own test split
};

struct RoundRecord {
  int round = 0;
  LossMatrix loss_matrix;
  Vector task_weights;
  Matrix trained_task_prompts;  // K × d_t
  Matrix trained_data_prompts;  // K × d_d
  Vector task_prompt_prev;
  Vector task_prompt_new;
  Vector global_data_prompt;
  std::vector<ClientRoundRecord> clients;
  AggregationParams params;

  RoundMetrics metrics() const;
};

nlohmann::json to_json(const RoundRecord& rec);
RoundRecord round_record_from_json(const nlohmann::json& j);

enum class InitMode { kGlobal, kInit, kInitGlo };
std::string_view init_mode_name(InitMode m);

class Federation {
 public:
  /// Initialization phase over `transport` (in-process if null).
  explicit Federation(const ExperimentConfig& cfg, std::unique_ptr<Transport> transport = nullptr);
  Federation(const ExperimentConfig& cfg, FederationFixture fixture,
             std::unique_ptr<Transport> transport = nullptr);

  Federation(const Federation& other);
  Federation& operator=(const Federation&) = delete;
  Federation(Federation&&) = default;

  /// One full round. On any failure the federation is left exactly as it was.
  RoundRecord run_round();

  /// Registers a new client between rounds; it starts from the prompts
  /// selected by `mode`. Throws InvalidArgument on a duplicate id.
  void add_client(ClientDataset dataset, InitMode mode);

  /// (PT, PD) evaluated on the test split of every given dataset.
  std::vector<ClientMetrics> evaluate_global_model(const std::vector<ClientDataset>& datasets) const;

  /// Personalized and global metrics for the current state.
  RoundMetrics current_metrics() const;

  ClientMetrics client_metrics_on(int client_id, const Batch& split) const;

  const ServerState& server() const { return server_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const Backbone& backbone() const { return fixture_.backbone; }
  const FederationFixture& fixture() const { return fixture_; }
  const ExperimentConfig& config() const { return cfg_; }
  /// Protocol messages delivered so far.
  std::size_t messages() const { return messages_; }

  void set_client_learning_rate(int client_id, double lr);
  /// Called as fn(client_id, round) before each client trains; may throw.
  void set_fault_hook(std::function<void(int, int)> fn) { fault_hook_ = std::move(fn); }
  void set_threads(int threads) { threads_ = threads; }

 private:
  void initialize();
  RoundRecord execute_round(ServerState& server, std::vector<ClientState>& clients);
  std::vector<Envelope> drain(int endpoint, std::size_t expected, int round);

  ExperimentConfig cfg_;
  FederationFixture fixture_;
  std::unique_ptr<Transport> transport_;
  ServerState server_;
  std::vector<ClientState> clients_;
  std::function<void(int, int)> fault_hook_;
  int threads_ = 1;
  std::size_t messages_ = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RoundMetrics> metrics;  // index 0 = after initialization
  std::vector<RoundRecord> records;   // one per round (dp2fl only)
  std::size_t messages = 0;           // delivered protocol messages
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace dp2fl

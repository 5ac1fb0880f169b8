#pragma once

// Reference methods sharing the dp2fl fixture: local-only training,
// FedAvg over prompts, and FedProx over prompts.

#include <vector>

#include "dp2fl/protocol.hpp"

namespace dp2fl {

/// Client weights proportional to training-set size.
Vector fedavg_weights(const std::vector<ClientDataset>& datasets);

/// Value and gradient of (mu/2)·‖θ − anchor‖² over θ = [pt ; flat(pd)].
struct ProximalPenalty {
  double value = 0.0;
  Vector grad;  // d_t + d_d
};
ProximalPenalty proximal_penalty(const TaskPrompt& pt, const DataPrompt& pd,
                                 const ProximalTerm& term);

ExperimentResult run_local_only(const ExperimentConfig& cfg, const FederationFixture& fixture);
ExperimentResult run_fedavg_prompt(const ExperimentConfig& cfg, const FederationFixture& fixture);
ExperimentResult run_fedprox_prompt(const ExperimentConfig& cfg, const FederationFixture& fixture);

/// Dispatches on cfg.method (dp2fl included).
ExperimentResult run_method(const ExperimentConfig& cfg);

}  // namespace dp2fl

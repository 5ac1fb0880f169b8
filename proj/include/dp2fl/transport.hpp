#pragma once

// Protocol messages and the transport they travel over.

#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <variant>
#include <vector>

#include "dp2fl/aggregation.hpp"
#include "dp2fl/surrogate_model.hpp"

namespace dp2fl {

inline constexpr int kServerEndpoint = -1;

struct ValidationUpload {
  int client_id = 0;
  Batch validation;
};

struct InitBroadcast {
  TaskPrompt task_prompt;
  DataPrompt data_prompt;
  std::map<int, Batch> validations;
  std::map<int, double> initial_losses;
  int rounds = 0;
};

struct TrainedUpload {
  int client_id = 0;
  TaskPrompt task_prompt;
  DataPrompt data_prompt;
  Vector loss_row;  // loss on V_j for every registered j, ascending id
};

struct ServerBroadcast {
  TaskPrompt task_prompt;  // PT(r)
  LossMatrix losses;
  Matrix trained_data_prompts;  // row i = client i's trained data prompt
};

struct SelfLossReport {
  int client_id = 0;
  double loss = 0.0;
};

struct NewClientHello {
  int client_id = 0;
  Batch validation;
};

struct GlobalModelGrant {
  TaskPrompt task_prompt;
  DataPrompt data_prompt;
};

using Payload = std::variant<ValidationUpload, InitBroadcast, TrainedUpload, ServerBroadcast,
                             SelfLossReport, NewClientHello, GlobalModelGrant>;

struct Envelope {
  int round = 0;
  int sender = kServerEndpoint;
  Payload payload;
};

/// Throws ProtocolError if the payload's shapes disagree with the model dims
/// or the number of registered clients.
void validate_message(const Envelope& msg, const ModelDims& dims, std::size_t num_clients);

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(int to, Envelope msg) = 0;
  virtual std::optional<Envelope> receive(int endpoint) = 0;
  /// Drops every undelivered message.
  virtual void clear() = 0;
};

/// Synchronous, lossless, FIFO per endpoint. Thread-safe.
class InProcessTransport : public Transport {
 public:
  void send(int to, Envelope msg) override;
  std::optional<Envelope> receive(int endpoint) override;
  void clear() override;
  std::size_t pending(int endpoint) const;
  std::size_t delivered() const;

 private:
  mutable std::mutex mu_;
  std::map<int, std::deque<Envelope>> boxes_;
  std::size_t delivered_ = 0;
};

}  // namespace dp2fl

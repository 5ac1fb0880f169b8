#include "dp2fl/transport.hpp"

#include <cmath>
#include <string>
#include <type_traits>

namespace dp2fl {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ProtocolError("malformed message: " + what);
}

void check_batch(const Batch& b, const ModelDims& dims, const char* what) {
  check(!b.empty(), std::string(what) + " is empty");
  check(b.features.rows() == b.labels.size(), std::string(what) + " rows/labels disagree");
  check(b.features.cols() == static_cast<std::size_t>(dims.input),
        std::string(what) + " feature width");
  for (int y : b.labels) check(y >= 0 && y < dims.classes, std::string(what) + " label range");
}

void check_prompts(const TaskPrompt& pt, const DataPrompt& pd, const ModelDims& dims) {
  check(pt.values.size() == static_cast<std::size_t>(dims.task_prompt), "task prompt length");
  check(all_finite(pt.values), "task prompt not finite");
  check(pd.map_weights.rows() == static_cast<std::size_t>(dims.image_prompt) &&
            pd.map_weights.cols() == static_cast<std::size_t>(dims.task_prompt),
        "data prompt map shape");
  check(pd.map_bias.size() == static_cast<std::size_t>(dims.image_prompt), "data prompt bias");
  check(all_finite(pd.map_weights.data()) && all_finite(pd.map_bias), "data prompt not finite");
}

}  // namespace

void validate_message(const Envelope& msg, const ModelDims& dims, std::size_t num_clients) {
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ValidationUpload> || std::is_same_v<T, NewClientHello>) {
          check(p.client_id >= 0, "client id");
          check_batch(p.validation, dims, "validation");
        } else if constexpr (std::is_same_v<T, InitBroadcast>) {
          check_prompts(p.task_prompt, p.data_prompt, dims);
          check(p.validations.size() == num_clients, "validation count");
          check(p.initial_losses.size() == num_clients, "initial loss count");
          for (const auto& [id, v] : p.validations) check_batch(v, dims, "validation");
          check(p.rounds >= 0, "round count");
        } else if constexpr (std::is_same_v<T, TrainedUpload>) {
          check(p.client_id >= 0 && static_cast<std::size_t>(p.client_id) < num_clients,
                "uploader id");
          check_prompts(p.task_prompt, p.data_prompt, dims);
          check(p.loss_row.size() == num_clients, "loss row length");
          for (double l : p.loss_row) check(std::isfinite(l) && l >= 0.0, "loss row value");
        } else if constexpr (std::is_same_v<T, ServerBroadcast>) {
          check(p.task_prompt.values.size() == static_cast<std::size_t>(dims.task_prompt),
                "task prompt length");
          check(p.losses.entries.rows() == num_clients && p.losses.entries.cols() == num_clients,
                "loss matrix shape");
          check(p.trained_data_prompts.rows() == num_clients &&
                    p.trained_data_prompts.cols() == dims.data_prompt_size(),
                "trained data prompt matrix shape");
        } else if constexpr (std::is_same_v<T, SelfLossReport>) {
          check(std::isfinite(p.loss) && p.loss >= 0.0, "self loss value");
        } else if constexpr (std::is_same_v<T, GlobalModelGrant>) {
          check_prompts(p.task_prompt, p.data_prompt, dims);
        }
      },
      msg.payload);
}

void InProcessTransport::send(int to, Envelope msg) {
  std::lock_guard lock(mu_);
  boxes_[to].push_back(std::move(msg));
}

std::optional<Envelope> InProcessTransport::receive(int endpoint) {
  std::lock_guard lock(mu_);
  auto it = boxes_.find(endpoint);
  if (it == boxes_.end() || it->second.empty()) return std::nullopt;
  Envelope e = std::move(it->second.front());
  it->second.pop_front();
  ++delivered_;
  return e;
}

void InProcessTransport::clear() {
  std::lock_guard lock(mu_);
  boxes_.clear();
}

std::size_t InProcessTransport::pending(int endpoint) const {
  std::lock_guard lock(mu_);
  auto it = boxes_.find(endpoint);
  return it == boxes_.end() ? 0 : it->second.size();
}

std::size_t InProcessTransport::delivered() const {
  std::lock_guard lock(mu_);
  return delivered_;
}

}  // namespace dp2fl

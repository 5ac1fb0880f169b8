#include "doctest.h"
#include "dp2fl/protocol.hpp"

using namespace dp2fl;

namespace {

ExperimentConfig small_cfg(std::uint64_t seed = 0) {
  ExperimentConfig c = ExperimentConfig::desk_profile();
  c.seed = seed;
  c.num_clients = 4;
  c.rounds = 3;
  c.threads = 1;
  return c;
}

struct Snapshot {
  int round;
  Vector pt, pd;
  std::map<int, double> self_losses;
  std::vector<Vector> client_pd;
  std::vector<double> prev;
  std::size_t messages;
  bool operator==(const Snapshot&) const = default;
};

Snapshot snap(const Federation& f) {
  Snapshot s{f.server().round, f.server().global_task_prompt.values,
             f.server().global_data_prompt.flatten(), f.server().last_self_losses, {}, {},
             f.messages()};
  for (const auto& c : f.clients()) {
    s.client_pd.push_back(c.data_prompt.flatten());
    s.prev.push_back(c.prev_self_loss);
  }
  return s;
}

// Forwards everything, but truncates the loss row of one client's upload.
class CorruptingTransport : public Transport {
 public:
  explicit CorruptingTransport(int victim) : victim_(victim) {}
  void send(int to, Envelope msg) override {
    if (auto* up = std::get_if<TrainedUpload>(&msg.payload); up && up->client_id == victim_ && armed)
      up->loss_row.pop_back();
    inner_.send(to, std::move(msg));
  }
  std::optional<Envelope> receive(int endpoint) override { return inner_.receive(endpoint); }
  void clear() override { inner_.clear(); }
  bool armed = false;

 private:
  int victim_;
  InProcessTransport inner_;
};

}  // namespace

TEST_CASE("initialization distributes validation sets and losses") {
  const ExperimentConfig cfg = small_cfg();
  Federation fed(cfg);
  const auto& bb = fed.backbone();
  CHECK(fed.server().round == 0);
  for (const auto& c : fed.clients()) {
    CHECK(c.peer_validations.size() == 4);
    const double own = eval_loss(bb, fed.server().global_task_prompt,
                                 fed.server().global_data_prompt, c.dataset.validation);
    CHECK(c.prev_self_loss == own);
    CHECK(fed.server().last_self_losses.at(c.client_id) == own);
  }
  const RoundMetrics m = fed.current_metrics();
  REQUIRE(m.global.has_value());
  for (std::size_t i = 0; i < m.personalized.size(); ++i)
    CHECK(m.personalized[i].test.accuracy == (*m.global)[i].test.accuracy);
}

TEST_CASE("a round produces a consistent record") {
  Federation fed(small_cfg());
  const Vector pt_before = fed.server().global_task_prompt.values;
  const RoundRecord rec = fed.run_round();
  CHECK(rec.round == 1);
  CHECK(rec.loss_matrix.size() == 4);
  CHECK(rec.task_prompt_prev == pt_before);
  CHECK(rec.task_prompt_new == fed.server().global_task_prompt.values);
  CHECK(rec.global_data_prompt == fed.server().global_data_prompt.flatten());
  for (const auto& c : rec.clients) {
    const auto& st = fed.clients()[c.client_id];
    CHECK(c.data_prompt_new == st.data_prompt.flatten());
    CHECK(c.post_self_loss == st.prev_self_loss);
    CHECK(st.task_prompt.values == rec.task_prompt_new);
    const std::size_t total = c.partition.pc.size() + c.partition.rnc.size() + c.partition.dnc.size();
    CHECK(total == 4);
  }
  const RoundRecord back = round_record_from_json(to_json(rec));
  CHECK(to_json(back).dump() == to_json(rec).dump());
}

TEST_CASE("loss matrix orientation canary") {
  Federation fed(small_cfg(5));
  fed.run_round();
  const auto pt = fed.server().global_task_prompt;
  const auto pd2 = fed.clients()[2].data_prompt;
  fed.set_client_learning_rate(2, 0.0);
  const RoundRecord rec = fed.run_round();
  for (std::size_t j = 0; j < 4; ++j) {
    const double expected = eval_loss(fed.backbone(), pt, pd2, fed.clients()[j].dataset.validation);
    CHECK(rec.loss_matrix.entries(2, j) == expected);
  }
  // The untrained row is not what a transposed matrix would hold.
  bool differs = false;
  for (std::size_t j = 0; j < 4; ++j)
    differs = differs || rec.loss_matrix.entries(j, 2) != rec.loss_matrix.entries(2, j);
  CHECK(differs);
  for (std::size_t d = 0; d < pt.values.size(); ++d)
    CHECK(rec.trained_task_prompts(2, d) == pt.values[d]);
}

TEST_CASE("a failing client leaves the federation untouched") {
  const ExperimentConfig cfg = small_cfg(2);
  Federation fed(cfg);
  fed.run_round();
  const Snapshot before = snap(fed);
  fed.set_fault_hook([](int client, int round) {
    if (client == 3 && round == 2) throw std::runtime_error("injected");
  });
  CHECK_THROWS(fed.run_round());
  CHECK(snap(fed) == before);
  fed.set_fault_hook(nullptr);
  const RoundRecord retried = fed.run_round();

  Federation clean(cfg);
  clean.run_round();
  CHECK(to_json(clean.run_round()).dump() == to_json(retried).dump());
}

TEST_CASE("malformed uploads are rejected atomically") {
  const ExperimentConfig cfg = small_cfg(3);
  auto transport = std::make_unique<CorruptingTransport>(1);
  auto* raw = transport.get();
  Federation fed(cfg, std::move(transport));
  fed.run_round();
  const Snapshot before = snap(fed);
  raw->armed = true;
  CHECK_THROWS_AS(fed.run_round(), ProtocolError);
  CHECK(snap(fed) == before);
  raw->armed = false;
  CHECK_NOTHROW(fed.run_round());
}

TEST_CASE("schedule independence") {
  ExperimentConfig cfg = small_cfg(4);
  Federation a(cfg), b(cfg);
  a.set_threads(1);
  b.set_threads(4);
  for (int r = 0; r < cfg.rounds; ++r)
    CHECK(to_json(a.run_round()).dump() == to_json(b.run_round()).dump());
}

TEST_CASE("new clients join between rounds") {
  const ExperimentConfig cfg = small_cfg(6);
  Federation base(cfg);
  base.run_round();
  base.run_round();
  const ClientDataset nc = make_new_client(base.fixture().task, cfg.seed, 4, cfg.sampler);

  for (InitMode mode : {InitMode::kGlobal, InitMode::kInit, InitMode::kInitGlo}) {
    Federation fed(base);
    fed.add_client(nc, mode);
    REQUIRE(fed.clients().size() == 5);
    const auto& c = fed.clients()[4];
    const auto& s = fed.server();
    const auto& want_pt = mode == InitMode::kInit ? s.initial_task_prompt : s.global_task_prompt;
    const auto& want_pd = mode == InitMode::kGlobal ? s.global_data_prompt : s.initial_data_prompt;
    CHECK(c.task_prompt.values == want_pt.values);
    CHECK(c.data_prompt.flatten() == want_pd.flatten());
    CHECK(c.prev_self_loss == eval_loss(fed.backbone(), want_pt, want_pd, nc.validation));
    for (const auto& old : fed.clients()) CHECK(old.peer_validations.count(4) == 1);
    const RoundRecord rec = fed.run_round();
    CHECK(rec.loss_matrix.size() == 5);
  }

  Federation fed(base);
  ClientDataset dup = nc;
  dup.client_id = 2;
  CHECK_THROWS_AS(fed.add_client(dup, InitMode::kGlobal), InvalidArgument);
  dup.client_id = 7;
  CHECK_THROWS_AS(fed.add_client(dup, InitMode::kGlobal), InvalidArgument);
  CHECK(fed.clients().size() == 4);
}

TEST_CASE("experiments are reproducible") {
  const ExperimentConfig cfg = small_cfg(8);
  const ExperimentResult a = run_experiment(cfg), b = run_experiment(cfg);
  REQUIRE(a.records.size() == 3);
  CHECK(a.metrics.size() == 4);
  for (std::size_t r = 0; r < a.records.size(); ++r)
    CHECK(to_json(a.records[r]).dump() == to_json(b.records[r]).dump());
  CHECK(a.messages == b.messages);
  CHECK(a.messages > 0);
}

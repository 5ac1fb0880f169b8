#include "dp2fl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dp2fl/parallel.hpp"
#include "dp2fl/random.hpp"

namespace dp2fl {

namespace {

using nlohmann::json;

json metrics_json(const ClientMetrics& m) {
  return {{"client_id", m.client_id},
          {"accuracy", m.test.accuracy},
          {"micro_f1", m.test.micro_f1},
          {"macro_f1", m.test.macro_f1},
          {"val_loss", m.val_loss}};
}

ClientMetrics metrics_from_json(const json& j) {
  ClientMetrics m;
  m.client_id = j.at("client_id").get<int>();
  m.test.accuracy = j.at("accuracy").get<double>();
  m.test.micro_f1 = j.at("micro_f1").get<double>();
  m.test.macro_f1 = j.at("macro_f1").get<double>();
  m.val_loss = j.at("val_loss").get<double>();
  return m;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(Vector(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  return Matrix::from_rows(j.get<std::vector<Vector>>());
}

Matrix rows_to_matrix(const std::vector<Vector>& rows) { return Matrix::from_rows(rows); }

template <typename T>
const T& expect(const Envelope& e) {
  const T* p = std::get_if<T>(&e.payload);
  if (!p) throw ProtocolError("unexpected message type from endpoint " + std::to_string(e.sender));
  return *p;
}

}  // namespace

std::string_view init_mode_name(InitMode m) {
  switch (m) {
    case InitMode::kGlobal: return "global";
    case InitMode::kInit: return "init";
    case InitMode::kInitGlo: return "initglo";
  }
  return "unknown";
}

FederationFixture make_fixture(const ExperimentConfig& cfg) {
  cfg.validate();
  FederationFixture f{Backbone::build(cfg.seed, cfg.dims, cfg.logit_scale),
                      make_task(cfg.seed, cfg.dims.classes, cfg.dims.input, cfg.mean_radius,
                                cfg.noise_sigma),
                      {},
                      {},
                      {}};
  f.datasets = make_federation_data(f.task, cfg.num_clients, cfg.seed, cfg.sampler);
  auto [pt, pd] = init_prompts(cfg.dims, cfg.seed, cfg.prompt_init_scale);
  f.initial_task_prompt = std::move(pt);
  f.initial_data_prompt = std::move(pd);
  return f;
}

std::uint64_t shuffle_seed_for(std::uint64_t experiment_seed, int client_id, int round) {
  return derive_seed(experiment_seed, {stream::kShuffle, static_cast<std::uint64_t>(client_id),
                                       static_cast<std::uint64_t>(round)});
}

RoundMetrics RoundRecord::metrics() const {
  RoundMetrics m;
  m.round = round;
  std::vector<ClientMetrics> global;
  for (const auto& c : clients) {
    m.personalized.push_back(c.metrics);
    global.push_back(c.global_metrics);
  }
  m.global = std::move(global);
  return m;
}

json to_json(const RoundRecord& rec) {
  json clients = json::array();
  for (const auto& c : rec.clients) {
    clients.push_back({
        {"client_id", c.client_id},
        {"partition", {{"pc", c.partition.pc}, {"rnc", c.partition.rnc}, {"dnc", c.partition.dnc}}},
        {"initial_weights", c.initial_weights},
        {"local_weights", c.local_weights},
        {"gamma", c.gamma ? json(*c.gamma) : json(nullptr)},
        {"prev_self_loss", c.prev_self_loss},
        {"post_self_loss", c.post_self_loss},
        {"data_prompt_prev", c.data_prompt_prev},
        {"data_prompt_new", c.data_prompt_new},
        {"metrics", metrics_json(c.metrics)},
        {"global_metrics", metrics_json(c.global_metrics)},
    });
  }
  return {
      {"round", rec.round},
      {"loss_matrix", matrix_json(rec.loss_matrix.entries)},
      {"task_weights", rec.task_weights},
      {"trained_task_prompts", matrix_json(rec.trained_task_prompts)},
      {"trained_data_prompts", matrix_json(rec.trained_data_prompts)},
      {"task_prompt_prev", rec.task_prompt_prev},
      {"task_prompt_new", rec.task_prompt_new},
      {"global_data_prompt", rec.global_data_prompt},
      {"clients", clients},
      {"params",
       {{"alpha", rec.params.alpha},
        {"beta", rec.params.beta},
        {"gamma", rec.params.gamma_mode == GammaMode::kAdaptive ? json("adaptive")
                                                                : json(rec.params.gamma_fixed)},
        {"distance_floor", rec.params.distance_floor},
        {"zero_sum_floor", rec.params.zero_sum_floor}}},
  };
}

RoundRecord round_record_from_json(const json& j) {
  RoundRecord rec;
  rec.round = j.at("round").get<int>();
  rec.loss_matrix.entries = matrix_from_json(j.at("loss_matrix"));
  rec.loss_matrix.round = rec.round;
  rec.task_weights = j.at("task_weights").get<Vector>();
  rec.trained_task_prompts = matrix_from_json(j.at("trained_task_prompts"));
  rec.trained_data_prompts = matrix_from_json(j.at("trained_data_prompts"));
  rec.task_prompt_prev = j.at("task_prompt_prev").get<Vector>();
  rec.task_prompt_new = j.at("task_prompt_new").get<Vector>();
  rec.global_data_prompt = j.at("global_data_prompt").get<Vector>();
  const auto& p = j.at("params");
  rec.params.alpha = p.at("alpha").get<double>();
  rec.params.beta = p.at("beta").get<double>();
  if (p.at("gamma").is_string()) {
    rec.params.gamma_mode = GammaMode::kAdaptive;
  } else {
    rec.params.gamma_mode = GammaMode::kFixed;
    rec.params.gamma_fixed = p.at("gamma").get<double>();
  }
  rec.params.distance_floor = p.at("distance_floor").get<double>();
  rec.params.zero_sum_floor = p.at("zero_sum_floor").get<double>();
  for (const auto& cj : j.at("clients")) {
    ClientRoundRecord c;
    c.client_id = cj.at("client_id").get<int>();
    c.partition.pc = cj.at("partition").at("pc").get<std::vector<int>>();
    c.partition.rnc = cj.at("partition").at("rnc").get<std::vector<int>>();
    c.partition.dnc = cj.at("partition").at("dnc").get<std::vector<int>>();
    c.initial_weights = cj.at("initial_weights").get<Vector>();
    c.local_weights = cj.at("local_weights").get<Vector>();
    if (!cj.at("gamma").is_null()) c.gamma = cj.at("gamma").get<double>();
    c.prev_self_loss = cj.at("prev_self_loss").get<double>();
    c.post_self_loss = cj.at("post_self_loss").get<double>();
    c.data_prompt_prev = cj.at("data_prompt_prev").get<Vector>();
    c.data_prompt_new = cj.at("data_prompt_new").get<Vector>();
    c.metrics = metrics_from_json(cj.at("metrics"));
    c.global_metrics = metrics_from_json(cj.at("global_metrics"));
    rec.clients.push_back(std::move(c));
  }
  return rec;
}

Federation::Federation(const ExperimentConfig& cfg, std::unique_ptr<Transport> transport)
    : Federation(cfg, make_fixture(cfg), std::move(transport)) {}

Federation::Federation(const ExperimentConfig& cfg, FederationFixture fixture,
                       std::unique_ptr<Transport> transport)
    : cfg_(cfg),
      fixture_(std::move(fixture)),
      transport_(transport ? std::move(transport) : std::make_unique<InProcessTransport>()),
      threads_(resolve_threads(cfg)) {
  cfg_.validate();
  initialize();
}

Federation::Federation(const Federation& other)
    : cfg_(other.cfg_),
      fixture_(other.fixture_),
      transport_(std::make_unique<InProcessTransport>()),
      server_(other.server_),
      clients_(other.clients_),
      fault_hook_(other.fault_hook_),
      threads_(other.threads_),
      messages_(other.messages_) {}

std::vector<Envelope> Federation::drain(int endpoint, std::size_t expected, int round) {
  std::vector<Envelope> out;
  while (auto msg = transport_->receive(endpoint)) {
    if (msg->round != round)
      throw ProtocolError("message for round " + std::to_string(msg->round) + " received in round " +
                          std::to_string(round));
    out.push_back(std::move(*msg));
  }
  if (out.size() != expected)
    throw ProtocolError("endpoint " + std::to_string(endpoint) + " expected " +
                        std::to_string(expected) + " messages, got " + std::to_string(out.size()));
  messages_ += out.size();
  return out;
}

void Federation::initialize() {
  const auto& bb = fixture_.backbone;
  const std::size_t K = fixture_.datasets.size();
  if (K < 2) throw ConfigError("federation needs at least 2 clients");

  server_ = ServerState{};
  server_.global_task_prompt = server_.initial_task_prompt = fixture_.initial_task_prompt;
  server_.global_data_prompt = server_.initial_data_prompt = fixture_.initial_data_prompt;
  server_.planned_rounds = cfg_.rounds;

  clients_.clear();
  for (const auto& ds : fixture_.datasets) {
    ClientState c;
    c.client_id = ds.client_id;
    c.dataset = ds;
    clients_.push_back(std::move(c));
  }
  for (std::size_t k = 0; k < K; ++k)
    if (clients_[k].client_id != static_cast<int>(k))
      throw ConfigError("client datasets must carry ids 0..K-1 in order");

  for (const auto& c : clients_)
    transport_->send(kServerEndpoint, {0, c.client_id, ValidationUpload{c.client_id, c.dataset.validation}});

  for (auto& e : drain(kServerEndpoint, K, 0)) {
    validate_message(e, bb.dims(), K);
    const auto& up = expect<ValidationUpload>(e);
    if (server_.validation_registry.count(up.client_id))
      throw ProtocolError("duplicate validation upload");
    server_.validation_registry[up.client_id] = up.validation;
    server_.last_self_losses[up.client_id] = eval_loss(
        bb, server_.global_task_prompt, server_.global_data_prompt, up.validation);
  }

  InitBroadcast init{server_.global_task_prompt, server_.global_data_prompt,
                     server_.validation_registry, server_.last_self_losses, cfg_.rounds};
  for (const auto& c : clients_) transport_->send(c.client_id, {0, kServerEndpoint, init});
  for (auto& c : clients_) {
    auto msgs = drain(c.client_id, 1, 0);
    validate_message(msgs.front(), bb.dims(), K);
    const auto& ib = expect<InitBroadcast>(msgs.front());
    c.task_prompt = ib.task_prompt;
    c.data_prompt = ib.data_prompt;
    c.peer_validations = ib.validations;
    c.prev_self_loss = ib.initial_losses.at(c.client_id);
  }
}

RoundRecord Federation::run_round() {
  ServerState server = server_;
  std::vector<ClientState> clients = clients_;
  const std::size_t messages_before = messages_;
  try {
    RoundRecord rec = execute_round(server, clients);
    server_ = std::move(server);
    clients_ = std::move(clients);
    return rec;
  } catch (...) {
    transport_->clear();
    messages_ = messages_before;
    throw;
  }
}

RoundRecord Federation::execute_round(ServerState& server, std::vector<ClientState>& clients) {
  const auto& bb = fixture_.backbone;
  const auto& dims = bb.dims();
  const int r = server.round + 1;
  const std::size_t K = clients.size();

  RoundRecord rec;
  rec.round = r;
  rec.params = cfg_.agg;
  rec.task_prompt_prev = server.global_task_prompt.values;
  rec.clients.resize(K);

  // (1)+(2): local training and loss rows.
  parallel_for(K, threads_, [&](std::size_t i) {
    ClientState& c = clients[i];
    if (fault_hook_) fault_hook_(c.client_id, r);
    TrainHyper hyper = cfg_.train;
    hyper.shuffle_seed = shuffle_seed_for(cfg_.seed, c.client_id, r);
    if (c.learning_rate_override) hyper.learning_rate = *c.learning_rate_override;
    auto [pt, pd] = train_local(bb, c.task_prompt, c.data_prompt, c.dataset.train, hyper);
    Vector row(K);
    for (std::size_t j = 0; j < K; ++j)
      row[j] = eval_loss(bb, pt, pd, c.peer_validations.at(static_cast<int>(j)));
    transport_->send(kServerEndpoint,
                     {r, c.client_id, TrainedUpload{c.client_id, std::move(pt), std::move(pd), std::move(row)}});
  });

  // (3): server-side aggregation.
  std::vector<std::optional<TrainedUpload>> uploads(K);
  for (auto& e : drain(kServerEndpoint, K, r)) {
    validate_message(e, dims, K);
    auto& up = std::get<TrainedUpload>(e.payload);
    if (up.client_id != e.sender) throw ProtocolError("upload id does not match sender");
    if (uploads[up.client_id]) throw ProtocolError("duplicate trained upload");
    uploads[up.client_id] = std::move(up);
  }
  LossMatrix losses{Matrix(K, K), r};
  std::vector<Vector> pt_rows, pd_rows;
  for (std::size_t i = 0; i < K; ++i) {
    std::copy(uploads[i]->loss_row.begin(), uploads[i]->loss_row.end(), losses.entries.row(i).begin());
    pt_rows.push_back(uploads[i]->task_prompt.values);
    pd_rows.push_back(uploads[i]->data_prompt.flatten());
  }
  const Matrix trained_pt = rows_to_matrix(pt_rows);
  const Matrix trained_pd = rows_to_matrix(pd_rows);
  const WeightVector task_w = global_task_weights(losses, cfg_.agg.zero_sum_floor);
  server.global_task_prompt = TaskPrompt{aggregate_prompt_rows(trained_pt, task_w.values)};
  server.global_data_prompt = DataPrompt::unflatten(global_data_prompt(trained_pd, task_w), dims);

  const ServerBroadcast broadcast{server.global_task_prompt, losses, trained_pd};
  for (const auto& c : clients) transport_->send(c.client_id, {r, kServerEndpoint, broadcast});

  // (4)+(5): local aggregation and self-loss report.
  std::vector<std::vector<Envelope>> inboxes(K);
  for (std::size_t i = 0; i < K; ++i) inboxes[i] = drain(clients[i].client_id, 1, r);
  parallel_for(K, threads_, [&](std::size_t i) {
    ClientState& c = clients[i];
    const Envelope& e = inboxes[i].front();
    validate_message(e, dims, K);
    const auto& b = expect<ServerBroadcast>(e);
    const Vector pd_prev = c.data_prompt.flatten();
    const LocalAggregation la = local_aggregate(c.client_id, c.prev_self_loss,
                                                b.losses.column(c.client_id),
                                                b.trained_data_prompts, pd_prev, cfg_.agg);
    auto& cr = rec.clients[i];
    cr.client_id = c.client_id;
    cr.partition = la.partition;
    cr.initial_weights = la.initial_weights;
    cr.local_weights = la.weights.values;
    cr.gamma = la.gamma;
    cr.prev_self_loss = c.prev_self_loss;
    cr.data_prompt_prev = pd_prev;
    cr.data_prompt_new = la.data_prompt;

    c.task_prompt = b.task_prompt;
    c.data_prompt = DataPrompt::unflatten(la.data_prompt, dims);
    c.prev_self_loss = eval_loss(bb, c.task_prompt, c.data_prompt, c.dataset.validation);
    cr.post_self_loss = c.prev_self_loss;
    cr.metrics = {c.client_id, eval_metrics(bb, c.task_prompt, c.data_prompt, c.dataset.test),
                  c.prev_self_loss};
    cr.global_metrics = {
        c.client_id,
        eval_metrics(bb, server.global_task_prompt, server.global_data_prompt, c.dataset.test),
        eval_loss(bb, server.global_task_prompt, server.global_data_prompt, c.dataset.validation)};
    transport_->send(kServerEndpoint, {r, c.client_id, SelfLossReport{c.client_id, c.prev_self_loss}});
  });

  for (auto& e : drain(kServerEndpoint, K, r)) {
    validate_message(e, dims, K);
    const auto& rep = expect<SelfLossReport>(e);
    server.last_self_losses[rep.client_id] = rep.loss;
  }
  server.round = r;

  rec.loss_matrix = losses;
  rec.task_weights = task_w.values;
  rec.trained_task_prompts = trained_pt;
  rec.trained_data_prompts = trained_pd;
  rec.task_prompt_new = server.global_task_prompt.values;
  rec.global_data_prompt = server.global_data_prompt.flatten();
  return rec;
}

void Federation::add_client(ClientDataset dataset, InitMode mode) {
  const auto& bb = fixture_.backbone;
  const int id = dataset.client_id;
  if (server_.validation_registry.count(id))
    throw InvalidArgument("add_client: duplicate client id " + std::to_string(id));
  if (id != static_cast<int>(clients_.size()))
    throw InvalidArgument("add_client: new client id must equal the current client count");
  dataset.validation.validate(bb.dims());
  dataset.train.validate(bb.dims());
  dataset.test.validate(bb.dims());

  ServerState server = server_;
  std::vector<ClientState> clients = clients_;
  const int r = server.round;
  const std::size_t K1 = clients.size() + 1;
  try {
    transport_->send(kServerEndpoint, {r, id, NewClientHello{id, dataset.validation}});
    auto hello = drain(kServerEndpoint, 1, r);
    validate_message(hello.front(), bb.dims(), K1);
    const auto& h = expect<NewClientHello>(hello.front());
    server.validation_registry[id] = h.validation;

    // Existing clients learn the newcomer's validation set.
    for (const auto& c : clients)
      transport_->send(c.client_id, {r, kServerEndpoint, ValidationUpload{id, h.validation}});
    for (auto& c : clients) {
      auto msgs = drain(c.client_id, 1, r);
      validate_message(msgs.front(), bb.dims(), K1);
      const auto& vu = expect<ValidationUpload>(msgs.front());
      c.peer_validations[vu.client_id] = vu.validation;
    }

    GlobalModelGrant grant;
    switch (mode) {
      case InitMode::kGlobal:
        grant = {server.global_task_prompt, server.global_data_prompt};
        break;
      case InitMode::kInit:
        grant = {server.initial_task_prompt, server.initial_data_prompt};
        break;
      case InitMode::kInitGlo:
        grant = {server.global_task_prompt, server.initial_data_prompt};
        break;
    }
    transport_->send(id, {r, kServerEndpoint, grant});
    for (const auto& [pid, v] : server.validation_registry)
      if (pid != id) transport_->send(id, {r, kServerEndpoint, ValidationUpload{pid, v}});

    ClientState nc;
    nc.client_id = id;
    nc.dataset = std::move(dataset);
    nc.peer_validations[id] = nc.dataset.validation;
    for (auto& e : drain(id, K1, r)) {
      validate_message(e, bb.dims(), K1);
      if (const auto* g = std::get_if<GlobalModelGrant>(&e.payload)) {
        nc.task_prompt = g->task_prompt;
        nc.data_prompt = g->data_prompt;
      } else {
        const auto& vu = expect<ValidationUpload>(e);
        nc.peer_validations[vu.client_id] = vu.validation;
      }
    }
    nc.prev_self_loss = eval_loss(bb, nc.task_prompt, nc.data_prompt, nc.dataset.validation);
    transport_->send(kServerEndpoint, {r, id, SelfLossReport{id, nc.prev_self_loss}});
    auto rep = drain(kServerEndpoint, 1, r);
    validate_message(rep.front(), bb.dims(), K1);
    server.last_self_losses[id] = expect<SelfLossReport>(rep.front()).loss;
    clients.push_back(std::move(nc));
  } catch (...) {
    transport_->clear();
    throw;
  }
  server_ = std::move(server);
  clients_ = std::move(clients);
}

ClientMetrics Federation::client_metrics_on(int client_id, const Batch& split) const {
  const auto& c = clients_.at(client_id);
  return {client_id, eval_metrics(backbone(), c.task_prompt, c.data_prompt, split),
          eval_loss(backbone(), c.task_prompt, c.data_prompt, split)};
}

std::vector<ClientMetrics> Federation::evaluate_global_model(
    const std::vector<ClientDataset>& datasets) const {
  std::vector<ClientMetrics> out(datasets.size());
  parallel_for(datasets.size(), threads_, [&](std::size_t i) {
    const auto& ds = datasets[i];
    out[i] = {ds.client_id,
              eval_metrics(backbone(), server_.global_task_prompt, server_.global_data_prompt, ds.test),
              eval_loss(backbone(), server_.global_task_prompt, server_.global_data_prompt,
                        ds.validation)};
  });
  return out;
}

RoundMetrics Federation::current_metrics() const {
  RoundMetrics m;
  m.round = server_.round;
  m.personalized.resize(clients_.size());
  std::vector<ClientDataset> datasets;
  for (const auto& c : clients_) datasets.push_back(c.dataset);
  parallel_for(clients_.size(), threads_, [&](std::size_t i) {
    const auto& c = clients_[i];
    m.personalized[i] = {c.client_id,
                         eval_metrics(backbone(), c.task_prompt, c.data_prompt, c.dataset.test),
                         eval_loss(backbone(), c.task_prompt, c.data_prompt, c.dataset.validation)};
  });
  m.global = evaluate_global_model(datasets);
  return m;
}

void Federation::set_client_learning_rate(int client_id, double lr) {
  clients_.at(client_id).learning_rate_override = lr;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  Federation fed(cfg);
  ExperimentResult res;
  res.config = cfg;
  res.metrics.push_back(fed.current_metrics());
  for (int r = 1; r <= cfg.rounds; ++r) {
    res.records.push_back(fed.run_round());
    res.metrics.push_back(res.records.back().metrics());
  }
  res.messages = fed.messages();
  return res;
}

}  // namespace dp2fl

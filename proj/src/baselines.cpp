#include "dp2fl/baselines.hpp"

#include "dp2fl/parallel.hpp"

namespace dp2fl {

namespace {

struct PromptPair {
  TaskPrompt pt;
  DataPrompt pd;
};

ClientMetrics metrics_for(const Backbone& bb, const PromptPair& p, const ClientDataset& ds) {
  return {ds.client_id, eval_metrics(bb, p.pt, p.pd, ds.test),
          eval_loss(bb, p.pt, p.pd, ds.validation)};
}

RoundMetrics snapshot(const Backbone& bb, int round, const std::vector<PromptPair>& prompts,
                      const std::vector<ClientDataset>& datasets, const PromptPair* global,
                      int threads) {
  RoundMetrics m;
  m.round = round;
  m.personalized.resize(datasets.size());
  std::vector<ClientMetrics> g(global ? datasets.size() : 0);
  parallel_for(datasets.size(), threads, [&](std::size_t i) {
    m.personalized[i] = metrics_for(bb, prompts[i], datasets[i]);
    if (global) g[i] = metrics_for(bb, *global, datasets[i]);
  });
  if (global) m.global = std::move(g);
  return m;
}

// FedAvg and FedProx differ only in the proximal term of the local phase.
ExperimentResult run_prompt_averaging(const ExperimentConfig& cfg, const FederationFixture& fx,
                                      bool proximal) {
  const auto& bb = fx.backbone;
  const auto& data = fx.datasets;
  const int threads = resolve_threads(cfg);
  const Vector weights = fedavg_weights(data);

  PromptPair global{fx.initial_task_prompt, fx.initial_data_prompt};
  std::vector<PromptPair> local(data.size(), global);
  ExperimentResult res;
  res.config = cfg;
  res.metrics.push_back(snapshot(bb, 0, local, data, &global, threads));

  for (int r = 1; r <= cfg.rounds; ++r) {
    const ProximalTerm term{cfg.fedprox_mu, global.pt, global.pd};
    parallel_for(data.size(), threads, [&](std::size_t i) {
      TrainHyper h = cfg.train;
      h.shuffle_seed = shuffle_seed_for(cfg.seed, data[i].client_id, r);
      auto [pt, pd] = train_local(bb, global.pt, global.pd, data[i].train, h,
                                  proximal ? &term : nullptr);
      local[i] = {std::move(pt), std::move(pd)};
    });
    res.messages += 2 * data.size();  // upload + broadcast per client

    Matrix pt_rows(data.size(), cfg.dims.task_prompt);
    Matrix pd_rows(data.size(), cfg.dims.data_prompt_size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::copy(local[i].pt.values.begin(), local[i].pt.values.end(), pt_rows.row(i).begin());
      const Vector flat = local[i].pd.flatten();
      std::copy(flat.begin(), flat.end(), pd_rows.row(i).begin());
    }
    global.pt = TaskPrompt{aggregate_prompt_rows(pt_rows, weights)};
    global.pd = DataPrompt::unflatten(aggregate_prompt_rows(pd_rows, weights), cfg.dims);
    std::fill(local.begin(), local.end(), global);
    res.metrics.push_back(snapshot(bb, r, local, data, &global, threads));
  }
  return res;
}

}  // namespace

Vector fedavg_weights(const std::vector<ClientDataset>& datasets) {
  if (datasets.empty()) throw InvalidArgument("fedavg_weights: no clients");
  double total = 0.0;
  for (const auto& d : datasets) total += static_cast<double>(d.train.size());
  if (!(total > 0.0)) throw InvalidArgument("fedavg_weights: empty training sets");
  Vector w;
  for (const auto& d : datasets) w.push_back(static_cast<double>(d.train.size()) / total);
  return w;
}

ProximalPenalty proximal_penalty(const TaskPrompt& pt, const DataPrompt& pd,
                                 const ProximalTerm& term) {
  const Vector theta = concat(pt.values, pd.flatten());
  const Vector anchor = concat(term.anchor_pt.values, term.anchor_pd.flatten());
  require_size(anchor.size(), theta.size(), "proximal anchor");
  ProximalPenalty p{0.0, Vector(theta.size())};
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - anchor[i];
    p.value += 0.5 * term.mu * d * d;
    p.grad[i] = term.mu * d;
  }
  return p;
}

ExperimentResult run_local_only(const ExperimentConfig& cfg, const FederationFixture& fx) {
  const auto& bb = fx.backbone;
  const auto& data = fx.datasets;
  const int threads = resolve_threads(cfg);
  std::vector<PromptPair> prompts(data.size(),
                                  PromptPair{fx.initial_task_prompt, fx.initial_data_prompt});
  ExperimentResult res;
  res.config = cfg;
  res.metrics.push_back(snapshot(bb, 0, prompts, data, nullptr, threads));
  for (int r = 1; r <= cfg.rounds; ++r) {
    parallel_for(data.size(), threads, [&](std::size_t i) {
      TrainHyper h = cfg.train;
      h.shuffle_seed = shuffle_seed_for(cfg.seed, data[i].client_id, r);
      auto [pt, pd] = train_local(bb, prompts[i].pt, prompts[i].pd, data[i].train, h);
      prompts[i] = {std::move(pt), std::move(pd)};
    });
    res.metrics.push_back(snapshot(bb, r, prompts, data, nullptr, threads));
  }
  return res;
}

ExperimentResult run_fedavg_prompt(const ExperimentConfig& cfg, const FederationFixture& fx) {
  return run_prompt_averaging(cfg, fx, false);
}

ExperimentResult run_fedprox_prompt(const ExperimentConfig& cfg, const FederationFixture& fx) {
  return run_prompt_averaging(cfg, fx, true);
}

ExperimentResult run_method(const ExperimentConfig& cfg) {
  if (cfg.method == Method::kDp2fl) return run_experiment(cfg);
  const FederationFixture fx = make_fixture(cfg);
  switch (cfg.method) {
    case Method::kLocal: return run_local_only(cfg, fx);
    case Method::kFedAvgPrompt: return run_fedavg_prompt(cfg, fx);
    case Method::kFedProxPrompt: return run_fedprox_prompt(cfg, fx);
    case Method::kDp2fl: break;
  }
  throw ConfigError("unsupported method");
}

}  // namespace dp2fl

#include <cmath>

#include "doctest.h"
#include "dp2fl/baselines.hpp"

using namespace dp2fl;

namespace {

ExperimentConfig small_cfg(Method m) {
  ExperimentConfig c = ExperimentConfig::desk_profile();
  c.seed = 1;
  c.num_clients = 3;
  c.rounds = 2;
  c.threads = 1;
  c.method = m;
  return c;
}

double distance(const TaskPrompt& a, const DataPrompt& ad, const TaskPrompt& b, const DataPrompt& bd) {
  const Vector x = concat(a.values, ad.flatten()), y = concat(b.values, bd.flatten());
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("fedavg weights follow training-set sizes") {
  const FederationFixture fx = make_fixture(small_cfg(Method::kFedAvgPrompt));
  const Vector w = fedavg_weights(fx.datasets);
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s += w[i];
    CHECK(w[i] > 0.0);
  }
  CHECK(std::abs(s - 1.0) <= 1e-12);
  auto same = fx.datasets;
  for (auto& d : same) d.train = same[0].train;
  for (double x : fedavg_weights(same)) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("proximal penalty gradient") {
  const ModelDims d;
  auto [pt, pd] = init_prompts(d, 1, 0.5);
  auto [apt, apd] = init_prompts(d, 2, 0.5);
  const ProximalTerm term{0.3, apt, apd};
  const ProximalPenalty p = proximal_penalty(pt, pd, term);
  constexpr double h = 1e-5;
  for (std::size_t i = 0; i < pt.values.size(); ++i) {
    TaskPrompt up = pt, dn = pt;
    up.values[i] += h;
    dn.values[i] -= h;
    const double num = (proximal_penalty(up, pd, term).value - proximal_penalty(dn, pd, term).value) / (2 * h);
    CHECK(p.grad[i] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("fedprox with mu = 0 is fedavg") {
  ExperimentConfig a = small_cfg(Method::kFedAvgPrompt), b = small_cfg(Method::kFedProxPrompt);
  b.fedprox_mu = 0.0;
  const ExperimentResult ra = run_method(a), rb = run_method(b);
  for (std::size_t r = 0; r < ra.metrics.size(); ++r)
    for (std::size_t k = 0; k < ra.metrics[r].personalized.size(); ++k) {
      CHECK(ra.metrics[r].personalized[k].test.accuracy == rb.metrics[r].personalized[k].test.accuracy);
      CHECK(ra.metrics[r].personalized[k].val_loss == rb.metrics[r].personalized[k].val_loss);
    }
}

TEST_CASE("a strong proximal term keeps prompts near the anchor") {
  const ExperimentConfig cfg = small_cfg(Method::kFedProxPrompt);
  const FederationFixture fx = make_fixture(cfg);
  const auto& pt = fx.initial_task_prompt;
  const auto& pd = fx.initial_data_prompt;
  TrainHyper h = cfg.train;
  h.learning_rate = 1e-4;
  const ProximalTerm strong{1e3, pt, pd};
  auto [pt0, pd0] = train_local(fx.backbone, pt, pd, fx.datasets[0].train, h);
  auto [pt1, pd1] = train_local(fx.backbone, pt, pd, fx.datasets[0].train, h, &strong);
  CHECK(distance(pt1, pd1, pt, pd) < distance(pt0, pd0, pt, pd));
}

TEST_CASE("local-only training") {
  ExperimentConfig cfg = small_cfg(Method::kLocal);
  cfg.rounds = 1;
  const FederationFixture fx = make_fixture(cfg);
  const ExperimentResult res = run_local_only(cfg, fx);
  CHECK(res.messages == 0);
  CHECK_FALSE(res.metrics.back().global.has_value());
  for (std::size_t k = 0; k < fx.datasets.size(); ++k) {
    TrainHyper h = cfg.train;
    h.shuffle_seed = shuffle_seed_for(cfg.seed, fx.datasets[k].client_id, 1);
    auto [pt, pd] = train_local(fx.backbone, fx.initial_task_prompt, fx.initial_data_prompt,
                                fx.datasets[k].train, h);
    CHECK(res.metrics.back().personalized[k].val_loss ==
          eval_loss(fx.backbone, pt, pd, fx.datasets[k].validation));
  }
}

TEST_CASE("fedavg with identical clients follows the local trajectory") {
  ExperimentConfig cfg = small_cfg(Method::kFedAvgPrompt);
  cfg.train.batch_size = 1000;  // full batch, so shuffling does not matter
  FederationFixture fx = make_fixture(cfg);
  for (auto& d : fx.datasets) {
    const int id = d.client_id;
    d = fx.datasets[0];
    d.client_id = id;
  }
  const ExperimentResult avg = run_fedavg_prompt(cfg, fx), loc = run_local_only(cfg, fx);
  for (std::size_t k = 0; k < fx.datasets.size(); ++k)
    CHECK(avg.metrics.back().personalized[k].val_loss ==
          doctest::Approx(loc.metrics.back().personalized[k].val_loss).epsilon(1e-12));
}

TEST_CASE("baselines share the dp2fl fixture") {
  const ExperimentResult d = run_method(small_cfg(Method::kDp2fl));
  const ExperimentResult l = run_method(small_cfg(Method::kLocal));
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(d.metrics[0].personalized[k].val_loss == l.metrics[0].personalized[k].val_loss);
}

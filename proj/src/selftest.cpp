#include "dp2fl/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>

#include "dp2fl/harness.hpp"
#include "dp2fl/random.hpp"

namespace dp2fl {

namespace {

using Clock = std::chrono::steady_clock;

struct Failure {
  std::string what;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

CheckResult timed(std::string name, const std::function<std::string()>& body) {
  CheckResult r;
  r.name = std::move(name);
  const auto t0 = Clock::now();
  try {
    r.detail = body();
    r.passed = true;
  } catch (const Failure& f) {
    r.detail = f.what;
  } catch (const std::exception& e) {
    r.detail = std::string("unexpected error: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = uniform(rng, lo, hi);
  return m;
}

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

std::string str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

CheckResult check_task_weight_laws(std::uint64_t seed, int instances) {
  return timed("task weights: non-negative, sum 1, scale invariant", [&] {
    Rng rng(seed);
    double worst_sum = 0.0;
    for (int n = 0; n < instances; ++n) {
      const int K = uniform_int(rng, 2, 12);
      LossMatrix lm{random_matrix(rng, K, K, 0.0, 5.0), 0};
      const Vector w = global_task_weights(lm).values;
      for (double x : w) expect(x >= 0.0, "negative task weight");
      worst_sum = std::max(worst_sum, std::abs(sum(w) - 1.0));
      expect(std::abs(sum(w) - 1.0) <= 1e-12, "task weights sum to " + str(sum(w)));
      const double c = uniform(rng, 1e-3, 1e3);
      LossMatrix scaled = lm;
      for (double& x : scaled.entries.data()) x *= c;
      const Vector ws = global_task_weights(scaled).values;
      for (int k = 0; k < K; ++k)
        expect(std::abs(ws[k] - w[k]) <= 1e-12, "scaling by " + str(c) + " changed a weight");
    }
    // Row sums 2, 3, 5 of total 10 give (8, 7, 5) / 20.
    LossMatrix hand{Matrix::from_rows({{1, 1, 0}, {1, 1, 1}, {2, 2, 1}}), 0};
    const Vector w = global_task_weights(hand).values;
    const double want[] = {0.40, 0.35, 0.25};
    for (int k = 0; k < 3; ++k) expect(std::abs(w[k] - want[k]) < 1e-15, "hand-computed weights");
    return std::to_string(instances) + " matrices, worst |sum-1| " + str(worst_sum);
  });
}

CheckResult check_partition_laws(std::uint64_t seed, int instances) {
  return timed("partition: disjoint, exhaustive, scale invariant", [&] {
    Rng rng(seed);
    for (int n = 0; n < instances; ++n) {
      const int K = uniform_int(rng, 2, 12);
      const double alpha = 2.0 - uniform(rng, 0.0, 1.0);  // (1, 2]
      const double prev = uniform(rng, 0.05, 3.0);
      Vector losses(K);
      for (double& l : losses) l = uniform(rng, 0.0, 2.5 * prev);
      if (n % 10 == 0) losses[0] = prev;  // boundary: equal to the previous loss is not PC
      const ClientPartition p = classify_clients(prev, losses, alpha);

      std::vector<int> seen(K, 0);
      for (int i : p.pc) {
        ++seen[i];
        expect(losses[i] < prev, "PC member did not improve");
      }
      for (int i : p.rnc) {
        ++seen[i];
        expect(losses[i] >= prev && losses[i] < alpha * prev, "RNC member outside tolerance");
      }
      for (int i : p.dnc) {
        ++seen[i];
        expect(losses[i] >= alpha * prev, "DNC member inside tolerance");
      }
      for (int c : seen) expect(c == 1, "partition not disjoint and exhaustive");

      const double scale = std::ldexp(1.0, uniform_int(rng, -8, 8));
      Vector scaled = losses;
      for (double& l : scaled) l *= scale;
      const ClientPartition ps = classify_clients(prev * scale, scaled, alpha);
      expect(ps.pc == p.pc && ps.rnc == p.rnc && ps.dnc == p.dnc, "partition changed under scaling");
    }
    return std::to_string(instances) + " instances";
  });
}

CheckResult check_normalization_laws(std::uint64_t seed, int instances) {
  return timed("local weights: branch sums and fallbacks", [&] {
    Rng rng(seed);
    AggregationParams params;
    int first = 0, second = 0;
    for (int n = 0; n < instances; ++n) {
      const int K = uniform_int(rng, 2, 12);
      Vector wt(K);
      ClientPartition part;
      const bool no_pc = n % 2 == 0;
      for (int i = 0; i < K; ++i) {
        const int kind = no_pc ? uniform_int(rng, 1, 2) : uniform_int(rng, 0, 2);
        if (kind == 0) {
          part.pc.push_back(i);
          wt[i] = uniform(rng, 1e-3, 5.0);
        } else if (kind == 1) {
          part.rnc.push_back(i);
          wt[i] = -uniform(rng, 1e-3, 5.0);
        } else {
          part.dnc.push_back(i);
          wt[i] = -uniform(rng, 1e-3, 50.0);
        }
      }
      const Vector w = normalize_local_weights(wt, part, params).values;
      for (int i : part.dnc) expect(w[i] == 0.0, "DNC member received weight");
      if (part.pc.empty()) {
        if (part.rnc.size() >= 2 && std::abs(sum(std::span<const double>(wt))) > 1e-12) {
          ++first;
          expect(std::abs(sum(w) - params.beta) <= 1e-12, "first branch sums to " + str(sum(w)));
        }
      } else {
        ++second;
        expect(std::abs(sum(w) - 1.0) <= 1e-12, "second branch sums to " + str(sum(w)));
      }
    }

    const ClientPartition one_rnc{{}, {1}, {0}};
    const Vector w1 = normalize_local_weights(Vector{-9.0, -1.0}, one_rnc, params).values;
    expect(w1[0] == 0.0 && w1[1] == params.beta, "single RNC client should get beta");

    const ClientPartition none{{}, {}, {0, 1}};
    const Vector w0 = normalize_local_weights(Vector{-1.0, -2.0}, none, params).values;
    expect(w0[0] == 0.0 && w0[1] == 0.0, "empty PC and RNC should give zero weights");

    const ClientPartition two_rnc{{}, {0, 1}, {}};
    const Vector wz = normalize_local_weights(Vector{0.0, 0.0}, two_rnc, params).values;
    expect(wz[0] == params.beta / 2 && wz[1] == params.beta / 2, "zero RNC sum should be uniform");

    const Vector wh = normalize_local_weights(Vector{-1.0, -3.0}, two_rnc, params).values;
    expect(std::abs(wh[0] - 0.15) < 1e-15 && std::abs(wh[1] - 0.05) < 1e-15,
           "hand-computed first branch");

    // gamma = 0 with a zero PC weight: denominator vanishes, PC sum vanishes.
    const ClientPartition pc_rnc{{0}, {1}, {}};
    const Vector wf = normalize_local_weights(Vector{0.0, -1.0}, pc_rnc, params, 0.0).values;
    expect(wf[0] == 1.0 && wf[1] == 0.0, "vanishing denominator should fall back to uniform PC");

    // gamma large enough that the RNC mass cancels most of the PC mass.
    const Vector wc = normalize_local_weights(Vector{1.0, 2.0, -1.0}, {{0, 1}, {2}, {}}, params,
                                              2.9).values;
    expect(std::abs(wc[0] - 1.0 / 3.0) < 1e-15 && wc[2] == 0.0,
           "ill-conditioned denominator should fall back to PC-only");

    return std::to_string(first) + " first-branch and " + std::to_string(second) +
           " second-branch instances";
  });
}

CheckResult check_data_prompt_forms(std::uint64_t seed, int instances) {
  return timed("data prompt: incremental and convex forms agree", [&] {
    Rng rng(seed);
    double worst = 0.0;
    for (int n = 0; n < instances; ++n) {
      const int K = uniform_int(rng, 2, 12);
      const int d = uniform_int(rng, 1, 24);
      const Matrix rows = random_matrix(rng, K, d, -3.0, 3.0);
      Vector prev(d), w(K);
      for (double& x : prev) x = uniform(rng, -3.0, 3.0);
      for (double& x : w) x = uniform(rng, -0.5, 1.0);
      if (n % 7 == 0) std::fill(w.begin(), w.end(), 0.0);
      const Vector inc = aggregate_data_prompt(prev, rows, w);
      const double total = sum(w);
      for (int j = 0; j < d; ++j) {
        double convex = (1.0 - total) * prev[j];
        for (int i = 0; i < K; ++i) convex += w[i] * rows(i, j);
        worst = std::max(worst, std::abs(convex - inc[j]));
      }
      if (total == 0.0) expect(inc == prev, "zero weights should leave the prompt unchanged");
    }
    expect(worst <= 1e-10, "forms differ by " + str(worst));
    return "worst difference " + str(worst);
  });
}

CheckResult check_gradients(std::uint64_t seed, int instances) {
  return timed("surrogate gradients match central differences", [&] {
    Rng rng(seed);
    constexpr double h = 1e-5;
    double worst = 0.0;
    for (int n = 0; n < instances; ++n) {
      ModelDims dims;
      dims.classes = uniform_int(rng, 2, 5);
      dims.input = uniform_int(rng, 2, 6);
      dims.embedding = uniform_int(rng, 1, 4);
      dims.task_prompt = uniform_int(rng, 1, 3);
      dims.image_prompt = uniform_int(rng, 1, 3);
      dims.feature = uniform_int(rng, 2, 8);
      const Backbone bb = Backbone::build(rng(), dims, 10.0);
      TaskPrompt pt{Vector(dims.task_prompt)};
      for (double& v : pt.values) v = uniform(rng, -1.0, 1.0);
      Vector flat(dims.data_prompt_size());
      for (double& v : flat) v = uniform(rng, -1.0, 1.0);
      const DataPrompt pd = DataPrompt::unflatten(flat, dims);
      Batch b;
      const int size = uniform_int(rng, 1, 4);
      b.features = random_matrix(rng, size, dims.input, -2.0, 2.0);
      for (int s = 0; s < size; ++s) b.labels.push_back(uniform_int(rng, 0, dims.classes - 1));

      const LossGrad lg = loss_and_grad(bb, pt, pd, b);
      auto rel = [](double a, double num) {
        return std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
      };
      for (std::size_t i = 0; i < pt.values.size(); ++i) {
        TaskPrompt up = pt, dn = pt;
        up.values[i] += h;
        dn.values[i] -= h;
        const double num =
            (loss_and_grad(bb, up, pd, b).loss - loss_and_grad(bb, dn, pd, b).loss) / (2 * h);
        worst = std::max(worst, rel(lg.grad_pt[i], num));
      }
      for (std::size_t i = 0; i < flat.size(); ++i) {
        Vector up = flat, dn = flat;
        up[i] += h;
        dn[i] -= h;
        const double num = (loss_and_grad(bb, pt, DataPrompt::unflatten(up, dims), b).loss -
                            loss_and_grad(bb, pt, DataPrompt::unflatten(dn, dims), b).loss) /
                           (2 * h);
        worst = std::max(worst, rel(lg.grad_pd[i], num));
      }
    }
    expect(worst < 1e-4, "worst relative error " + str(worst));
    return std::to_string(instances) + " instances, worst relative error " + str(worst);
  });
}

CheckResult check_metric_sanity(std::uint64_t seed, int instances) {
  return timed("metrics: micro-F1 equals accuracy, macro-F1 oracle", [&] {
    Rng rng(seed);
    for (int n = 0; n < instances; ++n) {
      const int C = uniform_int(rng, 2, 10);
      const int size = uniform_int(rng, 1, 40);
      std::vector<int> truth(size), pred(size);
      for (int i = 0; i < size; ++i) {
        truth[i] = uniform_int(rng, 0, C - 1);
        pred[i] = uniform_int(rng, 0, C - 1);
      }
      const auto m = classification_metrics(truth, pred, C);
      expect(m.micro_f1 == m.accuracy, "micro-F1 " + str(m.micro_f1) + " != accuracy " + str(m.accuracy));
    }
    // Class 0: tp 3 fp 1 fn 1 -> 3/4; class 1: tp 2 fp 1 fn 2 -> 4/7;
    // class 2: tp 1 fp 2 fn 1 -> 2/5; class 3 absent from both and skipped.
    const std::vector<int> truth{0, 0, 0, 0, 1, 1, 1, 1, 2, 2};
    const std::vector<int> pred{0, 0, 0, 1, 1, 1, 2, 2, 2, 0};
    const auto m = classification_metrics(truth, pred, 4);
    const double macro = (3.0 / 4.0 + 4.0 / 7.0 + 2.0 / 5.0) / 3.0;
    expect(std::abs(m.macro_f1 - macro) < 1e-15, "macro-F1 " + str(m.macro_f1) + " != " + str(macro));
    expect(m.accuracy == 0.6 && m.micro_f1 == 0.6, "hand case accuracy");
    return "macro-F1 oracle " + str(macro);
  });
}

CheckResult check_round_replay(std::uint64_t seed) {
  return timed("round records replay offline", [&] {
    ExperimentConfig cfg = ExperimentConfig::desk_profile();
    cfg.seed = seed;
    cfg.num_clients = 4;
    cfg.rounds = 3;
    cfg.threads = 1;
    const ExperimentResult res = run_experiment(cfg);
    double worst = 0.0;
    auto track = [&](std::span<const double> a, std::span<const double> b, const char* what) {
      expect(a.size() == b.size(), std::string(what) + ": size mismatch");
      for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    };
    for (const auto& stored : res.records) {
      const RoundRecord rec = round_record_from_json(to_json(stored));
      const WeightVector tw = global_task_weights(rec.loss_matrix, rec.params.zero_sum_floor);
      track(tw.values, rec.task_weights, "task weights");
      track(aggregate_prompt_rows(rec.trained_task_prompts, tw.values), rec.task_prompt_new,
            "global task prompt");
      track(global_data_prompt(rec.trained_data_prompts, tw), rec.global_data_prompt,
            "global data prompt");
      for (const auto& c : rec.clients) {
        const Vector col = rec.loss_matrix.column(c.client_id);
        const LocalAggregation la = local_aggregate(c.client_id, c.prev_self_loss, col,
                                                    rec.trained_data_prompts, c.data_prompt_prev,
                                                    rec.params);
        expect(la.partition.pc == c.partition.pc && la.partition.rnc == c.partition.rnc &&
                   la.partition.dnc == c.partition.dnc,
               "partition differs on replay");
        track(la.initial_weights, c.initial_weights, "initial weights");
        track(la.weights.values, c.local_weights, "local weights");
        track(la.data_prompt, c.data_prompt_new, "local data prompt");
      }
    }
    expect(worst <= 1e-10, "replay differs by " + str(worst));
    return std::to_string(res.records.size()) + " rounds, worst difference " + str(worst);
  });
}

CheckResult check_determinism(std::uint64_t seed) {
  return timed("determinism and schedule independence", [&] {
    ExperimentConfig cfg = ExperimentConfig::desk_profile();
    cfg.seed = seed;
    cfg.num_clients = 4;
    cfg.rounds = 2;
    auto run = [&](int threads) {
      FederationFixture fx = make_fixture(cfg);
      Federation fed(cfg, fx);
      fed.set_threads(threads);
      ExperimentResult res;
      res.config = cfg;
      res.metrics.push_back(fed.current_metrics());
      std::string rounds;
      for (int r = 0; r < cfg.rounds; ++r) {
        res.records.push_back(fed.run_round());
        res.metrics.push_back(res.records.back().metrics());
        rounds += to_json(res.records.back()).dump();
      }
      std::ostringstream csv;
      write_metrics_csv(csv, res);
      return csv.str() + summary_json(res).dump() + rounds;
    };
    const std::string a = run(1), b = run(1), c = run(4);
    expect(a == b, "two identical runs differ");
    expect(a == c, "1 and 4 worker threads differ");
    for (Method m : {Method::kLocal, Method::kFedAvgPrompt, Method::kFedProxPrompt}) {
      ExperimentConfig bc = cfg;
      bc.method = m;
      std::ostringstream x, y;
      write_metrics_csv(x, run_method(bc));
      write_metrics_csv(y, run_method(bc));
      expect(x.str() == y.str(), std::string(method_name(m)) + " is not deterministic");
    }
    return "outputs byte-identical";
  });
}

std::vector<CheckResult> run_selftest() {
  return {check_task_weight_laws(),   check_partition_laws(), check_normalization_laws(),
          check_data_prompt_forms(),  check_gradients(),      check_metric_sanity(),
          check_round_replay(),       check_determinism()};
}

bool print_checks(std::ostream& os, const std::vector<CheckResult>& results) {
  bool all = true;
  for (const auto& r : results) {
    char timing[32];
    std::snprintf(timing, sizeof(timing), "%7.3fs", r.seconds);
    os << (r.passed ? "PASS " : "FAIL ") << timing << "  " << r.name << "  (" << r.detail << ")\n";
    all = all && r.passed;
  }
  os << (all ? "all checks passed" : "some checks FAILED") << '\n';
  return all;
}

}  // namespace dp2fl

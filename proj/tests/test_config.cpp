#include <sstream>

#include "doctest.h"
#include "dp2fl/config.hpp"

using namespace dp2fl;

TEST_CASE("defaults mirror the published hyperparameters") {
  const ExperimentConfig c;
  CHECK(c.num_clients == 10);
  CHECK(c.rounds == 10);
  CHECK(c.train.learning_rate == 0.035);
  CHECK(c.train.epochs == 5);
  CHECK(c.train.batch_size == 4);
  CHECK(c.agg.alpha == 1.2);
  CHECK(c.agg.beta == 0.2);
  const ExperimentConfig d = ExperimentConfig::desk_profile();
  CHECK(d.num_clients == 5);
  CHECK(d.rounds == 5);
}

TEST_CASE("config text with sections, comments and profile") {
  std::istringstream in(R"(
# experiment
seed = 3
rounds = 4
profile = desk      # applied first
[train]
learning_rate = 0.05
[agg]
gamma = 0.25
[sampler]
test_skewed = false
method = local
)");
  // `method` under [sampler] becomes sampler.method, which does not exist.
  CHECK_THROWS_AS(parse_config(in), ConfigError);

  std::istringstream ok(R"(
seed = 3
rounds = 4
profile = desk
method = fedprox_prompt
[train]
learning_rate = 0.05
[agg]
gamma = 0.25
[sampler]
test_skewed = false
[baseline]
mu = 0.1
)");
  const ExperimentConfig c = parse_config(ok);
  CHECK(c.seed == 3);
  CHECK(c.rounds == 4);
  CHECK(c.num_clients == 5);
  CHECK(c.train.learning_rate == 0.05);
  CHECK(c.agg.gamma_mode == GammaMode::kFixed);
  CHECK(c.agg.gamma_fixed == 0.25);
  CHECK_FALSE(c.sampler.test_skewed);
  CHECK(c.method == Method::kFedProxPrompt);
  CHECK(c.fedprox_mu == 0.1);
}

TEST_CASE("config errors") {
  ExperimentConfig c;
  CHECK_THROWS_AS(apply_config_key(c, "nope", "1"), ConfigError);
  CHECK_THROWS_AS(apply_config_key(c, "rounds", "ten"), ConfigError);
  CHECK_THROWS_AS(apply_config_key(c, "method", "pfedme"), ConfigError);
  std::istringstream bad("rounds = -1\n");
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  std::istringstream junk("just words\n");
  CHECK_THROWS_AS(parse_config(junk), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/dp2fl.cfg"), ConfigError);
}

TEST_CASE("method names round trip") {
  for (Method m : {Method::kDp2fl, Method::kLocal, Method::kFedAvgPrompt, Method::kFedProxPrompt})
    CHECK(parse_method(method_name(m)) == m);
}

TEST_CASE("config json echo") {
  const auto j = config_to_json(ExperimentConfig::desk_profile());
  CHECK(j.at("num_clients") == 5);
  CHECK(j.at("method") == "dp2fl");
}

#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dp2fl/data_synth.hpp"

using namespace dp2fl;

namespace {

std::map<int, int> label_counts(const Batch& b) {
  std::map<int, int> counts;
  for (int y : b.labels) ++counts[y];
  return counts;
}

}  // namespace

TEST_CASE("task means sit on the sphere") {
  const TaskSpec t = make_task(5, 10, 16, 3.0, 1.0);
  CHECK(t.classes() == 10);
  CHECK(t.input_dim() == 16);
  for (int c = 0; c < 10; ++c) CHECK(norm2(t.class_means.row(c)) == doctest::Approx(3.0));
  CHECK(make_task(5, 10, 16, 3.0, 1.0) == t);
  CHECK_THROWS_AS(make_task(5, 1, 16, 3.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(make_task(5, 10, 16, 3.0, 0.0), InvalidArgument);
}

TEST_CASE("sampler count law with uniform test split") {
  const TaskSpec t = make_task(1, 10, 16, 3.0, 1.0);
  SamplerConfig cfg;
  cfg.test_skewed = false;
  for (int k = 0; k < 20; ++k) {
    const ClientDataset ds = sample_client(t, client_data_seed(1, k), cfg, k);
    const int retained = static_cast<int>(ds.present_classes.size());
    CHECK(retained == 8);
    CHECK(ds.train.size() == std::size_t(12 + 4 * (retained - 1)));
    CHECK(ds.validation.size() == std::size_t(2 * retained));
    CHECK(ds.test.size() == std::size_t(8 * retained));
    CHECK(ds.validation.size() < ds.test.size());
    const auto tc = label_counts(ds.train);
    CHECK(tc.at(ds.dominant_class) == 12);
    std::set<int> support;
    for (const auto& [y, n] : tc) {
      support.insert(y);
      if (y != ds.dominant_class) CHECK(n == 4);
    }
    CHECK(support == std::set<int>(ds.present_classes.begin(), ds.present_classes.end()));
    for (const auto& [y, n] : label_counts(ds.test)) CHECK(support.count(y) == 1);
  }
}

TEST_CASE("skewed test split follows the training proportions") {
  const TaskSpec t = make_task(1, 10, 16, 3.0, 1.0);
  SamplerConfig cfg;
  CHECK(cfg.dominant_test_count() == 24);
  const ClientDataset ds = sample_client(t, 99, cfg, 0);
  const auto tc = label_counts(ds.test);
  CHECK(tc.at(ds.dominant_class) == 24);
  CHECK(ds.test.size() == std::size_t(24 + 8 * 7));
  for (const auto& [y, n] : label_counts(ds.validation)) CHECK(n == 2);
}

TEST_CASE("additive dominant share") {
  SamplerConfig cfg;
  cfg.dominant_additive = true;
  CHECK(cfg.dominant_shots() == 16);
  cfg.val_per_class = 8;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("splits are disjoint draws and clients are reproducible") {
  const TaskSpec t = make_task(2, 10, 16, 3.0, 1.0);
  SamplerConfig cfg;
  const ClientDataset a = sample_client(t, 5, cfg, 0);
  CHECK(sample_client(t, 5, cfg, 0) == a);
  CHECK_FALSE(sample_client(t, 6, cfg, 0) == a);
  std::set<std::vector<double>> rows;
  for (const Batch* b : {&a.train, &a.validation, &a.test})
    for (std::size_t i = 0; i < b->size(); ++i)
      rows.insert(std::vector<double>(b->features.row(i).begin(), b->features.row(i).end()));
  CHECK(rows.size() == a.train.size() + a.validation.size() + a.test.size());
}

TEST_CASE("too few remaining classes is rejected") {
  const TaskSpec t = make_task(2, 2, 4, 3.0, 1.0);
  SamplerConfig cfg;
  cfg.drop_frac = 0.5;
  CHECK_THROWS_AS(sample_client(t, 1, cfg, 0), ConfigError);
}

TEST_CASE("new client matches the would-be federation member") {
  const TaskSpec t = make_task(3, 10, 16, 3.0, 1.0);
  SamplerConfig cfg;
  const auto fed = make_federation_data(t, 6, 3, cfg);
  const auto newcomer = make_new_client(t, 3, 5, cfg);
  CHECK(newcomer == fed[5]);
  CHECK(newcomer.client_id == 5);
}

TEST_CASE("dataset csv round trip") {
  const TaskSpec t = make_task(4, 10, 16, 3.0, 1.0);
  SamplerConfig cfg;
  const auto data = make_federation_data(t, 3, 4, cfg);
  std::stringstream ss;
  write_datasets_csv(ss, data, cfg);
  const auto back = read_datasets_csv(ss);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(back[i] == data[i]);

  std::stringstream bad("not a dataset\n");
  CHECK_THROWS_AS(read_datasets_csv(bad), InvalidArgument);
}

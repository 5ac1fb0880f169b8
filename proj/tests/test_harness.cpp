#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dp2fl/harness.hpp"

using namespace dp2fl;

namespace {

ExperimentConfig small_cfg() {
  ExperimentConfig c = ExperimentConfig::desk_profile();
  c.num_clients = 3;
  c.rounds = 2;
  c.threads = 1;
  return c;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("metrics csv layout") {
  const ExperimentResult res = run_method(small_cfg());
  std::ostringstream os;
  write_metrics_csv(os, res);
  const auto rows = lines(os.str());
  CHECK(rows[0] == "method,seed,round,client_id,split,accuracy,micro_f1,macro_f1,val_loss");
  CHECK(rows.size() == 1 + 3 * 3 * 2);  // rounds 0..2, 3 clients, test + global
  CHECK(rows[1].rfind("dp2fl,0,0,0,test,", 0) == 0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream f(rows[i]);
    std::vector<std::string> cells;
    for (std::string c; std::getline(f, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() == 9);
    CHECK(cells[5] == cells[6]);  // micro-F1 equals accuracy
  }
}

TEST_CASE("number formatting round trips") {
  CHECK(format_number(0.5) == "0.5");
  const double x = 0.1 + 0.2;
  CHECK(std::stod(format_number(x)) == x);
}

TEST_CASE("summary and round files") {
  const auto dir = std::filesystem::temp_directory_path() / "dp2fl_harness_test";
  std::filesystem::remove_all(dir);
  ExperimentConfig cfg = small_cfg();
  const ExperimentResult res = run_method(cfg);
  write_run_outputs(res, dir);
  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  CHECK(std::filesystem::exists(dir / "round_0001.json"));
  CHECK(std::filesystem::exists(dir / "round_0002.json"));
  std::ifstream in(dir / "summary.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("method") == "dp2fl");
  CHECK(j.at("rounds").size() == 3);
  CHECK(j.at("final").at("personalized").at("accuracy") ==
        mean_metrics(res.metrics.back().personalized).accuracy);
  std::filesystem::remove_all(dir);
}

TEST_CASE("method changes only method-dependent summary fields") {
  ExperimentConfig a = small_cfg(), b = small_cfg();
  b.method = Method::kLocal;
  auto ja = summary_json(run_method(a)), jb = summary_json(run_method(b));
  CHECK(ja.at("config").at("seed") == jb.at("config").at("seed"));
  ja["config"].erase("method");
  jb["config"].erase("method");
  CHECK(ja.at("config") == jb.at("config"));
  CHECK(ja.at("rounds")[0].at("personalized") == jb.at("rounds")[0].at("personalized"));
}

TEST_CASE("comparison aggregates are means of rows") {
  const ComparisonReport r =
      run_comparison(small_cfg(), {Method::kLocal, Method::kDp2fl}, {0, 1, 2});
  REQUIRE(r.rows.size() == 6);
  REQUIRE(r.aggregates.size() == 2);
  double s = 0;
  for (int i = 0; i < 3; ++i) s += r.rows[i].personalized.accuracy;
  CHECK(r.aggregates[0].mean_acc == doctest::Approx(s / 3).epsilon(1e-15));
  CHECK_FALSE(r.aggregates[0].mean_global_acc.has_value());
  CHECK(r.aggregates[1].mean_global_acc.has_value());
  std::ostringstream os;
  write_comparison_csv(os, r);
  CHECK(lines(os.str())[0] == "method,seed,mean_acc,mean_micro_f1,mean_macro_f1");

  const ComparisonReport single = run_comparison(small_cfg(), {Method::kLocal}, {0});
  CHECK(single.rows.size() == 1);
}

TEST_CASE("new-client experiment") {
  const ExperimentConfig cfg = small_cfg();
  const auto rows = run_new_client(cfg, 2, {InitMode::kGlobal, InitMode::kInit, InitMode::kInitGlo});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].ave_local_acc == rows[1].ave_local_acc);
  for (const auto& r : rows) {
    CHECK(r.zero_shot.accuracy >= 0.0);
    CHECK(r.all_acc_after <= 1.0);
  }
  CHECK_THROWS_AS(run_new_client(cfg, 3, {InitMode::kGlobal}), ConfigError);
  CHECK(parse_init_mode("initglo") == InitMode::kInitGlo);
  CHECK_THROWS_AS(parse_init_mode("later"), ConfigError);
}

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cglm/cli.hpp"
#include "cglm/harness.hpp"
#include "cglm/report_io.hpp"

using namespace cglm;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

json tiny_config() {
  return json{
      {"family", "bernoulli"},
      {"design", {{"kind", "rademacher"}, {"scale", 1.0}}},
      {"n_grid", {60}},
      {"d_rule", {{"kind", "explicit"}, {"values", {12}}}},
      {"s_star", 2},
      {"b_n", 2},
      {"prior", {{"a_rule", "explicit"}, {"a", 2.0}, {"lambda_rule", "geomean"}}},
      {"sampler",
       {{"iters", 3000}, {"burn_in", 500}, {"thin", 5},
        {"moves", {{"add", 0.2}, {"delete", 0.2}, {"swap", 0.1}, {"walk", 0.5}}}}},
      {"ic", {{"radius", 2.0}, {"restarts", 8}}},
      {"mc_draws", 2000},
      {"replications", 2},
      {"master_seed", 42},
      {"enforce_paper_regime", false},
  };
}

fs::path write_config(const json& j, const std::string& name) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing is fail-fast") {
  CHECK_NOTHROW(parse_config(tiny_config()));
  auto bad = tiny_config();
  bad["family"] = "weibull";
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = tiny_config();
  bad["sampler"]["moves"]["add"] = 0.5;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = tiny_config();
  bad["d_rule"] = {{"kind", "explicit"}, {"values", {12, 20}}};
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = tiny_config();
  bad["n_grid"] = json::array();
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = tiny_config();
  bad["beta_star"] = {{"magnitude_lo", 2.0}, {"magnitude_hi", 1.0}};
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = tiny_config();
  bad["prior"]["lambda_rule"] = "explicit";
  CHECK_THROWS_AS(parse_config(bad), ConfigError);  // missing positive lambda

  bad = tiny_config();
  bad["replications"] = 0;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = tiny_config();
  bad["design"] = {{"kind", "csv"}};
  CHECK_THROWS_AS(parse_config(bad), ConfigError);  // csv needs a path

  // Clip/family mismatch resolves at parse time.
  bad = tiny_config();
  bad["family"] = "exponential";
  bad["clip"] = {{"kind", "identity"}};
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
}

TEST_CASE("tiny experiment end to end") {
  const auto cfg = parse_config(tiny_config());
  const auto report = run_experiment(cfg);
  REQUIRE(report.rows.size() == 2);
  REQUIRE(report.aggregates.size() == 1);
  for (const auto& row : report.rows) {
    INFO(row.abort_reason);
    REQUIRE_FALSE(row.aborted);
    CHECK(row.n == 60);
    CHECK(row.d == 12);
    CHECK(row.phi1_star > 0.0);
    CHECK(row.phibar0_3bn > 0.0);
    CHECK(row.local_variance_ok);
    CHECK(row.lambda > 0.0);
    CHECK(row.a == 2.0);
    CHECK(row.log_marginal.has_value());
    CHECK(row.t1.has_value());
    CHECK(row.mean_l1_error >= 0.0);
  }
  const auto& agg = report.aggregates[0];
  CHECK(agg.cells == 2);
  CHECK(agg.aborted == 0);
  CHECK(agg.t1_frequency >= 0.0);
}

TEST_CASE("identical master seeds give byte-identical outputs") {
  const auto cfg = parse_config(tiny_config());
  const auto dir_a = fs::temp_directory_path() / "cglm_out_a";
  const auto dir_b = fs::temp_directory_path() / "cglm_out_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  emit_outputs(run_experiment(cfg), cfg, dir_a);
  emit_outputs(run_experiment(cfg), cfg, dir_b);
  for (const char* name : {"rows.csv", "report.json", "curve_l1_vs_n.csv", "curve_dim_vs_n.csv"}) {
    INFO(name);
    const auto a = slurp(dir_a / name);
    REQUIRE_FALSE(a.empty());
    REQUIRE(a == slurp(dir_b / name));
  }
  fs::remove_all(dir_b);

  SECTION("re-ingestion reproduces the aggregates") {
    const auto loaded = load_report(dir_a);
    REQUIRE(loaded.rows.size() == 2);
    const auto direct = run_experiment(cfg);
    CHECK(loaded.aggregates[0].mean_p_dim == Approx(direct.aggregates[0].mean_p_dim).margin(1e-12));
    CHECK(loaded.aggregates[0].median_l1 == Approx(direct.aggregates[0].median_l1).margin(1e-12));
    CHECK(loaded.verdicts.t2_pass == direct.verdicts.t2_pass);
  }
  SECTION("tampered rows fail re-ingestion") {
    auto text = slurp(dir_a / "rows.csv");
    const auto pos = text.rfind("\n60,");
    REQUIRE(pos != std::string::npos);
    text.insert(pos + 1, "60,12,9,42,0,,1,0.1,0.1,1,0.1,2,5,5,-1,-1,0,0,0,9,1,,,1,1,1\n");
    std::ofstream(dir_a / "rows.csv") << text;
    CHECK_THROWS_AS(load_report(dir_a), ConfigError);
  }
  fs::remove_all(dir_a);
}

TEST_CASE("report json carries the documented keys") {
  const auto cfg = parse_config(tiny_config());
  const auto dir = fs::temp_directory_path() / "cglm_out_schema";
  fs::remove_all(dir);
  emit_outputs(run_experiment(cfg), cfg, dir);
  json j;
  std::ifstream(dir / "report.json") >> j;
  for (const char* key : {"format_version", "generator", "config", "resolved", "aggregates",
                          "verdicts"}) {
    INFO(key);
    REQUIRE(j.contains(key));
  }
  REQUIRE(j["aggregates"].is_array());
  REQUIRE_FALSE(j["aggregates"].empty());
  for (const char* key : {"n", "d", "cells", "aborted", "mean_p_dim", "mean_p_superset",
                          "mean_p_l1", "median_l1", "median_size"}) {
    INFO(key);
    REQUIRE(j["aggregates"][0].contains(key));
  }
  REQUIRE(j["verdicts"].contains("all_pass"));
  fs::remove_all(dir);
}

TEST_CASE("membership failures abort the cell with a diagnostic") {
  auto j = tiny_config();
  j["s_star"] = 3;  // exceeds b_n = 2: every constructed truth leaves B2
  j["mc_draws"] = 0;
  const auto cfg = parse_config(j);
  const auto report = run_experiment(cfg);
  REQUIRE(report.rows.size() == 2);
  for (const auto& row : report.rows) {
    CHECK(row.aborted);
    CHECK(row.abort_reason.find("sparsity") != std::string::npos);
  }
  CHECK(report.aggregates[0].aborted == 2);
  CHECK_FALSE(report.verdicts.all_pass());
}

TEST_CASE("verdict logic") {
  std::vector<Aggregate> aggs(2);
  aggs[0].n = 100;
  aggs[0].d = 200;
  aggs[0].cells = 4;
  aggs[0].mean_p_dim = 0.05;
  aggs[0].mean_p_l1 = 0.0;
  aggs[0].median_l1 = 2.0;
  aggs[1] = aggs[0];
  aggs[1].n = 400;
  aggs[1].median_l1 = 1.0;

  auto v = compute_verdicts(aggs, 2);
  CHECK(v.t2_pass);
  CHECK(v.t3_radius_pass);
  CHECK(v.t3_contraction_checked);
  CHECK(v.t3_contraction_pass);
  CHECK(v.contraction_ratio == Approx(0.5));

  aggs[1].median_l1 = 1.9;  // ratio 0.95 > 0.85
  v = compute_verdicts(aggs, 2);
  CHECK_FALSE(v.t3_contraction_pass);

  aggs[1].mean_p_dim = 0.08;  // still <= 0.1 and above aggs[0]: trend broken
  v = compute_verdicts(aggs, 2);
  CHECK_FALSE(v.t2_pass);

  aggs[1].mean_p_dim = 0.05;
  aggs[1].mean_p_superset = 0.2;  // final-n strict-superset mass too high
  v = compute_verdicts(aggs, 2);
  CHECK_FALSE(v.c1_pass);
}

TEST_CASE("threads resolution") {
  CHECK(resolve_threads(3) == 3);
  setenv("CGLM_THREADS", "2", 1);
  CHECK(resolve_threads(0) == 2);
  unsetenv("CGLM_THREADS");
  CHECK(resolve_threads(0) >= 1);
}

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) REQUIRE(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 4,
                               [&](std::size_t i) {
                                 if (i == 7) throw ConfigError("boom");
                               }),
                  ConfigError);
}

TEST_CASE("cli exit codes") {
  const auto run = [](std::vector<std::string> args) {
    std::vector<const char*> argv{"cglm"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(int(argv.size()), argv.data());
  };

  SECTION("usage errors") {
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({"constants"}) == 2);  // missing --config
    CHECK(run({"contract", "--config", "/nonexistent.json"}) == 2);
  }

  SECTION("validation and certification tools succeed on the shipped defaults") {
    CHECK(run({"check-clipping"}) == 0);
  }

  SECTION("contract exit reflects the verdicts") {
    // Single-n null-posterior run: dimension/superset/radius checks pass
    // trivially, no trend is evaluated -> exit 0.
    auto ok = tiny_config();
    ok["prior"]["a"] = 6.0;
    ok["mc_draws"] = 0;
    ok["replications"] = 1;
    ok["output_dir"] = (fs::temp_directory_path() / "cglm_cli_ok").string();
    const auto ok_path = write_config(ok, "cglm_cli_ok.json");
    CHECK(run({"contract", "--config", ok_path.string()}) == 0);
    REQUIRE(fs::exists(fs::path(ok["output_dir"].get<std::string>()) / "report.json"));

    // Two-n grid with a heavy model-size penalty: the posterior pins to the
    // null model at both sizes, the contraction trend fails -> exit 3.
    auto fail = tiny_config();
    fail["prior"]["a"] = 6.0;
    fail["mc_draws"] = 0;
    fail["n_grid"] = {40, 50};
    fail["d_rule"] = {{"kind", "explicit"}, {"values", {10, 12}}};
    fail["replications"] = 2;
    fail["output_dir"] = (fs::temp_directory_path() / "cglm_cli_fail").string();
    const auto fail_path = write_config(fail, "cglm_cli_fail.json");
    CHECK(run({"contract", "--config", fail_path.string()}) == 3);

    fs::remove_all(ok["output_dir"].get<std::string>());
    fs::remove_all(fail["output_dir"].get<std::string>());
  }

  SECTION("simulate writes its artifacts") {
    auto sim = tiny_config();
    sim["mc_draws"] = 0;
    sim["output_dir"] = (fs::temp_directory_path() / "cglm_cli_sim").string();
    const auto sim_path = write_config(sim, "cglm_cli_sim.json");
    CHECK(run({"simulate", "--config", sim_path.string()}) == 0);
    for (const char* name : {"dataset.csv", "chain.csv", "summary.json"}) {
      INFO(name);
      REQUIRE(fs::exists(fs::path(sim["output_dir"].get<std::string>()) / name));
    }
    fs::remove_all(sim["output_dir"].get<std::string>());
  }

  SECTION("constants prints the bundle") {
    const auto path = write_config(tiny_config(), "cglm_cli_const.json");
    CHECK(run({"constants", "--config", path.string()}) == 0);
  }
}

TEST_CASE("design csv round trip through the harness") {
  Rng rng(8);
  const auto x = DesignMatrix::rademacher(60, 12, rng);
  const auto path = fs::temp_directory_path() / "cglm_design.csv";
  save_design_csv(path, x);
  auto j = tiny_config();
  j["design"] = {{"kind", "csv"}, {"path", path.string()}};
  j["mc_draws"] = 0;
  j["replications"] = 1;
  const auto cfg = parse_config(j);
  const auto report = run_experiment(cfg);
  REQUIRE(report.rows.size() == 1);
  CHECK_FALSE(report.rows[0].aborted);

  // Dimension mismatch is a config error recorded per cell.
  j["d_rule"] = {{"kind", "explicit"}, {"values", {11}}};
  CHECK_THROWS_AS(run_experiment(parse_config(j)), ConfigError);
  fs::remove(path);
}

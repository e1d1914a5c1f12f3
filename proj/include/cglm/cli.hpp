#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cglm/harness.hpp"
#include "cglm/report_io.hpp"

namespace cglm {

namespace cli_detail {

inline double safe_theta(const ExpFamilyMember& m, Rng& rng) {
  const double u = rng.uniform();
  switch (m.kind()) {
    case Family::bernoulli: return -6.0 + 12.0 * u;
    case Family::poisson: return -4.0 + 7.0 * u;
    case Family::negbinomial: return -6.0 + 5.95 * u;
    case Family::exponential:
    case Family::laplace: return -8.0 + 7.9 * u;
    case Family::gaussian: return -5.0 + 10.0 * u;
    case Family::pareto: return -9.0 + 7.9 * u;
  }
  return 0.0;
}

struct CheckResult {
  bool ok = true;
  std::string detail;
  void fail(const std::string& msg) {
    ok = false;
    if (!detail.empty()) detail += "; ";
    detail += msg;
  }
};

inline CheckResult validate_one_family(const ExpFamilyMember& m, std::uint64_t seed) {
  CheckResult res;
  Rng rng(seed);

  for (int k = 0; k < 2000; ++k) {
    const double ts = safe_theta(m, rng), t = safe_theta(m, rng);
    const double d = kl_divergence(m, ts, t);
    if (!(d >= 0.0)) res.fail("KL negative");
    const double alpha = 0.999 * rng.uniform_pos();
    if (cgf_centered(m, ts, t, alpha) > alpha * d + 1e-10 * std::max(1.0, d))
      res.fail("cgf bound violated");
  }
  {
    const double t0 = safe_theta(m, rng);
    if (kl_divergence(m, t0, t0) != 0.0) res.fail("KL(t,t) != 0");
  }

  for (int k = 0; k < 500; ++k) {
    const double t = safe_theta(m, rng);
    const double h = 1e-5 * std::max(1.0, std::abs(t));
    if (!m.theta_domain().contains(t + h) || !m.theta_domain().contains(t - h)) continue;
    const double ap = log_partition(m, t + h), am = log_partition(m, t - h);
    const auto mv = mean_var(m, t);
    const double fd = (ap - am) / (2.0 * h);
    if (std::abs(fd - mv.mean) > 1e-6 * std::max({1.0, std::abs(fd), std::abs(mv.mean)}))
      res.fail("A' mismatch vs finite differences");
    if (!(mv.variance > 0.0)) res.fail("A'' not positive");
  }

  {
    const double t = safe_theta(m, rng);
    const auto mv = mean_var(m, t);
    const int n = 20000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double T = suff_stat(m, sample_one(m, t, rng));
      s1 += T;
      s2 += T * T;
    }
    const double mean = s1 / n, var = s2 / n - mean * mean;
    if (std::abs(mean - mv.mean) > 6.0 * std::sqrt(mv.variance / n))
      res.fail("sampler mean off");
    if (std::abs(var - mv.variance) > 0.25 * mv.variance + 6.0 * mv.variance / std::sqrt(n))
      res.fail("sampler variance off");
  }

  if (m.kind() == Family::bernoulli || m.kind() == Family::poisson ||
      m.kind() == Family::negbinomial) {
    const double t = safe_theta(m, rng);
    const double mean = mean_var(m, t).mean;
    double sum = 0.0;
    for (double y = 0.0; y < 1e6; y += 1.0) {
      const double term = std::exp(log_density(m, y, t));
      sum += term;
      if (y > mean && term < 1e-16 * sum) break;
      if (m.kind() == Family::bernoulli && y >= 1.0) break;
    }
    if (std::abs(sum - 1.0) > 1e-8) res.fail("density does not sum to 1");
  }
  return res;
}

inline std::vector<ExpFamilyMember> shipped_families() {
  return {ExpFamilyMember::bernoulli(),      ExpFamilyMember::poisson(),
          ExpFamilyMember::neg_binomial(1),  ExpFamilyMember::exponential(),
          ExpFamilyMember::gaussian(),       ExpFamilyMember::pareto(1.0),
          ExpFamilyMember::laplace()};
}

}  // namespace cli_detail

/// CLI entry point. Exit codes: 0 success, 1 internal error or failed
/// validation, 2 configuration/usage error, 3 failed theorem check
/// (contract only).
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"clipped-GLM sparse-posterior toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned threads = 0;
  app.add_option("--config", config_path, "JSON config file")->type_name("PATH");
  app.add_option("--out", out_dir, "output directory (overrides config)")->type_name("DIR");
  app.add_option("--seed", seed, "master seed (overrides config)")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--threads", threads, "worker threads (0: CGLM_THREADS or hardware)");

  auto* cmd_validate = app.add_subcommand("validate-family", "exponential-family invariants");
  auto* cmd_clip = app.add_subcommand("check-clipping", "clipping-condition certificates");
  auto* cmd_constants = app.add_subcommand("constants", "constants bundle + IC estimates");
  auto* cmd_simulate = app.add_subcommand("simulate", "one dataset + chain + summaries");
  auto* cmd_contract = app.add_subcommand("contract", "full experiment with verdicts");
  for (auto* sub : {cmd_validate, cmd_clip, cmd_constants, cmd_simulate, cmd_contract}) {
    sub->fallthrough();  // let --config/--seed/--out follow the subcommand name
  }

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::cerr << e.what() << "\n" << app.help();
      return 2;
    }

    auto load = [&]() {
      auto cfg = load_config(config_path);
      if (seed_set) cfg.master_seed = seed;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (threads > 0) cfg.threads = threads;
      return cfg;
    };

    if (cmd_validate->parsed()) {
      std::vector<ExpFamilyMember> members;
      if (!config_path.empty()) {
        members.push_back(load().member);
      } else {
        members = cli_detail::shipped_families();
      }
      bool all_ok = true;
      for (const auto& m : members) {
        const auto res = cli_detail::validate_one_family(m, seed_set ? seed : 20240601);
        std::printf("[%s] %s%s%s\n", res.ok ? "PASS" : "FAIL", m.describe().c_str(),
                    res.ok ? "" : ": ", res.detail.c_str());
        all_ok = all_ok && res.ok;
      }
      return all_ok ? 0 : 1;
    }

    if (cmd_clip->parsed()) {
      std::vector<std::pair<ExpFamilyMember, ClippingFn>> pairs;
      if (!config_path.empty()) {
        const auto cfg = load();
        pairs.emplace_back(cfg.member, resolve_clip(cfg));
      } else {
        for (const auto& m : cli_detail::shipped_families()) {
          pairs.emplace_back(m, default_clip_for(m));
        }
      }
      std::printf("%-22s %-34s %14s %14s\n", "family", "clip", "log(m0^2)", "m0");
      for (const auto& [m, fn] : pairs) {
        const auto cert = certify_clipping(fn, m);
        std::printf("%-22s %-34s %14.6g %14.6g\n", m.describe().c_str(), fn.describe().c_str(),
                    cert.log_m0_sq, cert.m0);
      }
      return 0;
    }

    if (cmd_constants->parsed()) {
      const auto cfg = load();
      const std::size_t n = cfg.n_grid[0], d = derive_d(cfg, 0);
      const CglmModel model(cfg.member, resolve_clip(cfg),
                            detail::build_design(cfg, n, d, 0));
      const auto g = prepare_cell_geometry(cfg, model, 0, 0);
      std::printf("model: %s + %s, n=%zu d=%zu ||X||=%.6g\n", model.member.describe().c_str(),
                  model.clip.describe().c_str(), n, d, model.design.max_abs());
      std::printf("beta*: |S*|=%zu ||beta*||_1=%.6g\n", g.beta_star.size(), g.beta_star.l1());
      if (g.aborted) {
        std::printf("membership: ABORT (%s)\n", g.abort_reason.c_str());
        return 0;
      }
      std::printf("membership: B1=%d B2=%d Bn=%d\n", int(g.verdict.in_b1), int(g.verdict.in_b2),
                  int(g.verdict.in_bn));
      std::printf("phi1(S*)      = %.8g (converged=%d)\n", g.verdict.phi1_star.value,
                  int(g.verdict.phi1_star.converged));
      std::printf("phibar0(3b_n) = %.8g\n", g.verdict.phibar0_3s.value);
      const auto& c = g.bundle;
      std::printf("m0=%.6g m1=%.6g M(A,X)=%.6g\n", c.m0, c.m1, c.m_ax);
      std::printf("lambda bounds: [%.8g, %.8g]  (chosen lambda=%.8g)\n", c.lambda_lo,
                  c.lambda_hi, g.lambda);
      std::printf("E1=%.8g E2=%.8g U_n=%.6g B_n*=%.6g eps_local=%.6g\n", c.e1, c.e2, c.u_n,
                  c.b_n_star, c.eps_local);
      const auto rules = an_rules(c.e1, cfg.b_n);
      std::printf("a rules: thm2 (any a > 1), cor1 >= %.8g, thm3 >= %.8g (chosen a=%.8g)\n",
                  rules.selection, rules.contraction, g.a);
      std::printf("thresholds: dim=%.8g radius_l1=%.8g prior_mass_log=%.8g marginal_log=%.8g\n",
                  g.bounds.dim_threshold, g.bounds.radius_l1, g.bounds.prior_mass_log_bound,
                  g.bounds.marginal_log_bound);
      std::printf("local variance check: %s\n", g.local_variance_ok ? "ok" : "FAILED");
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        json j{{"phi1_star", g.verdict.phi1_star.value},
               {"phibar0_3bn", g.verdict.phibar0_3s.value},
               {"m0", c.m0},
               {"m1", c.m1},
               {"m_ax", c.m_ax},
               {"lambda_lo", c.lambda_lo},
               {"lambda_hi", c.lambda_hi},
               {"lambda", g.lambda},
               {"e1", c.e1},
               {"e2", c.e2},
               {"u_n", c.u_n},
               {"b_n_star", c.b_n_star},
               {"a", g.a},
               {"dim_threshold", g.bounds.dim_threshold},
               {"radius_l1", g.bounds.radius_l1},
               {"prior_mass_log_bound", g.bounds.prior_mass_log_bound},
               {"marginal_log_bound", g.bounds.marginal_log_bound},
               {"local_variance_ok", g.local_variance_ok}};
        std::ofstream(std::filesystem::path(out_dir) / "constants.json") << j.dump(2) << "\n";
      }
      return 0;
    }

    if (cmd_simulate->parsed()) {
      const auto cfg = load();
      const std::size_t n = cfg.n_grid[0], d = derive_d(cfg, 0);
      const CglmModel model(cfg.member, resolve_clip(cfg),
                            detail::build_design(cfg, n, d, 0));
      CellArtifacts art;
      const auto row = run_cell(cfg, model, 0, 0, &art);
      if (row.aborted) {
        std::cerr << "cell aborted: " << row.abort_reason << "\n";
        return 2;
      }
      const std::filesystem::path dir = cfg.output_dir;
      std::filesystem::create_directories(dir);
      save_dataset_csv(dir / "dataset.csv", art.data);
      PosteriorChain merged;
      merged.states = art.states;
      export_chain_csv(dir / "chain.csv", merged, *art.beta_star);
      json j{{"n", row.n},
             {"d", row.d},
             {"p_dim_exceed", row.p_dim_exceed},
             {"p_superset", row.p_superset},
             {"p_l1_exceed", row.p_l1_exceed},
             {"mean_l1_error", row.mean_l1_error},
             {"mean_size", row.mean_size},
             {"dim_threshold", row.dim_threshold},
             {"radius_l1", row.radius_l1},
             {"a", row.a},
             {"lambda", row.lambda},
             {"local_variance_ok", row.local_variance_ok}};
      if (row.log_marginal) {
        j["log_marginal"] = *row.log_marginal;
        j["marginal_log_bound"] = row.marginal_log_bound;
      }
      std::ofstream(dir / "summary.json") << j.dump(2) << "\n";
      std::printf("n=%zu d=%zu  mean |supp| = %.3f  mean l1 error = %.4f\n", row.n, row.d,
                  row.mean_size, row.mean_l1_error);
      std::printf("P(dim > %.3g) = %.4f  P(superset) = %.4f  P(l1 > %.3g) = %.4f\n",
                  row.dim_threshold, row.p_dim_exceed, row.p_superset, row.radius_l1,
                  row.p_l1_exceed);
      std::printf("wrote %s, %s, %s\n", (dir / "dataset.csv").c_str(),
                  (dir / "chain.csv").c_str(), (dir / "summary.json").c_str());
      return 0;
    }

    if (cmd_contract->parsed()) {
      const auto cfg = load();
      const auto t0 = std::chrono::steady_clock::now();
      const auto report = run_experiment(cfg);
      emit_outputs(report, cfg, cfg.output_dir);
      const double secs = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0).count();
      const auto& v = report.verdicts;
      if (v.t1_checked)
        std::printf("T1 (marginal bound frequency): %s\n", v.t1_pass ? "pass" : "FAIL");
      std::printf("T2 (posterior dimension):      %s\n", v.t2_pass ? "pass" : "FAIL");
      std::printf("C1 (no strict supersets):      %s\n", v.c1_pass ? "pass" : "FAIL");
      std::printf("T3 (l1 radius):                %s\n", v.t3_radius_pass ? "pass" : "FAIL");
      if (v.t3_contraction_checked)
        std::printf("T3 (contraction trend):        %s (ratio %.4f)\n",
                    v.t3_contraction_pass ? "pass" : "FAIL", v.contraction_ratio);
      std::printf("outputs in %s\n", cfg.output_dir.c_str());
      std::fprintf(stderr, "elapsed: %.1fs\n", secs);
      return v.all_pass() ? 0 : 3;
    }

    std::cerr << app.help();
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CertificationError& e) {
    std::cerr << "certification error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace cglm

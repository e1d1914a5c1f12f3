#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "cglm/icgeom.hpp"
#include "cglm/posterior.hpp"
#include "test_util.hpp"

using namespace cglm;
using Catch::Approx;

namespace {

struct Fixture {
  CglmModel model;
  ComplexityPrior prior;
  SparseCoef beta_star;
  Dataset data;
};

Fixture make_fixture(Family fam, std::uint64_t seed, std::size_t n = 30) {
  Rng xr(seed);
  auto x = DesignMatrix::rademacher(n, 2, xr);
  ExpFamilyMember member = fam == Family::bernoulli ? ExpFamilyMember::bernoulli()
                           : fam == Family::poisson ? ExpFamilyMember::poisson()
                                                    : ExpFamilyMember::gaussian();
  ClippingFn clip =
      fam == Family::poisson ? ClippingFn::soft_upper(4.0) : ClippingFn::identity();
  CglmModel model(member, clip, std::move(x));
  auto prior = build_prior(2, 1.0, 1.0);
  SparseCoef beta_star(2, {0, 1}, {0.9, -0.6});
  Rng dr(seed + 1);
  auto data = generate_dataset(model, beta_star, dr);
  return {std::move(model), prior, beta_star, std::move(data)};
}

mh::ChainState random_state(const Fixture& f, Rng& rng, std::size_t max_size = 2) {
  const std::size_t s = rng.uniform_int(max_size + 1);
  auto sup = rng.distinct_indices(std::uint32_t(s), std::uint32_t(f.model.d()));
  std::vector<double> vals(s);
  for (auto& v : vals) {
    do {
      v = rng.normal();
    } while (v == 0.0);
  }
  return mh::make_state(f.model, f.data, f.prior, sup, vals);
}

}  // namespace

TEST_CASE("detailed balance audit") {
  auto f = make_fixture(Family::bernoulli, 71, 10);
  SamplerSettings cfg;
  Rng rng(72);
  int checked = 0;
  while (checked < 1000) {
    auto x = random_state(f, rng);
    const auto kind = MoveKind(rng.uniform_int(4));
    auto prop = mh::propose(f.model, f.data, f.prior, cfg, x, kind, 0.7, rng);
    if (prop.self_move) continue;
    ++checked;
    const auto& y = prop.next;

    // Independent recomputation of both target densities.
    const auto fx = mh::make_state(f.model, f.data, f.prior, x.support, x.values);
    const auto fy = mh::make_state(f.model, f.data, f.prior, y.support, y.values);

    // Independent reconstruction of the kernel densities from the state pair.
    double q_fwd = 0.0, q_rev = 0.0;
    const double d = double(f.model.d());
    const double sx = double(x.support.size()), sy = double(y.support.size());
    auto lap = [&](double v) { return std::log(0.5 * f.prior.lambda) - f.prior.lambda * std::abs(v); };
    if (kind == MoveKind::add) {
      std::uint32_t j = 0;
      for (std::size_t k = 0; k < y.support.size(); ++k) {
        if (k >= x.support.size() || x.support[k] != y.support[k]) {
          j = std::uint32_t(k);
          break;
        }
      }
      q_fwd = std::log(cfg.p_add) - std::log(d - sx) + lap(y.values[j]);
      q_rev = std::log(cfg.p_delete) - std::log(sy);
    } else if (kind == MoveKind::del) {
      std::uint32_t j = 0;
      for (std::size_t k = 0; k < x.support.size(); ++k) {
        if (k >= y.support.size() || x.support[k] != y.support[k]) {
          j = std::uint32_t(k);
          break;
        }
      }
      q_fwd = std::log(cfg.p_delete) - std::log(sx);
      q_rev = std::log(cfg.p_add) - std::log(d - sy) + lap(x.values[j]);
    } else if (kind == MoveKind::swap) {
      double v_in = 0.0, v_out = 0.0;
      for (std::size_t k = 0; k < y.support.size(); ++k) {
        if (!std::binary_search(x.support.begin(), x.support.end(), y.support[k]))
          v_in = y.values[k];
      }
      for (std::size_t k = 0; k < x.support.size(); ++k) {
        if (!std::binary_search(y.support.begin(), y.support.end(), x.support[k]))
          v_out = x.values[k];
      }
      q_fwd = std::log(cfg.p_swap) - std::log(sx) - std::log(d - sx) + lap(v_in);
      q_rev = std::log(cfg.p_swap) - std::log(sy) - std::log(d - sy) + lap(v_out);
    } else {
      q_fwd = q_rev = 0.0;  // symmetric walk
    }
    REQUIRE(prop.log_q_fwd == Approx(q_fwd).margin(1e-10));
    REQUIRE(prop.log_q_rev == Approx(q_rev).margin(1e-10));

    const double delta = (fy.log_target() + q_rev) - (fx.log_target() + q_fwd);
    REQUIRE(prop.log_accept == Approx(std::min(0.0, delta)).margin(1e-10));

    // alpha(x->y) pi(x) q(x->y) == alpha(y->x) pi(y) q(y->x), log scale.
    const double lhs = std::min(0.0, delta) + fx.log_target() + q_fwd;
    const double rhs = std::min(0.0, -delta) + fy.log_target() + q_rev;
    REQUIRE(lhs == Approx(rhs).margin(1e-10));
  }
}

TEST_CASE("chain is deterministic and audits its stored log posterior") {
  auto f = make_fixture(Family::gaussian, 81);
  SamplerSettings cfg;
  cfg.iters = 4000;
  cfg.burn_in = 500;
  cfg.thin = 2;
  Rng r1(5), r2(5);
  const auto c1 = run_chain(f.model, f.data, f.prior, cfg, r1);
  const auto c2 = run_chain(f.model, f.data, f.prior, cfg, r2);
  REQUIRE(c1.states.size() == c2.states.size());
  for (std::size_t i = 0; i < c1.states.size(); ++i) {
    REQUIRE(c1.states[i].support == c2.states[i].support);
    REQUIRE(c1.states[i].values == c2.states[i].values);
    REQUIRE(c1.states[i].log_post == c2.states[i].log_post);
  }
  for (auto k : {MoveKind::add, MoveKind::del, MoveKind::swap, MoveKind::walk}) {
    const double r = c1.acceptance_rate(k);
    REQUIRE(r >= 0.0);
    REQUIRE(r <= 1.0);
  }
  // 1% audit of stored log-posterior values.
  for (std::size_t i = 0; i < c1.states.size(); i += 100) {
    const auto& st = c1.states[i];
    const auto fresh = mh::make_state(f.model, f.data, f.prior, st.support, st.values);
    REQUIRE(st.log_post == Approx(fresh.log_target()).margin(1e-8));
  }
}

TEST_CASE("sampler settings validation") {
  auto f = make_fixture(Family::bernoulli, 91, 8);
  Rng rng(1);
  SamplerSettings cfg;
  cfg.iters = 0;
  CHECK_THROWS_AS(run_chain(f.model, f.data, f.prior, cfg, rng), ConfigError);
  cfg = SamplerSettings{};
  cfg.p_add = 0.5;  // no longer sums to one
  CHECK_THROWS_AS(run_chain(f.model, f.data, f.prior, cfg, rng), ConfigError);
}

TEST_CASE("prior recovery with the likelihood switched off") {
  // Zero design: eta is constant, so the chain must sample the prior.
  const std::size_t d = 6;
  CglmModel model(ExpFamilyMember::bernoulli(), ClippingFn::identity(),
                  DesignMatrix(4, d, std::vector<double>(4 * d, 0.0)));
  const auto prior = build_prior(d, 0.5, 1.0);
  Rng dr(3);
  const auto data = generate_dataset(model, SparseCoef::zero(d), dr);

  SamplerSettings cfg;
  cfg.iters = 1005000;
  cfg.burn_in = 5000;
  cfg.thin = 10;
  Rng rng(17);
  const auto chain = run_chain(model, data, prior, cfg, rng);
  REQUIRE(chain.states.size() == 100000);

  SECTION("model-size law") {
    std::vector<double> counts(d + 1, 0.0);
    for (const auto& st : chain.states) counts[st.support.size()] += 1.0;
    double stat = 0.0;
    for (std::size_t s = 0; s <= d; ++s) {
      const double expect = double(chain.states.size()) * std::exp(prior.log_omega(s));
      stat += sq(counts[s] - expect) / expect;
    }
    // Thinned-chain draws are nearly independent here; allow a generous
    // p-threshold per the correlated-sample caveat.
    CHECK(chi2_sf_even_dof(6, stat) > 0.001);
  }
  SECTION("Laplace coordinate law (Kolmogorov-Smirnov)") {
    std::vector<double> values;
    for (const auto& st : chain.states) {
      values.insert(values.end(), st.values.begin(), st.values.end());
    }
    REQUIRE(values.size() > 10000);
    std::sort(values.begin(), values.end());
    const auto cdf = [&](double v) {
      return v < 0.0 ? 0.5 * std::exp(prior.lambda * v)
                     : 1.0 - 0.5 * std::exp(-prior.lambda * v);
    };
    double ks = 0.0;
    const double n = double(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double F = cdf(values[i]);
      ks = std::max(ks, std::abs(F - double(i + 1) / n));
      ks = std::max(ks, std::abs(F - double(i) / n));
    }
    CHECK(ks < 0.02);
  }
}

TEST_CASE("summaries on degenerate chains") {
  const SparseCoef beta_star(4, {1}, {1.5});
  std::vector<StoredState> states(10, StoredState{{1}, {1.5}, 0.0});
  const auto sum = posterior_summaries(states, beta_star, 0.5, 2.5);
  CHECK(sum.p_l1_exceed == 0.0);
  CHECK(sum.p_dim_exceed == 0.0);
  CHECK(sum.p_strict_superset == 0.0);
  CHECK(sum.mean_l1_error == 0.0);
  CHECK(sum.modal_support == std::vector<std::uint32_t>{1});
  CHECK(sum.modal_freq == 1.0);

  // radius 0: the exceed probability counts the states differing from beta*.
  states.push_back(StoredState{{0, 1}, {0.2, 1.5}, 0.0});
  const auto sum2 = posterior_summaries(states, beta_star, 0.0, 2.5);
  CHECK(sum2.p_l1_exceed == Approx(1.0 / 11.0));
  CHECK(sum2.p_strict_superset == Approx(1.0 / 11.0));
  CHECK_THROWS_AS(posterior_summaries(std::vector<StoredState>{}, beta_star, 1.0, 1.0),
                  ConfigError);
}

TEST_CASE("grid oracle reduces to the prior under a zero design") {
  CglmModel model(ExpFamilyMember::bernoulli(), ClippingFn::identity(),
                  DesignMatrix(6, 2, std::vector<double>(12, 0.0)));
  const auto prior = build_prior(2, 1.0, 1.0);
  Rng dr(5);
  const auto data = generate_dataset(model, SparseCoef::zero(2), dr);
  const auto oracle = grid_oracle_posterior(model, data, prior, {0.0, 201});
  REQUIRE(oracle.supports.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto s = oracle.supports[k].size();
    // Quadrature tolerance: trapezoid curvature error of the Laplace factor
    // at this resolution is a few e-4.
    const double expect = std::exp(prior.log_omega(s) - log_binom(2, s));
    CHECK(oracle.support_prob[k] == Approx(expect).margin(1e-3));
  }
  CHECK(std::abs(oracle.posterior_mean[0]) < 1e-12);  // symmetric integrand
}

TEST_CASE("grid oracle symmetry under coordinate swap") {
  // Identical columns and a symmetric likelihood: supports {0} and {1} must
  // carry equal posterior mass.
  std::vector<double> entries;
  Rng xr(31);
  for (int i = 0; i < 20; ++i) {
    const double v = xr.bernoulli(0.5) ? 1.0 : -1.0;
    entries.push_back(v);
    entries.push_back(v);
  }
  CglmModel model(ExpFamilyMember::gaussian(), ClippingFn::identity(),
                  DesignMatrix(20, 2, std::move(entries)));
  const auto prior = build_prior(2, 1.0, 1.0);
  Rng dr(32);
  const auto data = generate_dataset(model, SparseCoef(2, {0}, {0.8}), dr);
  const auto oracle = grid_oracle_posterior(model, data, prior, {0.0, 201});
  double p0 = 0.0, p1 = 0.0;
  for (std::size_t k = 0; k < oracle.supports.size(); ++k) {
    if (oracle.supports[k] == std::vector<std::uint32_t>{0}) p0 = oracle.support_prob[k];
    if (oracle.supports[k] == std::vector<std::uint32_t>{1}) p1 = oracle.support_prob[k];
  }
  CHECK(p0 == Approx(p1).epsilon(1e-8));
  CHECK(oracle.posterior_mean[0] == Approx(oracle.posterior_mean[1]).margin(1e-8));
  CHECK_THROWS_AS(grid_oracle_posterior(
                      CglmModel(ExpFamilyMember::gaussian(), ClippingFn::identity(),
                                DesignMatrix(2, 4, std::vector<double>(8, 0.0))),
                      data, build_prior(4, 1.0, 1.0), GridSpec{}),
                  ConfigError);
}

TEST_CASE("chain and marginal estimates agree with the grid oracle") {
  for (Family fam : {Family::bernoulli, Family::poisson, Family::gaussian}) {
    auto f = make_fixture(fam, 400 + std::uint64_t(fam));
    INFO(f.model.member.describe());

    const auto oracle = grid_oracle_posterior(f.model, f.data, f.prior, {0.0, 301});

    SamplerSettings cfg;
    cfg.iters = 60000;
    cfg.burn_in = 5000;
    cfg.thin = 5;
    Rng rng(7);
    const auto chain = run_chain(f.model, f.data, f.prior, cfg, rng);

    // TV distance between support posteriors.
    std::map<std::vector<std::uint32_t>, double> freq;
    for (const auto& st : chain.states) freq[st.support] += 1.0 / double(chain.states.size());
    double tv = 0.0;
    for (std::size_t k = 0; k < oracle.supports.size(); ++k) {
      tv += 0.5 * std::abs(freq[oracle.supports[k]] - oracle.support_prob[k]);
    }
    CHECK(tv <= 0.05);

    // Posterior means within 0.02.
    std::vector<double> mean(2, 0.0);
    for (const auto& st : chain.states) {
      for (std::size_t k = 0; k < st.support.size(); ++k) {
        mean[st.support[k]] += st.values[k] / double(chain.states.size());
      }
    }
    CHECK(std::abs(mean[0] - oracle.posterior_mean[0]) <= 0.02);
    CHECK(std::abs(mean[1] - oracle.posterior_mean[1]) <= 0.02);

    // Ratio-form marginal: MC vs quadrature within 3 MC standard errors.
    Rng mrng(11);
    const auto mc = marginal_likelihood_mc(f.model, f.data, f.prior, f.beta_star, 30000, mrng);
    const double oracle_log_marginal =
        oracle.log_evidence - suff_log_lik(f.model, f.data, f.beta_star);
    CHECK(std::abs(mc.log_estimate - oracle_log_marginal) <=
          std::max(3.0 * mc.log_se(), 0.02));
  }
}

TEST_CASE("marginal estimator basics") {
  auto f = make_fixture(Family::gaussian, 500);
  SECTION("draw floor enforced") {
    Rng r(1);
    CHECK_THROWS_AS(marginal_likelihood_mc(f.model, f.data, f.prior, f.beta_star, 10, r),
                    ConfigError);
  }
  SECTION("seed reproducible") {
    Rng r1(2), r2(2);
    const auto a = marginal_likelihood_mc(f.model, f.data, f.prior, f.beta_star, 5000, r1);
    const auto b = marginal_likelihood_mc(f.model, f.data, f.prior, f.beta_star, 5000, r2);
    CHECK(a.log_estimate == b.log_estimate);
    CHECK(a.log_second_moment == b.log_second_moment);
  }
  SECTION("doubling draws moves the estimate less than 3 pooled SEs") {
    Rng r1(3), r2(4);
    const auto a = marginal_likelihood_mc(f.model, f.data, f.prior, f.beta_star, 40000, r1);
    const auto b = marginal_likelihood_mc(f.model, f.data, f.prior, f.beta_star, 80000, r2);
    const double pooled = std::hypot(a.log_se(), b.log_se());
    CHECK(std::abs(a.log_estimate - b.log_estimate) <= std::max(3.0 * pooled, 0.01));
  }
  SECTION("a prior concentrated at the truthless null keeps L_n near zero") {
    // With beta* = 0 the ratio at the null model is exactly L_n = 0 and the
    // prior puts almost all mass there, so the estimate sits near zero.
    Rng xr(9);
    CglmModel model(ExpFamilyMember::gaussian(), ClippingFn::identity(),
                    DesignMatrix::rademacher(10, 8, xr));
    const auto prior = build_prior(8, 6.0, 1.0);
    Rng dr(10);
    const auto data = generate_dataset(model, SparseCoef::zero(8), dr);
    Rng mr(11);
    const auto est = marginal_likelihood_mc(model, data, prior, SparseCoef::zero(8), 2000, mr);
    CHECK(std::abs(est.log_estimate) < 0.05);
  }
}

TEST_CASE("chain csv export") {
  auto f = make_fixture(Family::bernoulli, 600, 12);
  SamplerSettings cfg;
  cfg.iters = 2000;
  cfg.burn_in = 200;
  cfg.thin = 10;
  Rng rng(4);
  const auto chain = run_chain(f.model, f.data, f.prior, cfg, rng);
  const auto path = std::filesystem::temp_directory_path() / "cglm_chain.csv";
  export_chain_csv(path, chain, f.beta_star);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iter,size,support,l1_error,log_post");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == chain.states.size());
  std::filesystem::remove(path);
}

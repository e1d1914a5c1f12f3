#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "cglm/expfam.hpp"
#include "test_util.hpp"

using namespace cglm;
using testutil::close;
using Catch::Approx;

TEST_CASE("log_partition catalog values") {
  CHECK(log_partition(ExpFamilyMember::exponential(), -1.0) == Approx(0.0).margin(1e-15));
  CHECK(log_partition(ExpFamilyMember::poisson(), 0.0) == Approx(1.0));
  CHECK(log_partition(ExpFamilyMember::neg_binomial(2), -std::log(2.0)) ==
        Approx(2.0 * std::log(2.0)));
  CHECK(log_partition(ExpFamilyMember::bernoulli(), 0.0) == Approx(std::log(2.0)));
  CHECK(log_partition(ExpFamilyMember::gaussian(), 3.0) == Approx(4.5));
  CHECK(log_partition(ExpFamilyMember::laplace(), -2.0) == Approx(0.0).margin(1e-15));
  // Pareto: -log(-1-t) + (1+t) log q_min.
  CHECK(log_partition(ExpFamilyMember::pareto(2.0), -3.0) ==
        Approx(-std::log(2.0) - 2.0 * std::log(2.0)));
}

TEST_CASE("domain violations raise domain errors naming the family") {
  CHECK_THROWS_AS(log_partition(ExpFamilyMember::exponential(), 0.0), DomainError);
  CHECK_THROWS_AS(log_partition(ExpFamilyMember::neg_binomial(1), 0.5), DomainError);
  CHECK_THROWS_AS(mean_var(ExpFamilyMember::pareto(1.0), -1.0), DomainError);
  CHECK_THROWS_AS(kl_divergence(ExpFamilyMember::laplace(), -1.0, 1.0), DomainError);
  try {
    log_partition(ExpFamilyMember::exponential(), 1.0);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("exponential") != std::string::npos);
    CHECK(msg.find("pole") != std::string::npos);
  }
}

TEST_CASE("mean_var closed forms") {
  auto [m1, v1] = mean_var(ExpFamilyMember::poisson(), 0.0);
  CHECK(m1 == Approx(1.0));
  CHECK(v1 == Approx(1.0));
  auto [m2, v2] = mean_var(ExpFamilyMember::gaussian(), 0.7);
  CHECK(m2 == Approx(0.7));
  CHECK(v2 == Approx(1.0));
  auto [m3, v3] = mean_var(ExpFamilyMember::bernoulli(), 0.0);
  CHECK(m3 == Approx(0.5));
  CHECK(v3 == Approx(0.25));
}

TEST_CASE("mean_var matches central finite differences of log_partition") {
  Rng rng(101);
  for (const auto& m : testutil::catalog()) {
    for (int k = 0; k < 1000; ++k) {
      const double t = testutil::random_theta(m, rng);
      const double h = 1e-5 * std::max(1.0, std::abs(t));
      if (!m.theta_domain().contains(t + h) || !m.theta_domain().contains(t - h)) continue;
      const double ap = log_partition(m, t + h), am = log_partition(m, t - h);
      const double a0 = log_partition(m, t);
      const auto mv = mean_var(m, t);
      const double fd_mean = (ap - am) / (2.0 * h);
      const double fd_var = (ap - 2.0 * a0 + am) / (h * h);
      REQUIRE(close(fd_mean, mv.mean, 1e-6));
      // Second differences lose ~h^2 * A / eps digits; 1e-4 relative is the
      // honest resolution at h = 1e-5.
      REQUIRE(close(fd_var, mv.variance, 1e-4));
      REQUIRE(mv.variance > 0.0);
    }
  }
}

TEST_CASE("A-prime strictly increasing and A convex on a dense grid") {
  for (const auto& m : testutil::catalog()) {
    Rng rng(7);
    double prev_t = -1e18, prev_mean = -1e18;
    std::vector<double> grid;
    for (int i = 0; i < 512; ++i) grid.push_back(testutil::random_theta(m, rng));
    std::sort(grid.begin(), grid.end());
    for (double t : grid) {
      const auto mv = mean_var(m, t);
      if (prev_t > -1e17 && t > prev_t) REQUIRE(mv.mean > prev_mean);
      REQUIRE(mv.variance > 0.0);
      prev_t = t;
      prev_mean = mv.mean;
    }
  }
}

TEST_CASE("log_density values") {
  CHECK(log_density(ExpFamilyMember::bernoulli(), 1.0, 0.0) == Approx(-std::log(2.0)));
  CHECK(log_density(ExpFamilyMember::poisson(), 0.0, 0.0) == Approx(-1.0));
  CHECK(log_density(ExpFamilyMember::gaussian(), 0.0, 0.0) ==
        Approx(-0.5 * std::log(2.0 * std::numbers::pi)));
  CHECK_THROWS_AS(log_density(ExpFamilyMember::bernoulli(), 2.0, 0.0), SupportError);
  CHECK_THROWS_AS(log_density(ExpFamilyMember::poisson(), 1.5, 0.0), SupportError);
  CHECK_THROWS_AS(log_density(ExpFamilyMember::pareto(2.0), 1.0, -2.0), SupportError);
}

TEST_CASE("KL catalog values") {
  CHECK(kl_divergence(ExpFamilyMember::poisson(), 0.0, std::log(2.0)) ==
        Approx(1.0 - std::log(2.0)));
  CHECK(kl_divergence(ExpFamilyMember::gaussian(), 0.3, -1.2) == Approx(0.5 * 1.5 * 1.5));
  CHECK(kl_divergence(ExpFamilyMember::bernoulli(), 1.3, 1.3) == 0.0);
}

TEST_CASE("KL nonnegativity, identity, and closed-form agreement") {
  Rng rng(2024);
  for (const auto& m : testutil::catalog()) {
    for (int k = 0; k < 10000; ++k) {
      const double ts = testutil::random_theta(m, rng);
      const double t = testutil::random_theta(m, rng);
      const double d = kl_divergence(m, ts, t);
      REQUIRE(d >= 0.0);
      REQUIRE(close(d, testutil::kl_closed_form(m, ts, t), 1e-12));
      if (ts == t) REQUIRE(d == 0.0);
    }
    REQUIRE(kl_divergence(m, testutil::random_theta(m, rng), testutil::random_theta(m, rng)) >=
            0.0);
    const double same = testutil::random_theta(m, rng);
    REQUIRE(kl_divergence(m, same, same) == 0.0);
  }
}

TEST_CASE("cgf identity and convexity bound") {
  Rng rng(33);
  SECTION("Gaussian closed form is exact") {
    const auto g = ExpFamilyMember::gaussian();
    for (double alpha : {0.1, 0.5, 0.9}) {
      for (int k = 0; k < 100; ++k) {
        const double ts = testutil::random_theta(g, rng), t = testutil::random_theta(g, rng);
        const double psi = cgf_centered(g, ts, t, alpha);
        REQUIRE(psi == Approx(0.5 * alpha * alpha * cglm::sq(t - ts)).margin(1e-12));
      }
    }
  }
  SECTION("Bernoulli spot value") {
    const auto b = ExpFamilyMember::bernoulli();
    const double expect = log1pexp(0.5) - std::log(2.0) - 0.5 * 0.5;
    CHECK(cgf_centered(b, 0.0, 1.0, 0.5) == Approx(expect));
  }
  SECTION("psi(alpha) <= alpha * D across the catalog") {
    for (const auto& m : testutil::catalog()) {
      for (int k = 0; k < 10000; ++k) {
        const double ts = testutil::random_theta(m, rng), t = testutil::random_theta(m, rng);
        const double alpha = 0.999 * rng.uniform_pos();
        const double psi = cgf_centered(m, ts, t, alpha);
        const double d = kl_divergence(m, ts, t);
        REQUIRE(psi <= alpha * d + 1e-12 * std::max(1.0, d));
      }
      const double same = testutil::random_theta(m, rng);
      REQUIRE(cgf_centered(m, same, same, 0.5) == 0.0);
    }
  }
  SECTION("alpha outside (0,1) rejected") {
    CHECK_THROWS_AS(cgf_centered(ExpFamilyMember::gaussian(), 0.0, 1.0, 1.0), ConfigError);
    CHECK_THROWS_AS(cgf_centered(ExpFamilyMember::gaussian(), 0.0, 1.0, 0.0), ConfigError);
  }
}

namespace {

double discrete_log_normalizer(const ExpFamilyMember& m, double t) {
  if (m.kind() == Family::bernoulli) {
    return std::log(std::exp(log_density(m, 0.0, t)) + std::exp(log_density(m, 1.0, t)));
  }
  // Sums exp(log_density) over the support until the term falls below
  // 1e-16 of the running sum past the mean.
  const double mean = mean_var(m, t).mean;
  double sum = 0.0;
  for (double y = 0.0;; y += 1.0) {
    const double term = std::exp(log_density(m, y, t));
    sum += term;
    if (y > mean && term < 1e-16 * sum) break;
    REQUIRE(y < 1e7);
  }
  return std::log(sum);
}

double continuous_log_normalizer(const ExpFamilyMember& m, double t) {
  using testutil::integrate;
  switch (m.kind()) {
    case Family::gaussian: {
      const double mu = m.sigma() * t;
      return std::log(integrate([&](double y) { return std::exp(log_density(m, y, t)); },
                                mu - 12.0 * m.sigma(), mu + 12.0 * m.sigma()));
    }
    case Family::exponential: {
      const double rate = -t;
      return std::log(integrate([&](double y) { return std::exp(log_density(m, y, t)); }, 0.0,
                                42.0 / rate));
    }
    case Family::laplace: {
      const double rate = -t;
      return std::log(integrate([&](double y) { return std::exp(log_density(m, y, t)); },
                                -42.0 / rate, 42.0 / rate));
    }
    case Family::pareto: {
      // Substitute y = q_min e^v so the heavy tail integrates comfortably.
      const double alpha = -1.0 - t;
      auto g = [&](double v) {
        const double y = m.q_min() * std::exp(v);
        return std::exp(log_density(m, y, t)) * y;
      };
      return std::log(integrate(g, 0.0, 42.0 / alpha));
    }
    default: FAIL("not a continuous family");
  }
  return 0.0;
}

}  // namespace

TEST_CASE("densities are normalized") {
  Rng rng(55);
  for (const auto& m : testutil::catalog()) {
    const bool discrete = m.kind() == Family::bernoulli || m.kind() == Family::poisson ||
                          m.kind() == Family::negbinomial;
    for (int k = 0; k < 25; ++k) {
      const double t = testutil::random_theta(m, rng);
      if (discrete) {
        REQUIRE(discrete_log_normalizer(m, t) == Approx(0.0).margin(1e-10));
      } else {
        REQUIRE(continuous_log_normalizer(m, t) == Approx(0.0).margin(1e-8));
      }
    }
  }
}

TEST_CASE("sampler moments match mean_var within four standard errors") {
  const int n = 100000;
  struct Case {
    ExpFamilyMember m;
    double t;
  };
  const Case cases[] = {
      {ExpFamilyMember::bernoulli(), 0.0},    {ExpFamilyMember::poisson(), 0.5},
      {ExpFamilyMember::neg_binomial(3), -0.7}, {ExpFamilyMember::exponential(), -2.0},
      {ExpFamilyMember::gaussian(1.0), 0.0},  {ExpFamilyMember::pareto(2.0), -3.0},
      {ExpFamilyMember::laplace(), -1.5},
  };
  std::uint64_t seed = 9000;
  for (const auto& c : cases) {
    Rng rng(seed++);
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    std::vector<double> ts(n);
    for (int i = 0; i < n; ++i) {
      ts[i] = suff_stat(c.m, sample_one(c.m, c.t, rng));
      s1 += ts[i];
    }
    const double mean = s1 / n;
    for (int i = 0; i < n; ++i) {
      const double d = ts[i] - mean;
      s2 += d * d;
      s4 += d * d * d * d;
    }
    const double var = s2 / n;
    const double m4 = s4 / n;
    const auto mv = mean_var(c.m, c.t);
    const double se_mean = std::sqrt(mv.variance / n);
    const double se_var = std::sqrt(std::max(m4 - var * var, 0.0) / n);
    INFO(c.m.describe() << " at t=" << c.t);
    CHECK(std::abs(mean - mv.mean) <= 4.0 * se_mean);
    CHECK(std::abs(var - mv.variance) <= 4.0 * se_var);
  }

  // Spec'd spot bands.
  {
    Rng rng(42);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += sample_one(ExpFamilyMember::bernoulli(), 0.0, rng);
    CHECK(std::abs(s / n - 0.5) <= 0.01);
  }
  {
    Rng rng(43);
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double y = sample_one(ExpFamilyMember::poisson(), 0.0, rng);
      s1 += y;
      s2 += y * y;
    }
    const double mean = s1 / n;
    CHECK(std::abs(s2 / n - mean * mean - 1.0) <= 0.05);
  }
}

TEST_CASE("sampling is deterministic under a fixed stream") {
  Rng a(777), b(777);
  for (const auto& m : testutil::catalog()) {
    Rng ra(777), rb(777);
    const double t = m.theta_domain().contains(0.5) ? 0.5 : -2.0;
    for (int i = 0; i < 100; ++i) {
      REQUIRE(sample_one(m, t, ra) == sample_one(m, t, rb));
    }
  }
  CHECK(sample_one(ExpFamilyMember::gaussian(), 0.0, a) ==
        sample_one(ExpFamilyMember::gaussian(), 0.0, b));
}

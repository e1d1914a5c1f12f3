#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cglm/errors.hpp"
#include "cglm/math.hpp"
#include "cglm/model.hpp"
#include "cglm/rng.hpp"

namespace cglm {

/// Spike-and-Laplace complexity prior on (S, beta):
///   Pi(S, beta) = omega(|S|) C(d,|S|)^{-1} (lambda/2)^{|S|}
///                 exp(-lambda ||beta_S||_1) delta_0(beta_{S^c}),
/// with model-size weights omega(s) = C_n d^{-a s}, s = 0..d.
struct ComplexityPrior {
  std::size_t d = 0;
  double a = 0.0;
  double lambda = 0.0;
  double log_cn = 0.0;

  double log_omega(std::size_t s) const {
    return log_cn - a * double(s) * std::log(double(d));
  }
};

inline ComplexityPrior build_prior(std::size_t d, double a, double lambda) {
  if (d < 2) throw ConfigError("prior: d must be >= 2");
  if (!(a > 0.0)) throw ConfigError("prior: a must be positive");
  if (!(lambda > 0.0)) throw ConfigError("prior: lambda must be positive");
  ComplexityPrior p;
  p.d = d;
  p.a = a;
  p.lambda = lambda;
  // sum_{s=0}^{d} r^s with r = d^{-a}, in log space (geometric sum).
  const double log_r = -a * std::log(double(d));
  const double r = std::exp(log_r);
  const double r_top = std::exp(log_r * double(d + 1));
  p.log_cn = -(std::log1p(-r_top) - std::log1p(-r));
  return p;
}

/// log Pi(S, beta); -inf when beta has mass off S (the delta_0 factor).
inline double log_prior_joint(const ComplexityPrior& prior,
                              const std::vector<std::uint32_t>& S, const SparseCoef& beta) {
  for (std::size_t k = 0; k < S.size(); ++k) {
    if (S[k] >= prior.d) throw ConfigError("prior: model index out of range");
    if (k > 0 && S[k] <= S[k - 1]) throw ConfigError("prior: model set must be sorted");
  }
  // supp(beta) must be contained in S.
  for (auto j : beta.support()) {
    if (!std::binary_search(S.begin(), S.end(), j)) return kNegInf;
  }
  const auto s = S.size();
  return prior.log_omega(s) - log_binom(prior.d, s) +
         double(s) * std::log(0.5 * prior.lambda) - prior.lambda * beta.l1();
}

/// Draw (S, beta): size from omega via its closed-form inverse CDF, a uniform
/// size-s subset, then iid Laplace(lambda) signal values.
inline std::pair<std::vector<std::uint32_t>, SparseCoef> sample_prior(
    const ComplexityPrior& prior, Rng& rng) {
  const double log_r = -prior.a * std::log(double(prior.d));
  const double r = std::exp(log_r);
  std::size_t s = 0;
  if (r > 0.0) {
    const double r_top = std::exp(log_r * double(prior.d + 1));
    const double u = rng.uniform_pos();
    // Smallest s with (1 - r^{s+1})/(1 - r_top) >= u.
    const double rhs = std::log1p(-u * (1.0 - r_top)) / log_r;
    const double s_real = std::ceil(rhs) - 1.0;
    s = std::size_t(std::clamp(s_real, 0.0, double(prior.d)));
  }
  auto support = rng.distinct_indices(std::uint32_t(s), std::uint32_t(prior.d));
  std::vector<double> values(s);
  for (auto& v : values) {
    do {
      v = rng.laplace(prior.lambda);
    } while (v == 0.0);
  }
  return {support, SparseCoef(prior.d, support, std::move(values))};
}

/// log of the Laplace l1-ball mass (lambda/2)^s int_{||chi||_1 <= B} e^{-lambda ||chi||_1},
/// which equals P(Gamma(s, lambda) <= B).
inline double log_laplace_ball_mass(std::size_t s, double lambda, double radius) {
  if (s == 0) return 0.0;
  return log_gamma_cdf_integer(s, lambda, radius);
}

/// Truth-free constants derived from the model geometry and order rules.
struct ConstantsBundle {
  double m0 = 0.0;         // clipping constant M_0(A)
  double m1 = 0.0;         // M_1(A) = max(1, m0)
  double m_ax = 0.0;       // M(A, X) = ||X||_(inf,inf) M_1(A)
  double lambda_lo = 0.0;  // M(A,X)/d
  double lambda_hi = 0.0;  // M(A,X) sqrt(log d)
  double e1 = 0.0;         // 8 (1 + 49 m_ax^2 / (8 phi^2))
  std::optional<double> e1_star;  // same with phi_1(S*) when supplied
  double e2 = 0.0;         // 6 + 12 m_ax^2 / phibar0(3 b_n)^2
  double u_n = 0.0;        // m_ax sqrt(n log d)
  double b_n_star = 0.0;   // sqrt(s* log d / n) / m_ax
  double eps_local = 0.0;  // sqrt(s* log d / n)
  std::size_t b_n = 0, s_star = 0, n = 0, d = 0;
};

inline double e1_from_phi(double m_ax, double phi) {
  return 8.0 * (1.0 + 49.0 * sq(m_ax) / (8.0 * sq(phi)));
}

inline double e2_from_phibar0(double m_ax, double phibar0) {
  return 6.0 + 12.0 * sq(m_ax) / sq(phibar0);
}

/// Assembles the bundle, reporting every violated order assumption by name.
/// `phi` feeds E1 (the compatibility estimate over candidate supports) and
/// `phibar0_3bn` feeds E2. The d > n requirement is enforced only in
/// paper-regime mode so analytic d <= n test configurations stay usable.
inline ConstantsBundle constants(const CglmModel& model, std::size_t b_n, std::size_t s_star,
                                 double phi, double phibar0_3bn,
                                 bool enforce_paper_regime = false,
                                 std::optional<double> phi1_star = std::nullopt) {
  const std::size_t n = model.n(), d = model.d();
  std::vector<std::string> violations;
  if (s_star < 1) violations.push_back("s_star >= 1");
  if (s_star > b_n) violations.push_back("s_star <= b_n");
  if (d < 2) violations.push_back("d >= 2");
  if (!(double(b_n) * std::log(double(d)) < double(n)))
    violations.push_back("b_n log d < n");
  if (!(3 * b_n < d)) violations.push_back("3 b_n < d");
  if (enforce_paper_regime && !(d > n)) violations.push_back("d > n (paper regime)");
  if (!(phi > 0.0)) violations.push_back("phi > 0");
  if (!(phibar0_3bn > 0.0)) violations.push_back("phibar0(3 b_n) > 0");
  if (!violations.empty()) {
    std::string msg = "order assumptions violated:";
    for (const auto& v : violations) msg += " [" + v + "]";
    throw ConfigError(msg);
  }

  ConstantsBundle c;
  c.m0 = model.cert.m0;
  c.m1 = model.m1();
  c.m_ax = model.m_ax();
  c.lambda_lo = c.m_ax / double(d);
  c.lambda_hi = c.m_ax * std::sqrt(std::log(double(d)));
  c.e1 = e1_from_phi(c.m_ax, phi);
  if (phi1_star) c.e1_star = e1_from_phi(c.m_ax, *phi1_star);
  c.e2 = e2_from_phibar0(c.m_ax, phibar0_3bn);
  c.u_n = c.m_ax * std::sqrt(double(n) * std::log(double(d)));
  c.eps_local = std::sqrt(double(s_star) * std::log(double(d)) / double(n));
  c.b_n_star = c.eps_local / c.m_ax;
  c.b_n = b_n;
  c.s_star = s_star;
  c.n = n;
  c.d = d;
  return c;
}

/// Minimal model-decay exponents per guarantee; callers pick per experiment.
struct AnRules {
  double above_one = 1.0;    // dimension control needs any a > 1 (strict)
  double selection = 0.0;    // no-strict-superset control: a >= 1 + 2 b_n e1
  double contraction = 0.0;  // l1-contraction choice: a >= 1 + e1
};

inline AnRules an_rules(double e1, std::size_t b_n) {
  if (!(e1 > 0.0)) throw ConfigError("an_rules: e1 must be positive");
  return {1.0, 1.0 + 2.0 * double(b_n) * e1, 1.0 + e1};
}

enum class LambdaRule : std::uint8_t { lo, hi, geomean, explicit_value };

inline LambdaRule lambda_rule_from_name(const std::string& name) {
  if (name == "lo") return LambdaRule::lo;
  if (name == "hi") return LambdaRule::hi;
  if (name == "geomean") return LambdaRule::geomean;
  if (name == "explicit") return LambdaRule::explicit_value;
  throw ConfigError("unknown lambda rule: " + name);
}

/// Accepts lambda in [lambda_lo, lambda_hi] (boundaries included).
inline void validate_lambda(const ConstantsBundle& c, double lambda) {
  if (lambda < c.lambda_lo || lambda > c.lambda_hi) {
    throw ConfigError("lambda = " + std::to_string(lambda) + " violates the rate bounds [" +
                      std::to_string(c.lambda_lo) + ", " + std::to_string(c.lambda_hi) + "]");
  }
}

inline double resolve_lambda(LambdaRule rule, const ConstantsBundle& c,
                             double explicit_value = 0.0) {
  switch (rule) {
    case LambdaRule::lo: return c.lambda_lo;
    case LambdaRule::hi: return c.lambda_hi;
    case LambdaRule::geomean: return std::sqrt(c.lambda_lo * c.lambda_hi);
    case LambdaRule::explicit_value:
      if (!(explicit_value > 0.0)) throw ConfigError("explicit lambda must be positive");
      return explicit_value;
  }
  return 0.0;
}

/// Thresholds appearing in the posterior-mass statements.
struct Thresholds {
  double dim_threshold = 0.0;    // support-size bound
  double radius_l1 = 0.0;        // l1 contraction radius
  double prior_mass_log_bound = 0.0; // prior mass of the D_n set
  double marginal_log_bound = 0.0;   // marginal-likelihood bound
};

inline Thresholds thresholds(const ConstantsBundle& bundle, const ComplexityPrior& prior,
                             std::size_t s_star, double phi1_star, std::size_t n,
                             std::size_t d, double beta_star_l1) {
  if (!(prior.a > 1.0)) {
    throw ConfigError("dimension threshold needs a > 1 (got a = " + std::to_string(prior.a) + ")");
  }
  if (!(phi1_star > 0.0)) throw ConfigError("thresholds: phi1_star must be positive");
  Thresholds t;
  const double logd = std::log(double(d));
  const double ss = double(s_star);
  t.dim_threshold =
      ss * (1.0 + (8.0 / (prior.a - 1.0)) *
                      (1.0 + 49.0 * sq(bundle.m_ax) / (8.0 * sq(phi1_star))));
  t.radius_l1 = 2.0 * ss * (1.0 + prior.a + bundle.e2) / bundle.m_ax *
                std::sqrt(logd / double(n));
  const double common = prior.log_cn - 0.5 - prior.lambda * beta_star_l1;
  t.prior_mass_log_bound = common - (prior.a + 4.0) * ss * logd;
  t.marginal_log_bound = common - (prior.a + 6.0) * ss * logd;
  return t;
}

}  // namespace cglm

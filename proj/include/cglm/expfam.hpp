#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "cglm/errors.hpp"
#include "cglm/interval.hpp"
#include "cglm/math.hpp"
#include "cglm/rng.hpp"

namespace cglm {

enum class Family : std::uint8_t {
  bernoulli,
  poisson,
  negbinomial,
  exponential,
  gaussian,
  pareto,
  laplace,
};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::bernoulli: return "bernoulli";
    case Family::poisson: return "poisson";
    case Family::negbinomial: return "negbinomial";
    case Family::exponential: return "exponential";
    case Family::gaussian: return "gaussian";
    case Family::pareto: return "pareto";
    case Family::laplace: return "laplace";
  }
  return "?";
}

inline Family family_from_name(const std::string& name) {
  if (name == "bernoulli") return Family::bernoulli;
  if (name == "poisson") return Family::poisson;
  if (name == "negbinomial") return Family::negbinomial;
  if (name == "exponential") return Family::exponential;
  if (name == "gaussian") return Family::gaussian;
  if (name == "pareto") return Family::pareto;
  if (name == "laplace") return Family::laplace;
  throw ConfigError("unknown family name: " + name);
}

/// A canonical rank-one exponential family f(y|t) = h(y) exp(t T(y) - A(t)).
///
/// Catalog of log-partitions:
///   bernoulli            A(t) = log(1 + e^t)                     t real
///   poisson              A(t) = e^t                              t real
///   negbinomial (q)      A(t) = -q log(1 - e^t)                  t < 0
///   exponential          A(t) = -log(-t)                         t < 0
///   gaussian (sigma)     A(t) = t^2 / 2                          t real
///   pareto (q_min)       A(t) = -log(-1-t) + (1+t) log q_min     t < -1
///   laplace (zero mean)  A(t) = -log(-t/2)                       t < 0
///
/// Gaussian observations with known sigma are rescaled internally so the
/// sufficient statistic is y/sigma and A stays exactly t^2/2.
class ExpFamilyMember {
 public:
  static ExpFamilyMember bernoulli() { return ExpFamilyMember(Family::bernoulli); }
  static ExpFamilyMember poisson() { return ExpFamilyMember(Family::poisson); }
  static ExpFamilyMember neg_binomial(std::uint32_t failures) {
    if (failures == 0) throw ConfigError("negbinomial: q must be a positive integer");
    ExpFamilyMember m(Family::negbinomial);
    m.q_ = failures;
    return m;
  }
  static ExpFamilyMember exponential() { return ExpFamilyMember(Family::exponential); }
  static ExpFamilyMember gaussian(double sigma = 1.0) {
    if (!(sigma > 0.0)) throw ConfigError("gaussian: sigma must be positive");
    ExpFamilyMember m(Family::gaussian);
    m.sigma_ = sigma;
    return m;
  }
  static ExpFamilyMember pareto(double q_min) {
    if (!(q_min > 0.0)) throw ConfigError("pareto: q_min must be positive");
    ExpFamilyMember m(Family::pareto);
    m.q_min_ = q_min;
    return m;
  }
  static ExpFamilyMember laplace() { return ExpFamilyMember(Family::laplace); }

  Family kind() const { return kind_; }
  std::uint32_t failures() const { return q_; }
  double sigma() const { return sigma_; }
  double q_min() const { return q_min_; }

  /// Canonical domain of A.
  Interval theta_domain() const {
    switch (kind_) {
      case Family::bernoulli:
      case Family::poisson:
      case Family::gaussian: return Interval::all_reals();
      case Family::negbinomial:
      case Family::exponential:
      case Family::laplace: return Interval::less_than(0.0);
      case Family::pareto: return Interval::less_than(-1.0);
    }
    return Interval::all_reals();
  }

  /// Finite singularity of A, if any.
  std::optional<double> pole() const {
    switch (kind_) {
      case Family::negbinomial:
      case Family::exponential:
      case Family::laplace: return 0.0;
      case Family::pareto: return -1.0;
      default: return std::nullopt;
    }
  }

  std::string describe() const {
    std::string s = family_name(kind_);
    if (kind_ == Family::negbinomial) s += "(q=" + std::to_string(q_) + ")";
    if (kind_ == Family::gaussian) s += "(sigma=" + std::to_string(sigma_) + ")";
    if (kind_ == Family::pareto) s += "(q_min=" + std::to_string(q_min_) + ")";
    return s;
  }

 private:
  explicit ExpFamilyMember(Family f) : kind_(f) {}
  Family kind_;
  std::uint32_t q_ = 1;
  double sigma_ = 1.0;
  double q_min_ = 1.0;
};

inline void check_theta(const ExpFamilyMember& m, double t) {
  if (!m.theta_domain().contains(t)) {
    std::string msg = m.describe() + ": canonical parameter " + std::to_string(t) +
                      " outside domain " + m.theta_domain().str();
    if (auto p = m.pole()) msg += " (pole at " + std::to_string(*p) + ")";
    throw DomainError(msg);
  }
}

/// A(t).
inline double log_partition(const ExpFamilyMember& m, double t) {
  check_theta(m, t);
  switch (m.kind()) {
    case Family::bernoulli: return log1pexp(t);
    case Family::poisson: return std::exp(t);
    case Family::negbinomial: return -double(m.failures()) * std::log1p(-std::exp(t));
    case Family::exponential: return -std::log(-t);
    case Family::gaussian: return 0.5 * t * t;
    case Family::pareto: return -std::log(-1.0 - t) + (1.0 + t) * std::log(m.q_min());
    case Family::laplace: return -std::log(-0.5 * t);
  }
  return 0.0;
}

struct MeanVar {
  double mean;
  double variance;
};

/// (A'(t), A''(t)) from closed forms.
inline MeanVar mean_var(const ExpFamilyMember& m, double t) {
  check_theta(m, t);
  switch (m.kind()) {
    case Family::bernoulli: {
      const double p = logistic(t);
      return {p, p * (1.0 - p)};
    }
    case Family::poisson: {
      const double e = std::exp(t);
      return {e, e};
    }
    case Family::negbinomial: {
      const double e = std::exp(t);
      const double q = double(m.failures());
      return {q * e / (1.0 - e), q * e / sq(1.0 - e)};
    }
    case Family::exponential: return {-1.0 / t, 1.0 / sq(t)};
    case Family::gaussian: return {t, 1.0};
    case Family::pareto: return {1.0 / (-1.0 - t) + std::log(m.q_min()), 1.0 / sq(1.0 + t)};
    case Family::laplace: return {-1.0 / t, 1.0 / sq(t)};
  }
  return {0.0, 0.0};
}

/// log A''(t); finite even where A'' overflows a double (Poisson far right).
inline double log_variance_fn(const ExpFamilyMember& m, double t) {
  check_theta(m, t);
  switch (m.kind()) {
    case Family::bernoulli: return t - 2.0 * log1pexp(t);
    case Family::poisson: return t;
    case Family::negbinomial:
      return std::log(double(m.failures())) + t - 2.0 * std::log1p(-std::exp(t));
    case Family::exponential:
    case Family::laplace: return -2.0 * std::log(-t);
    case Family::gaussian: return 0.0;
    case Family::pareto: return -2.0 * std::log(-1.0 - t);
  }
  return 0.0;
}

/// Whether y lies in the family support.
inline bool in_support(const ExpFamilyMember& m, double y) {
  const bool nonneg_int = (y >= 0.0) && (y == std::floor(y));
  switch (m.kind()) {
    case Family::bernoulli: return y == 0.0 || y == 1.0;
    case Family::poisson:
    case Family::negbinomial: return nonneg_int;
    case Family::exponential: return y >= 0.0;
    case Family::gaussian:
    case Family::laplace: return std::isfinite(y);
    case Family::pareto: return y >= m.q_min();
  }
  return false;
}

/// Sufficient statistic T(y).
inline double suff_stat(const ExpFamilyMember& m, double y) {
  switch (m.kind()) {
    case Family::gaussian: return y / m.sigma();
    case Family::pareto: return std::log(y);
    case Family::laplace: return std::abs(y);
    default: return y;
  }
}

/// log h(y), the base measure (for Gaussian it includes the 1/sigma
/// change-of-variable factor so densities integrate to one in y).
inline double log_base_measure(const ExpFamilyMember& m, double y) {
  switch (m.kind()) {
    case Family::bernoulli:
    case Family::exponential:
    case Family::laplace:
    // Pareto: h = 1 makes the normalizer match A(t) = -log(-1-t)+(1+t)log q,
    // i.e. integral_q^inf y^t dy = q^{1+t}/(-1-t).
    case Family::pareto: return 0.0;
    case Family::poisson: return -std::lgamma(y + 1.0);
    case Family::negbinomial: {
      const double q = double(m.failures());
      return std::lgamma(y + q) - std::lgamma(y + 1.0) - std::lgamma(q);
    }
    case Family::gaussian: {
      const double z = y / m.sigma();
      return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(m.sigma());
    }
  }
  return 0.0;
}

/// log f(y | t) = log h(y) + t T(y) - A(t).
inline double log_density(const ExpFamilyMember& m, double y, double t) {
  if (!in_support(m, y)) {
    throw SupportError(m.describe() + ": observation " + std::to_string(y) +
                       " outside the family support");
  }
  return log_base_measure(m, y) + t * suff_stat(m, y) - log_partition(m, t);
}

/// KL divergence D(t_star || t), the Bregman divergence of A at t from t_star.
inline double kl_divergence(const ExpFamilyMember& m, double t_star, double t) {
  const double d = log_partition(m, t) - log_partition(m, t_star) -
                   (t - t_star) * mean_var(m, t_star).mean;
  // Round-off can nick slightly below zero for nearly equal arguments.
  return (d < 0.0 && d > -1e-9) ? 0.0 : d;
}

/// Cumulant generating function of the centered statistic at alpha, which
/// equals D(t_star || t_star + alpha (t - t_star)) for alpha in (0, 1).
inline double cgf_centered(const ExpFamilyMember& m, double t_star, double t, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("cgf_centered: alpha must lie in (0, 1)");
  }
  check_theta(m, t_star);
  check_theta(m, t);
  return kl_divergence(m, t_star, t_star + alpha * (t - t_star));
}

/// One draw from f(. | t). Deterministic given the stream state.
inline double sample_one(const ExpFamilyMember& m, double t, Rng& rng) {
  check_theta(m, t);
  switch (m.kind()) {
    case Family::bernoulli: return rng.bernoulli(logistic(t)) ? 1.0 : 0.0;
    case Family::poisson: return double(rng.poisson(std::exp(t)));
    case Family::negbinomial: {
      // Gamma-Poisson mixture: y | L ~ Poisson(L), L ~ Gamma(q, scale p/(1-p)).
      const double p = std::exp(t);
      const double lam = rng.gamma_integer(m.failures(), (1.0 - p) / p);
      return double(rng.poisson(lam));
    }
    case Family::exponential: return rng.exponential(-t);
    case Family::gaussian: return m.sigma() * (t + rng.normal());
    case Family::pareto: return rng.pareto(-1.0 - t, m.q_min());
    case Family::laplace: return rng.laplace(-t);
  }
  return 0.0;
}

}  // namespace cglm

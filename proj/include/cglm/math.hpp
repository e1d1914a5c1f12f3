#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace cglm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(1 + exp(x)) without overflow for large |x|.
inline double log1pexp(double x) {
  if (x > 35.0) return x + std::exp(-x);
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

/// Logistic function 1 / (1 + exp(-x)).
inline double logistic(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double sq(double x) { return x * x; }

/// log of the binomial coefficient C(n, k).
inline double log_binom(std::uint64_t n, std::uint64_t k) {
  if (k > n) return kNegInf;
  return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
         std::lgamma(double(n - k) + 1.0);
}

/// Streaming log-sum-exp accumulator.
class LogSumExp {
 public:
  void add(double log_term) {
    if (log_term == kNegInf) return;
    if (log_term <= max_) {
      sum_ += std::exp(log_term - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - log_term) + 1.0;
      max_ = log_term;
    }
    ++count_;
  }
  double value() const {
    if (count_ == 0 || sum_ == 0.0) return kNegInf;
    return max_ + std::log(sum_);
  }
  std::uint64_t count() const { return count_; }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
  std::uint64_t count_ = 0;
};

inline double log_sum_exp(const std::vector<double>& xs) {
  LogSumExp acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

/// Kahan-compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double y = x - c_;
    const double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

/// P(Gamma(shape, rate) <= x) for integer shape, via the Poisson tail
/// identity P(Gamma(s, 1) <= z) = sum_{j >= s} e^{-z} z^j / j!.
/// Returned on the log scale; stable for very small masses.
inline double log_gamma_cdf_integer(std::uint64_t shape, double rate, double x) {
  if (x <= 0.0) return kNegInf;
  if (shape == 0) return 0.0;
  const double z = rate * x;
  LogSumExp acc;
  const double logz = std::log(z);
  double log_term = double(shape) * logz - std::lgamma(double(shape) + 1.0);
  std::uint64_t j = shape;
  // Terms grow until j ~ z, then decay geometrically.
  for (;;) {
    acc.add(log_term);
    ++j;
    log_term += logz - std::log(double(j));
    if (double(j) > z && log_term < acc.value() - 60.0) break;
    if (j > shape + 100000) break;
  }
  return -z + acc.value();
}

/// Survival function of a chi-squared variable with even dof, exact via the
/// Poisson series: P(Chi2_k > x) = e^{-x/2} sum_{j < k/2} (x/2)^j / j!.
inline double chi2_sf_even_dof(unsigned dof, double x) {
  const unsigned s = dof / 2;
  const double z = 0.5 * x;
  double term = 1.0, sum = 0.0;
  for (unsigned j = 0; j < s; ++j) {
    sum += term;
    term *= z / double(j + 1);
  }
  return std::exp(-z) * sum;
}

}  // namespace cglm

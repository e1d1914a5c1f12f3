#pragma once

#include <cmath>
#include <string>

#include "cglm/errors.hpp"
#include "cglm/expfam.hpp"
#include "cglm/interval.hpp"
#include "cglm/math.hpp"

namespace cglm {

enum class ClipKind : std::uint8_t { identity, soft_clip_upper, soft_clip_at_pole };

inline const char* clip_kind_name(ClipKind k) {
  switch (k) {
    case ClipKind::identity: return "identity";
    case ClipKind::soft_clip_upper: return "soft_clip_upper";
    case ClipKind::soft_clip_at_pole: return "soft_clip_at_pole";
  }
  return "?";
}

/// Strictly increasing 1-Lipschitz map from the linear predictor into the
/// log-partition domain. The soft forms are b - softplus(b - t), which is
/// asymptotically the identity on the far left and capped below b on the
/// right (b = c0 for the upper clip, b = r0 - delta next to a pole).
/// In double arithmetic deep saturation rounds to b itself; since b sits
/// delta away from any pole this never leaves the log-partition domain.
class ClippingFn {
 public:
  static ClippingFn identity() { return ClippingFn(ClipKind::identity, 0.0, 0.0, 0.0); }
  static ClippingFn soft_upper(double c0) {
    return ClippingFn(ClipKind::soft_clip_upper, c0, 0.0, 0.0);
  }
  static ClippingFn soft_at_pole(double r0, double delta) {
    if (!(delta > 0.0)) throw ConfigError("soft_clip_at_pole: delta must be positive");
    return ClippingFn(ClipKind::soft_clip_at_pole, 0.0, r0, delta);
  }

  ClipKind kind() const { return kind_; }
  double c0() const { return c0_; }
  double r0() const { return r0_; }
  double delta() const { return delta_; }
  double lipschitz_bound() const { return 1.0; }

  /// Upper bound b of the soft forms; meaningless for identity.
  double soft_bound() const {
    return kind_ == ClipKind::soft_clip_upper ? c0_ : r0_ - delta_;
  }

  Interval range() const {
    if (kind_ == ClipKind::identity) return Interval::all_reals();
    return Interval::less_than(soft_bound());
  }

  double operator()(double t) const {
    if (kind_ == ClipKind::identity) return t;
    const double b = soft_bound();
    return b - log1pexp(b - t);
  }

  std::string describe() const {
    switch (kind_) {
      case ClipKind::identity: return "identity";
      case ClipKind::soft_clip_upper: return "soft_clip_upper(c0=" + std::to_string(c0_) + ")";
      case ClipKind::soft_clip_at_pole:
        return "soft_clip_at_pole(r0=" + std::to_string(r0_) +
               ", delta=" + std::to_string(delta_) + ")";
    }
    return "?";
  }

 private:
  ClippingFn(ClipKind k, double c0, double r0, double delta)
      : kind_(k), c0_(c0), r0_(r0), delta_(delta) {}
  ClipKind kind_;
  double c0_, r0_, delta_;
};

inline double eval_clip(const ClippingFn& fn, double t) { return fn(t); }

/// Standard pairing per family: identity where A'' is globally bounded, a
/// soft clip below the growth direction or pole otherwise.
inline ClippingFn default_clip_for(const ExpFamilyMember& m, double c0 = 1e3,
                                   double delta = 1e-4) {
  switch (m.kind()) {
    case Family::bernoulli:
    case Family::gaussian: return ClippingFn::identity();
    case Family::poisson: return ClippingFn::soft_upper(c0);
    case Family::negbinomial:
    case Family::exponential:
    case Family::laplace: return ClippingFn::soft_at_pole(0.0, delta);
    case Family::pareto: return ClippingFn::soft_at_pole(-1.0, delta);
  }
  return ClippingFn::identity();
}

/// Sublevel interval I_A(b) = {t in dom(A) : A''(t) <= b}, in closed form.
///
/// For the Bernoulli with b < 1/4 the sublevel set is a symmetric pair of
/// rays; the lower ray is returned, matching the left-unbounded clip ranges
/// everything downstream uses.
inline Interval ia_interval(const ExpFamilyMember& m, double b) {
  if (!(b > 0.0)) throw ConfigError("ia_interval: b must be positive");
  if (std::isinf(b)) return m.theta_domain();
  switch (m.kind()) {
    case Family::bernoulli: {
      if (b >= 0.25) return Interval::all_reals();
      // e^t/(1+e^t)^2 = b; roots multiply to 1, so take 1/u_plus for stability.
      const double u_plus = ((1.0 - 2.0 * b) + std::sqrt(1.0 - 4.0 * b)) / (2.0 * b);
      return Interval::at_most(std::log(1.0 / u_plus));
    }
    case Family::poisson: return Interval::at_most(std::log(b));
    case Family::negbinomial: {
      const double q = double(m.failures());
      // q u/(1-u)^2 = b with u = e^t; root product is 1.
      const double u_plus = ((2.0 * b + q) + std::sqrt(q * (q + 4.0 * b))) / (2.0 * b);
      return Interval::at_most(std::log(1.0 / u_plus));
    }
    case Family::exponential:
    case Family::laplace: return Interval::at_most(-1.0 / std::sqrt(b));
    case Family::gaussian: return b >= 1.0 ? Interval::all_reals() : Interval::empty_set();
    case Family::pareto: return Interval::at_most(-1.0 - 1.0 / std::sqrt(b));
  }
  return Interval::empty_set();
}

/// Certificate that a clipping function satisfies the range condition:
/// range(eta) is contained in I_A(m0^2 / 2), with m0^2 = 2 sup A'' over the
/// range. Log-scale fields stay finite even when m0 overflows a double
/// (e.g. Poisson with a very large c0).
struct M0Certificate {
  double m0 = 0.0;
  double m0_sq = 0.0;
  double log_m0_sq = 0.0;
  double log_sup_variance = 0.0;
  std::string checked_on;
};

namespace detail {

/// log sup{A''(t) : t in range}, closed form via one-sided monotonicity of
/// A'' for every catalog family on the relevant side.
inline double log_sup_variance_over_range(const ExpFamilyMember& m, const Interval& range) {
  const bool whole_line = std::isinf(range.hi);
  switch (m.kind()) {
    case Family::bernoulli:
      return (whole_line || range.hi >= 0.0) ? std::log(0.25) : log_variance_fn(m, range.hi);
    case Family::gaussian: return 0.0;
    case Family::poisson:
      if (whole_line) {
        throw CertificationError("poisson: A'' = e^t is unbounded on the whole line; "
                                 "an upper clip is required");
      }
      return range.hi;
    case Family::negbinomial:
    case Family::exponential:
    case Family::laplace:
    case Family::pareto:
      // Range containment already guarantees range.hi is left of the pole.
      return log_variance_fn(m, range.hi);
  }
  return 0.0;
}

}  // namespace detail

/// Computes the smallest m0 with range(eta) in I_A(m0^2/2) and spot-checks
/// injectivity, the Lipschitz bound, and range membership on a grid.
inline M0Certificate certify_clipping(const ClippingFn& fn, const ExpFamilyMember& m,
                                      int grid_points = 2048) {
  const Interval range = fn.range();
  const Interval domain = m.theta_domain();
  if (!range.subset_of(domain)) {
    throw ConfigError("clip range " + range.str() + " is not contained in the " +
                      m.describe() + " domain " + domain.str() + "; pair " +
                      fn.describe() + " with a family whose domain covers it");
  }

  const double log_sup = detail::log_sup_variance_over_range(m, range);
  M0Certificate cert;
  cert.log_sup_variance = log_sup;
  cert.log_m0_sq = std::log(2.0) + log_sup;
  cert.m0_sq = std::exp(cert.log_m0_sq);  // may be +inf; log field stays usable
  cert.m0 = std::exp(0.5 * cert.log_m0_sq);

  // Grid audit: strict monotonicity, 1-Lipschitz, range membership, and the
  // sup bound on A'' along the clipped image. Past soft_bound() + ~34 the
  // increment of a soft clip falls below one ulp of the bound, so the grid
  // stops where strictness is still resolvable in doubles.
  const double grid_lo = -60.0;
  const double grid_hi = fn.kind() == ClipKind::identity
                             ? 60.0
                             : std::min(60.0, fn.soft_bound() + 30.0);
  double prev_t = kNegInf, prev_eta = kNegInf;
  for (int i = 0; i < grid_points; ++i) {
    const double t = grid_lo + (grid_hi - grid_lo) * double(i) / double(grid_points - 1);
    const double eta = fn(t);
    if (!(eta > prev_eta)) {
      throw CertificationError(fn.describe() + ": not strictly increasing near t=" +
                               std::to_string(t));
    }
    if (i > 0 && eta - prev_eta > (t - prev_t) * (fn.lipschitz_bound() + 1e-9)) {
      throw CertificationError(fn.describe() + ": Lipschitz bound violated near t=" +
                               std::to_string(t));
    }
    if (!range.contains(eta)) {
      throw CertificationError(fn.describe() + ": value escapes declared range at t=" +
                               std::to_string(t));
    }
    if (log_variance_fn(m, eta) > log_sup + 1e-9) {
      throw CertificationError(fn.describe() + " with " + m.describe() +
                               ": A'' exceeds the certified sup at eta=" + std::to_string(eta));
    }
    prev_t = t;
    prev_eta = eta;
  }

  cert.checked_on = "closed-form sup of A'' at the range endpoint; grid audit on " +
                    std::to_string(grid_points) + " points over [" + std::to_string(grid_lo) +
                    ", " + std::to_string(grid_hi) + "]";
  return cert;
}

}  // namespace cglm

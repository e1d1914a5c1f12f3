#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cglm/clipping.hpp"
#include "cglm/errors.hpp"
#include "cglm/expfam.hpp"
#include "cglm/math.hpp"
#include "cglm/rng.hpp"

namespace cglm {

/// Dense row-major design matrix with the cached max-absolute-entry norm.
class DesignMatrix {
 public:
  DesignMatrix(std::size_t n, std::size_t d, std::vector<double> entries)
      : n_(n), d_(d), entries_(std::move(entries)) {
    if (entries_.size() != n_ * d_) throw ConfigError("design: entry count != n*d");
    max_abs_ = 0.0;
    for (double e : entries_) {
      if (!std::isfinite(e)) throw ConfigError("design: non-finite entry");
      max_abs_ = std::max(max_abs_, std::abs(e));
    }
  }

  std::size_t n() const { return n_; }
  std::size_t d() const { return d_; }
  /// ||X||_(inf,inf): max over all entries of |X_ij|.
  double max_abs() const { return max_abs_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * d_ + j]; }
  std::span<const double> row(std::size_t i) const { return {entries_.data() + i * d_, d_}; }

  static DesignMatrix iid_gaussian(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
    std::vector<double> e(n * d);
    for (auto& v : e) v = scale * rng.normal();
    return DesignMatrix(n, d, std::move(e));
  }

  static DesignMatrix rademacher(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
    std::vector<double> e(n * d);
    for (auto& v : e) v = rng.bernoulli(0.5) ? scale : -scale;
    return DesignMatrix(n, d, std::move(e));
  }

  /// Horizontally repeated scaled identity: X_ij = scale * [j mod n == i].
  static DesignMatrix identity_blocks(std::size_t n, std::size_t d, double scale = 1.0) {
    std::vector<double> e(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < d; j += n) e[i * d + j] = scale;
    return DesignMatrix(n, d, std::move(e));
  }

 private:
  std::size_t n_, d_;
  std::vector<double> entries_;
  double max_abs_;
};

/// Sparse coefficient vector: sorted support with nonzero values.
class SparseCoef {
 public:
  SparseCoef(std::size_t dim, std::vector<std::uint32_t> support, std::vector<double> values)
      : dim_(dim), support_(std::move(support)), values_(std::move(values)) {
    if (support_.size() != values_.size()) throw ConfigError("sparse coef: size mismatch");
    for (std::size_t k = 0; k < support_.size(); ++k) {
      if (support_[k] >= dim_) throw ConfigError("sparse coef: index out of range");
      if (k > 0 && support_[k] <= support_[k - 1])
        throw ConfigError("sparse coef: support must be strictly sorted");
      if (values_[k] == 0.0 || !std::isfinite(values_[k]))
        throw ConfigError("sparse coef: values must be nonzero and finite");
    }
  }

  static SparseCoef zero(std::size_t dim) { return SparseCoef(dim, {}, {}); }

  static SparseCoef from_dense(const std::vector<double>& dense, double tol = 0.0) {
    std::vector<std::uint32_t> s;
    std::vector<double> v;
    for (std::size_t j = 0; j < dense.size(); ++j) {
      if (std::abs(dense[j]) > tol) {
        s.push_back(std::uint32_t(j));
        v.push_back(dense[j]);
      }
    }
    return SparseCoef(dense.size(), std::move(s), std::move(v));
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return support_.size(); }
  const std::vector<std::uint32_t>& support() const { return support_; }
  const std::vector<double>& values() const { return values_; }

  double l1() const {
    double s = 0.0;
    for (double v : values_) s += std::abs(v);
    return s;
  }

  double value_at(std::uint32_t j) const {
    const auto it = std::lower_bound(support_.begin(), support_.end(), j);
    if (it == support_.end() || *it != j) return 0.0;
    return values_[std::size_t(it - support_.begin())];
  }

  std::vector<double> dense() const {
    std::vector<double> out(dim_, 0.0);
    for (std::size_t k = 0; k < support_.size(); ++k) out[support_[k]] = values_[k];
    return out;
  }

 private:
  std::size_t dim_;
  std::vector<std::uint32_t> support_;
  std::vector<double> values_;
};

/// l1 distance between two sparse vectors of the same dimension.
inline double l1_distance(const SparseCoef& a, const SparseCoef& b) {
  double s = 0.0;
  std::size_t i = 0, j = 0;
  const auto &sa = a.support(), &sb = b.support();
  while (i < sa.size() || j < sb.size()) {
    if (j == sb.size() || (i < sa.size() && sa[i] < sb[j])) {
      s += std::abs(a.values()[i]);
      ++i;
    } else if (i == sa.size() || sb[j] < sa[i]) {
      s += std::abs(b.values()[j]);
      ++j;
    } else {
      s += std::abs(a.values()[i] - b.values()[j]);
      ++i;
      ++j;
    }
  }
  return s;
}

/// The clipped-GLM data model: family + clip + design, with the clipping
/// certificate computed (and validated) at construction.
struct CglmModel {
  ExpFamilyMember member;
  ClippingFn clip;
  DesignMatrix design;
  M0Certificate cert;

  CglmModel(ExpFamilyMember m, ClippingFn c, DesignMatrix x)
      : member(m), clip(c), design(std::move(x)), cert(certify_clipping(c, m)) {}

  std::size_t n() const { return design.n(); }
  std::size_t d() const { return design.d(); }
  /// M_1(A) = max(1, m0); +inf-safe only through m_ax in log space, but all
  /// desk-scale clip choices keep it finite.
  double m1() const { return std::max(1.0, cert.m0); }
  /// M(A, X) = ||X||_(inf,inf) * M_1(A).
  double m_ax() const { return design.max_abs() * m1(); }
};

struct Dataset {
  std::vector<double> y;
  std::vector<double> suff;  // cached T(y_i)
  std::uint64_t seed = 0;

  std::size_t size() const { return y.size(); }
};

inline std::vector<double> linear_predictor(const DesignMatrix& x, const SparseCoef& beta) {
  if (beta.dim() != x.d()) throw ConfigError("coefficient dimension != design columns");
  std::vector<double> u(x.n(), 0.0);
  const auto& sup = beta.support();
  const auto& val = beta.values();
  for (std::size_t i = 0; i < x.n(); ++i) {
    const auto row = x.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < sup.size(); ++k) s += row[sup[k]] * val[k];
    u[i] = s;
  }
  return u;
}

/// eta_i = clip(<x_i, beta>).
inline std::vector<double> eta_vector(const CglmModel& model, const SparseCoef& beta) {
  auto u = linear_predictor(model.design, beta);
  for (auto& v : u) v = model.clip(v);
  return u;
}

struct DivergenceProfile {
  double dn = 0.0;      // KL divergence D_n(eta* || eta)
  double var_zn = 0.0;  // sum (eta_i - eta_i*)^2 A''(eta_i*)
  std::vector<double> per_kl;
  std::vector<double> per_var;
};

inline DivergenceProfile divergence_profile(const CglmModel& model, const SparseCoef& beta_star,
                                            const SparseCoef& beta) {
  const auto eta_s = eta_vector(model, beta_star);
  const auto eta = eta_vector(model, beta);
  DivergenceProfile out;
  out.per_kl.resize(eta.size());
  out.per_var.resize(eta.size());
  CompensatedSum dn, vz;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    out.per_kl[i] = kl_divergence(model.member, eta_s[i], eta[i]);
    out.per_var[i] = sq(eta[i] - eta_s[i]) * mean_var(model.member, eta_s[i]).variance;
    dn.add(out.per_kl[i]);
    vz.add(out.per_var[i]);
  }
  out.dn = dn.value();
  out.var_zn = vz.value();
  return out;
}

struct LikRatio {
  double zn = 0.0;  // centered stochastic term
  double dn = 0.0;  // KL divergence
  double ln = 0.0;  // log-likelihood ratio Z_n - D_n
};

inline LikRatio log_lik_ratio(const CglmModel& model, const Dataset& data,
                              const SparseCoef& beta_star, const SparseCoef& beta) {
  if (data.size() != model.n()) throw ConfigError("dataset length != design rows");
  const auto eta_s = eta_vector(model, beta_star);
  const auto eta = eta_vector(model, beta);
  CompensatedSum zn, dn;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    zn.add((data.suff[i] - mean_var(model.member, eta_s[i]).mean) * (eta[i] - eta_s[i]));
    dn.add(kl_divergence(model.member, eta_s[i], eta[i]));
  }
  return {zn.value(), dn.value(), zn.value() - dn.value()};
}

/// Sum_i [T_i eta_i - A(eta_i)]: the sufficient part of the log-likelihood
/// (base measure dropped; it cancels in every ratio).
inline double suff_log_lik(const CglmModel& model, const Dataset& data, const SparseCoef& beta) {
  if (data.size() != model.n()) throw ConfigError("dataset length != design rows");
  const auto eta = eta_vector(model, beta);
  CompensatedSum s;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    s.add(data.suff[i] * eta[i] - log_partition(model.member, eta[i]));
  }
  return s.value();
}

inline Dataset generate_dataset(const CglmModel& model, const SparseCoef& beta_star, Rng& rng,
                                std::uint64_t seed_tag = 0) {
  const auto eta_s = eta_vector(model, beta_star);
  Dataset ds;
  ds.seed = seed_tag;
  ds.y.resize(eta_s.size());
  ds.suff.resize(eta_s.size());
  for (std::size_t i = 0; i < eta_s.size(); ++i) {
    ds.y[i] = sample_one(model.member, eta_s[i], rng);
    ds.suff[i] = suff_stat(model.member, ds.y[i]);
  }
  return ds;
}

/// Membership in the D_n set: max(D_n, Var Z_n) <= s_star log d.
inline bool dn_membership(const CglmModel& model, const SparseCoef& beta_star,
                          const SparseCoef& beta, std::size_t s_star, std::size_t d) {
  const auto prof = divergence_profile(model, beta_star, beta);
  return std::max(prof.dn, prof.var_zn) <= double(s_star) * std::log(double(d));
}

// ---- CSV import/export -----------------------------------------------------

inline void save_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for write: " + path.string());
  out << "i,y\n";
  out.precision(17);
  for (std::size_t i = 0; i < ds.y.size(); ++i) out << i << "," << ds.y[i] << "\n";
  if (!out) throw ConfigError("write failed: " + path.string());
}

inline Dataset load_dataset_csv(const std::filesystem::path& path, const ExpFamilyMember& m) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty dataset file: " + path.string());
  Dataset ds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ConfigError("malformed dataset row in " + path.string() + ": " + line);
    const double y = std::stod(line.substr(comma + 1));
    if (!in_support(m, y))
      throw SupportError("dataset " + path.string() + ": observation " + std::to_string(y) +
                         " outside " + m.describe() + " support");
    ds.y.push_back(y);
    ds.suff.push_back(suff_stat(m, y));
  }
  return ds;
}

inline void save_design_csv(const std::filesystem::path& path, const DesignMatrix& x) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for write: " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < x.n(); ++i) {
    for (std::size_t j = 0; j < x.d(); ++j) out << (j ? "," : "") << x(i, j);
    out << "\n";
  }
  if (!out) throw ConfigError("write failed: " + path.string());
}

inline DesignMatrix load_design_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path.string());
  std::vector<double> entries;
  std::size_t n = 0, d = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      entries.push_back(std::stod(cell));
      ++cols;
    }
    if (d == 0) d = cols;
    if (cols != d) throw ConfigError("ragged design csv: " + path.string());
    ++n;
  }
  if (n == 0) throw ConfigError("empty design csv: " + path.string());
  return DesignMatrix(n, d, std::move(entries));
}

}  // namespace cglm

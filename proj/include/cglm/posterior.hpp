#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cglm/errors.hpp"
#include "cglm/math.hpp"
#include "cglm/model.hpp"
#include "cglm/prior.hpp"
#include "cglm/rng.hpp"

namespace cglm {

struct SamplerSettings {
  std::size_t iters = 20000;
  std::size_t burn_in = 4000;
  std::size_t thin = 5;
  double p_add = 0.2;
  double p_delete = 0.2;
  double p_swap = 0.1;
  double p_walk = 0.5;
  double walk_scale = 0.5;
  bool adapt_walk = true;  // Robbins-Monro on the walk scale, burn-in only
};

enum class MoveKind : std::uint8_t { add = 0, del = 1, swap = 2, walk = 3 };

namespace mh {

/// Full sampler state with cached linear predictor and log terms.
struct ChainState {
  std::vector<std::uint32_t> support;  // sorted
  std::vector<double> values;          // aligned with support
  std::vector<double> u;               // X beta
  double log_lik = 0.0;                // suff_log_lik
  double log_prior = 0.0;

  double log_target() const { return log_lik + log_prior; }
};

inline double state_log_lik(const CglmModel& model, const Dataset& data,
                            const std::vector<double>& u) {
  CompensatedSum s;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double eta = model.clip(u[i]);
    s.add(data.suff[i] * eta - log_partition(model.member, eta));
  }
  return s.value();
}

inline ChainState make_state(const CglmModel& model, const Dataset& data,
                             const ComplexityPrior& prior,
                             std::vector<std::uint32_t> support, std::vector<double> values) {
  ChainState st;
  st.support = std::move(support);
  st.values = std::move(values);
  st.u.assign(model.n(), 0.0);
  for (std::size_t k = 0; k < st.support.size(); ++k) {
    for (std::size_t i = 0; i < model.n(); ++i) {
      st.u[i] += model.design(i, st.support[k]) * st.values[k];
    }
  }
  st.log_lik = state_log_lik(model, data, st.u);
  st.log_prior = log_prior_joint(prior, st.support,
                                 st.values.empty() ? SparseCoef::zero(model.d())
                                                   : SparseCoef(model.d(), st.support, st.values));
  return st;
}

struct Proposal {
  ChainState next;
  double log_q_fwd = 0.0;
  double log_q_rev = 0.0;
  double log_accept = 0.0;  // min(0, full MH log ratio)
  MoveKind kind = MoveKind::walk;
  bool self_move = false;   // structurally impossible or identity proposal
  bool accept_self = false; // identity proposal accepted by construction
};

inline double log_laplace_density(double lambda, double v) {
  return std::log(0.5 * lambda) - lambda * std::abs(v);
}

/// Builds one proposal with its exact forward/reverse kernel densities.
inline Proposal propose(const CglmModel& model, const Dataset& data,
                        const ComplexityPrior& prior, const SamplerSettings& cfg,
                        const ChainState& cur, MoveKind kind, double walk_scale, Rng& rng) {
  Proposal out;
  out.kind = kind;
  const std::size_t d = model.d();
  const std::size_t s = cur.support.size();

  const auto finish = [&](ChainState&& next) {
    out.next = std::move(next);
    const double delta = (out.next.log_target() + out.log_q_rev) -
                         (cur.log_target() + out.log_q_fwd);
    out.log_accept = std::min(0.0, delta);
  };

  switch (kind) {
    case MoveKind::add: {
      if (s == d) {
        out.self_move = true;
        return out;
      }
      // Uniform over vacant coordinates.
      std::uint32_t j;
      do {
        j = std::uint32_t(rng.uniform_int(d));
      } while (std::binary_search(cur.support.begin(), cur.support.end(), j));
      double v;
      do {
        v = rng.laplace(prior.lambda);
      } while (v == 0.0);

      ChainState next = cur;
      const auto pos = std::lower_bound(next.support.begin(), next.support.end(), j);
      const auto idx = std::size_t(pos - next.support.begin());
      next.support.insert(pos, j);
      next.values.insert(next.values.begin() + std::ptrdiff_t(idx), v);
      for (std::size_t i = 0; i < model.n(); ++i) next.u[i] += model.design(i, j) * v;
      next.log_lik = state_log_lik(model, data, next.u);
      next.log_prior = log_prior_joint(prior, next.support,
                                       SparseCoef(d, next.support, next.values));
      out.log_q_fwd = std::log(cfg.p_add) - std::log(double(d - s)) +
                      log_laplace_density(prior.lambda, v);
      out.log_q_rev = std::log(cfg.p_delete) - std::log(double(s + 1));
      finish(std::move(next));
      return out;
    }
    case MoveKind::del: {
      if (s == 0) {
        out.self_move = true;
        return out;
      }
      const auto idx = std::size_t(rng.uniform_int(s));
      const auto j = cur.support[idx];
      const double v = cur.values[idx];
      ChainState next = cur;
      next.support.erase(next.support.begin() + std::ptrdiff_t(idx));
      next.values.erase(next.values.begin() + std::ptrdiff_t(idx));
      for (std::size_t i = 0; i < model.n(); ++i) next.u[i] -= model.design(i, j) * v;
      next.log_lik = state_log_lik(model, data, next.u);
      next.log_prior = log_prior_joint(
          prior, next.support,
          next.values.empty() ? SparseCoef::zero(d) : SparseCoef(d, next.support, next.values));
      out.log_q_fwd = std::log(cfg.p_delete) - std::log(double(s));
      out.log_q_rev = std::log(cfg.p_add) - std::log(double(d - s + 1)) +
                      log_laplace_density(prior.lambda, v);
      finish(std::move(next));
      return out;
    }
    case MoveKind::swap: {
      if (s == 0 || s == d) {
        out.self_move = true;
        return out;
      }
      const auto idx = std::size_t(rng.uniform_int(s));
      const auto j_out = cur.support[idx];
      const double v_out = cur.values[idx];
      std::uint32_t j_in;
      do {
        j_in = std::uint32_t(rng.uniform_int(d));
      } while (std::binary_search(cur.support.begin(), cur.support.end(), j_in));
      double v_in;
      do {
        v_in = rng.laplace(prior.lambda);
      } while (v_in == 0.0);

      ChainState next = cur;
      next.support.erase(next.support.begin() + std::ptrdiff_t(idx));
      next.values.erase(next.values.begin() + std::ptrdiff_t(idx));
      const auto pos = std::lower_bound(next.support.begin(), next.support.end(), j_in);
      const auto ins = std::size_t(pos - next.support.begin());
      next.support.insert(pos, j_in);
      next.values.insert(next.values.begin() + std::ptrdiff_t(ins), v_in);
      for (std::size_t i = 0; i < model.n(); ++i) {
        next.u[i] += model.design(i, j_in) * v_in - model.design(i, j_out) * v_out;
      }
      next.log_lik = state_log_lik(model, data, next.u);
      next.log_prior =
          log_prior_joint(prior, next.support, SparseCoef(d, next.support, next.values));
      // |S| is unchanged, so the index-choice factors cancel; only the
      // Laplace densities of the fresh and displaced values remain.
      out.log_q_fwd = std::log(cfg.p_swap) - std::log(double(s)) - std::log(double(d - s)) +
                      log_laplace_density(prior.lambda, v_in);
      out.log_q_rev = std::log(cfg.p_swap) - std::log(double(s)) - std::log(double(d - s)) +
                      log_laplace_density(prior.lambda, v_out);
      finish(std::move(next));
      return out;
    }
    case MoveKind::walk: {
      if (s == 0) {
        out.self_move = true;
        out.accept_self = true;  // identity proposal, always accepted
        return out;
      }
      ChainState next = cur;
      for (std::size_t k = 0; k < s; ++k) {
        double nv;
        do {
          nv = next.values[k] + walk_scale * rng.normal();
        } while (nv == 0.0);
        const double delta_v = nv - next.values[k];
        next.values[k] = nv;
        const auto j = next.support[k];
        for (std::size_t i = 0; i < model.n(); ++i) next.u[i] += model.design(i, j) * delta_v;
      }
      next.log_lik = state_log_lik(model, data, next.u);
      next.log_prior =
          log_prior_joint(prior, next.support, SparseCoef(d, next.support, next.values));
      // Symmetric Gaussian proposal: kernel terms cancel.
      out.log_q_fwd = 0.0;
      out.log_q_rev = 0.0;
      finish(std::move(next));
      return out;
    }
  }
  return out;
}

}  // namespace mh

struct StoredState {
  std::vector<std::uint32_t> support;
  std::vector<double> values;
  double log_post = 0.0;

  double l1_error(const SparseCoef& beta_star) const {
    double s = 0.0;
    std::size_t i = 0, j = 0;
    const auto& bs = beta_star.support();
    while (i < support.size() || j < bs.size()) {
      if (j == bs.size() || (i < support.size() && support[i] < bs[j])) {
        s += std::abs(values[i]);
        ++i;
      } else if (i == support.size() || bs[j] < support[i]) {
        s += std::abs(beta_star.values()[j]);
        ++j;
      } else {
        s += std::abs(values[i] - beta_star.values()[j]);
        ++i;
        ++j;
      }
    }
    return s;
  }
};

struct PosteriorChain {
  std::vector<StoredState> states;
  std::array<std::uint64_t, 4> proposed{};  // indexed by MoveKind
  std::array<std::uint64_t, 4> accepted{};
  std::uint64_t seed = 0;
  SamplerSettings settings;
  double final_walk_scale = 0.0;

  double acceptance_rate(MoveKind k) const {
    const auto i = std::size_t(k);
    return proposed[i] ? double(accepted[i]) / double(proposed[i]) : 0.0;
  }
};

/// Trans-dimensional Metropolis-Hastings chain targeting
/// exp(log_lik) * Pi(S, beta). The walk scale adapts toward 0.44 acceptance
/// during burn-in only, then freezes.
inline PosteriorChain run_chain(const CglmModel& model, const Dataset& data,
                                const ComplexityPrior& prior, const SamplerSettings& cfg,
                                Rng& rng, std::uint64_t seed_tag = 0) {
  if (cfg.iters == 0) throw ConfigError("sampler: iters must be positive");
  if (cfg.burn_in >= cfg.iters) throw ConfigError("sampler: burn_in must be < iters");
  if (cfg.thin == 0) throw ConfigError("sampler: thin must be >= 1");
  const double psum = cfg.p_add + cfg.p_delete + cfg.p_swap + cfg.p_walk;
  if (std::abs(psum - 1.0) > 1e-9)
    throw ConfigError("sampler: move probabilities must sum to 1");
  if (prior.d != model.d()) throw ConfigError("sampler: prior dimension != model dimension");

  PosteriorChain chain;
  chain.seed = seed_tag;
  chain.settings = cfg;

  auto state = mh::make_state(model, data, prior, {}, {});
  double walk_scale = cfg.walk_scale;
  std::uint64_t walk_updates = 0;

  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const double u_kind = rng.uniform();
    MoveKind kind;
    if (u_kind < cfg.p_add) kind = MoveKind::add;
    else if (u_kind < cfg.p_add + cfg.p_delete) kind = MoveKind::del;
    else if (u_kind < cfg.p_add + cfg.p_delete + cfg.p_swap) kind = MoveKind::swap;
    else kind = MoveKind::walk;

    auto prop = mh::propose(model, data, prior, cfg, state, kind, walk_scale, rng);
    ++chain.proposed[std::size_t(kind)];
    bool accepted = false;
    if (prop.self_move) {
      accepted = prop.accept_self;
    } else {
      accepted = std::log(rng.uniform_pos()) < prop.log_accept;
      if (accepted) state = std::move(prop.next);
      if (kind == MoveKind::walk && cfg.adapt_walk && it < cfg.burn_in) {
        // Robbins-Monro step toward 0.44 acceptance.
        ++walk_updates;
        const double gamma = 1.0 / std::sqrt(double(walk_updates));
        walk_scale *= std::exp(gamma * (std::exp(prop.log_accept) - 0.44));
        walk_scale = std::clamp(walk_scale, 1e-4, 1e4);
      }
    }
    if (accepted) ++chain.accepted[std::size_t(kind)];

    if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      chain.states.push_back({state.support, state.values, state.log_target()});
    }
  }
  chain.final_walk_scale = walk_scale;
  return chain;
}

struct PosteriorSummary {
  double p_l1_exceed = 0.0;       // P(||beta - beta*||_1 > radius_l1)
  double p_dim_exceed = 0.0;      // P(|supp(beta)| > dim_threshold)
  double p_strict_superset = 0.0; // P(supp(beta) strictly contains S*)
  double mean_l1_error = 0.0;
  double mean_size = 0.0;
  std::vector<std::uint32_t> modal_support;
  double modal_freq = 0.0;
  std::size_t n_states = 0;
};

inline PosteriorSummary posterior_summaries(const std::vector<StoredState>& states,
                                            const SparseCoef& beta_star, double radius_l1,
                                            double dim_threshold) {
  if (states.empty()) throw ConfigError("posterior_summaries: empty chain");
  PosteriorSummary out;
  out.n_states = states.size();
  std::map<std::vector<std::uint32_t>, std::size_t> support_counts;
  const auto& star_sup = beta_star.support();
  for (const auto& st : states) {
    const double err = st.l1_error(beta_star);
    out.mean_l1_error += err;
    out.mean_size += double(st.support.size());
    if (err > radius_l1) out.p_l1_exceed += 1.0;
    if (double(st.support.size()) > dim_threshold) out.p_dim_exceed += 1.0;
    const bool superset =
        st.support.size() > star_sup.size() &&
        std::includes(st.support.begin(), st.support.end(), star_sup.begin(), star_sup.end());
    if (superset) out.p_strict_superset += 1.0;
    ++support_counts[st.support];
  }
  const double n = double(states.size());
  out.mean_l1_error /= n;
  out.mean_size /= n;
  out.p_l1_exceed /= n;
  out.p_dim_exceed /= n;
  out.p_strict_superset /= n;
  for (const auto& [sup, count] : support_counts) {
    if (double(count) > out.modal_freq * n) {
      out.modal_freq = double(count) / n;
      out.modal_support = sup;
    }
  }
  return out;
}

inline PosteriorSummary posterior_summaries(const PosteriorChain& chain,
                                            const SparseCoef& beta_star, double radius_l1,
                                            double dim_threshold) {
  return posterior_summaries(chain.states, beta_star, radius_l1, dim_threshold);
}

struct MarginalEstimate {
  double log_estimate = 0.0;
  std::size_t mc_draws = 0;
  double log_second_moment = 0.0;
  std::uint64_t seed = 0;

  /// Delta-method standard error of log_estimate.
  double log_se() const {
    const double ratio = std::exp(log_second_moment - 2.0 * log_estimate);
    return std::sqrt(std::max(ratio - 1.0, 0.0) / double(mc_draws));
  }
};

/// Monte Carlo estimate of the ratio-form marginal likelihood
/// int exp(L_n(eta, eta*)) dPi(beta) by direct prior sampling: the
/// log-mean-exp of L_n over draws is unbiased on the linear scale.
inline MarginalEstimate marginal_likelihood_mc(const CglmModel& model, const Dataset& data,
                                               const ComplexityPrior& prior,
                                               const SparseCoef& beta_star,
                                               std::size_t mc_draws, Rng& rng,
                                               std::uint64_t seed_tag = 0) {
  if (mc_draws < 1000) throw ConfigError("marginal_likelihood_mc: need at least 1000 draws");
  const double ll_star = suff_log_lik(model, data, beta_star);
  // The null model recurs with overwhelming prior mass; cache its L_n.
  const double l_null = suff_log_lik(model, data, SparseCoef::zero(model.d())) - ll_star;
  LogSumExp acc1, acc2;
  for (std::size_t k = 0; k < mc_draws; ++k) {
    const auto [S, beta] = sample_prior(prior, rng);
    const double ln =
        S.empty() ? l_null : suff_log_lik(model, data, beta) - ll_star;
    acc1.add(ln);
    acc2.add(2.0 * ln);
  }
  MarginalEstimate out;
  out.mc_draws = mc_draws;
  out.seed = seed_tag;
  out.log_estimate = acc1.value() - std::log(double(mc_draws));
  out.log_second_moment = acc2.value() - std::log(double(mc_draws));
  return out;
}

// ---- Exact grid oracle at tiny dimension ------------------------------------

struct GridSpec {
  double half_width = 0.0;  // 0 -> 10 / lambda
  std::size_t points = 401;
};

using BetaFunctional = std::function<double(const std::vector<double>&)>;

struct GridOracleResult {
  std::vector<std::vector<std::uint32_t>> supports;
  std::vector<double> support_log_weight;  // unnormalized, aligned with supports
  std::vector<double> support_prob;        // normalized
  double log_evidence = 0.0;               // log int exp(suff_log_lik) dPi
  std::vector<double> posterior_mean;
  std::vector<double> functional_values;
  double laplace_tail_mass = 0.0;          // prior mass outside the grid box
  double half_width = 0.0;
  std::size_t points = 0;
};

/// Support-by-support tensor trapezoid quadrature of exp(log_lik) times the
/// Laplace slab over [-R, R]^{|S|}; exact normalization across all 2^d
/// supports. Restricted to d <= 3.
inline GridOracleResult grid_oracle_posterior(const CglmModel& model, const Dataset& data,
                                              const ComplexityPrior& prior, GridSpec spec = {},
                                              const std::vector<BetaFunctional>& extra = {}) {
  const std::size_t d = model.d();
  if (d > 3) throw ConfigError("grid_oracle_posterior: d must be <= 3");
  if (spec.points < 3) throw ConfigError("grid_oracle_posterior: need at least 3 grid points");
  const double R = spec.half_width > 0.0 ? spec.half_width : 10.0 / prior.lambda;
  const std::size_t m = spec.points;
  const double h = 2.0 * R / double(m - 1);

  GridOracleResult out;
  out.half_width = R;
  out.points = m;
  out.laplace_tail_mass = 1.0 - std::pow(1.0 - std::exp(-prior.lambda * R), double(d));

  // Grid values and per-node log weights (trapezoid ends at half weight)
  // combined with the Laplace log-density.
  std::vector<double> node(m), log_w(m);
  for (std::size_t g = 0; g < m; ++g) {
    node[g] = -R + h * double(g);
    const double w = (g == 0 || g == m - 1) ? 0.5 * h : h;
    log_w[g] = std::log(w) + std::log(0.5 * prior.lambda) - prior.lambda * std::abs(node[g]);
  }

  // Pass 1: per-support log integrals.
  for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
    std::vector<std::uint32_t> S;
    for (std::uint32_t j = 0; j < d; ++j)
      if (mask & (1u << j)) S.push_back(j);
    const std::size_t s = S.size();
    const double log_atom = prior.log_omega(s) - log_binom(d, s);
    LogSumExp acc;
    std::vector<std::size_t> idx(s, 0);
    std::vector<double> beta(d, 0.0);
    for (;;) {
      double log_term = 0.0;
      for (std::size_t k = 0; k < s; ++k) {
        beta[S[k]] = node[idx[k]];
        log_term += log_w[idx[k]];
      }
      // suff log-lik at this grid point.
      CompensatedSum ll;
      for (std::size_t i = 0; i < model.n(); ++i) {
        double u = 0.0;
        for (std::size_t k = 0; k < s; ++k) u += model.design(i, S[k]) * beta[S[k]];
        const double eta = model.clip(u);
        ll.add(data.suff[i] * eta - log_partition(model.member, eta));
      }
      acc.add(log_term + ll.value());
      if (s == 0) break;
      std::size_t k = 0;
      while (k < s && ++idx[k] == m) {
        idx[k] = 0;
        ++k;
      }
      if (k == s) break;
    }
    for (auto j : S) beta[j] = 0.0;
    out.supports.push_back(S);
    out.support_log_weight.push_back(log_atom + acc.value());
  }

  LogSumExp total;
  for (double lw : out.support_log_weight) total.add(lw);
  out.log_evidence = total.value();
  out.support_prob.resize(out.supports.size());
  for (std::size_t k = 0; k < out.supports.size(); ++k) {
    out.support_prob[k] = std::exp(out.support_log_weight[k] - out.log_evidence);
  }

  // Pass 2: posterior expectations (coordinate means plus extras).
  out.posterior_mean.assign(d, 0.0);
  out.functional_values.assign(extra.size(), 0.0);
  for (std::size_t si = 0; si < out.supports.size(); ++si) {
    const auto& S = out.supports[si];
    const std::size_t s = S.size();
    std::vector<std::size_t> idx(s, 0);
    std::vector<double> beta(d, 0.0);
    for (;;) {
      double log_term = prior.log_omega(s) - log_binom(d, s);
      for (std::size_t k = 0; k < s; ++k) {
        beta[S[k]] = node[idx[k]];
        log_term += log_w[idx[k]];
      }
      CompensatedSum ll;
      for (std::size_t i = 0; i < model.n(); ++i) {
        double u = 0.0;
        for (std::size_t k = 0; k < s; ++k) u += model.design(i, S[k]) * beta[S[k]];
        const double eta = model.clip(u);
        ll.add(data.suff[i] * eta - log_partition(model.member, eta));
      }
      const double w = std::exp(log_term + ll.value() - out.log_evidence);
      for (std::size_t k = 0; k < s; ++k) out.posterior_mean[S[k]] += w * beta[S[k]];
      for (std::size_t e = 0; e < extra.size(); ++e)
        out.functional_values[e] += w * extra[e](beta);
      if (s == 0) break;
      std::size_t k = 0;
      while (k < s && ++idx[k] == m) {
        idx[k] = 0;
        ++k;
      }
      if (k == s) break;
    }
    for (auto j : S) beta[j] = 0.0;
  }
  return out;
}

/// Chain export: iter, size, support (semicolon-joined, 0-based), l1 error
/// against beta*, log posterior.
inline void export_chain_csv(const std::filesystem::path& path, const PosteriorChain& chain,
                             const SparseCoef& beta_star) {
  std::ofstream outf(path);
  if (!outf) throw ConfigError("cannot open for write: " + path.string());
  outf << "iter,size,support,l1_error,log_post\n";
  outf.precision(17);
  for (std::size_t i = 0; i < chain.states.size(); ++i) {
    const auto& st = chain.states[i];
    outf << i << "," << st.support.size() << ",";
    for (std::size_t k = 0; k < st.support.size(); ++k) {
      outf << (k ? ";" : "") << st.support[k];
    }
    outf << "," << st.l1_error(beta_star) << "," << st.log_post << "\n";
  }
  if (!outf) throw ConfigError("write failed: " + path.string());
}

}  // namespace cglm

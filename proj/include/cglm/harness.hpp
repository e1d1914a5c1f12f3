#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cglm/errors.hpp"
#include "cglm/icgeom.hpp"
#include "cglm/model.hpp"
#include "cglm/posterior.hpp"
#include "cglm/prior.hpp"

namespace cglm {

using json = nlohmann::json;

// ---- configuration -----------------------------------------------------------

enum class DesignKind : std::uint8_t { gaussian, rademacher, identity_blocks, csv };

inline DesignKind design_kind_from_name(const std::string& name) {
  if (name == "gaussian") return DesignKind::gaussian;
  if (name == "rademacher") return DesignKind::rademacher;
  if (name == "identity_blocks") return DesignKind::identity_blocks;
  if (name == "csv") return DesignKind::csv;
  throw ConfigError("unknown design kind: " + name);
}

// The a-rule config tokens are stable identifiers; internally they map to
// the guarantee each minimal exponent serves.
enum class ARule : std::uint8_t { above_one, selection, contraction, explicit_value };

inline ARule a_rule_from_name(const std::string& name) {
  if (name == "thm2") return ARule::above_one;
  if (name == "cor1") return ARule::selection;
  if (name == "thm3") return ARule::contraction;
  if (name == "explicit") return ARule::explicit_value;
  throw ConfigError("unknown a rule: " + name);
}

struct ExperimentConfig {
  ExpFamilyMember member = ExpFamilyMember::bernoulli();
  std::string clip_kind = "default";  // default | identity | soft_upper | soft_at_pole
  double clip_c0 = 1e3;
  double clip_delta = 1e-4;

  DesignKind design_kind = DesignKind::rademacher;
  double design_scale = 1.0;
  std::uint64_t design_seed = 0;  // 0: derive from master seed
  std::string design_path;        // for csv designs

  std::vector<std::size_t> n_grid{100, 200, 400};
  bool d_explicit = false;
  std::vector<std::size_t> d_values;  // aligned with n_grid when explicit
  double d_factor = 2.0;              // d = ceil(factor * n) otherwise

  std::size_t s_star = 3;
  double magnitude_lo = 1.0;
  double magnitude_hi = 2.0;
  bool random_signs = true;

  std::size_t b_n = 3;

  ARule a_rule = ARule::explicit_value;
  double a_explicit = 2.0;
  LambdaRule lambda_rule = LambdaRule::geomean;
  double lambda_explicit = 0.0;

  SamplerSettings sampler;
  std::size_t chains = 1;

  double ic_radius = 0.0;  // 0: default 10 * B_n* * d
  int ic_restarts = 64;
  double ic_tolerance = 1e-6;

  std::size_t mc_draws = 0;  // 0: skip marginal estimation
  std::size_t replications = 1;
  std::uint64_t master_seed = 1;
  std::string output_dir = "out";
  bool enforce_paper_regime = true;
  unsigned threads = 0;  // 0: CGLM_THREADS env var, then hardware
  std::string data_path;  // optional dataset CSV (single-cell runs)

  json echo;  // normalized config for the report
};

inline ClippingFn resolve_clip(const ExperimentConfig& cfg) {
  if (cfg.clip_kind == "default") return default_clip_for(cfg.member, cfg.clip_c0, cfg.clip_delta);
  if (cfg.clip_kind == "identity") return ClippingFn::identity();
  if (cfg.clip_kind == "soft_upper") return ClippingFn::soft_upper(cfg.clip_c0);
  if (cfg.clip_kind == "soft_at_pole") {
    const double r0 = cfg.member.kind() == Family::pareto ? -1.0 : 0.0;
    return ClippingFn::soft_at_pole(r0, cfg.clip_delta);
  }
  throw ConfigError("unknown clip kind: " + cfg.clip_kind);
}

/// Parses and validates a config; every referenced rule must resolve here so
/// failures precede any computation.
inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  try {
    const auto fam = family_from_name(j.value("family", "bernoulli"));
    const auto fp = j.value("family_params", json::object());
    switch (fam) {
      case Family::negbinomial:
        cfg.member = ExpFamilyMember::neg_binomial(fp.value("q", 1u));
        break;
      case Family::gaussian: cfg.member = ExpFamilyMember::gaussian(fp.value("sigma", 1.0)); break;
      case Family::pareto: cfg.member = ExpFamilyMember::pareto(fp.value("q_min", 1.0)); break;
      case Family::bernoulli: cfg.member = ExpFamilyMember::bernoulli(); break;
      case Family::poisson: cfg.member = ExpFamilyMember::poisson(); break;
      case Family::exponential: cfg.member = ExpFamilyMember::exponential(); break;
      case Family::laplace: cfg.member = ExpFamilyMember::laplace(); break;
    }

    const auto clip = j.value("clip", json::object());
    cfg.clip_kind = clip.value("kind", "default");
    cfg.clip_c0 = clip.value("c0", 1e3);
    cfg.clip_delta = clip.value("delta", 1e-4);

    const auto design = j.value("design", json::object());
    cfg.design_kind = design_kind_from_name(design.value("kind", "rademacher"));
    cfg.design_scale = design.value("scale", 1.0);
    cfg.design_seed = design.value("seed", std::uint64_t(0));
    cfg.design_path = design.value("path", "");
    if (cfg.design_kind == DesignKind::csv && cfg.design_path.empty())
      throw ConfigError("design.kind = csv requires design.path");

    cfg.n_grid = j.value("n_grid", std::vector<std::size_t>{100, 200, 400});
    if (cfg.n_grid.empty()) throw ConfigError("n_grid must be nonempty");
    const auto d_rule = j.value("d_rule", json::object());
    const std::string dk = d_rule.value("kind", "times");
    if (dk == "times") {
      cfg.d_factor = d_rule.value("factor", 2.0);
      if (!(cfg.d_factor > 0.0)) throw ConfigError("d_rule.factor must be positive");
    } else if (dk == "explicit") {
      cfg.d_explicit = true;
      cfg.d_values = d_rule.value("values", std::vector<std::size_t>{});
      if (cfg.d_values.size() != cfg.n_grid.size())
        throw ConfigError("d_rule.values must align with n_grid");
    } else {
      throw ConfigError("unknown d rule: " + dk);
    }

    cfg.s_star = j.value("s_star", std::size_t(3));
    const auto bs = j.value("beta_star", json::object());
    const std::string placement = bs.value("placement", "permuted_prefix");
    if (placement != "permuted_prefix")
      throw ConfigError("unknown beta_star placement: " + placement);
    cfg.magnitude_lo = bs.value("magnitude_lo", 1.0);
    cfg.magnitude_hi = bs.value("magnitude_hi", 2.0);
    cfg.random_signs = bs.value("random_signs", true);
    if (!(cfg.magnitude_lo > 0.0) || cfg.magnitude_hi < cfg.magnitude_lo)
      throw ConfigError("beta_star magnitudes must satisfy 0 < lo <= hi");

    if (j.contains("budget")) {
      cfg.b_n = j["budget"].value("b_n", cfg.s_star);
    } else {
      cfg.b_n = j.value("b_n", cfg.s_star);
    }

    const auto prior = j.value("prior", json::object());
    cfg.a_rule = a_rule_from_name(prior.value("a_rule", "explicit"));
    cfg.a_explicit = prior.value("a", 2.0);
    cfg.lambda_rule = lambda_rule_from_name(prior.value("lambda_rule", "geomean"));
    cfg.lambda_explicit = prior.value("lambda", 0.0);
    if (cfg.lambda_rule == LambdaRule::explicit_value && !(cfg.lambda_explicit > 0.0))
      throw ConfigError("prior.lambda_rule = explicit requires positive prior.lambda");
    if (cfg.a_rule == ARule::explicit_value && !(cfg.a_explicit > 0.0))
      throw ConfigError("prior.a must be positive");

    const auto smp = j.value("sampler", json::object());
    cfg.sampler.iters = smp.value("iters", std::size_t(20000));
    cfg.sampler.burn_in = smp.value("burn_in", std::size_t(4000));
    cfg.sampler.thin = smp.value("thin", std::size_t(5));
    cfg.sampler.walk_scale = smp.value("walk_scale", 0.5);
    cfg.sampler.adapt_walk = smp.value("adapt_walk", true);
    const auto moves = smp.value("moves", json::object());
    cfg.sampler.p_add = moves.value("add", 0.2);
    cfg.sampler.p_delete = moves.value("delete", 0.2);
    cfg.sampler.p_swap = moves.value("swap", 0.1);
    cfg.sampler.p_walk = moves.value("walk", 0.5);
    if (std::abs(cfg.sampler.p_add + cfg.sampler.p_delete + cfg.sampler.p_swap +
                 cfg.sampler.p_walk - 1.0) > 1e-9)
      throw ConfigError("sampler.moves must sum to 1");
    cfg.chains = smp.value("chains", std::size_t(1));
    if (cfg.chains == 0) throw ConfigError("sampler.chains must be >= 1");

    const auto ic = j.value("ic", json::object());
    cfg.ic_radius = ic.value("radius", 0.0);
    cfg.ic_restarts = ic.value("restarts", 64);
    cfg.ic_tolerance = ic.value("tolerance", 1e-6);
    if (cfg.ic_restarts < 1) throw ConfigError("ic.restarts must be >= 1");

    cfg.mc_draws = j.value("mc_draws", std::size_t(0));
    cfg.replications = j.value("replications", std::size_t(1));
    if (cfg.replications < 1) throw ConfigError("replications must be >= 1");
    cfg.master_seed = j.value("master_seed", std::uint64_t(1));
    cfg.output_dir = j.value("output_dir", "out");
    cfg.enforce_paper_regime = j.value("enforce_paper_regime", true);
    cfg.threads = j.value("threads", 0u);
    cfg.data_path = j.value("data_path", "");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  // Resolve and certify the clip against the family now (fail fast).
  try {
    (void)certify_clipping(resolve_clip(cfg), cfg.member);
  } catch (const CertificationError& e) {
    throw ConfigError(std::string("clip/family pairing rejected: ") + e.what());
  }

  cfg.echo = j;
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CGLM_THREADS")) {
    const long v = std::atol(env);
    if (v > 0) return unsigned(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

/// Index-addressed parallel loop; output placement is by index so results
/// are independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const unsigned workers = std::min<std::size_t>(threads, count);
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---- experiment rows and reports ---------------------------------------------

struct CellRow {
  std::size_t n = 0, d = 0, replication = 0;
  std::uint64_t cell_seed = 0;
  bool aborted = false;
  std::string abort_reason;
  bool local_variance_ok = false;
  double phi1_star = 0.0;
  double phibar0_3bn = 0.0;
  double m_ax = 0.0;
  double lambda = 0.0;
  double a = 0.0;
  double dim_threshold = 0.0;
  double radius_l1 = 0.0;
  double marginal_log_bound = 0.0;
  double prior_mass_log_bound = 0.0;
  double p_dim_exceed = 0.0;
  double p_superset = 0.0;
  double p_l1_exceed = 0.0;
  double mean_l1_error = 0.0;
  double mean_size = 0.0;
  std::optional<double> log_marginal;
  std::optional<bool> t1;
  bool t2 = false, c1 = false, t3 = false;
  double wall_ms = 0.0;  // never emitted (outputs must be seed-deterministic)
};

struct Aggregate {
  std::size_t n = 0, d = 0;
  std::size_t cells = 0, aborted = 0;
  double mean_p_dim = 0.0;
  double mean_p_superset = 0.0;
  double mean_p_l1 = 0.0;
  double median_l1 = 0.0, q1_l1 = 0.0, q3_l1 = 0.0;
  double median_size = 0.0, q1_size = 0.0, q3_size = 0.0;
  double t1_frequency = -1.0;  // -1: marginal estimation disabled
};

struct Verdicts {
  bool t1_checked = false, t1_pass = false;
  double t1_required = 0.0;
  bool t2_pass = false;
  bool c1_pass = false;
  bool t3_radius_pass = false;
  bool t3_contraction_checked = false, t3_contraction_pass = false;
  double contraction_ratio = 0.0;

  bool all_pass() const {
    bool ok = t2_pass && c1_pass && t3_radius_pass;
    if (t1_checked) ok = ok && t1_pass;
    if (t3_contraction_checked) ok = ok && t3_contraction_pass;
    return ok;
  }
};

struct ExperimentReport {
  std::vector<CellRow> rows;
  std::vector<Aggregate> aggregates;
  Verdicts verdicts;
  json config_echo;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * double(sorted.size() - 1);
  const std::size_t lo = std::size_t(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

/// Aggregates and verdicts are pure functions of the rows (re-derivable on
/// re-ingestion).
inline std::vector<Aggregate> compute_aggregates(const std::vector<CellRow>& rows,
                                                 const std::vector<std::size_t>& n_grid) {
  std::vector<Aggregate> out;
  for (std::size_t n : n_grid) {
    Aggregate a;
    a.n = n;
    std::vector<double> l1s, sizes;
    std::size_t t1_count = 0, t1_total = 0;
    for (const auto& r : rows) {
      if (r.n != n) continue;
      ++a.cells;
      a.d = r.d;
      if (r.aborted) {
        ++a.aborted;
        continue;
      }
      a.mean_p_dim += r.p_dim_exceed;
      a.mean_p_superset += r.p_superset;
      a.mean_p_l1 += r.p_l1_exceed;
      l1s.push_back(r.mean_l1_error);
      sizes.push_back(r.mean_size);
      if (r.t1.has_value()) {
        ++t1_total;
        t1_count += *r.t1 ? 1 : 0;
      }
    }
    const double live = double(a.cells - a.aborted);
    if (live > 0.0) {
      a.mean_p_dim /= live;
      a.mean_p_superset /= live;
      a.mean_p_l1 /= live;
    }
    std::sort(l1s.begin(), l1s.end());
    std::sort(sizes.begin(), sizes.end());
    a.median_l1 = detail::quantile_sorted(l1s, 0.5);
    a.q1_l1 = detail::quantile_sorted(l1s, 0.25);
    a.q3_l1 = detail::quantile_sorted(l1s, 0.75);
    a.median_size = detail::quantile_sorted(sizes, 0.5);
    a.q1_size = detail::quantile_sorted(sizes, 0.25);
    a.q3_size = detail::quantile_sorted(sizes, 0.75);
    if (t1_total > 0) a.t1_frequency = double(t1_count) / double(t1_total);
    out.push_back(a);
  }
  return out;
}

inline Verdicts compute_verdicts(const std::vector<Aggregate>& aggs, std::size_t s_star) {
  Verdicts v;
  v.t2_pass = true;
  v.c1_pass = true;
  v.t3_radius_pass = true;
  double prev_p_dim = kInf;
  for (const auto& a : aggs) {
    if (a.cells == a.aborted) {
      v.t2_pass = v.c1_pass = v.t3_radius_pass = false;
      continue;
    }
    v.t2_pass = v.t2_pass && a.mean_p_dim <= 0.1 && a.mean_p_dim <= prev_p_dim + 1e-12;
    prev_p_dim = a.mean_p_dim;
    v.t3_radius_pass = v.t3_radius_pass && a.mean_p_l1 <= 0.1;
    if (a.t1_frequency >= 0.0) {
      v.t1_checked = true;
      v.t1_required = 1.0 - 1.0 / (double(s_star) * std::log(double(a.d))) - 0.1;
      v.t1_pass = a.t1_frequency >= v.t1_required;
    }
  }
  if (!aggs.empty()) {
    v.c1_pass = aggs.back().mean_p_superset <= 0.1 && aggs.back().cells > aggs.back().aborted;
  }
  if (aggs.size() >= 2) {
    v.t3_contraction_checked = true;
    const double first = aggs.front().median_l1;
    const double last = aggs.back().median_l1;
    v.contraction_ratio = first > 0.0 ? last / first : kInf;
    v.t3_contraction_pass = v.contraction_ratio <= 0.85;
  }
  return v;
}

// ---- the experiment loop ------------------------------------------------------

namespace detail {

// Substream tags per cell; the design tag is shared by all replications at
// a given n so the design stays fixed while data vary.
inline constexpr std::uint64_t kDesignTag = 0xD0;
inline constexpr std::uint64_t kBetaTag = 0xB0;
inline constexpr std::uint64_t kDataTag = 0xDA;
inline constexpr std::uint64_t kIcTag = 0x1C;
inline constexpr std::uint64_t kChainTag = 0xC0;
inline constexpr std::uint64_t kMcTag = 0x3C;

inline DesignMatrix build_design(const ExperimentConfig& cfg, std::size_t n, std::size_t d,
                                 std::size_t n_index) {
  const std::uint64_t root = cfg.design_seed ? cfg.design_seed : cfg.master_seed;
  auto rng = Rng::substream(root, kDesignTag, n_index);
  switch (cfg.design_kind) {
    case DesignKind::gaussian: return DesignMatrix::iid_gaussian(n, d, rng, cfg.design_scale);
    case DesignKind::rademacher: return DesignMatrix::rademacher(n, d, rng, cfg.design_scale);
    case DesignKind::identity_blocks:
      return DesignMatrix::identity_blocks(n, d, cfg.design_scale);
    case DesignKind::csv: {
      auto x = load_design_csv(cfg.design_path);
      if (x.n() != n || x.d() != d) {
        throw ConfigError("design csv " + cfg.design_path + " is " + std::to_string(x.n()) +
                          "x" + std::to_string(x.d()) + ", expected " + std::to_string(n) +
                          "x" + std::to_string(d));
      }
      return x;
    }
  }
  throw ConfigError("unreachable design kind");
}

inline SparseCoef build_beta_star(const ExperimentConfig& cfg, std::size_t d, Rng& rng) {
  auto support = rng.distinct_indices(std::uint32_t(cfg.s_star), std::uint32_t(d));
  std::vector<double> values(cfg.s_star);
  for (auto& v : values) {
    v = cfg.magnitude_lo + (cfg.magnitude_hi - cfg.magnitude_lo) * rng.uniform();
    if (cfg.random_signs && rng.bernoulli(0.5)) v = -v;
  }
  return SparseCoef(d, std::move(support), std::move(values));
}

}  // namespace detail

inline std::size_t derive_d(const ExperimentConfig& cfg, std::size_t n_index) {
  if (cfg.d_explicit) return cfg.d_values[n_index];
  return std::size_t(std::ceil(cfg.d_factor * double(cfg.n_grid[n_index])));
}

/// Everything a cell derives before touching data: the constructed truth,
/// its membership verdict, the truth-free constants, and the thresholds.
struct CellGeometry {
  SparseCoef beta_star;
  Membership verdict;
  bool local_variance_ok = false;
  ConstantsBundle bundle;
  double a = 0.0;
  double lambda = 0.0;
  ComplexityPrior prior;
  Thresholds bounds;
  bool aborted = false;
  std::string abort_reason;
};

inline CellGeometry prepare_cell_geometry(const ExperimentConfig& cfg, const CglmModel& model,
                                          std::size_t n_index, std::size_t replication) {
  const std::size_t n = model.n(), d = model.d();
  auto beta_rng = Rng::substream(cfg.master_seed, detail::kBetaTag, n_index, replication);
  CellGeometry g{detail::build_beta_star(cfg, d, beta_rng), {}, false, {}, 0.0, 0.0,
                 {},         {},   false, {}};

  const double b_n_star =
      std::sqrt(double(cfg.s_star) * std::log(double(d)) / double(n)) / model.m_ax();
  const double radius = cfg.ic_radius > 0.0 ? cfg.ic_radius : 10.0 * b_n_star * double(d);
  auto ic_rng = Rng::substream(cfg.master_seed, detail::kIcTag, n_index, replication);
  g.verdict = membership(model, g.beta_star, cfg.b_n, radius, cfg.ic_restarts, ic_rng,
                         cfg.ic_tolerance, /*estimate_phibar0=*/false);
  if (!g.verdict.in_bn) {
    g.aborted = true;
    g.abort_reason = g.verdict.in_b2 ? "phi1(S*) not positive at search radius"
                                     : "sparsity outside (0, b_n]";
    return g;
  }

  g.local_variance_ok = local_variance_check(model, g.beta_star, cfg.s_star, n, d).ok;

  const std::size_t s3bn = std::min(3 * cfg.b_n, d);
  const auto phibar =
      phibar0_estimate(model, g.beta_star, s3bn, radius, cfg.ic_restarts, ic_rng);

  g.bundle = constants(model, cfg.b_n, cfg.s_star, g.verdict.phi1_star.value, phibar.value,
                       cfg.enforce_paper_regime, g.verdict.phi1_star.value);

  const auto rules = an_rules(g.bundle.e1, cfg.b_n);
  switch (cfg.a_rule) {
    case ARule::above_one: g.a = 2.0; break;  // any a > 1; 2 is the shipped choice
    case ARule::selection: g.a = rules.selection; break;
    case ARule::contraction: g.a = rules.contraction; break;
    case ARule::explicit_value: g.a = cfg.a_explicit; break;
  }
  g.lambda = resolve_lambda(cfg.lambda_rule, g.bundle, cfg.lambda_explicit);
  if (cfg.lambda_rule == LambdaRule::explicit_value && cfg.enforce_paper_regime) {
    validate_lambda(g.bundle, g.lambda);
  }
  g.prior = build_prior(d, g.a, g.lambda);
  g.bounds = thresholds(g.bundle, g.prior, cfg.s_star, g.verdict.phi1_star.value, n, d,
                        g.beta_star.l1());
  // phibar0 value rides along in the bundle's e2; keep the raw estimate too.
  g.verdict.phibar0_3s = phibar;
  return g;
}

/// Optional side-channel for single-cell tools (simulate) that want the
/// dataset and chain states behind a row.
struct CellArtifacts {
  std::optional<SparseCoef> beta_star;
  Dataset data;
  std::vector<StoredState> states;
  std::optional<ComplexityPrior> prior;
  double radius_l1 = 0.0;
  double dim_threshold = 0.0;
};

/// Runs one (n, replication) cell. Exposed so single-cell tools share the
/// exact cell semantics of full experiments.
inline CellRow run_cell(const ExperimentConfig& cfg, const CglmModel& model,
                        std::size_t n_index, std::size_t replication,
                        CellArtifacts* artifacts = nullptr) {
  const std::size_t n = model.n(), d = model.d();
  const auto t0 = std::chrono::steady_clock::now();
  CellRow row;
  row.n = n;
  row.d = d;
  row.replication = replication;
  row.cell_seed = cfg.master_seed;

  try {
    auto g = prepare_cell_geometry(cfg, model, n_index, replication);
    if (artifacts) artifacts->beta_star = g.beta_star;
    if (g.aborted) {
      row.aborted = true;
      row.abort_reason = g.abort_reason;
      return row;
    }
    row.phi1_star = g.verdict.phi1_star.value;
    row.phibar0_3bn = g.verdict.phibar0_3s.value;
    row.local_variance_ok = g.local_variance_ok;
    row.m_ax = g.bundle.m_ax;
    row.a = g.a;
    row.lambda = g.lambda;
    row.dim_threshold = g.bounds.dim_threshold;
    row.radius_l1 = g.bounds.radius_l1;
    row.marginal_log_bound = g.bounds.marginal_log_bound;
    row.prior_mass_log_bound = g.bounds.prior_mass_log_bound;

    auto data_rng = Rng::substream(cfg.master_seed, detail::kDataTag, n_index, replication);
    Dataset data;
    if (!cfg.data_path.empty()) {
      data = load_dataset_csv(cfg.data_path, model.member);
      if (data.size() != n) throw ConfigError("dataset length != n");
    } else {
      data = generate_dataset(model, g.beta_star, data_rng, cfg.master_seed);
    }

    std::vector<StoredState> states;
    for (std::size_t c = 0; c < cfg.chains; ++c) {
      auto chain_rng =
          Rng::substream(cfg.master_seed, detail::kChainTag + c, n_index, replication);
      auto chain = run_chain(model, data, g.prior, cfg.sampler, chain_rng);
      states.insert(states.end(), chain.states.begin(), chain.states.end());
    }
    const auto summary =
        posterior_summaries(states, g.beta_star, row.radius_l1, row.dim_threshold);
    row.p_dim_exceed = summary.p_dim_exceed;
    row.p_superset = summary.p_strict_superset;
    row.p_l1_exceed = summary.p_l1_exceed;
    row.mean_l1_error = summary.mean_l1_error;
    row.mean_size = summary.mean_size;
    row.t2 = row.p_dim_exceed <= 0.1;
    row.c1 = row.p_superset <= 0.1;
    row.t3 = row.p_l1_exceed <= 0.1;

    if (cfg.mc_draws > 0) {
      auto mc_rng = Rng::substream(cfg.master_seed, detail::kMcTag, n_index, replication);
      const auto est =
          marginal_likelihood_mc(model, data, g.prior, g.beta_star, cfg.mc_draws, mc_rng);
      row.log_marginal = est.log_estimate;
      row.t1 = est.log_estimate >= row.marginal_log_bound;
    }

    if (artifacts) {
      artifacts->data = std::move(data);
      artifacts->states = std::move(states);
      artifacts->prior = g.prior;
      artifacts->radius_l1 = row.radius_l1;
      artifacts->dim_threshold = row.dim_threshold;
    }
  } catch (const std::exception& e) {
    row.aborted = true;
    row.abort_reason = e.what();
  }
  row.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0).count();
  return row;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentReport report;
  report.config_echo = cfg.echo;
  const std::size_t cells = cfg.n_grid.size() * cfg.replications;
  report.rows.resize(cells);

  // Designs and models are per-n; cells within an n share them.
  std::vector<std::unique_ptr<CglmModel>> models(cfg.n_grid.size());
  for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
    const std::size_t n = cfg.n_grid[ni];
    const std::size_t d = derive_d(cfg, ni);
    models[ni] = std::make_unique<CglmModel>(cfg.member, resolve_clip(cfg),
                                             detail::build_design(cfg, n, d, ni));
  }

  parallel_for(cells, resolve_threads(cfg.threads), [&](std::size_t idx) {
    const std::size_t ni = idx / cfg.replications;
    const std::size_t rep = idx % cfg.replications;
    report.rows[idx] = run_cell(cfg, *models[ni], ni, rep);
  });

  report.aggregates = compute_aggregates(report.rows, cfg.n_grid);
  report.verdicts = compute_verdicts(report.aggregates, cfg.s_star);
  return report;
}

}  // namespace cglm

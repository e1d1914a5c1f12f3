#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cglm/harness.hpp"

namespace cglm {

namespace detail {

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/// RFC-4180-style splitter for one record.
inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

/// Writes through a temporary file; removes partial output on failure.
template <typename WriteFn>
void atomic_write(const std::filesystem::path& path, WriteFn&& fn) {
  const auto tmp = path.string() + ".tmp";
  try {
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw ConfigError("cannot open for write: " + tmp);
      fn(out);
      if (!out) throw ConfigError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

inline const char* kRowsHeader =
    "n,d,replication,cell_seed,aborted,abort_reason,local_variance_ok,phi1_star,phibar0_3bn,m_ax,"
    "lambda,a,dim_threshold,radius_l1,marginal_log_bound,prior_mass_log_bound,p_dim_exceed,"
    "p_superset,p_l1_exceed,mean_l1_error,mean_size,log_marginal,t1,t2,c1,t3";

}  // namespace detail

inline json aggregates_to_json(const std::vector<Aggregate>& aggs) {
  json arr = json::array();
  for (const auto& a : aggs) {
    json item{{"n", a.n},
              {"d", a.d},
              {"cells", a.cells},
              {"aborted", a.aborted},
              {"mean_p_dim", a.mean_p_dim},
              {"mean_p_superset", a.mean_p_superset},
              {"mean_p_l1", a.mean_p_l1},
              {"median_l1", a.median_l1},
              {"q1_l1", a.q1_l1},
              {"q3_l1", a.q3_l1},
              {"median_size", a.median_size},
              {"q1_size", a.q1_size},
              {"q3_size", a.q3_size}};
    if (a.t1_frequency >= 0.0) item["t1_frequency"] = a.t1_frequency;
    arr.push_back(item);
  }
  return arr;
}

inline json verdicts_to_json(const Verdicts& v) {
  json out{{"t2", {{"pass", v.t2_pass}}},
           {"c1", {{"pass", v.c1_pass}}},
           {"t3_radius", {{"pass", v.t3_radius_pass}}}};
  if (v.t1_checked) {
    out["t1"] = {{"pass", v.t1_pass}, {"required_frequency", v.t1_required}};
  }
  if (v.t3_contraction_checked) {
    out["t3_contraction"] = {{"pass", v.t3_contraction_pass},
                             {"ratio", v.contraction_ratio}};
  }
  out["all_pass"] = v.all_pass();
  return out;
}

/// Writes rows.csv, report.json, and the two curve files. Timing never
/// reaches disk: outputs are a function of the master seed alone.
inline void emit_outputs(const ExperimentReport& report, const ExperimentConfig& cfg,
                         const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output dir " + dir.string() + ": " + ec.message());

  detail::atomic_write(dir / "rows.csv", [&](std::ofstream& out) {
    out << detail::kRowsHeader << "\n";
    for (const auto& r : report.rows) {
      out << r.n << "," << r.d << "," << r.replication << "," << r.cell_seed << ","
          << (r.aborted ? 1 : 0) << "," << detail::csv_quote(r.abort_reason) << ","
          << (r.local_variance_ok ? 1 : 0) << "," << detail::fmt17(r.phi1_star) << ","
          << detail::fmt17(r.phibar0_3bn) << "," << detail::fmt17(r.m_ax) << ","
          << detail::fmt17(r.lambda) << "," << detail::fmt17(r.a) << ","
          << detail::fmt17(r.dim_threshold) << "," << detail::fmt17(r.radius_l1) << ","
          << detail::fmt17(r.marginal_log_bound) << "," << detail::fmt17(r.prior_mass_log_bound) << ","
          << detail::fmt17(r.p_dim_exceed) << "," << detail::fmt17(r.p_superset) << ","
          << detail::fmt17(r.p_l1_exceed) << "," << detail::fmt17(r.mean_l1_error) << ","
          << detail::fmt17(r.mean_size) << ","
          << (r.log_marginal ? detail::fmt17(*r.log_marginal) : "") << ","
          << (r.t1 ? (*r.t1 ? "1" : "0") : "") << "," << (r.t2 ? 1 : 0) << ","
          << (r.c1 ? 1 : 0) << "," << (r.t3 ? 1 : 0) << "\n";
    }
  });

  detail::atomic_write(dir / "report.json", [&](std::ofstream& out) {
    json j{{"format_version", 1},
           {"generator", {{"name", "cglm"}, {"version", "0.1.0"}}},
           {"config", report.config_echo},
           {"resolved",
            {{"n_grid", cfg.n_grid},
             {"s_star", cfg.s_star},
             {"b_n", cfg.b_n},
             {"replications", cfg.replications},
             {"master_seed", cfg.master_seed}}},
           {"aggregates", aggregates_to_json(report.aggregates)},
           {"verdicts", verdicts_to_json(report.verdicts)}};
    out << j.dump(2) << "\n";
  });

  detail::atomic_write(dir / "curve_l1_vs_n.csv", [&](std::ofstream& out) {
    out << "n,median_l1,q1_l1,q3_l1\n";
    for (const auto& a : report.aggregates) {
      out << a.n << "," << detail::fmt17(a.median_l1) << "," << detail::fmt17(a.q1_l1) << ","
          << detail::fmt17(a.q3_l1) << "\n";
    }
  });

  detail::atomic_write(dir / "curve_dim_vs_n.csv", [&](std::ofstream& out) {
    out << "n,median_size,q1_size,q3_size\n";
    for (const auto& a : report.aggregates) {
      out << a.n << "," << detail::fmt17(a.median_size) << "," << detail::fmt17(a.q1_size)
          << "," << detail::fmt17(a.q3_size) << "\n";
    }
  });
}

inline std::vector<CellRow> load_rows_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != detail::kRowsHeader)
    throw ConfigError("unexpected rows.csv header in " + path.string());
  std::vector<CellRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::csv_split(line);
    if (f.size() != 26) throw ConfigError("malformed row in " + path.string() + ": " + line);
    CellRow r;
    std::size_t k = 0;
    r.n = std::stoull(f[k++]);
    r.d = std::stoull(f[k++]);
    r.replication = std::stoull(f[k++]);
    r.cell_seed = std::stoull(f[k++]);
    r.aborted = f[k++] == "1";
    r.abort_reason = f[k++];
    r.local_variance_ok = f[k++] == "1";
    r.phi1_star = std::stod(f[k++]);
    r.phibar0_3bn = std::stod(f[k++]);
    r.m_ax = std::stod(f[k++]);
    r.lambda = std::stod(f[k++]);
    r.a = std::stod(f[k++]);
    r.dim_threshold = std::stod(f[k++]);
    r.radius_l1 = std::stod(f[k++]);
    r.marginal_log_bound = std::stod(f[k++]);
    r.prior_mass_log_bound = std::stod(f[k++]);
    r.p_dim_exceed = std::stod(f[k++]);
    r.p_superset = std::stod(f[k++]);
    r.p_l1_exceed = std::stod(f[k++]);
    r.mean_l1_error = std::stod(f[k++]);
    r.mean_size = std::stod(f[k++]);
    if (!f[k].empty()) r.log_marginal = std::stod(f[k]);
    ++k;
    if (!f[k].empty()) r.t1 = f[k] == "1";
    ++k;
    r.t2 = f[k++] == "1";
    r.c1 = f[k++] == "1";
    r.t3 = f[k++] == "1";
    rows.push_back(r);
  }
  return rows;
}

/// Re-ingests an output directory and verifies the emitted aggregates are
/// reproducible from the rows (throws on mismatch).
inline ExperimentReport load_report(const std::filesystem::path& dir, double tol = 1e-12) {
  ExperimentReport report;
  report.rows = load_rows_csv(dir / "rows.csv");

  std::ifstream in(dir / "report.json");
  if (!in) throw ConfigError("cannot open: " + (dir / "report.json").string());
  json j;
  in >> j;
  report.config_echo = j.value("config", json::object());

  const auto resolved = j.at("resolved");
  const auto n_grid = resolved.at("n_grid").get<std::vector<std::size_t>>();
  const auto s_star = resolved.at("s_star").get<std::size_t>();
  if (report.rows.size() != n_grid.size() * resolved.at("replications").get<std::size_t>())
    throw ConfigError("row count does not match the resolved grid");

  report.aggregates = compute_aggregates(report.rows, n_grid);
  report.verdicts = compute_verdicts(report.aggregates, s_star);

  const auto emitted = j.at("aggregates");
  if (emitted.size() != report.aggregates.size())
    throw ConfigError("aggregate count mismatch on re-ingestion");
  for (std::size_t i = 0; i < report.aggregates.size(); ++i) {
    const auto& a = report.aggregates[i];
    const auto& e = emitted[i];
    const auto close = [&](double x, const char* key) {
      if (std::abs(x - e.at(key).get<double>()) > tol * std::max(1.0, std::abs(x)))
        throw ConfigError(std::string("aggregate ") + key + " not reproducible from rows");
    };
    close(a.mean_p_dim, "mean_p_dim");
    close(a.mean_p_superset, "mean_p_superset");
    close(a.mean_p_l1, "mean_p_l1");
    close(a.median_l1, "median_l1");
    close(a.median_size, "median_size");
  }
  return report;
}

}  // namespace cglm

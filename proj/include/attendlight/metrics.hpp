#pragma once

// Benchmark arithmetic: the normalized ATT difference rho, the multi/single
// ATT ratio, result-row CSV I/O and cross-case summary statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace attendlight {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// rho = (u - b) / max(u, b); negative means the model beats the baseline.
inline double rho(double u, double b) {
  if (!(u > 0) || !(b > 0)) throw MetricsError("rho requires positive travel times");
  return (u - b) / std::max(u, b);
}

inline double att_ratio(double multi, double single_env) {
  if (!(single_env > 0) || !(multi > 0))
    throw MetricsError("att_ratio requires positive travel times");
  return multi / single_env;
}

struct ResultRow {
  std::string case_id;
  std::string algorithm;
  std::uint64_t seed = 0;
  double att_s = 0;
};

inline std::string write_results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "case_id,algorithm,seed,att_s\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& r : rows)
    out << r.case_id << ',' << r.algorithm << ',' << r.seed << ',' << r.att_s << '\n';
  return out.str();
}

inline std::vector<ResultRow> read_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "case_id,algorithm,seed,att_s")
    throw MetricsError("result file schema mismatch (bad header)");
  std::vector<ResultRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ResultRow row;
    std::string seed_s, att_s;
    if (!std::getline(fields, row.case_id, ',') ||
        !std::getline(fields, row.algorithm, ',') ||
        !std::getline(fields, seed_s, ',') || !std::getline(fields, att_s))
      throw MetricsError("result file schema mismatch at line " + std::to_string(line_no));
    try {
      row.seed = std::stoull(seed_s);
      row.att_s = std::stod(att_s);
    } catch (const std::exception&) {
      throw MetricsError("result file schema mismatch at line " + std::to_string(line_no));
    }
    if (!(row.att_s > 0))
      throw MetricsError("nonpositive ATT at line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct Summary {
  int k = 0;
  double mean = 0;
  double stddev = 0;
  double ci95_half = 0;  // 1.96 * sd / sqrt(k)
};

inline Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.k = static_cast<int>(values.size());
  if (s.k == 0) return s;
  for (double v : values) s.mean += v;
  s.mean /= s.k;
  if (s.k > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (s.k - 1));
    s.ci95_half = 1.96 * s.stddev / std::sqrt(static_cast<double>(s.k));
  }
  return s;
}

struct CompareRow {
  std::string case_id;
  double model_att = 0;
  double baseline_att = 0;
  double rho = 0;
  double ratio = 0;
};

struct CompareReport {
  std::vector<CompareRow> rows;  // sorted by case id
  Summary rho_summary;
  Summary ratio_summary;
};

// Joins two result sets by case id (seed-averaged ATT per case). Every model
// case must exist in the baseline set.
inline CompareReport compare_results(const std::vector<ResultRow>& model,
                                     const std::vector<ResultRow>& baseline) {
  auto per_case_mean = [](const std::vector<ResultRow>& rows) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : rows) {
      auto& slot = acc[r.case_id];
      slot.first += r.att_s;
      slot.second += 1;
    }
    std::map<std::string, double> mean;
    for (const auto& [k, v] : acc) mean[k] = v.first / v.second;
    return mean;
  };
  auto model_mean = per_case_mean(model);
  auto baseline_mean = per_case_mean(baseline);

  CompareReport report;
  std::vector<double> rhos, ratios;
  for (const auto& [case_id, u] : model_mean) {
    auto it = baseline_mean.find(case_id);
    if (it == baseline_mean.end())
      throw MetricsError("unknown case id '" + case_id + "' in baseline results");
    CompareRow row;
    row.case_id = case_id;
    row.model_att = u;
    row.baseline_att = it->second;
    row.rho = rho(u, it->second);
    row.ratio = att_ratio(u, it->second);
    rhos.push_back(row.rho);
    ratios.push_back(row.ratio);
    report.rows.push_back(std::move(row));
  }
  report.rho_summary = summarize(rhos);
  report.ratio_summary = summarize(ratios);
  return report;
}

inline std::string write_compare_csv(const CompareReport& report) {
  std::ostringstream out;
  out << "case_id,model_att,baseline_att,rho,att_ratio\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& r : report.rows)
    out << r.case_id << ',' << r.model_att << ',' << r.baseline_att << ',' << r.rho << ','
        << r.ratio << '\n';
  out << "# rho mean=" << report.rho_summary.mean << " std=" << report.rho_summary.stddev
      << " ci95=" << report.rho_summary.ci95_half << " k=" << report.rho_summary.k << '\n';
  out << "# att_ratio mean=" << report.ratio_summary.mean
      << " std=" << report.ratio_summary.stddev << " ci95=" << report.ratio_summary.ci95_half
      << " k=" << report.ratio_summary.k << '\n';
  return out.str();
}

}  // namespace attendlight

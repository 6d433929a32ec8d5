#pragma once

// Synthetic Poisson traffic generation, flow-trace file I/O, and the
// retargeting step that moves a trace onto a topology lacking some of its
// movements.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attendlight/rng.hpp"
#include "attendlight/topology.hpp"

namespace attendlight {

class FlowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ArrivalRecord {
  double time_s = 0;
  std::string movement_id;

  bool operator==(const ArrivalRecord&) const = default;
};

struct FlowTrace {
  double horizon_s = 600.0;
  std::vector<ArrivalRecord> records;  // sorted by time_s

  bool operator==(const FlowTrace&) const = default;
};

struct SyntheticParams {
  double lambda_s = 4.0;     // mean inter-arrival seconds per process
  double extra_prob = 0.3;   // chance of a same-instant duplicate arrival
  double kind_probs[3] = {0.70, 0.20, 0.10};  // straight, left, right
  int n_processes = 2;
};

// Table of named (lambda, extra) presets s1..s6.
inline SyntheticParams synthetic_preset(const std::string& name) {
  SyntheticParams p;
  if (name == "s1") { p.lambda_s = 4; p.extra_prob = 0.3; }
  else if (name == "s2") { p.lambda_s = 4; p.extra_prob = 0.1; }
  else if (name == "s3") { p.lambda_s = 3; p.extra_prob = 0.1; }
  else if (name == "s4") { p.lambda_s = 3; p.extra_prob = 0.05; }
  else if (name == "s5") { p.lambda_s = 3; p.extra_prob = 0.3; }
  else if (name == "s6") { p.lambda_s = 4; p.extra_prob = 0.05; }
  else throw FlowError("unknown synthetic preset '" + name + "'");
  return p;
}

namespace detail {

inline double quantize_ms(double t) { return std::round(t * 1000.0) / 1000.0; }

struct MovementsByKind {
  std::vector<std::string> by_kind[3];

  static MovementsByKind of(const Intersection& ix) {
    MovementsByKind m;
    for (const auto& mv : ix.movements)
      m.by_kind[static_cast<int>(mv.kind)].push_back(mv.id);
    return m;
  }
};

}  // namespace detail

inline FlowTrace generate_synthetic(const Intersection& ix, const SyntheticParams& params,
                                    double horizon_s, std::uint64_t seed) {
  if (!(horizon_s > 0)) throw FlowError("horizon must be positive");
  if (!(params.lambda_s > 0)) throw FlowError("lambda must be positive");
  if (params.extra_prob < 0 || params.extra_prob > 1)
    throw FlowError("extra_prob must be in [0,1]");
  if (params.n_processes < 1) throw FlowError("need at least one arrival process");

  auto kinds = detail::MovementsByKind::of(ix);
  std::vector<double> weights;
  std::vector<int> present;
  for (int k = 0; k < 3; ++k)
    if (!kinds.by_kind[k].empty() && params.kind_probs[k] > 0) {
      present.push_back(k);
      weights.push_back(params.kind_probs[k]);
    }
  if (present.empty()) throw FlowError("intersection has no movements of any requested kind");

  Rng base(seed);
  std::vector<std::vector<ArrivalRecord>> streams(params.n_processes);
  for (int p = 0; p < params.n_processes; ++p) {
    Rng rng = base.fork(static_cast<std::uint64_t>(p));
    double t = 0;
    for (;;) {
      t += rng.exponential(params.lambda_s);
      if (t >= horizon_s) break;
      double q = std::min(detail::quantize_ms(t), horizon_s);
      auto draw = [&] {
        int kind = present[rng.weighted_index(weights)];
        const auto& pool = kinds.by_kind[kind];
        return pool[rng.uniform_index(pool.size())];
      };
      streams[p].push_back({q, draw()});
      if (rng.uniform() < params.extra_prob) streams[p].push_back({q, draw()});
    }
  }

  FlowTrace trace;
  trace.horizon_s = horizon_s;
  for (auto& s : streams)
    trace.records.insert(trace.records.end(), s.begin(), s.end());
  std::stable_sort(trace.records.begin(), trace.records.end(),
                   [](const ArrivalRecord& a, const ArrivalRecord& b) { return a.time_s < b.time_s; });
  return trace;
}

// Re-targets a trace: arrival times are kept; records whose movement id is
// missing in `dst` are reassigned uniformly among dst movements of the same
// kind.
inline FlowTrace adapt_flow(const FlowTrace& trace, const Intersection& src,
                            const Intersection& dst, std::uint64_t seed) {
  auto dst_kinds = detail::MovementsByKind::of(dst);
  Rng rng(seed);
  FlowTrace out;
  out.horizon_s = trace.horizon_s;
  out.records.reserve(trace.records.size());
  for (const auto& rec : trace.records) {
    if (dst.movement_index.count(rec.movement_id)) {
      out.records.push_back(rec);
      continue;
    }
    auto it = src.movement_index.find(rec.movement_id);
    if (it == src.movement_index.end())
      throw FlowError("record movement '" + rec.movement_id + "' unknown in source topology");
    int kind = static_cast<int>(src.movements[it->second].kind);
    const auto& pool = dst_kinds.by_kind[kind];
    if (pool.empty())
      throw FlowError("no " + std::string(to_string(static_cast<MovementKind>(kind))) +
                      " movement in target topology for record '" + rec.movement_id + "'");
    out.records.push_back({rec.time_s, pool[rng.uniform_index(pool.size())]});
  }
  return out;
}

namespace detail {

// Seconds with up to three fractional digits, trailing zeros trimmed.
inline std::string format_seconds(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", t);
  std::string s(buf);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

}  // namespace detail

inline std::string write_flow(const FlowTrace& trace) {
  std::string out = "horizon_s=" + detail::format_seconds(trace.horizon_s) + "\n";
  for (const auto& rec : trace.records)
    out += detail::format_seconds(rec.time_s) + "," + rec.movement_id + "\n";
  return out;
}

inline FlowTrace read_flow(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  FlowTrace trace;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!have_header) {
      if (line.rfind("horizon_s=", 0) != 0)
        throw FlowError("line 1: expected 'horizon_s=<number>' header");
      try {
        trace.horizon_s = std::stod(line.substr(10));
      } catch (const std::exception&) {
        throw FlowError("line 1: bad horizon value");
      }
      if (!(trace.horizon_s > 0)) throw FlowError("line 1: horizon must be positive");
      have_header = true;
      continue;
    }
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FlowError("line " + std::to_string(line_no) + ": expected 'time_s,movement_id'");
    double t;
    try {
      std::size_t used = 0;
      t = std::stod(line.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw FlowError("line " + std::to_string(line_no) + ": bad arrival time");
    }
    if (t < 0) throw FlowError("line " + std::to_string(line_no) + ": negative arrival time");
    if (t > trace.horizon_s)
      throw FlowError("line " + std::to_string(line_no) + ": arrival time beyond horizon");
    if (!trace.records.empty() && t < trace.records.back().time_s)
      throw FlowError("line " + std::to_string(line_no) + ": records not sorted by time");
    std::string movement = line.substr(comma + 1);
    if (movement.empty())
      throw FlowError("line " + std::to_string(line_no) + ": empty movement id");
    trace.records.push_back({t, std::move(movement)});
  }
  if (!have_header) throw FlowError("empty flow file: missing header");
  return trace;
}

}  // namespace attendlight

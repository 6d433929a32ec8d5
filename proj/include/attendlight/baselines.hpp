#pragma once

// Classical controllers: FixedTime (cyclic, 15 s targets), MaxPressure
// (highest phase pressure wins) and SOTL (threshold rule with cyclic
// switching), plus the SOTL parameter grid search.

#include <cstdint>
#include <string>
#include <vector>

#include "attendlight/sim.hpp"
#include "attendlight/topology.hpp"

namespace attendlight {

struct SotlParams {
  double delta_s = 2;       // minimum elapsed green before a switch is considered
  int max_red_count = 2;    // waiting-behind-red threshold
  int min_green_count = 2;  // waiting-behind-green threshold
};

enum class ControllerKind { fixed_time, max_pressure, sotl };

inline const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::fixed_time: return "fixedtime";
    case ControllerKind::max_pressure: return "maxpressure";
    default: return "sotl";
  }
}

struct ControllerState {
  ControllerKind kind = ControllerKind::fixed_time;
  int phase_cursor = 0;
  double elapsed_green_s = 0;  // green time of the current phase at decision time
};

// Cyclic controller: holds until the phase has been green for at least
// `target_s`, then advances. With 10 s decision epochs the realized hold is
// the first epoch boundary at or beyond the target.
inline int fixed_time_decide(ControllerState& cs, int num_phases, double min_green_s = 10.0,
                             double target_s = 15.0) {
  if (cs.elapsed_green_s >= target_s) {
    cs.phase_cursor = (cs.phase_cursor + 1) % num_phases;
    cs.elapsed_green_s = min_green_s;
  } else {
    cs.elapsed_green_s += min_green_s;
  }
  return cs.phase_cursor;
}

// Highest phase pressure wins; ties go to the lowest index.
inline int max_pressure_decide(const SimState& sim) {
  int best = 0;
  double best_pressure = sim.phase_pressure(0);
  for (int p = 1; p < static_cast<int>(sim.intersection().num_phases()); ++p) {
    double pressure = sim.phase_pressure(p);
    if (pressure > best_pressure) {
      best = p;
      best_pressure = pressure;
    }
  }
  return best;
}

// SOTL rule: switch cyclically when the green has run longer than delta,
// enough cars wait behind red phases, and few cars remain behind the green.
inline int sotl_decide(const SimState& sim, const SotlParams& params, ControllerState& cs) {
  const Intersection& ix = sim.intersection();
  Observation obs = sim.observe();
  std::vector<char> green_lane(ix.lanes.size(), 0);
  for (int mi : ix.phase_movements[static_cast<std::size_t>(cs.phase_cursor)])
    green_lane[static_cast<std::size_t>(ix.movement_in[mi])] = 1;
  int behind_red = 0, behind_green = 0;
  for (int lane : ix.entering_lanes) {
    int waiting = obs.lanes[static_cast<std::size_t>(lane)].beta;
    if (green_lane[static_cast<std::size_t>(lane)])
      behind_green += waiting;
    else
      behind_red += waiting;
  }
  bool do_switch = cs.elapsed_green_s > params.delta_s &&
                   behind_red > params.max_red_count &&
                   behind_green < params.min_green_count;
  double min_green = sim.config().min_green_s;
  if (do_switch) {
    cs.phase_cursor = (cs.phase_cursor + 1) % static_cast<int>(ix.num_phases());
    cs.elapsed_green_s = min_green;
  } else {
    cs.elapsed_green_s += min_green;
  }
  return cs.phase_cursor;
}

// One full episode under a rule controller; returns the ATT. Pass trace_out
// to capture the per-tick trace.
inline double run_controller_episode(const Intersection& ix, const FlowTrace& flow,
                                     const SimConfig& cfg, std::uint64_t seed,
                                     ControllerKind kind, const SotlParams& sotl = {},
                                     std::vector<SimTraceRow>* trace_out = nullptr) {
  SimState sim(ix, flow, cfg, seed);
  if (trace_out) sim.enable_trace();
  ControllerState cs;
  cs.kind = kind;
  while (!sim.done()) {
    int next = 0;
    switch (kind) {
      case ControllerKind::fixed_time:
        next = fixed_time_decide(cs, static_cast<int>(ix.num_phases()), cfg.min_green_s);
        break;
      case ControllerKind::max_pressure:
        next = max_pressure_decide(sim);
        break;
      case ControllerKind::sotl:
        next = sotl_decide(sim, sotl, cs);
        break;
    }
    sim.apply_decision(next);
  }
  if (trace_out) *trace_out = sim.trace();
  auto log = sim.travel_log();
  return log.entries.empty() ? 0.0 : average_travel_time(log, cfg.horizon_s);
}

struct SotlGridRow {
  SotlParams params;
  double att = 0;
};

struct SotlGridResult {
  SotlParams best;
  double best_att = 0;
  std::vector<SotlGridRow> rows;
};

// Full sweep over delta in {2,7,...,32} and both counters in {2,7,...,62}
// (1183 cases); one episode per point, lexicographic tie-breaking.
inline SotlGridResult sotl_grid_search(const Intersection& ix, const FlowTrace& flow,
                                       const SimConfig& cfg, std::uint64_t seed) {
  SotlGridResult result;
  bool first = true;
  for (int delta = 2; delta <= 33; delta += 5) {
    for (int max_red = 2; max_red <= 62; max_red += 5) {
      for (int min_green = 2; min_green <= 62; min_green += 5) {
        SotlParams p{static_cast<double>(delta), max_red, min_green};
        double att = run_controller_episode(ix, flow, cfg, seed, ControllerKind::sotl, p);
        result.rows.push_back({p, att});
        if (first || att < result.best_att) {
          first = false;
          result.best = p;
          result.best_att = att;
        }
      }
    }
  }
  return result;
}

}  // namespace attendlight

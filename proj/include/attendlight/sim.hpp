#pragma once

// Discrete-time (1 s tick) single-intersection microsimulator. Signal logic
// enforces a minimum green and a yellow clearance interval; vehicles follow
// store-and-forward kinematics with a fixed saturation headway per entering
// lane. One SimState is single-threaded; independent states may run
// concurrently.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attendlight/flow.hpp"
#include "attendlight/rng.hpp"
#include "attendlight/topology.hpp"

namespace attendlight {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimConfig {
  double tick_s = 1.0;
  double chunk_m = 100.0;
  double observed_m = 300.0;  // 3 chunks
  double free_speed_mps = 10.0;
  double saturation_headway_s = 2.0;  // one discharge per green lane per 2 s
  double min_green_s = 10.0;
  double yellow_s = 5.0;
  double horizon_s = 600.0;
  double queue_gap_m = 5.0;  // space taken by a queued vehicle

  void validate() const {
    if (std::abs(observed_m - 3 * chunk_m) > 1e-9)
      throw SimError("observed_m must equal 3 chunks");
    if (min_green_s < tick_s) throw SimError("min_green_s must be at least one tick");
    if (yellow_s < 0) throw SimError("yellow_s must be nonnegative");
    if (!(free_speed_mps > 0) || !(saturation_headway_s > 0) || !(tick_s > 0) ||
        !(horizon_s > 0))
      throw SimError("speeds, headway, tick and horizon must be positive");
  }
};

enum class VehicleStage { entering_lane, leaving_lane, exited };

struct Vehicle {
  int id = 0;
  int movement = 0;       // movement index in the intersection
  double position_m = 0;  // distance to the stop line (entering) or from it (leaving)
  VehicleStage stage = VehicleStage::entering_lane;
  int lane = -1;  // current lane index, -1 while held outside the lane
  double enter_time_s = 0;
  std::optional<double> exit_time_s;
  bool moved_this_tick = false;
};

struct SignalState {
  int active_phase = 0;
  double phase_elapsed_s = 0;  // green time since activation
  bool in_yellow = false;
  std::optional<int> pending_phase;
};

struct LaneObservation {
  int alpha[3] = {0, 0, 0};  // moving vehicles per chunk, nearest chunk first
  int beta = 0;              // waiting vehicles
};

struct Observation {
  std::vector<LaneObservation> lanes;  // indexed like Intersection::lanes

  const LaneObservation& at(const Intersection& ix, const std::string& lane_id) const {
    return lanes.at(static_cast<std::size_t>(ix.lane_id_to_index(lane_id)));
  }
};

struct TravelLog {
  struct Entry {
    double enter_time_s = 0;
    std::optional<double> exit_time_s;
  };
  std::vector<Entry> entries;
};

inline double average_travel_time(const TravelLog& log, double horizon_s) {
  if (log.entries.empty()) throw SimError("empty travel log");
  double total = 0;
  for (const auto& e : log.entries) {
    if (e.exit_time_s && *e.exit_time_s <= horizon_s)
      total += *e.exit_time_s - e.enter_time_s;
    else
      total += horizon_s - e.enter_time_s;  // still in network at the horizon
  }
  return total / static_cast<double>(log.entries.size());
}

struct StepResult {
  double reward = 0;  // negative pressure at the end of the interval
  Observation observation;
  bool done = false;
  double clock_s = 0;
};

struct SimTraceRow {
  double tick_s = 0;
  int phase = 0;
  bool in_yellow = false;
  double pressure = 0;
  int arrivals = 0;
  int exits = 0;
  int crossings = 0;  // stop-line crossings this tick
};

class SimState {
 public:
  SimState(const Intersection& ix, const FlowTrace& flow, const SimConfig& cfg,
           std::uint64_t seed)
      : ix_(&ix), flow_(&flow), cfg_(cfg), rng_(splitmix64(seed) ^ 0xa5c1d3u) {
    cfg_.validate();
    for (const auto& rec : flow.records)
      if (!ix.movement_index.count(rec.movement_id))
        throw SimError("flow references unknown movement '" + rec.movement_id + "'");
    record_movement_.reserve(flow.records.size());
    for (const auto& rec : flow.records)
      record_movement_.push_back(ix.movement_index.at(rec.movement_id));
    lane_vehicles_.assign(ix.lanes.size(), {});
    spillback_.assign(ix.lanes.size(), {});
    cooldown_s_.assign(ix.lanes.size(), 0.0);
    green_movement_.assign(ix.movements.size(), false);
    right_always_movement_.assign(ix.movements.size(), false);
    for (const auto& mid : ix.right_turn_always)
      right_always_movement_[ix.movement_id_to_index(mid)] = true;
  }

  const Intersection& intersection() const { return *ix_; }
  const SimConfig& config() const { return cfg_; }
  const SignalState& signal() const { return signal_; }
  double clock_s() const { return clock_s_; }
  bool done() const { return clock_s_ >= cfg_.horizon_s; }

  int arrivals_so_far() const { return static_cast<int>(vehicles_.size()); }
  int exited_count() const { return exited_; }
  int in_network_count() const { return static_cast<int>(vehicles_.size()) - exited_; }
  const std::vector<Vehicle>& vehicle_pool() const { return vehicles_; }

  void enable_trace() { trace_enabled_ = true; }
  const std::vector<SimTraceRow>& trace() const { return trace_; }

  Observation observe() const {
    Observation obs;
    obs.lanes.resize(ix_->lanes.size());
    for (std::size_t l = 0; l < lane_vehicles_.size(); ++l) {
      bool entering = ix_->lanes[l].direction == LaneDirection::entering;
      for (int vid : lane_vehicles_[l]) {
        const Vehicle& v = vehicles_[static_cast<std::size_t>(vid)];
        if (v.position_m >= cfg_.observed_m) continue;
        if (entering && !v.moved_this_tick) {
          obs.lanes[l].beta += 1;
        } else {
          int chunk = static_cast<int>(v.position_m / cfg_.chunk_m);
          obs.lanes[l].alpha[std::min(chunk, 2)] += 1;
        }
      }
    }
    return obs;
  }

  double pressure() const {
    int waiting_in = 0;
    Observation obs = observe();
    for (int l : ix_->entering_lanes) obs_add_beta(obs, l, waiting_in);
    int leaving = 0;
    for (int l : ix_->leaving_lanes) leaving += observed_count(l);
    return std::abs(static_cast<double>(waiting_in - leaving));
  }

  // Signed pressure of one phase: waiting on its movements' entering lanes
  // minus occupancy of their leaving lanes, within the observed segment.
  double phase_pressure(int phase_index) const {
    if (phase_index < 0 || phase_index >= static_cast<int>(ix_->num_phases()))
      throw SimError("phase index out of range");
    Observation obs = observe();
    double total = 0;
    for (int mi : ix_->phase_movements[phase_index]) {
      total += obs.lanes[static_cast<std::size_t>(ix_->movement_in[mi])].beta;
      for (int out : ix_->movement_out[mi]) total -= observed_count(out);
    }
    return total;
  }

  StepResult apply_decision(int next_phase) {
    if (done()) throw SimError("stepping a finished episode");
    if (next_phase < 0 || next_phase >= static_cast<int>(ix_->num_phases()))
      throw SimError("phase index out of range");

    if (next_phase != signal_.active_phase) {
      signal_.in_yellow = true;
      signal_.pending_phase = next_phase;
      int yellow_ticks = static_cast<int>(std::llround(cfg_.yellow_s / cfg_.tick_s));
      for (int i = 0; i < yellow_ticks; ++i) tick_once(/*green=*/false);
      signal_.in_yellow = false;
      signal_.pending_phase.reset();
      signal_.active_phase = next_phase;
      signal_.phase_elapsed_s = 0;
    }
    int green_ticks = static_cast<int>(std::llround(cfg_.min_green_s / cfg_.tick_s));
    for (int i = 0; i < green_ticks; ++i) tick_once(/*green=*/true);

    StepResult result;
    result.reward = -pressure();
    result.observation = observe();
    result.clock_s = clock_s_;
    result.done = done();
    return result;
  }

  TravelLog travel_log() const {
    TravelLog log;
    log.entries.reserve(vehicles_.size());
    for (const auto& v : vehicles_) log.entries.push_back({v.enter_time_s, v.exit_time_s});
    return log;
  }

  // Vehicles inside the observed window of one lane; test support for the
  // observation partition invariant.
  int observed_count(int lane_index) const {
    int count = 0;
    for (int vid : lane_vehicles_[static_cast<std::size_t>(lane_index)])
      if (vehicles_[static_cast<std::size_t>(vid)].position_m < cfg_.observed_m) ++count;
    return count;
  }

 private:
  static void obs_add_beta(const Observation& obs, int lane, int& acc) {
    acc += obs.lanes[static_cast<std::size_t>(lane)].beta;
  }

  void tick_once(bool green_active) {
    int arrivals_before = static_cast<int>(vehicles_.size());
    int exited_before = exited_;
    crossings_this_tick_ = 0;

    inject_arrivals();

    for (std::size_t m = 0; m < green_movement_.size(); ++m)
      green_movement_[m] = false;
    if (green_active)
      for (int mi : ix_->phase_movements[signal_.active_phase]) green_movement_[mi] = true;

    green_fed_out_.assign(ix_->lanes.size(), false);
    for (int lane : ix_->entering_lanes) try_discharge(lane, /*green_pass=*/true);
    for (int lane : ix_->entering_lanes) try_discharge(lane, /*green_pass=*/false);
    for (int lane : ix_->entering_lanes) advance_entering(lane);
    for (int lane : ix_->leaving_lanes) advance_leaving(lane);

    for (auto& cd : cooldown_s_) cd = std::max(0.0, cd - cfg_.tick_s);
    clock_s_ += cfg_.tick_s;
    if (green_active) signal_.phase_elapsed_s += cfg_.tick_s;

    if (trace_enabled_) {
      trace_.push_back({clock_s_, signal_.active_phase, signal_.in_yellow, pressure(),
                        static_cast<int>(vehicles_.size()) - arrivals_before,
                        exited_ - exited_before, crossings_this_tick_});
    }
  }

  bool entry_free(int lane) const {
    const auto& q = lane_vehicles_[static_cast<std::size_t>(lane)];
    if (q.empty()) return true;
    const Vehicle& last = vehicles_[static_cast<std::size_t>(q.back())];
    return ix_->lanes[static_cast<std::size_t>(lane)].length_m - last.position_m >=
           cfg_.queue_gap_m;
  }

  void place_on_entering(int vid, int lane) {
    Vehicle& v = vehicles_[static_cast<std::size_t>(vid)];
    v.lane = lane;
    v.position_m = ix_->lanes[static_cast<std::size_t>(lane)].length_m;
    v.moved_this_tick = true;
    lane_vehicles_[static_cast<std::size_t>(lane)].push_back(vid);
  }

  void inject_arrivals() {
    // Spillback first, in arrival order, then this tick's new records.
    for (int lane : ix_->entering_lanes) {
      auto& held = spillback_[static_cast<std::size_t>(lane)];
      while (!held.empty() && entry_free(lane)) {
        place_on_entering(held.front(), lane);
        held.erase(held.begin());
      }
    }
    double tick_end = clock_s_ + cfg_.tick_s;
    while (next_record_ < flow_->records.size() &&
           flow_->records[next_record_].time_s < tick_end) {
      const auto& rec = flow_->records[next_record_];
      int mi = record_movement_[next_record_];
      ++next_record_;
      int vid = static_cast<int>(vehicles_.size());
      Vehicle v;
      v.id = vid;
      v.movement = mi;
      v.enter_time_s = rec.time_s;
      v.stage = VehicleStage::entering_lane;
      vehicles_.push_back(v);
      int lane = ix_->movement_in[mi];
      if (entry_free(lane) && spillback_[static_cast<std::size_t>(lane)].empty())
        place_on_entering(vid, lane);
      else
        spillback_[static_cast<std::size_t>(lane)].push_back(vid);
    }
  }

  void try_discharge(int lane, bool green_pass) {
    auto& q = lane_vehicles_[static_cast<std::size_t>(lane)];
    if (q.empty() || cooldown_s_[static_cast<std::size_t>(lane)] > 0) return;
    Vehicle& head = vehicles_[static_cast<std::size_t>(q.front())];
    if (head.position_m > 1e-9) return;
    bool is_green = green_movement_[static_cast<std::size_t>(head.movement)];
    if (green_pass != is_green) return;
    if (!green_pass && !right_always_movement_[static_cast<std::size_t>(head.movement)])
      return;

    const auto& outs = ix_->movement_out[static_cast<std::size_t>(head.movement)];
    int out = outs[rng_.uniform_index(outs.size())];
    if (!green_pass && green_fed_out_[static_cast<std::size_t>(out)]) return;
    if (green_pass) green_fed_out_[static_cast<std::size_t>(out)] = true;

    q.erase(q.begin());
    head.lane = out;
    head.position_m = 0;
    head.stage = VehicleStage::leaving_lane;
    head.moved_this_tick = true;
    lane_vehicles_[static_cast<std::size_t>(out)].push_back(head.id);
    cooldown_s_[static_cast<std::size_t>(lane)] = cfg_.saturation_headway_s;
    ++crossings_this_tick_;
  }

  void advance_entering(int lane) {
    auto& q = lane_vehicles_[static_cast<std::size_t>(lane)];
    double lead_position = -cfg_.queue_gap_m;  // lets the head reach the line
    for (int vid : q) {
      Vehicle& v = vehicles_[static_cast<std::size_t>(vid)];
      double target = lead_position + cfg_.queue_gap_m;
      double moved = std::max(target, v.position_m - cfg_.free_speed_mps * cfg_.tick_s);
      v.moved_this_tick = moved < v.position_m - 1e-9;
      v.position_m = moved;
      lead_position = v.position_m;
    }
  }

  void advance_leaving(int lane) {
    auto& q = lane_vehicles_[static_cast<std::size_t>(lane)];
    double length = ix_->lanes[static_cast<std::size_t>(lane)].length_m;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      Vehicle& v = vehicles_[static_cast<std::size_t>(q[i])];
      v.position_m += cfg_.free_speed_mps * cfg_.tick_s;
      v.moved_this_tick = true;
      if (v.position_m >= length) {
        v.stage = VehicleStage::exited;
        v.exit_time_s = clock_s_ + cfg_.tick_s;
        v.lane = -1;
        ++exited_;
      } else {
        q[kept++] = q[i];
      }
    }
    q.resize(kept);
  }

  const Intersection* ix_;
  const FlowTrace* flow_;
  SimConfig cfg_;
  Rng rng_;

  double clock_s_ = 0;
  SignalState signal_;
  std::vector<Vehicle> vehicles_;
  std::vector<std::vector<int>> lane_vehicles_;  // per lane, head first
  std::vector<std::vector<int>> spillback_;      // held outside the lane
  std::vector<double> cooldown_s_;               // per entering lane
  std::vector<int> record_movement_;
  std::vector<char> green_movement_;
  std::vector<char> right_always_movement_;
  std::vector<char> green_fed_out_;
  std::size_t next_record_ = 0;
  int exited_ = 0;
  int crossings_this_tick_ = 0;

  bool trace_enabled_ = false;
  std::vector<SimTraceRow> trace_;
};

}  // namespace attendlight

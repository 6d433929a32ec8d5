#pragma once

// Intersection domain model: lanes, traffic movements, phases, and the
// participating-lane sets the policy attends over. Instances are immutable
// once finalized and safe to share across rollouts.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace attendlight {

enum class LaneDirection { entering, leaving };
enum class MovementKind { straight, left, right };

inline const char* to_string(LaneDirection d) {
  return d == LaneDirection::entering ? "entering" : "leaving";
}
inline const char* to_string(MovementKind k) {
  switch (k) {
    case MovementKind::straight: return "straight";
    case MovementKind::left: return "left";
    default: return "right";
  }
}

struct LaneRef {
  std::string id;
  LaneDirection direction = LaneDirection::entering;
  double length_m = 300.0;
};

struct TrafficMovement {
  std::string id;
  std::string in_lane;
  std::vector<std::string> out_lanes;
  MovementKind kind = MovementKind::straight;
};

struct Phase {
  int id = 0;
  std::vector<std::string> movement_ids;
};

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Intersection {
  std::string name;
  std::vector<LaneRef> lanes;
  std::vector<TrafficMovement> movements;
  std::vector<Phase> phases;
  std::set<std::string> right_turn_always;

  // Index structures, filled by finalize().
  std::unordered_map<std::string, int> lane_index;
  std::unordered_map<std::string, int> movement_index;
  std::vector<int> entering_lanes;   // lane indices
  std::vector<int> leaving_lanes;    // lane indices
  std::vector<std::vector<int>> phase_participating;  // lane indices per phase
  std::vector<std::vector<int>> phase_movements;      // movement indices per phase
  std::vector<int> movement_in;                       // in-lane index per movement
  std::vector<std::vector<int>> movement_out;         // out-lane indices per movement

  std::size_t num_lanes() const { return lanes.size(); }
  std::size_t num_phases() const { return phases.size(); }

  int lane_id_to_index(const std::string& id) const {
    auto it = lane_index.find(id);
    if (it == lane_index.end()) throw TopologyError("unknown lane '" + id + "'");
    return it->second;
  }

  int movement_id_to_index(const std::string& id) const {
    auto it = movement_index.find(id);
    if (it == movement_index.end()) throw TopologyError("unknown movement '" + id + "'");
    return it->second;
  }

  void finalize();
};

// Diagnostics name the violated invariant and the offending element.
inline std::vector<std::string> validate_topology(const Intersection& ix) {
  std::vector<std::string> diags;
  std::unordered_map<std::string, const LaneRef*> lane_by_id;
  for (const auto& lane : ix.lanes) {
    if (lane_by_id.count(lane.id))
      diags.push_back("duplicate lane id '" + lane.id + "'");
    lane_by_id[lane.id] = &lane;
    if (lane.length_m < 100.0)
      diags.push_back("lane '" + lane.id + "' shorter than one chunk");
  }
  bool has_in = false, has_out = false;
  for (const auto& lane : ix.lanes) {
    has_in = has_in || lane.direction == LaneDirection::entering;
    has_out = has_out || lane.direction == LaneDirection::leaving;
  }
  if (!has_in) diags.push_back("no entering lane declared");
  if (!has_out) diags.push_back("no leaving lane declared");

  std::unordered_set<std::string> movement_ids;
  for (const auto& mv : ix.movements) {
    if (!movement_ids.insert(mv.id).second)
      diags.push_back("duplicate movement id '" + mv.id + "'");
    auto in = lane_by_id.find(mv.in_lane);
    if (in == lane_by_id.end())
      diags.push_back("movement '" + mv.id + "' references unknown lane '" + mv.in_lane + "'");
    else if (in->second->direction != LaneDirection::entering)
      diags.push_back("movement '" + mv.id + "' source not an entering lane");
    if (mv.out_lanes.empty())
      diags.push_back("movement '" + mv.id + "' has no out lanes");
    for (const auto& out : mv.out_lanes) {
      auto it = lane_by_id.find(out);
      if (it == lane_by_id.end())
        diags.push_back("movement '" + mv.id + "' references unknown lane '" + out + "'");
      else if (it->second->direction != LaneDirection::leaving)
        diags.push_back("movement '" + mv.id + "' target not a leaving lane");
    }
  }

  if (ix.phases.size() < 2) diags.push_back("fewer than two phases");
  for (const auto& phase : ix.phases) {
    if (phase.movement_ids.empty())
      diags.push_back("phase " + std::to_string(phase.id) + " has no movements");
    std::unordered_set<std::string> seen;
    for (const auto& mid : phase.movement_ids) {
      if (!movement_ids.count(mid))
        diags.push_back("phase " + std::to_string(phase.id) + " references unknown movement '" + mid + "'");
      if (!seen.insert(mid).second)
        diags.push_back("phase " + std::to_string(phase.id) + " lists movement '" + mid + "' twice");
    }
  }
  for (const auto& mid : ix.right_turn_always) {
    if (!movement_ids.count(mid))
      diags.push_back("right_turn_always references unknown movement '" + mid + "'");
  }
  return diags;
}

inline void Intersection::finalize() {
  auto diags = validate_topology(*this);
  if (!diags.empty())
    throw TopologyError("invalid topology '" + name + "': " + diags.front());

  lane_index.clear();
  movement_index.clear();
  entering_lanes.clear();
  leaving_lanes.clear();
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    lane_index[lanes[i].id] = static_cast<int>(i);
    if (lanes[i].direction == LaneDirection::entering)
      entering_lanes.push_back(static_cast<int>(i));
    else
      leaving_lanes.push_back(static_cast<int>(i));
  }
  movement_in.assign(movements.size(), -1);
  movement_out.assign(movements.size(), {});
  for (std::size_t i = 0; i < movements.size(); ++i) {
    movement_index[movements[i].id] = static_cast<int>(i);
    movement_in[i] = lane_index.at(movements[i].in_lane);
    for (const auto& out : movements[i].out_lanes)
      movement_out[i].push_back(lane_index.at(out));
  }
  phase_movements.assign(phases.size(), {});
  phase_participating.assign(phases.size(), {});
  for (std::size_t p = 0; p < phases.size(); ++p) {
    std::vector<char> member(lanes.size(), 0);
    for (const auto& mid : phases[p].movement_ids) {
      int mi = movement_index.at(mid);
      phase_movements[p].push_back(mi);
      member[movement_in[mi]] = 1;
      for (int out : movement_out[mi]) member[out] = 1;
    }
    for (std::size_t l = 0; l < lanes.size(); ++l)
      if (member[l]) phase_participating[p].push_back(static_cast<int>(l));
  }
}

// Participating lanes of a phase: entering and leaving lanes touched by any
// of its movements, deduplicated, in lane declaration order.
inline std::vector<std::string> participating_lanes(const Intersection& ix, int phase_index) {
  if (phase_index < 0 || phase_index >= static_cast<int>(ix.phases.size()))
    throw TopologyError("phase index " + std::to_string(phase_index) + " out of range");
  std::vector<std::string> out;
  for (int lane : ix.phase_participating[phase_index]) out.push_back(ix.lanes[lane].id);
  return out;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw TopologyError("unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace detail

inline Intersection parse_topology(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw TopologyError("syntax error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw TopologyError("topology document must be an object");
  detail::reject_unknown_keys(doc, {"name", "lanes", "movements", "phases", "right_turn_always"},
                              "topology document");

  Intersection ix;
  ix.name = doc.value("name", std::string("unnamed"));
  if (!doc.contains("lanes") || !doc.contains("movements") || !doc.contains("phases"))
    throw TopologyError("topology document requires 'lanes', 'movements' and 'phases'");

  for (const auto& j : doc.at("lanes")) {
    detail::reject_unknown_keys(j, {"id", "direction", "length_m"}, "lane");
    LaneRef lane;
    lane.id = j.at("id").get<std::string>();
    std::string dir = j.at("direction").get<std::string>();
    if (dir == "entering") lane.direction = LaneDirection::entering;
    else if (dir == "leaving") lane.direction = LaneDirection::leaving;
    else throw TopologyError("lane '" + lane.id + "': bad direction '" + dir + "'");
    lane.length_m = j.value("length_m", 300.0);
    if (!(lane.length_m > 0)) throw TopologyError("lane '" + lane.id + "': nonpositive length");
    ix.lanes.push_back(std::move(lane));
  }
  for (const auto& j : doc.at("movements")) {
    detail::reject_unknown_keys(j, {"id", "in", "out", "kind"}, "movement");
    TrafficMovement mv;
    mv.id = j.at("id").get<std::string>();
    mv.in_lane = j.at("in").get<std::string>();
    for (const auto& o : j.at("out")) mv.out_lanes.push_back(o.get<std::string>());
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "straight") mv.kind = MovementKind::straight;
    else if (kind == "left") mv.kind = MovementKind::left;
    else if (kind == "right") mv.kind = MovementKind::right;
    else throw TopologyError("movement '" + mv.id + "': bad kind '" + kind + "'");
    ix.movements.push_back(std::move(mv));
  }
  int phase_id = 0;
  for (const auto& j : doc.at("phases")) {
    Phase phase;
    phase.id = phase_id++;
    for (const auto& m : j) phase.movement_ids.push_back(m.get<std::string>());
    ix.phases.push_back(std::move(phase));
  }
  if (doc.contains("right_turn_always"))
    for (const auto& m : doc.at("right_turn_always"))
      ix.right_turn_always.insert(m.get<std::string>());

  auto diags = validate_topology(ix);
  if (!diags.empty()) throw TopologyError(diags.front());
  ix.finalize();
  return ix;
}

inline std::string serialize_topology(const Intersection& ix) {
  nlohmann::json doc;
  doc["name"] = ix.name;
  doc["lanes"] = nlohmann::json::array();
  for (const auto& lane : ix.lanes)
    doc["lanes"].push_back({{"id", lane.id},
                            {"direction", to_string(lane.direction)},
                            {"length_m", lane.length_m}});
  doc["movements"] = nlohmann::json::array();
  for (const auto& mv : ix.movements)
    doc["movements"].push_back({{"id", mv.id},
                                {"in", mv.in_lane},
                                {"out", mv.out_lanes},
                                {"kind", to_string(mv.kind)}});
  doc["phases"] = nlohmann::json::array();
  for (const auto& phase : ix.phases) doc["phases"].push_back(phase.movement_ids);
  doc["right_turn_always"] = ix.right_turn_always;
  return doc.dump(2);
}

namespace detail {

struct RoadSpec {
  std::string tag;       // "n", "e", ...
  std::string opposite;  // straight target road
  std::string left;      // left-turn target road
  std::string right;     // right-turn target road
};

// Roads with `lanes` lanes per direction; movement layout follows the usual
// lane discipline (leftmost lane turns left, rightmost turns right).
inline Intersection four_way(const std::string& name, int lanes_per_road,
                             bool eight_phase) {
  Intersection ix;
  ix.name = name;
  const std::vector<RoadSpec> roads = {{"n", "s", "e", "w"},
                                       {"s", "n", "w", "e"},
                                       {"e", "w", "s", "n"},
                                       {"w", "e", "n", "s"}};
  for (const auto& r : roads)
    for (int k = 1; k <= lanes_per_road; ++k) {
      ix.lanes.push_back({r.tag + "_in" + std::to_string(k), LaneDirection::entering, 300.0});
      ix.lanes.push_back({r.tag + "_out" + std::to_string(k), LaneDirection::leaving, 300.0});
    }
  auto outs = [&](const std::string& road) {
    std::vector<std::string> v;
    for (int k = 1; k <= lanes_per_road; ++k) v.push_back(road + "_out" + std::to_string(k));
    return v;
  };
  for (const auto& r : roads) {
    // Lane 1 carries the left turn; straights run from every lane when the
    // road is wide enough, otherwise they share lane 1; the right turn uses
    // the last lane.
    ix.movements.push_back({r.tag + "_l", r.tag + "_in1", outs(r.left), MovementKind::left});
    int straight_from = lanes_per_road >= 2 ? 2 : 1;
    for (int k = straight_from; k <= lanes_per_road; ++k)
      ix.movements.push_back({r.tag + "_t" + std::to_string(k),
                              r.tag + "_in" + std::to_string(k), outs(r.opposite),
                              MovementKind::straight});
    if (lanes_per_road >= 3) {
      std::string mid = r.tag + "_r";
      ix.movements.push_back({mid, r.tag + "_in" + std::to_string(lanes_per_road),
                              outs(r.right), MovementKind::right});
      ix.right_turn_always.insert(mid);
    }
  }
  auto straights = [&](const std::string& tag) {
    std::vector<std::string> v;
    int straight_from = lanes_per_road >= 2 ? 2 : 1;
    for (int k = straight_from; k <= lanes_per_road; ++k)
      v.push_back(tag + "_t" + std::to_string(k));
    return v;
  };
  auto concat = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  int id = 0;
  auto add_phase = [&](std::vector<std::string> ms) {
    ix.phases.push_back({id++, std::move(ms)});
  };
  add_phase(concat(straights("n"), straights("s")));
  add_phase({"n_l", "s_l"});
  add_phase(concat(straights("e"), straights("w")));
  add_phase({"e_l", "w_l"});
  if (eight_phase) {
    add_phase(concat(straights("n"), {"n_l"}));
    add_phase(concat(straights("s"), {"s_l"}));
    add_phase(concat(straights("e"), {"e_l"}));
    add_phase(concat(straights("w"), {"w_l"}));
  }
  ix.finalize();
  return ix;
}

// The 3-way layout of the running example: a T junction of west, east and
// north roads with two lanes per direction and six movements v1..v6.
inline Intersection three_way_fig1(const std::string& name) {
  Intersection ix;
  ix.name = name;
  for (int k = 1; k <= 6; ++k)
    ix.lanes.push_back({"l" + std::to_string(k) + "in", LaneDirection::entering, 300.0});
  for (int k = 1; k <= 6; ++k)
    ix.lanes.push_back({"l" + std::to_string(k) + "out", LaneDirection::leaving, 300.0});
  ix.movements = {
      {"v1", "l1in", {"l5out", "l6out"}, MovementKind::left},
      {"v2", "l2in", {"l3out", "l4out"}, MovementKind::straight},
      {"v3", "l3in", {"l1out", "l2out"}, MovementKind::straight},
      {"v4", "l4in", {"l5out", "l6out"}, MovementKind::right},
      {"v5", "l5in", {"l3out", "l4out"}, MovementKind::left},
      {"v6", "l6in", {"l1out", "l2out"}, MovementKind::right},
  };
  ix.phases = {{0, {"v5", "v6"}}, {1, {"v2", "v3", "v4"}}, {2, {"v1", "v2"}}};
  ix.right_turn_always = {"v4", "v6"};
  ix.finalize();
  return ix;
}

// A T junction with a single-lane north road and two-phase control.
inline Intersection three_way_two_phase(const std::string& name) {
  Intersection ix;
  ix.name = name;
  ix.lanes = {
      {"w_in1", LaneDirection::entering, 300.0}, {"w_in2", LaneDirection::entering, 300.0},
      {"w_out1", LaneDirection::leaving, 300.0}, {"w_out2", LaneDirection::leaving, 300.0},
      {"e_in1", LaneDirection::entering, 300.0}, {"e_in2", LaneDirection::entering, 300.0},
      {"e_out1", LaneDirection::leaving, 300.0}, {"e_out2", LaneDirection::leaving, 300.0},
      {"n_in1", LaneDirection::entering, 300.0}, {"n_out1", LaneDirection::leaving, 300.0},
  };
  ix.movements = {
      {"w_t", "w_in1", {"e_out1", "e_out2"}, MovementKind::straight},
      {"w_l", "w_in2", {"n_out1"}, MovementKind::left},
      {"e_t", "e_in1", {"w_out1", "w_out2"}, MovementKind::straight},
      {"e_r", "e_in2", {"n_out1"}, MovementKind::right},
      {"n_l", "n_in1", {"e_out1", "e_out2"}, MovementKind::left},
      {"n_r", "n_in1", {"w_out1", "w_out2"}, MovementKind::right},
  };
  ix.phases = {{0, {"w_t", "e_t", "e_r"}}, {1, {"n_l", "n_r", "w_l"}}};
  ix.right_turn_always = {"e_r", "n_r"};
  ix.finalize();
  return ix;
}

}  // namespace detail

struct IntersectionCatalog {
  std::map<std::string, Intersection> presets;

  std::optional<Intersection> lookup(const std::string& name) const {
    auto it = presets.find(name);
    if (it == presets.end()) return std::nullopt;
    return it->second;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : presets) out.push_back(k);
    return out;
  }
};

// Built-in presets: 3-way and 4-way junctions with 1-3 lanes per road and
// 2, 3, 4 or 8 phases.
inline const IntersectionCatalog& builtin_catalog() {
  static const IntersectionCatalog catalog = [] {
    IntersectionCatalog c;
    c.presets.emplace("int1", detail::three_way_fig1("int1"));
    c.presets.emplace("int3", detail::three_way_two_phase("int3"));
    c.presets.emplace("int7-4p", detail::four_way("int7-4p", 2, false));
    c.presets.emplace("int7-8p", detail::four_way("int7-8p", 2, true));
    c.presets.emplace("int9", detail::four_way("int9", 3, false));
    return c;
  }();
  return catalog;
}

}  // namespace attendlight

#include <doctest.h>

#include <algorithm>
#include <set>

#include "attendlight/topology.hpp"

using namespace attendlight;

namespace {

std::string minimal_doc() {
  return R"({
    "name": "mini",
    "lanes": [
      {"id": "a_in", "direction": "entering", "length_m": 300},
      {"id": "b_in", "direction": "entering", "length_m": 300},
      {"id": "a_out", "direction": "leaving", "length_m": 300},
      {"id": "b_out", "direction": "leaving", "length_m": 300}
    ],
    "movements": [
      {"id": "m1", "in": "a_in", "out": ["b_out"], "kind": "straight"},
      {"id": "m2", "in": "b_in", "out": ["a_out"], "kind": "straight"}
    ],
    "phases": [["m1"], ["m2"]]
  })";
}

}  // namespace

TEST_CASE("fig1-style 3-way document parses with 12 lanes and 3 phases") {
  auto ix = builtin_catalog().lookup("int1");
  REQUIRE(ix.has_value());
  std::string text = serialize_topology(*ix);
  Intersection parsed = parse_topology(text);
  CHECK(parsed.num_lanes() == 12);
  CHECK(parsed.num_phases() == 3);
  CHECK(parsed.movements.size() == 6);
}

TEST_CASE("phase referencing an undeclared movement fails") {
  std::string doc = minimal_doc();
  auto pos = doc.find("[\"m2\"]");
  doc.replace(pos, 6, "[\"v9\"]");
  CHECK_THROWS_WITH_AS(parse_topology(doc),
                       doctest::Contains("unknown movement"), TopologyError);
}

TEST_CASE("minimal two-phase document parses") {
  Intersection ix = parse_topology(minimal_doc());
  CHECK(ix.num_phases() == 2);
  CHECK(ix.name == "mini");
}

TEST_CASE("syntax errors report a position") {
  CHECK_THROWS_WITH_AS(parse_topology("{\"name\": "), doctest::Contains("syntax error"),
                       TopologyError);
}

TEST_CASE("unknown keys are rejected") {
  std::string doc = minimal_doc();
  doc.insert(doc.rfind('}'), ", \"bogus\": 1");
  CHECK_THROWS_WITH_AS(parse_topology(doc), doctest::Contains("unknown key"), TopologyError);
}

TEST_CASE("participating lanes of fig1 phase 1") {
  Intersection ix = *builtin_catalog().lookup("int1");
  auto part = participating_lanes(ix, 0);  // movements v5, v6
  std::set<std::string> got(part.begin(), part.end());
  std::set<std::string> want = {"l5in", "l6in", "l1out", "l2out", "l3out", "l4out"};
  CHECK(got == want);
  CHECK(part.size() == 6);
}

TEST_CASE("participating lanes: single movement and shared out-lane") {
  Intersection ix = parse_topology(minimal_doc());
  auto part = participating_lanes(ix, 0);
  CHECK(part == std::vector<std::string>{"a_in", "b_out"});

  // two movements sharing an out-lane list it once
  Intersection shared;
  shared.name = "shared";
  shared.lanes = {{"i1", LaneDirection::entering, 300},
                  {"i2", LaneDirection::entering, 300},
                  {"o3", LaneDirection::leaving, 300}};
  shared.movements = {{"m1", "i1", {"o3"}, MovementKind::straight},
                      {"m2", "i2", {"o3"}, MovementKind::straight}};
  shared.phases = {{0, {"m1", "m2"}}, {1, {"m1"}}};
  shared.finalize();
  auto both = participating_lanes(shared, 0);
  CHECK(std::count(both.begin(), both.end(), "o3") == 1);
  CHECK(both.size() == 3);
}

TEST_CASE("participating lanes rejects out-of-range phase") {
  Intersection ix = parse_topology(minimal_doc());
  CHECK_THROWS_AS(participating_lanes(ix, 7), TopologyError);
}

TEST_CASE("validate_topology diagnostics") {
  Intersection ix = *builtin_catalog().lookup("int1");
  CHECK(validate_topology(ix).empty());

  SUBCASE("single-phase intersection is flagged") {
    ix.phases.resize(1);
    auto diags = validate_topology(ix);
    bool found = false;
    for (const auto& d : diags) found = found || d.find("fewer than two phases") != std::string::npos;
    CHECK(found);
  }
  SUBCASE("movement sourced from a leaving lane is flagged") {
    ix.lanes[0].direction = LaneDirection::leaving;  // l1in used by v1
    auto diags = validate_topology(ix);
    bool found = false;
    for (const auto& d : diags)
      found = found || d.find("source not an entering lane") != std::string::npos;
    CHECK(found);
  }
}

TEST_CASE("builtin catalog presets") {
  const auto& catalog = builtin_catalog();

  auto int1 = catalog.lookup("int1");
  REQUIRE(int1.has_value());
  CHECK(int1->num_phases() == 3);
  std::set<char> roads;
  CHECK(int1->num_lanes() == 12);  // three 2-lane bidirectional roads

  auto int3 = catalog.lookup("int3");
  REQUIRE(int3.has_value());
  CHECK(int3->num_phases() == 2);

  auto int7 = catalog.lookup("int7-8p");
  REQUIRE(int7.has_value());
  CHECK(int7->num_phases() == 8);
  for (const auto& phase : int7->phases) CHECK(phase.movement_ids.size() == 2);

  auto int7_4 = catalog.lookup("int7-4p");
  REQUIRE(int7_4.has_value());
  CHECK(int7_4->num_phases() == 4);
  CHECK(int7_4->num_lanes() == 16);

  auto int9 = catalog.lookup("int9");
  REQUIRE(int9.has_value());
  CHECK(int9->num_phases() == 4);
  CHECK(int9->num_lanes() == 24);

  CHECK_FALSE(catalog.lookup("int99").has_value());

  for (const auto& name : catalog.names()) {
    Intersection ix = *catalog.lookup(name);
    CHECK(validate_topology(ix).empty());
    for (std::size_t p = 0; p < ix.num_phases(); ++p) {
      auto part = participating_lanes(ix, static_cast<int>(p));
      CHECK_FALSE(part.empty());
      for (const auto& id : part) CHECK(ix.lane_index.count(id) == 1);
    }
  }
}

TEST_CASE("serialize/parse round-trip preserves structure") {
  for (const auto& name : builtin_catalog().names()) {
    Intersection ix = *builtin_catalog().lookup(name);
    Intersection again = parse_topology(serialize_topology(ix));
    CHECK(again.name == ix.name);
    REQUIRE(again.lanes.size() == ix.lanes.size());
    for (std::size_t i = 0; i < ix.lanes.size(); ++i) {
      CHECK(again.lanes[i].id == ix.lanes[i].id);
      CHECK(again.lanes[i].direction == ix.lanes[i].direction);
      CHECK(again.lanes[i].length_m == ix.lanes[i].length_m);
    }
    REQUIRE(again.movements.size() == ix.movements.size());
    for (std::size_t i = 0; i < ix.movements.size(); ++i) {
      CHECK(again.movements[i].id == ix.movements[i].id);
      CHECK(again.movements[i].in_lane == ix.movements[i].in_lane);
      CHECK(again.movements[i].out_lanes == ix.movements[i].out_lanes);
      CHECK(again.movements[i].kind == ix.movements[i].kind);
    }
    REQUIRE(again.phases.size() == ix.phases.size());
    for (std::size_t i = 0; i < ix.phases.size(); ++i)
      CHECK(again.phases[i].movement_ids == ix.phases[i].movement_ids);
    CHECK(again.right_turn_always == ix.right_turn_always);
  }
}

TEST_CASE("participating_lanes is order-stable across calls") {
  Intersection ix = *builtin_catalog().lookup("int7-8p");
  for (std::size_t p = 0; p < ix.num_phases(); ++p) {
    auto a = participating_lanes(ix, static_cast<int>(p));
    auto b = participating_lanes(ix, static_cast<int>(p));
    CHECK(a == b);
  }
}

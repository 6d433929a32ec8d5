#include <doctest.h>

#include "attendlight/baselines.hpp"
#include "attendlight/flow.hpp"
#include "attendlight/topology.hpp"

using namespace attendlight;

namespace {

Intersection mini() {
  Intersection ix;
  ix.name = "mini";
  ix.lanes = {{"a_in", LaneDirection::entering, 100},
              {"b_in", LaneDirection::entering, 100},
              {"a_out", LaneDirection::leaving, 100},
              {"b_out", LaneDirection::leaving, 100}};
  ix.movements = {{"m1", "a_in", {"b_out"}, MovementKind::straight},
                  {"m2", "b_in", {"a_out"}, MovementKind::straight}};
  ix.phases = {{0, {"m1"}}, {1, {"m2"}}};
  ix.finalize();
  return ix;
}

}  // namespace

TEST_CASE("fixed time holds for two 10 s epochs then advances cyclically") {
  ControllerState cs;
  int num_phases = 3;
  std::vector<int> decisions;
  for (int i = 0; i < 9; ++i) decisions.push_back(fixed_time_decide(cs, num_phases));
  // Each phase is decided twice (20 s of green) before the cycle advances.
  CHECK(decisions == std::vector<int>{0, 0, 1, 1, 2, 2, 0, 0, 1});
  CHECK(cs.phase_cursor == 1);
}

TEST_CASE("fixed time with two phases alternates parity") {
  ControllerState cs;
  std::vector<int> decisions;
  for (int i = 0; i < 8; ++i) decisions.push_back(fixed_time_decide(cs, 2));
  CHECK(decisions == std::vector<int>{0, 0, 1, 1, 0, 0, 1, 1});
}

TEST_CASE("fixed time returns to phase 0 after a full cycle") {
  ControllerState cs;
  for (int i = 0; i < 6; ++i) fixed_time_decide(cs, 3);
  CHECK(fixed_time_decide(cs, 3) == 0);
}

TEST_CASE("max pressure picks the highest-pressure phase with low-index ties") {
  Intersection ix = *builtin_catalog().lookup("int1");
  FlowTrace empty;
  empty.horizon_s = 600;
  SimState sim(ix, empty, SimConfig{}, 1);
  CHECK(max_pressure_decide(sim) == 0);  // all-zero tie goes to phase 0

  // Load v5's approach (phase 0 serves it) and verify the argmax.
  FlowTrace flow;
  flow.horizon_s = 600;
  for (int i = 0; i < 8; ++i) flow.records.push_back({0.2 * i, "v5"});
  SimState busy(ix, flow, SimConfig{}, 1);
  busy.apply_decision(1);  // leave phase 0 red, queue builds on l5in
  busy.apply_decision(1);
  busy.apply_decision(1);  // t=35: all eight vehicles queued at the line
  CHECK(busy.phase_pressure(0) > busy.phase_pressure(1));
  CHECK(max_pressure_decide(busy) == 0);
}

TEST_CASE("max pressure argmax is invariant to doubling the load") {
  Intersection ix = mini();
  FlowTrace flow;
  flow.horizon_s = 600;
  for (int i = 0; i < 6; ++i) flow.records.push_back({0.3 * i, "m2"});
  SimState sim(ix, flow, SimConfig{}, 2);
  sim.apply_decision(0);
  sim.apply_decision(0);
  int pick = max_pressure_decide(sim);

  FlowTrace doubled;
  doubled.horizon_s = 600;
  for (int i = 0; i < 12; ++i) doubled.records.push_back({0.15 * i, "m2"});
  SimState sim2(ix, doubled, SimConfig{}, 2);
  sim2.apply_decision(0);
  sim2.apply_decision(0);
  CHECK(max_pressure_decide(sim2) == pick);
}

TEST_CASE("sotl switching rule") {
  Intersection ix = mini();
  FlowTrace flow;
  flow.horizon_s = 600;
  for (int i = 0; i < 12; ++i) flow.records.push_back({0.2 * i, "m2"});  // red approach
  SimState sim(ix, flow, SimConfig{}, 3);
  sim.apply_decision(0);
  sim.apply_decision(0);  // t=20: queue waiting on b_in

  Observation obs = sim.observe();
  int waiting = obs.at(ix, "b_in").beta;
  REQUIRE(waiting >= 10);

  SUBCASE("rule satisfied: switch") {
    SotlParams p{5.0, waiting - 2, 3};
    ControllerState cs;
    cs.elapsed_green_s = 20;
    CHECK(sotl_decide(sim, p, cs) == 1);
  }
  SUBCASE("beta at the threshold holds (strict inequality)") {
    // Make the green-side count equal to min_green_count: green side is a_in
    // with zero waiting, so pick min_green_count = 0.
    SotlParams p{5.0, 1, 0};
    ControllerState cs;
    cs.elapsed_green_s = 20;
    CHECK(sotl_decide(sim, p, cs) == 0);
  }
  SUBCASE("elapsed at or below delta holds regardless of counts") {
    SotlParams p{20.0, 1, 50};
    ControllerState cs;
    cs.elapsed_green_s = 20;  // not strictly greater than delta
    CHECK(sotl_decide(sim, p, cs) == 0);
  }
}

TEST_CASE("sotl and fixed time advance cyclically on every preset") {
  for (const auto& name : builtin_catalog().names()) {
    Intersection ix = *builtin_catalog().lookup(name);
    auto flow = generate_synthetic(ix, synthetic_preset("s3"), 200, 4);
    SimConfig cfg;
    cfg.horizon_s = 200;
    SimState sim(ix, flow, cfg, 4);
    ControllerState cs;
    int prev = 0;
    while (!sim.done()) {
      int next = sotl_decide(sim, SotlParams{2, 2, 2}, cs);
      CHECK(next >= 0);
      CHECK(next < static_cast<int>(ix.num_phases()));
      bool cyclic = next == prev || next == (prev + 1) % static_cast<int>(ix.num_phases());
      CHECK(cyclic);
      prev = next;
      sim.apply_decision(next);
    }
  }
}

TEST_CASE("controller episodes produce a positive ATT on every preset") {
  for (const auto& name : builtin_catalog().names()) {
    Intersection ix = *builtin_catalog().lookup(name);
    auto flow = generate_synthetic(ix, synthetic_preset("s6"), 300, 9);
    SimConfig cfg;
    cfg.horizon_s = 300;
    for (auto kind :
         {ControllerKind::fixed_time, ControllerKind::max_pressure, ControllerKind::sotl}) {
      double att = run_controller_episode(ix, flow, cfg, 9, kind, SotlParams{2, 7, 2});
      CHECK(att > 0);
      CHECK(att <= cfg.horizon_s);
    }
  }
}

TEST_CASE("sotl grid search enumerates 1183 cases and returns the minimum") {
  Intersection ix = mini();
  FlowTrace flow;
  flow.horizon_s = 120;
  for (int i = 0; i < 40; ++i)
    flow.records.push_back({i * 2.5, i % 3 == 0 ? "m1" : "m2"});
  SimConfig cfg;
  cfg.horizon_s = 120;

  auto result = sotl_grid_search(ix, flow, cfg, 5);
  CHECK(result.rows.size() == 1183);  // 13 x 13 x 7
  for (const auto& row : result.rows) CHECK(result.best_att <= row.att);

  auto again = sotl_grid_search(ix, flow, cfg, 5);
  CHECK(again.best.delta_s == result.best.delta_s);
  CHECK(again.best.max_red_count == result.best.max_red_count);
  CHECK(again.best.min_green_count == result.best.min_green_count);
  CHECK(again.best_att == result.best_att);
}

TEST_CASE("max pressure commutes with phase relabeling") {
  Intersection ix = *builtin_catalog().lookup("int1");
  SyntheticParams params;
  params.lambda_s = 3;
  auto flow = generate_synthetic(ix, params, 300, 6);
  SimConfig cfg;
  cfg.horizon_s = 300;

  // Swap the labels of phases 1 and 2; phase 0 stays put, so both simulators
  // start in the same physical signal state.
  Intersection relabeled = ix;
  std::swap(relabeled.phases[1], relabeled.phases[2]);
  for (std::size_t p = 0; p < relabeled.phases.size(); ++p)
    relabeled.phases[p].id = static_cast<int>(p);
  relabeled.finalize();
  auto mapped = [](int p) { return p == 0 ? 0 : 3 - p; };  // 1 <-> 2

  SimState x(ix, flow, cfg, 6);
  SimState y(relabeled, flow, cfg, 6);
  int steps = 0;
  while (!x.done()) {
    int pick_x = max_pressure_decide(x);
    int pick_y = max_pressure_decide(y);
    CHECK(pick_y == mapped(pick_x));
    // apply the same physical phase to both
    x.apply_decision(pick_x);
    y.apply_decision(mapped(pick_x));
    ++steps;
  }
  CHECK(steps >= 20);
}

TEST_CASE("max pressure returns a valid phase on every preset") {
  for (const auto& name : builtin_catalog().names()) {
    Intersection ix = *builtin_catalog().lookup(name);
    auto flow = generate_synthetic(ix, synthetic_preset("s4"), 150, 3);
    SimConfig cfg;
    cfg.horizon_s = 150;
    SimState sim(ix, flow, cfg, 3);
    while (!sim.done()) {
      int pick = max_pressure_decide(sim);
      CHECK(pick >= 0);
      CHECK(pick < static_cast<int>(ix.num_phases()));
      sim.apply_decision(pick);
    }
  }
}

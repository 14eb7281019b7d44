#include <catch2/catch_amalgamated.hpp>

#include "klb/ilp.hpp"
#include "support/generators.hpp"

using namespace klb;

namespace {

IlpInstance two_dip_example() {
  // enumerable by hand: combos summing to 1.0 are (0.4,0.6)->11,
  // (0.5,0.5)->8, (0.6,0.4)->9
  IlpInstance in;
  in.dips = {"d1", "d2"};
  in.weight_units = {{400, 500, 600}, {400, 500, 600}};
  in.latency = {{2, 3, 5}, {4, 5, 9}};
  in.total = 1.0;
  in.slack = 0.0;
  return in;
}

}  // namespace

TEST_CASE("two-DIP example solves to the enumerated optimum") {
  const auto got = solve_exact(two_dip_example());
  REQUIRE(got.has_value());
  CHECK(got->choice.at("d1") == 0.5);
  CHECK(got->choice.at("d2") == 0.5);
  CHECK(got->objective == 8.0);
  CHECK(check_assignment(two_dip_example(), *got));
}

TEST_CASE("zero imbalance forces equal weights") {
  auto in = two_dip_example();
  in.max_imbalance = 0.0;
  const auto got = solve_exact(in);
  REQUIRE(got.has_value());
  CHECK(got->choice.at("d1") == 0.5);
  CHECK(got->choice.at("d2") == 0.5);
  CHECK(got->y_max == got->y_min);
}

TEST_CASE("single DIP with a single candidate is forced") {
  IlpInstance in;
  in.dips = {"d"};
  in.weight_units = {{1000}};
  in.latency = {{7}};
  in.slack = 0.0;
  const auto got = solve_exact(in);
  REQUIRE(got.has_value());
  CHECK(got->choice.at("d") == 1.0);
  CHECK(got->objective == 7.0);

  const auto oracle = brute_force_oracle(in);
  REQUIRE(oracle.has_value());
  CHECK(oracle->objective == 7.0);
}

TEST_CASE("infeasible instances signal UNSAT rather than throwing") {
  IlpInstance in;
  in.dips = {"a", "b", "c"};
  in.weight_units = {{100}, {100}, {100}};
  in.latency = {{1}, {1}, {1}};
  in.total = 1.0;
  in.slack = 0.0;
  CHECK_FALSE(solve_exact(in).has_value());
  CHECK_FALSE(brute_force_oracle(in).has_value());

  // malformed instances are a different failure mode
  IlpInstance bad;
  CHECK_THROWS_AS(solve_exact(bad), std::invalid_argument);
}

TEST_CASE("oracle size guard") {
  IlpInstance in;
  for (int d = 0; d < 9; ++d) {
    in.dips.push_back("d" + std::to_string(d));
    std::vector<long long> ws;
    std::vector<Millis> ls;
    for (int j = 0; j < 10; ++j) {
      ws.push_back(j * 10);
      ls.push_back(j);
    }
    in.weight_units.push_back(ws);
    in.latency.push_back(ls);
  }
  CHECK_THROWS_AS(brute_force_oracle(in), std::length_error);
}

TEST_CASE("solver matches the oracle on random instances") {
  Rng rng(101);
  int feasible = 0;
  for (int it = 0; it < 400; ++it) {
    const auto in = testgen::random_instance(rng);
    const auto a = solve_exact(in);
    const auto b = brute_force_oracle(in);
    REQUIRE(a.has_value() == b.has_value());
    if (!a) continue;
    ++feasible;
    CHECK(a->objective == b->objective);
    CHECK(a->choice == b->choice);
    CHECK(check_assignment(in, *a));
  }
  CHECK(feasible > 100);
}

TEST_CASE("raising one DIP's latencies never raises its chosen weight") {
  Rng rng(131);
  for (int it = 0; it < 200; ++it) {
    auto in = testgen::feasible_instance(rng);
    const auto before = brute_force_oracle(in);
    REQUIRE(before.has_value());
    const int victim = rng.uniform_int(0, static_cast<int>(in.dips.size()) - 1);
    const double factor = rng.uniform(1.1, 3.0);
    for (auto& l : in.latency[victim]) l *= factor;
    const auto after = brute_force_oracle(in);
    REQUIRE(after.has_value());
    CHECK(after->choice.at(in.dips[victim]) <= before->choice.at(in.dips[victim]));

    const auto solver_after = solve_exact(in);
    REQUIRE(solver_after.has_value());
    CHECK(solver_after->choice == after->choice);
  }
}

TEST_CASE("identical instances solve to bit-identical assignments") {
  Rng rng(151);
  for (int it = 0; it < 50; ++it) {
    const auto in = testgen::random_instance(rng);
    const auto a = solve_exact(in);
    const auto b = solve_exact(in);
    REQUIRE(a.has_value() == b.has_value());
    if (!a) continue;
    CHECK(a->objective == b->objective);
    CHECK(a->choice == b->choice);
    CHECK(a->y_max == b->y_max);
    CHECK(a->y_min == b->y_min);
  }
}

TEST_CASE("grid construction quantizes and deduplicates") {
  WeightLatencyCurve c;
  c.dip = "d";
  c.a0 = 2.0;
  c.a1 = 1.0;
  c.a2 = 10.0;
  c.idle_latency = 2.0;
  c.max_safe_weight = 0.165;
  c.fitted = true;

  const auto in = build_instance({{"d", c}});
  REQUIRE(in.dips.size() == 1);
  const std::vector<long long> expected = {0, 18, 37, 55, 73, 92, 110, 128, 147, 165};
  CHECK(in.weight_units[0] == expected);

  // two grid points quantizing to the same unit collapse to one entry
  WeightLatencyCurve tiny = c;
  tiny.max_safe_weight = 0.004;
  const auto small = build_instance({{"d", tiny}});
  CHECK(small.weight_units[0].size() == 5);  // 0..4 units
  for (size_t i = 1; i < small.weight_units[0].size(); ++i)
    CHECK(small.weight_units[0][i] > small.weight_units[0][i - 1]);

  WeightLatencyCurve unfitted;
  unfitted.max_safe_weight = 0.1;
  CHECK_THROWS_AS(build_instance({{"d", unfitted}}), std::logic_error);
}

TEST_CASE("multistep stays single-step below the threshold") {
  const auto curves = testgen::bench_curves(30, 7);
  MultistepConfig cfg;
  cfg.slack = 0.01;
  const auto stepped = solve_multistep(curves, cfg);
  IlpInstance one = build_instance(curves, cfg.grid);
  one.slack = cfg.slack;
  const auto direct = solve_exact(one);
  REQUIRE(stepped.has_value());
  REQUIRE(direct.has_value());
  CHECK(stepped->choice == direct->choice);
}

TEST_CASE("multistep refinement never worsens the step-1 objective") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto curves = testgen::bench_curves(120, seed);
    MultistepConfig cfg;
    cfg.slack = 0.01;
    IlpInstance one = build_instance(curves, cfg.grid);
    one.slack = cfg.slack;
    const auto coarse = solve_exact(one);
    const auto refined = solve_multistep(curves, cfg);
    REQUIRE(coarse.has_value());
    REQUIRE(refined.has_value());
    CHECK(refined->objective <= coarse->objective + 1e-12);
  }
}

TEST_CASE("a step-1 choice at zero clamps the zoom window at zero") {
  WeightLatencyCurve c;
  c.dip = "d";
  c.a0 = 1.0;
  c.idle_latency = 1.0;
  c.max_safe_weight = 0.5;
  c.fitted = true;
  // zoom window around center 0 must span [0, delta]
  MultistepConfig cfg;
  IlpInstance step2;
  const double delta = cfg.zoom_fraction * c.max_safe_weight;
  const double lo = std::max(0.0, 0.0 - delta);
  CHECK(lo == 0.0);
  CHECK(delta == Catch::Approx(0.05));
}

TEST_CASE("residual solve honors the reduced total") {
  // the candidate set from the worked scheduling case: W = {0.1, 0.2, 0.3}
  IlpInstance in;
  in.dips = {"a", "b"};
  in.weight_units = {{100, 200, 300}, {100, 200, 300}};
  in.latency = {{1, 3, 9}, {2, 5, 11}};
  in.total = 0.4;  // 1 - w_s with w_s = 0.6
  in.slack = 0.0;
  const auto got = solve_exact(in);
  const auto oracle = brute_force_oracle(in);
  REQUIRE(got.has_value());
  REQUIRE(oracle.has_value());
  CHECK(got->choice == oracle->choice);
  CHECK(got->objective == oracle->objective);
  long long sum = 0;
  for (const auto& [id, w] : got->choice) sum += weight_units(w);
  CHECK(sum == 400);

  // w_s = 0 degenerates to the full solve
  std::map<DipId, WeightLatencyCurve> curves;
  for (int d = 0; d < 2; ++d) {
    WeightLatencyCurve c;
    c.dip = "d" + std::to_string(d);
    c.a0 = 1.0 + d;
    c.a1 = 2.0;
    c.a2 = 10.0;
    c.idle_latency = 1.0;
    c.max_safe_weight = 0.6;
    c.fitted = true;
    curves[c.dip] = c;
  }
  MultistepConfig cfg;
  cfg.slack = 0.02;
  const auto full = residual_solve(curves, 0.0, cfg);
  IlpInstance direct_in = build_instance(curves, cfg.grid);
  direct_in.slack = cfg.slack;
  const auto direct = solve_exact(direct_in);
  REQUIRE(full.has_value());
  REQUIRE(direct.has_value());
  CHECK(full->choice == direct->choice);
}

TEST_CASE("residual solve reports UNSAT when nothing fits") {
  std::map<DipId, WeightLatencyCurve> curves;
  WeightLatencyCurve c;
  c.dip = "d";
  c.a0 = 1.0;
  c.idle_latency = 1.0;
  c.max_safe_weight = 0.3;  // candidates span [0, 0.3], total wanted ~0.99
  c.fitted = true;
  curves[c.dip] = c;
  MultistepConfig cfg;
  cfg.slack = 0.0;
  CHECK_FALSE(residual_solve(curves, 0.01, cfg).has_value());
}

#include <catch2/catch_amalgamated.hpp>

#include "klb/explore.hpp"
#include "klb/rng.hpp"

using namespace klb;

namespace {

ExplorationState state(double now, double prev, double wmax = 0.0, double idle = 1.0) {
  ExplorationState s;
  s.dip = "d";
  s.current_weight = now;
  s.previous_weight = prev;
  s.max_safe_weight = wmax;
  s.idle_latency = idle;
  return s;
}

}  // namespace

TEST_CASE("run phase doubles the weight when latency equals idle") {
  const auto step = next_weight(state(0.1, 0.05), 1.0, false);
  REQUIRE(step.next.has_value());
  CHECK(*step.next == Catch::Approx(0.2));
  CHECK(step.state.max_safe_weight == Catch::Approx(0.1));
  CHECK(step.state.previous_weight == Catch::Approx(0.1));
  CHECK(step.state.current_weight == Catch::Approx(0.2));
}

TEST_CASE("backtrack phase bisects toward the last safe weight") {
  const auto step = next_weight(state(0.4, 0.2), 10.0, true);
  REQUIRE(step.next.has_value());
  CHECK(*step.next == Catch::Approx(0.3));
  CHECK(step.state.current_weight == Catch::Approx(0.3));
  // the safe bracket end stays where it was
  CHECK(step.state.previous_weight == Catch::Approx(0.2));
  CHECK(step.state.backtracked);
}

TEST_CASE("termination when the step shrinks below the fraction") {
  const auto step = next_weight(state(0.21, 0.20), 1.5, false);
  CHECK_FALSE(step.next.has_value());
  CHECK(step.state.done);

  CHECK_THROWS_AS(next_weight(step.state, 1.0, false), std::logic_error);
}

TEST_CASE("growth clamps at one and a repeated clamp terminates") {
  auto step = next_weight(state(0.8, 0.4), 1.0, false);
  REQUIRE(step.next.has_value());
  CHECK(*step.next == 1.0);
  step = next_weight(step.state, 1.0, false);
  CHECK_FALSE(step.next.has_value());
  CHECK(step.state.done);
}

TEST_CASE("effective drop proxies on the latency ratio") {
  CHECK(effective_drop(2.0, 10.0, false));   // 5x boundary inclusive
  CHECK_FALSE(effective_drop(2.0, 9.9, false));
  CHECK(effective_drop(2.0, 3.0, true));     // explicit drop dominates
  CHECK_THROWS_AS(effective_drop(0.0, 1.0, false), std::invalid_argument);
}

TEST_CASE("exploration terminates quickly against monotone latency responses") {
  Rng rng(41);
  for (int it = 0; it < 250; ++it) {
    // capacity-style response: latency grows as the weight approaches cap
    const double cap = rng.uniform(0.02, 0.9);
    const double idle = rng.uniform(0.5, 5.0);
    const auto latency_at = [&](double w) {
      const double rho = std::min(w / cap, 0.999);
      return idle / (1.0 - rho);
    };
    ExplorationState s = state(quantize(std::min(1.0, cap * rng.uniform(0.2, 1.6))), 0.0,
                               0.0, idle);
    if (s.current_weight == 0.0) s.current_weight = 0.001;
    int iters = 0;
    double last_drop_weight = 2.0;
    bool saw_safe_since_drop = true;
    while (!s.done) {
      REQUIRE(++iters <= 60);
      const double l = latency_at(s.current_weight);
      const bool drop = effective_drop(idle, l, false);
      if (drop) {
        // never re-probe above a dropped weight without a no-drop observation
        if (!saw_safe_since_drop) CHECK(s.current_weight <= last_drop_weight);
        last_drop_weight = s.current_weight;
        saw_safe_since_drop = false;
      } else {
        saw_safe_since_drop = true;
      }
      const double prev_max = s.max_safe_weight;
      const auto step = next_weight(s, l, drop);
      CHECK(step.state.max_safe_weight >= prev_max);  // monotone within an epoch
      s = step.state;
    }
    CHECK(iters <= 25);
  }
}

TEST_CASE("backtrack keeps probes inside the bracket until a clean probe") {
  ExplorationState s = state(0.4, 0.2);
  auto step = next_weight(s, 10.0, true);  // drop at 0.4
  REQUIRE(step.next.has_value());
  double lo = 0.2, hi = 0.4;
  s = step.state;
  for (int i = 0; i < 6 && !s.done; ++i) {
    CHECK(*step.next >= lo);
    CHECK(*step.next <= hi);
    hi = s.current_weight;  // keep dropping: bracket shrinks downward
    step = next_weight(s, 10.0, true);
    s = step.state;
    if (!step.next) break;
  }
}

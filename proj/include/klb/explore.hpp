#pragma once

#include <optional>
#include <stdexcept>

#include "klb/core.hpp"

namespace klb {

// Cursor of the adaptive weight search for one DIP. `previous_weight`
// is the last weight observed without drop, so after a drop the next
// probes bisect down toward it and never climb back above a dropped
// weight without a fresh no-drop observation in between.
struct ExplorationState {
  DipId dip;
  Weight current_weight = 0.0;
  Weight previous_weight = 0.0;
  Weight max_safe_weight = 0.0;
  Millis idle_latency = 0.0;
  double pace = 1.0;
  double termination_fraction = 0.05;
  bool done = false;
  bool backtracked = false;
};

// Latency at or above five times the idle latency counts as a drop.
inline bool effective_drop(Millis idle_latency, Millis measured, bool explicit_drop,
                           double drop_factor = 5.0) {
  if (idle_latency <= 0.0 || measured <= 0.0)
    throw std::invalid_argument("effective_drop: latencies must be positive");
  return explicit_drop || measured >= drop_factor * idle_latency;
}

struct ExplorationStep {
  std::optional<Weight> next;  // absent once the search terminated
  ExplorationState state;
};

// One step of the measurement-weight search. Terminates when the gap
// to the last safe weight shrinks below termination_fraction of the
// current weight or when the grid cannot express a smaller step. On a
// clean probe the weight grows in proportion to idle/measured latency
// (clamped at 1); on a drop the next probe is the midpoint back toward
// the last safe weight.
inline ExplorationStep next_weight(ExplorationState s, Millis measured, bool drop,
                                   int denom = kDefaultWeightDenom) {
  if (s.done) throw std::logic_error("next_weight: exploration already done");
  if (measured <= 0.0) throw std::invalid_argument("next_weight: latency must be positive");

  if (s.current_weight - s.previous_weight <= s.termination_fraction * s.current_weight) {
    s.done = true;
    return {std::nullopt, s};
  }

  if (!drop) {
    s.max_safe_weight = std::max(s.max_safe_weight, s.current_weight);
    const double grow =
        s.current_weight * (1.0 + s.pace * s.idle_latency / measured);
    const Weight next = quantize(std::min(1.0, grow), denom);
    if (next <= s.current_weight) {  // clamped or below grid resolution
      s.done = true;
      return {std::nullopt, s};
    }
    s.previous_weight = s.current_weight;
    s.current_weight = next;
    return {next, s};
  }

  s.backtracked = true;
  Weight next = quantize(0.5 * (s.current_weight + s.previous_weight), denom);
  if (next >= s.current_weight)  // grid floor: step one unit down instead
    next = quantize(std::max(0.0, s.current_weight - 1.0 / denom), denom);
  if (next <= s.previous_weight) {
    s.done = true;
    return {std::nullopt, s};
  }
  s.current_weight = next;
  return {next, s};
}

}  // namespace klb

#pragma once

// Shared random-instance generators for the property suites and the
// acceptance runner.

#include <vector>

#include "klb/ilp.hpp"
#include "klb/rng.hpp"

namespace klb::testgen {

// Random solver instance: 2-8 DIPs, 3-6 candidate weights each, integer
// millisecond latencies (so objective ties are exact), random spread cap
// and total. Latencies are monotone in weight, matching what fitted
// curves produce. Instances may be UNSAT; that path is part of the
// contract under test.
inline IlpInstance random_instance(Rng& rng, int max_dips = 8) {
  IlpInstance in;
  const int n = rng.uniform_int(2, max_dips);
  for (int d = 0; d < n; ++d) {
    const int k = rng.uniform_int(3, 6);
    std::vector<long long> units;
    long long u = rng.uniform_int(0, 120);
    for (int j = 0; j < k; ++j) {
      units.push_back(u);
      u += rng.uniform_int(10, 120);
    }
    std::vector<Millis> lat;
    double l = static_cast<double>(rng.uniform_int(1, 40));
    for (int j = 0; j < k; ++j) {
      lat.push_back(l);
      l += static_cast<double>(rng.uniform_int(0, 60));
    }
    in.dips.push_back("dip-" + std::to_string(d));
    in.weight_units.push_back(std::move(units));
    in.latency.push_back(std::move(lat));
  }
  if (rng.uniform01() < 0.5) {
    in.max_imbalance = std::numeric_limits<double>::infinity();
  } else {
    in.max_imbalance = static_cast<double>(rng.uniform_int(50, 600)) / in.denom;
  }
  in.total = rng.uniform01() < 0.4 ? 1.0 : rng.uniform_int(300, 900) / 1000.0;
  in.slack = rng.uniform_int(0, 40) / 1000.0;
  return in;
}

// Same shape but guaranteed feasible: the sum window is widened to
// reach the achievable range, then verified against the oracle.
inline IlpInstance feasible_instance(Rng& rng, int max_dips = 6) {
  while (true) {
    IlpInstance in = random_instance(rng, max_dips);
    in.max_imbalance = std::numeric_limits<double>::infinity();
    long long lo = 0, hi = 0;
    for (const auto& ws : in.weight_units) {
      lo += ws.front();
      hi += ws.back();
    }
    const long long target = in.total_units();
    long long need = 0;
    if (target < lo) need = lo - target;
    if (target > hi) need = target - hi;
    in.slack = std::max(in.slack, static_cast<double>(need + 5) / in.denom);
    for (int widen = 0; widen < 12; ++widen) {
      if (brute_force_oracle(in).has_value()) return in;
      in.slack += 0.05;
    }
  }
}

// Homogeneous-with-jitter curve pool, the shape used by the multi-step
// and runtime benches.
inline std::map<DipId, WeightLatencyCurve> bench_curves(int n_dips, uint64_t seed,
                                                        double jitter = 0.05) {
  Rng rng(seed);
  std::map<DipId, WeightLatencyCurve> curves;
  const double w_top = 2.2 / n_dips;  // leaves ~2.2x headroom over equal split
  for (int d = 0; d < n_dips; ++d) {
    const double j = 1.0 + jitter * (rng.uniform01() - 0.5) * 2.0;
    WeightLatencyCurve c;
    c.dip = "dip-" + std::string(d < 10 ? "00" : d < 100 ? "0" : "") + std::to_string(d);
    c.idle_latency = 2.0 * j;
    c.max_safe_weight = w_top * j;
    // convex response rising to ~5x idle at max_safe_weight
    c.a0 = c.idle_latency;
    c.a1 = 0.5 * c.idle_latency / c.max_safe_weight;
    c.a2 = 3.5 * c.idle_latency / (c.max_safe_weight * c.max_safe_weight);
    c.fitted = true;
    curves[c.dip] = c;
  }
  return curves;
}

}  // namespace klb::testgen

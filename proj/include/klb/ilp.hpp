#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "klb/curve.hpp"

namespace klb {

// Discrete weight-assignment problem: pick exactly one candidate
// weight per DIP, minimize the summed predicted latency, keep the
// weight total within `slack` of `total` units and the max-min weight
// spread within `max_imbalance`. Candidate weights live on the shared
// grid so the constraint arithmetic is exact integer math.
struct IlpInstance {
  std::vector<DipId> dips;
  std::vector<std::vector<long long>> weight_units;  // ascending, unique per DIP
  std::vector<std::vector<Millis>> latency;          // parallel to weight_units
  int denom = kDefaultWeightDenom;
  double max_imbalance = std::numeric_limits<double>::infinity();  // theta
  double total = 1.0;
  double slack = 0.01;  // tolerance on the weight-sum constraint

  long long total_units() const { return std::llround(total * denom); }
  long long slack_units() const {
    return static_cast<long long>(std::floor(slack * denom + 1e-9));
  }
  long long imbalance_units() const {
    if (std::isinf(max_imbalance)) return std::numeric_limits<long long>::max();
    return static_cast<long long>(std::floor(max_imbalance * denom + 1e-9));
  }
};

struct Assignment {
  std::map<DipId, Weight> choice;
  Millis objective = 0.0;
  Weight y_max = 0.0, y_min = 0.0;
};

struct GridSpec {
  int points_per_dip = 10;
  int denom = kDefaultWeightDenom;
};

namespace detail {

inline void validate_instance(const IlpInstance& in) {
  if (in.dips.empty()) throw std::invalid_argument("ilp: empty instance");
  if (in.dips.size() != in.weight_units.size() || in.dips.size() != in.latency.size())
    throw std::invalid_argument("ilp: ragged instance");
  for (size_t d = 0; d < in.dips.size(); ++d) {
    const auto& ws = in.weight_units[d];
    if (ws.empty()) throw std::invalid_argument("ilp: no candidate weights for " + in.dips[d]);
    if (ws.size() != in.latency[d].size())
      throw std::invalid_argument("ilp: candidate/latency mismatch for " + in.dips[d]);
    for (size_t i = 0; i < ws.size(); ++i) {
      if (ws[i] < 0) throw std::invalid_argument("ilp: negative weight");
      if (i > 0 && ws[i] <= ws[i - 1])
        throw std::invalid_argument("ilp: candidates not ascending for " + in.dips[d]);
      if (!std::isfinite(in.latency[d][i]))
        throw std::invalid_argument("ilp: non-finite latency entry");
    }
  }
  if (!(in.total > 0.0 && in.total <= 1.0)) throw std::invalid_argument("ilp: bad total");
  if (in.slack < 0.0 || in.max_imbalance < 0.0) throw std::invalid_argument("ilp: bad bounds");
}

// Objective recomputed in DIP order so the solver and the oracle agree
// bit for bit on ties.
inline Assignment make_assignment(const IlpInstance& in, const std::vector<int>& pick) {
  Assignment out;
  long long wmax = std::numeric_limits<long long>::min();
  long long wmin = std::numeric_limits<long long>::max();
  double objective = 0.0;
  for (size_t d = 0; d < in.dips.size(); ++d) {
    const long long u = in.weight_units[d][pick[d]];
    objective += in.latency[d][pick[d]];
    wmax = std::max(wmax, u);
    wmin = std::min(wmin, u);
    out.choice[in.dips[d]] = static_cast<double>(u) / in.denom;
  }
  out.objective = objective;
  out.y_max = static_cast<double>(wmax) / in.denom;
  out.y_min = static_cast<double>(wmin) / in.denom;
  return out;
}

// (objective, weight vector in DIP order) comparator used for every
// tie-break in this module.
inline bool better_pick(const IlpInstance& in, double obj_a, const std::vector<int>& a,
                        double obj_b, const std::vector<int>& b) {
  if (obj_a != obj_b) return obj_a < obj_b;
  for (size_t d = 0; d < a.size(); ++d) {
    const long long ua = in.weight_units[d][a[d]];
    const long long ub = in.weight_units[d][b[d]];
    if (ua != ub) return ua < ub;
  }
  return false;
}

// Knapsack-style sweep over the quantized weight sum. `allowed` masks
// the usable candidate indices per DIP (empty vector = all allowed).
// Returns the optimal pick with the smallest weight vector among
// optimal solutions, or nothing when infeasible.
inline std::optional<std::vector<int>> solve_dp(
    const IlpInstance& in, const std::vector<std::vector<int>>* allowed) {
  const int n = static_cast<int>(in.dips.size());
  const long long hi = in.total_units() + in.slack_units();
  const long long lo = std::max<long long>(0, in.total_units() - in.slack_units());
  const size_t width = static_cast<size_t>(hi) + 1;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // cost[i][s]: cheapest completion for DIPs i.. given s units already used
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(width, kInf));
  for (long long s = lo; s <= hi; ++s) cost[n][s] = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    const auto& ws = in.weight_units[i];
    const auto& ls = in.latency[i];
    const auto idx_count =
        allowed ? (*allowed)[i].size() : ws.size();
    for (long long s = 0; s <= hi; ++s) {
      double best = kInf;
      for (size_t k = 0; k < idx_count; ++k) {
        const int j = allowed ? (*allowed)[i][k] : static_cast<int>(k);
        const long long s2 = s + ws[j];
        if (s2 > hi) break;  // candidates ascend, later ones only overflow more
        if (cost[i + 1][s2] == kInf) continue;
        best = std::min(best, ls[j] + cost[i + 1][s2]);
      }
      cost[i][s] = best;
    }
  }
  if (cost[0][0] == kInf) return std::nullopt;

  // Walk forward taking the smallest weight that preserves optimality:
  // that yields the lexicographically smallest optimal vector.
  std::vector<int> pick(n, -1);
  long long s = 0;
  for (int i = 0; i < n; ++i) {
    const auto& ws = in.weight_units[i];
    const auto& ls = in.latency[i];
    const auto idx_count = allowed ? (*allowed)[i].size() : ws.size();
    double best = kInf;
    int best_j = -1;
    for (size_t k = 0; k < idx_count; ++k) {
      const int j = allowed ? (*allowed)[i][k] : static_cast<int>(k);
      const long long s2 = s + ws[j];
      if (s2 > hi) break;
      if (cost[i + 1][s2] == kInf) continue;
      const double c = ls[j] + cost[i + 1][s2];
      if (c < best) {
        best = c;
        best_j = j;
      }
    }
    pick[i] = best_j;
    s += ws[best_j];
  }
  return pick;
}

}  // namespace detail

// Exact minimum-latency assignment, or nothing when the constraints
// cannot be met. Deterministic: ties resolve to the lexicographically
// smallest weight vector in DIP order.
inline std::optional<Assignment> solve_exact(const IlpInstance& in) {
  detail::validate_instance(in);

  if (std::isinf(in.max_imbalance)) {
    auto pick = detail::solve_dp(in, nullptr);
    if (!pick) return std::nullopt;
    return detail::make_assignment(in, *pick);
  }

  // Finite spread cap: every feasible solution's smallest weight is one
  // of the candidate values, so sweep a window [lo, lo + theta] over the
  // distinct candidates and keep the best windowed optimum.
  std::vector<long long> distinct;
  for (const auto& ws : in.weight_units)
    for (long long u : ws) distinct.push_back(u);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  const long long theta = in.imbalance_units();
  std::optional<std::vector<int>> best;
  double best_obj = 0.0;
  for (long long lo : distinct) {
    std::vector<std::vector<int>> allowed(in.dips.size());
    bool ok = true;
    for (size_t d = 0; d < in.dips.size() && ok; ++d) {
      for (size_t j = 0; j < in.weight_units[d].size(); ++j) {
        const long long u = in.weight_units[d][j];
        if (u >= lo && u - lo <= theta) allowed[d].push_back(static_cast<int>(j));
      }
      ok = !allowed[d].empty();
    }
    if (!ok) continue;
    auto pick = detail::solve_dp(in, &allowed);
    if (!pick) continue;
    const double obj = detail::make_assignment(in, *pick).objective;
    if (!best || detail::better_pick(in, obj, *pick, best_obj, *best)) {
      best = pick;
      best_obj = obj;
    }
  }
  if (!best) return std::nullopt;
  return detail::make_assignment(in, *best);
}

// Exhaustive reference solver; guarded against blowup. Kept free of any
// code shared with solve_exact's search so it can act as its oracle.
inline std::optional<Assignment> brute_force_oracle(const IlpInstance& in) {
  detail::validate_instance(in);
  double combos = 1.0;
  for (const auto& ws : in.weight_units) combos *= static_cast<double>(ws.size());
  if (combos > 1e7) throw std::length_error("brute_force_oracle: instance too large");

  const int n = static_cast<int>(in.dips.size());
  const long long lo = std::max<long long>(0, in.total_units() - in.slack_units());
  const long long hi = in.total_units() + in.slack_units();
  const long long theta = in.imbalance_units();

  std::vector<int> idx(n, 0);
  std::optional<std::vector<int>> best;
  double best_obj = std::numeric_limits<double>::infinity();
  while (true) {
    long long sum = 0;
    long long wmax = std::numeric_limits<long long>::min();
    long long wmin = std::numeric_limits<long long>::max();
    double obj = 0.0;
    for (int d = 0; d < n; ++d) {
      const long long u = in.weight_units[d][idx[d]];
      sum += u;
      wmax = std::max(wmax, u);
      wmin = std::min(wmin, u);
      obj += in.latency[d][idx[d]];
    }
    if (sum >= lo && sum <= hi && wmax - wmin <= theta && obj < best_obj) {
      best = idx;  // enumeration is lex-ascending, so strict < keeps the lex-min
      best_obj = obj;
    }
    int d = n - 1;
    while (d >= 0 && idx[d] + 1 == static_cast<int>(in.weight_units[d].size())) {
      idx[d] = 0;
      --d;
    }
    if (d < 0) break;
    ++idx[d];
  }
  if (!best) return std::nullopt;
  return detail::make_assignment(in, *best);
}

// Constraint checker kept independent of both solvers.
inline bool check_assignment(const IlpInstance& in, const Assignment& a) {
  if (a.choice.size() != in.dips.size()) return false;
  long long sum = 0;
  long long wmax = std::numeric_limits<long long>::min();
  long long wmin = std::numeric_limits<long long>::max();
  double obj = 0.0;
  for (size_t d = 0; d < in.dips.size(); ++d) {
    const auto it = a.choice.find(in.dips[d]);
    if (it == a.choice.end()) return false;
    const long long u = std::llround(it->second * in.denom);
    bool found = false;
    for (size_t j = 0; j < in.weight_units[d].size(); ++j) {
      if (in.weight_units[d][j] == u) {
        obj += in.latency[d][j];
        found = true;
        break;
      }
    }
    if (!found) return false;
    sum += u;
    wmax = std::max(wmax, u);
    wmin = std::min(wmin, u);
  }
  if (std::llabs(sum - in.total_units()) > in.slack_units()) return false;
  if (wmax - wmin > in.imbalance_units()) return false;
  return std::fabs(obj - a.objective) <= 1e-9 * std::max(1.0, std::fabs(obj));
}

// Candidate grid per DIP: `points_per_dip` values uniform in
// [0, max_safe_weight], quantized and deduplicated; latencies come from
// the monotone-corrected curve.
inline IlpInstance build_instance(const std::map<DipId, WeightLatencyCurve>& curves,
                                  const GridSpec& grid = {}) {
  IlpInstance in;
  in.denom = grid.denom;
  for (const auto& [dip, curve] : curves) {
    if (!curve.fitted || curve.max_safe_weight <= 0.0)
      throw std::logic_error("build_instance: curve not ready for " + dip);
    std::vector<long long> units;
    std::vector<Millis> lat;
    const int k = std::max(2, grid.points_per_dip);
    for (int i = 0; i < k; ++i) {
      const double w = curve.max_safe_weight * static_cast<double>(i) / (k - 1);
      const long long u = weight_units(quantize(std::min(1.0, w), grid.denom), grid.denom);
      if (!units.empty() && units.back() == u) continue;
      units.push_back(u);
      lat.push_back(predict_latency(curve, static_cast<double>(u) / grid.denom, grid.denom));
    }
    in.dips.push_back(dip);
    in.weight_units.push_back(std::move(units));
    in.latency.push_back(std::move(lat));
  }
  return in;
}

struct MultistepConfig {
  GridSpec grid;
  double zoom_fraction = 0.10;  // half-width of the step-2 window, as a share of max_safe_weight
  size_t multistep_threshold = 100;
  double max_imbalance = std::numeric_limits<double>::infinity();
  double total = 1.0;
  double slack = 0.01;
};

// Coarse solve over [0, max_safe_weight], then - for pools at or above
// the threshold - a second solve on a zoomed grid around each DIP's
// step-1 weight. The step-1 point is kept in the step-2 grid so the
// refinement can only improve the objective; a step-2 UNSAT falls back
// to the step-1 result.
inline std::optional<Assignment> solve_multistep(
    const std::map<DipId, WeightLatencyCurve>& curves, const MultistepConfig& cfg = {}) {
  IlpInstance step1 = build_instance(curves, cfg.grid);
  step1.max_imbalance = cfg.max_imbalance;
  step1.total = cfg.total;
  step1.slack = cfg.slack;
  auto first = solve_exact(step1);
  if (!first || curves.size() < cfg.multistep_threshold) return first;

  IlpInstance step2;
  step2.denom = cfg.grid.denom;
  step2.max_imbalance = cfg.max_imbalance;
  step2.total = cfg.total;
  step2.slack = cfg.slack;
  for (const auto& [dip, curve] : curves) {
    const double center = first->choice.at(dip);
    const double delta = cfg.zoom_fraction * curve.max_safe_weight;
    const double lo = std::max(0.0, center - delta);
    const double hi = std::min(curve.max_safe_weight, center + delta);
    std::vector<long long> units;
    const int k = std::max(2, cfg.grid.points_per_dip);
    for (int i = 0; i < k; ++i) {
      const double w = lo + (hi - lo) * static_cast<double>(i) / (k - 1);
      units.push_back(weight_units(quantize(w, cfg.grid.denom), cfg.grid.denom));
    }
    units.push_back(weight_units(quantize(center, cfg.grid.denom), cfg.grid.denom));
    std::sort(units.begin(), units.end());
    units.erase(std::unique(units.begin(), units.end()), units.end());
    std::vector<Millis> lat;
    lat.reserve(units.size());
    for (long long u : units)
      lat.push_back(predict_latency(curve, static_cast<double>(u) / cfg.grid.denom, cfg.grid.denom));
    step2.dips.push_back(dip);
    step2.weight_units.push_back(std::move(units));
    step2.latency.push_back(std::move(lat));
  }
  auto second = solve_exact(step2);
  return second ? second : first;
}

// Scheduler helper: assign `1 - scheduled_sum` across the explored DIPs.
inline std::optional<Assignment> residual_solve(
    const std::map<DipId, WeightLatencyCurve>& curves, double scheduled_sum,
    const MultistepConfig& cfg = {}) {
  if (scheduled_sum < 0.0 || scheduled_sum >= 1.0)
    throw std::invalid_argument("residual_solve: scheduled sum outside [0,1)");
  IlpInstance in = build_instance(curves, cfg.grid);
  in.max_imbalance = cfg.max_imbalance;
  in.total = 1.0 - scheduled_sum;
  in.slack = cfg.slack;
  return solve_exact(in);
}

}  // namespace klb

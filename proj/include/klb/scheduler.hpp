#pragma once

#include <deque>
#include <optional>
#include <set>

#include "klb/explore.hpp"
#include "klb/ilp.hpp"

namespace klb {

// Priority classes for queued measurement weights, highest first.
enum class MeasurementClass { Overloaded = 0, Remaining = 1, Refresh = 2 };

inline const char* to_string(MeasurementClass c) {
  switch (c) {
    case MeasurementClass::Overloaded: return "overloaded";
    case MeasurementClass::Remaining: return "remaining";
    default: return "refresh";
  }
}

struct PendingMeasurement {
  DipId dip;
  MeasurementClass cls = MeasurementClass::Remaining;
  Seconds enqueued_at = 0.0;
  uint64_t seq = 0;  // FIFO order within a class
};

// Refresh provenance wins; otherwise a DIP counts as overloaded when
// its latest probe hit the drop proxy or sits at 3x idle or above.
inline MeasurementClass classify(const LatencySample& latest, Millis idle_latency,
                                 bool refresh_enqueued, double overload_factor = 3.0,
                                 double drop_factor = 5.0) {
  if (refresh_enqueued) return MeasurementClass::Refresh;
  if (latest.mean_latency > 0 &&
      effective_drop(idle_latency, latest.mean_latency, latest.dropped, drop_factor))
    return MeasurementClass::Overloaded;
  if (latest.mean_latency >= overload_factor * idle_latency)
    return MeasurementClass::Overloaded;
  return MeasurementClass::Remaining;
}

// FIFO-within-class queue of DIPs waiting for a measurement slot. The
// desired weight is resolved at admission time from the exploration
// state, so a deferred entry always measures the freshest target.
class MeasurementQueue {
 public:
  void push(DipId dip, MeasurementClass cls, Seconds now) {
    for (const auto& p : entries_)
      if (p.dip == dip) return;  // one slot per DIP
    entries_.push_back({std::move(dip), cls, now, next_seq_++});
    stable_sort();
  }

  bool contains(const DipId& dip) const {
    for (const auto& p : entries_)
      if (p.dip == dip) return true;
    return false;
  }

  void erase(const DipId& dip) {
    std::erase_if(entries_, [&](const PendingMeasurement& p) { return p.dip == dip; });
  }

  const std::deque<PendingMeasurement>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  size_t size() const { return entries_.size(); }

  void remove_admitted(const std::set<DipId>& admitted) {
    std::erase_if(entries_,
                  [&](const PendingMeasurement& p) { return admitted.count(p.dip) > 0; });
  }

 private:
  void stable_sort() {
    std::stable_sort(entries_.begin(), entries_.end(),
                     [](const PendingMeasurement& a, const PendingMeasurement& b) {
                       if (a.cls != b.cls) return a.cls < b.cls;
                       return a.seq < b.seq;
                     });
  }
  std::deque<PendingMeasurement> entries_;
  uint64_t next_seq_ = 0;
};

// One dataplane-feasible round: the admitted measurement weights plus
// filler for everyone else, summing to exactly 1.
struct RoundPlan {
  std::map<DipId, Weight> measured;
  std::map<DipId, Weight> filler;
  double scheduled_sum = 0.0;  // w_s
  bool residual_ilp_used = false;
  bool equal_split_used = false;

  std::map<DipId, Weight> combined() const {
    std::map<DipId, Weight> all = measured;
    all.insert(filler.begin(), filler.end());
    return all;
  }
};

struct RoundContext {
  std::vector<DipId> alive;                          // every admissible DIP
  std::map<DipId, Weight> desired;                   // measurement weight per queued DIP
  std::map<DipId, Weight> reserved;                  // in-flight measurements to keep as-is
  std::map<DipId, WeightLatencyCurve> explored;      // fitted curves, ILP-eligible DIPs
  int denom = kDefaultWeightDenom;
  MultistepConfig ilp;
};

// Greedy prefix packing: walk the queue in priority order, admit what
// still fits under a total of 1, skip what does not and keep going.
// The remaining share 1 - w_s goes to the non-measured DIPs - through
// the reduced-total solve when explored DIPs exist, equal split when
// they do not or when that solve is UNSAT. Admitted entries leave the
// queue.
inline std::optional<RoundPlan> schedule_round(MeasurementQueue& queue,
                                               const RoundContext& ctx) {
  if (queue.empty()) return std::nullopt;  // nothing to schedule this round
  RoundPlan plan;
  long long used_units = 0;
  for (const auto& [dip, w] : ctx.reserved) {
    plan.measured[dip] = w;
    used_units += weight_units(w, ctx.denom);
  }
  std::set<DipId> admitted;
  for (const auto& pending : queue.entries()) {
    const auto it = ctx.desired.find(pending.dip);
    if (it == ctx.desired.end()) continue;
    const long long u = weight_units(it->second, ctx.denom);
    if (u <= 0) continue;
    if (used_units + u > ctx.denom) continue;  // hop over, try later entries
    used_units += u;
    plan.measured[pending.dip] = it->second;
    admitted.insert(pending.dip);
  }
  queue.remove_admitted(admitted);
  plan.scheduled_sum = static_cast<double>(used_units) / ctx.denom;

  std::vector<DipId> rest;
  for (const auto& dip : ctx.alive)
    if (!plan.measured.count(dip)) rest.push_back(dip);

  const long long residual_units = ctx.denom - used_units;
  if (residual_units > 0 && !rest.empty()) {
    std::map<DipId, WeightLatencyCurve> explored_rest;
    for (const auto& dip : rest) {
      const auto it = ctx.explored.find(dip);
      if (it != ctx.explored.end()) explored_rest[dip] = it->second;
    }
    bool filled = false;
    if (!explored_rest.empty()) {
      auto cfg = ctx.ilp;
      cfg.grid.denom = ctx.denom;
      const auto res = residual_solve(explored_rest, plan.scheduled_sum, cfg);
      if (res) {
        std::map<DipId, Weight> nonzero;
        for (const auto& [dip, w] : res->choice)
          if (w > 0.0) nonzero[dip] = w;
        if (!nonzero.empty()) {
          for (const auto& dip : rest) plan.filler[dip] = 0.0;
          // the solve lands within its slack; pin the total exactly
          const auto exact = normalize_to(nonzero, residual_units, ctx.denom);
          for (const auto& [dip, w] : exact) plan.filler[dip] = w;
          plan.residual_ilp_used = true;
          filled = true;
        }
      }
    }
    if (!filled) {
      std::map<DipId, Weight> equal;
      for (const auto& dip : rest) equal[dip] = 1.0;
      const auto split = normalize_to(equal, residual_units, ctx.denom);
      for (const auto& [dip, w] : split) plan.filler[dip] = w;
      plan.equal_split_used = true;
    }
  } else if (rest.empty() && residual_units > 0) {
    // every DIP is being measured and the round is short of 1: top the
    // measured weights up proportionally (grid units only)
    plan.measured = normalize_to(plan.measured, ctx.denom, ctx.denom);
    plan.scheduled_sum = 1.0;
  } else {
    for (const auto& dip : rest) plan.filler[dip] = 0.0;
  }

  if (plan.measured.empty() && plan.filler.empty()) return std::nullopt;
  if (plan.measured.empty() && !plan.equal_split_used && !plan.residual_ilp_used)
    return std::nullopt;  // nothing scheduled and nothing to fill
  return plan;
}

}  // namespace klb

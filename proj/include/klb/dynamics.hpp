#pragma once

#include <optional>
#include <span>

#include "klb/curve.hpp"

namespace klb {

// Curve prediction vs observation at a DIP's currently programmed weight.
struct DriftObservation {
  DipId dip;
  Weight weight = 0.0;
  Millis predicted = 0.0;
  Millis observed = 0.0;
  Seconds timestamp = 0.0;
};

enum class TrafficVerdict { None, Increase, Decrease };

// Aggregate traffic moved when most DIPs drift the same way at
// unchanged weights. Returns nothing with fewer than two observations.
inline std::optional<TrafficVerdict> detect_traffic_change(
    std::span<const DriftObservation> obs, double band = 0.20, double quorum = 0.80) {
  if (obs.size() < 2) return std::nullopt;
  size_t up = 0, down = 0;
  for (const auto& o : obs) {
    if (o.observed > o.predicted * (1.0 + band)) ++up;
    else if (o.observed < o.predicted * (1.0 - band)) ++down;
  }
  const double n = static_cast<double>(obs.size());
  if (static_cast<double>(up) >= quorum * n) return TrafficVerdict::Increase;
  if (static_cast<double>(down) >= quorum * n) return TrafficVerdict::Decrease;
  return TrafficVerdict::None;
}

// Single-DIP drift outside +/- band of the prediction.
inline bool detect_capacity_change(const DriftObservation& obs, double band = 0.20) {
  return std::fabs(obs.observed - obs.predicted) > band * obs.predicted;
}

// Inverse lookup on the corrected curve: the smallest grid weight whose
// prediction reaches `observed`, clamped to the curve's usable range.
inline Weight inverse_latency_weight(const WeightLatencyCurve& curve, Millis observed,
                                     int denom = kDefaultWeightDenom) {
  const Weight top = std::min(1.0, std::max(curve.max_safe_weight * curve.domain_scale,
                                            1.0 / denom));
  const long long top_units = weight_units(top, denom);
  for (long long u = 1; u <= top_units; ++u) {
    const Weight w = static_cast<double>(u) / denom;
    if (predict_latency(curve, w, denom) >= observed) return w;
  }
  return top;  // beyond the predictable range: clamp to the endpoint
}

// Shift the curve along the weight axis so it predicts `observed` at
// `at_weight`: with the lookup weight w2, every weight is multiplied by
// delta = at_weight / w2. Composing two rescales multiplies the deltas.
inline WeightLatencyCurve rescale_curve(const WeightLatencyCurve& curve, Weight at_weight,
                                        Millis observed, int denom = kDefaultWeightDenom) {
  if (!curve.fitted) throw std::logic_error("rescale_curve: curve not fitted");
  const Weight w2 = inverse_latency_weight(curve, observed, denom);
  const double delta = at_weight / w2;
  WeightLatencyCurve out = curve;
  out.domain_scale *= delta;
  out.max_safe_weight *= delta;
  return out;
}

// Consecutive-probe-failure policy plus the decision whether the pool
// can afford to drop the DIP.
struct FailureDecision {
  bool declare_failed = false;
  bool vip_down = false;  // last DIP standing: keep weights, raise alarm
};

inline FailureDecision handle_failure(int consecutive_failures, size_t alive_dips,
                                      int fail_threshold = 3) {
  FailureDecision d;
  if (consecutive_failures < fail_threshold) return d;
  if (alive_dips <= 1) {
    d.vip_down = true;
    return d;
  }
  d.declare_failed = true;
  return d;
}

struct RefreshCandidate {
  DipId dip;
  Seconds fitted_at = 0.0;
  Weight capacity_proxy = 0.0;  // max_safe_weight
  bool eligible = false;        // fitted, done, not already queued
};

// Oldest curves first, admitted while the capacity proxy stays within
// `budget_fraction` of the pool total. The single oldest DIP is always
// admitted so large DIPs can still refresh; they just never share the
// window with anyone else.
inline std::vector<DipId> refresh_plan(std::span<const RefreshCandidate> candidates,
                                       Seconds now, Seconds refresh_period = 1800.0,
                                       double budget_fraction = 0.05) {
  double total_proxy = 0.0;
  for (const auto& c : candidates) total_proxy += c.capacity_proxy;
  const double budget = budget_fraction * total_proxy;

  std::vector<RefreshCandidate> stale;
  for (const auto& c : candidates)
    if (c.eligible && now - c.fitted_at >= refresh_period) stale.push_back(c);
  std::sort(stale.begin(), stale.end(), [](const RefreshCandidate& a, const RefreshCandidate& b) {
    if (a.fitted_at != b.fitted_at) return a.fitted_at < b.fitted_at;
    return a.dip < b.dip;
  });

  std::vector<DipId> out;
  double used = 0.0;
  for (const auto& c : stale) {
    if (!out.empty() && used + c.capacity_proxy > budget) continue;
    out.push_back(c.dip);
    used += c.capacity_proxy;
  }
  return out;
}

struct DrainEstimate {
  VipId vip;
  Seconds duration = 0.0;  // T2 - T1
  Seconds measured_at = 0.0;
};

struct DrainProcedureConfig {
  double high_weight = 0.5;       // floor for the overload weight
  double high_latency_factor = 2.0;
  double settle_factor = 1.1;     // "reached idle": within 10%
  Seconds probe_period = 1.0;
  Seconds ramp_timeout = 60.0;
  Seconds drain_timeout = 120.0;
};

// Drive one DIP to high latency (T1), zero its weight, and wait for the
// probe latency to fall back to idle (T2). `Driver` supplies now(),
// advance(dt), program(weights) and probe(dip) -> mean latency in ms.
template <class Driver>
std::optional<DrainEstimate> estimate_drain_time(Driver& driver, const VipId& vip,
                                                 const DipId& dip, Millis idle_latency,
                                                 const std::map<DipId, Weight>& weights,
                                                 const DrainProcedureConfig& cfg = {}) {
  const Weight high = std::max(cfg.high_weight, std::min(1.0, 2.0 * weights.at(dip)));
  std::map<DipId, Weight> loaded = weights;
  loaded[dip] = high;
  driver.program(normalize(loaded));

  const Seconds ramp_start = driver.now();
  while (driver.probe(dip) < cfg.high_latency_factor * idle_latency) {
    if (driver.now() - ramp_start > cfg.ramp_timeout) break;  // as high as it gets
    driver.advance(cfg.probe_period);
  }
  const Seconds t1 = driver.now();

  std::map<DipId, Weight> drained = weights;
  drained[dip] = 0.0;
  bool others = false;
  for (const auto& [id, w] : drained) others = others || (id != dip && w > 0.0);
  if (!others)
    for (auto& [id, w] : drained)
      if (id != dip) w = 1.0;
  driver.program(normalize(drained));

  while (true) {
    driver.advance(cfg.probe_period);
    if (driver.probe(dip) <= cfg.settle_factor * idle_latency) break;
    if (driver.now() - t1 > cfg.drain_timeout) {
      driver.program(weights);  // restore before giving up
      return std::nullopt;
    }
  }
  const Seconds t2 = driver.now();
  driver.program(weights);
  return DrainEstimate{vip, std::max(t2 - t1, cfg.probe_period), driver.now()};
}

}  // namespace klb

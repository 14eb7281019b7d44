#pragma once

#include <mutex>
#include <sstream>

#include "klb/dynamics.hpp"
#include "klb/scheduler.hpp"

namespace klb {

struct ControllerConfig {
  int denom = kDefaultWeightDenom;
  Seconds probe_period = 5.0;
  Seconds control_period = 5.0;
  double pace = 1.0;
  double termination_fraction = 0.05;
  double drop_factor = 5.0;      // latency >= factor * idle counts as drop
  double overload_factor = 3.0;  // scheduler's overloaded class threshold
  double drift_band = 0.20;
  double traffic_quorum = 0.80;
  int fail_threshold = 3;
  Seconds refresh_period = 1800.0;
  double refresh_budget = 0.05;
  int ilp_points = 10;
  double zoom_fraction = 0.10;
  size_t multistep_threshold = 100;
  double ilp_slack = 0.01;
  double max_imbalance = std::numeric_limits<double>::infinity();  // theta
  Seconds initial_drain = 2.0;
  Seconds drain_reestimate_period = 7200.0;  // 120 simulated minutes
  bool drain_estimation = false;             // runner drives the procedure when set

  MultistepConfig ilp() const {
    MultistepConfig cfg;
    cfg.grid.points_per_dip = ilp_points;
    cfg.grid.denom = denom;
    cfg.zoom_fraction = zoom_fraction;
    cfg.multistep_threshold = multistep_threshold;
    cfg.max_imbalance = max_imbalance;
    cfg.slack = ilp_slack;
    return cfg;
  }
};

// One probe record. A negative latency marks a probe failure (DIP gave
// no response); `usable` is cleared for samples taken inside the drain
// window after a weight change.
struct StoreEntry {
  DipId dip;
  Weight weight = 0.0;
  Millis latency = 0.0;
  bool dropped = false;
  bool usable = true;
  Seconds time = 0.0;

  bool probe_failure() const { return latency < 0.0; }
};

// VIP-keyed append-only probe log. Appends may come from concurrent
// probe threads; reads copy a suffix under the same lock.
class LatencyStore {
 public:
  void append(const VipId& vip, StoreEntry entry) {
    std::lock_guard lock(mu_);
    records_[vip].push_back(std::move(entry));
  }

  size_t size(const VipId& vip) const {
    std::lock_guard lock(mu_);
    const auto it = records_.find(vip);
    return it == records_.end() ? 0 : it->second.size();
  }

  std::vector<StoreEntry> read(const VipId& vip, size_t from = 0) const {
    std::lock_guard lock(mu_);
    const auto it = records_.find(vip);
    if (it == records_.end() || from >= it->second.size()) return {};
    return {it->second.begin() + static_cast<long>(from), it->second.end()};
  }

 private:
  mutable std::mutex mu_;
  std::map<VipId, std::vector<StoreEntry>> records_;
};

namespace detail {

inline std::string format_weight(Weight w) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.3f", w);
  return buf;
}

inline std::string format_ms(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail

// Decision machine for one VIP. Consumes probe records and nothing
// else, so a run can be replayed from the store log alone; every
// programming action and verdict is emitted as a trace line.
class VipController {
 public:
  struct Actions {
    std::optional<std::map<DipId, Weight>> program;
    std::vector<std::string> trace;
  };

  VipController(VipId vip, std::vector<DipId> dips, ControllerConfig cfg)
      : vip_(std::move(vip)), cfg_(cfg) {
    for (auto& d : dips) order_.push_back(d);
    for (const auto& d : order_) dips_[d] = {};
  }

  const VipId& vip() const { return vip_; }
  bool booted() const { return booted_; }
  bool curve_changed() const { return curve_changed_; }
  Seconds change_time() const { return change_time_; }

  bool all_explored() const {
    for (const auto& [id, d] : dips_)
      if (d.alive && !(d.explore.done && d.curve)) return false;
    return booted_;
  }

  const std::map<DipId, Weight>& programmed() const { return programmed_; }

  // ILP-eligible curves: alive, exploration finished, fit present.
  std::map<DipId, WeightLatencyCurve> curves() const {
    std::map<DipId, WeightLatencyCurve> out;
    for (const auto& [id, d] : dips_)
      if (d.alive && d.explore.done && d.curve) out[id] = *d.curve;
    return out;
  }

  int iterations(const DipId& dip) const { return dips_.at(dip).iterations; }
  Weight max_safe_weight(const DipId& dip) const { return dips_.at(dip).explore.max_safe_weight; }
  Millis idle_latency(const DipId& dip) const { return dips_.at(dip).explore.idle_latency; }
  int rounds_executed() const { return rounds_executed_; }
  bool alive(const DipId& dip) const { return dips_.at(dip).alive; }
  int full_solves() const { return full_solves_; }

  // One control step over the fresh slice of the store.
  Actions tick(Seconds now, const std::vector<StoreEntry>& fresh) {
    Actions out;
    ingest(now, fresh, out);
    if (!booted_) {
      boot(now, fresh, out);
      if (!booted_) return out;
    }
    run_failure_handling(now, out);
    run_drift_detection(now, out);
    advance_exploration(now, out);
    run_refresh(now, out);

    if (!queue_.empty()) {
      schedule_measurements(now, out);
    } else if (curve_changed_ && all_explored()) {
      full_solve(now, out);
    }
    return out;
  }

 private:
  struct DipRuntime {
    ExplorationState explore;
    std::optional<WeightLatencyCurve> curve;
    std::vector<LatencySample> fit_samples;
    std::optional<StoreEntry> latest;  // latest usable, non-failure sample
    int consecutive_failures = 0;
    bool alive = true;
    bool awaiting = false;        // measurement weight programmed, sample pending
    Seconds await_since = 0.0;
    bool refresh_epoch = false;   // pendings carry the refresh class
    int iterations = 0;
  };

  void trace(Actions& out, Seconds now, const std::string& what) {
    std::ostringstream os;
    os << detail::format_ms(now) << "," << vip_ << "," << what;
    out.trace.push_back(os.str());
  }

  void ingest(Seconds now, const std::vector<StoreEntry>& fresh, Actions& out) {
    (void)now;
    (void)out;
    for (const auto& e : fresh) {
      auto it = dips_.find(e.dip);
      if (it == dips_.end()) continue;
      auto& d = it->second;
      if (e.probe_failure()) {
        ++d.consecutive_failures;
        continue;
      }
      d.consecutive_failures = 0;
      if (!d.alive) restored_this_tick_.push_back(e);
      if (e.usable) d.latest = e;
    }
  }

  void boot(Seconds now, const std::vector<StoreEntry>& fresh, Actions& out) {
    // first usable weight-0 probes become the idle latencies
    for (const auto& e : fresh) {
      if (e.probe_failure() || !e.usable || weight_units(e.weight, cfg_.denom) != 0) continue;
      auto& d = dips_[e.dip];
      if (d.explore.idle_latency <= 0.0) d.explore.idle_latency = e.latency;
    }
    for (const auto& [id, d] : dips_)
      if (d.explore.idle_latency <= 0.0) return;  // wait for every idle probe

    const Weight equal = quantize(1.0 / static_cast<double>(order_.size()), cfg_.denom);
    for (const auto& id : order_) {
      auto& d = dips_[id];
      d.explore.dip = id;
      d.explore.current_weight = std::max(equal, 1.0 / cfg_.denom);
      d.explore.previous_weight = 0.0;
      d.explore.pace = cfg_.pace;
      d.explore.termination_fraction = cfg_.termination_fraction;
      d.fit_samples.push_back({id, 0.0, d.explore.idle_latency, false, now, 1});
      queue_.push(id, MeasurementClass::Remaining, now);
    }
    booted_ = true;
    trace(out, now, "boot,dips=" + std::to_string(order_.size()));
  }

  void run_failure_handling(Seconds now, Actions& out) {
    // a successful probe from a dead DIP brings it back as a fresh DIP
    for (const auto& sample : restored_this_tick_) {
      const DipId& id = sample.dip;
      auto& d = dips_[id];
      if (d.alive) continue;
      d.alive = true;
      d.curve.reset();
      d.fit_samples.clear();
      d.explore = {};
      d.explore.dip = id;
      d.explore.idle_latency = sample.latency;
      d.explore.pace = cfg_.pace;
      d.explore.termination_fraction = cfg_.termination_fraction;
      d.explore.current_weight =
          std::max(quantize(1.0 / static_cast<double>(order_.size()), cfg_.denom),
                   1.0 / cfg_.denom);
      d.fit_samples.push_back({id, 0.0, sample.latency, false, now, 1});
      d.iterations = 0;
      queue_.push(id, MeasurementClass::Remaining, now);
      trace(out, now, "restore,dip=" + id);
    }
    restored_this_tick_.clear();

    size_t alive = 0;
    for (const auto& [id, d] : dips_) alive += d.alive ? 1 : 0;
    for (const auto& id : order_) {
      auto& d = dips_[id];
      if (!d.alive) continue;
      const auto decision = handle_failure(d.consecutive_failures, alive, cfg_.fail_threshold);
      if (decision.vip_down) {
        trace(out, now, "vip-down,dip=" + id);
        continue;
      }
      if (!decision.declare_failed) continue;
      d.alive = false;
      d.awaiting = false;
      d.latest.reset();
      queue_.erase(id);
      --alive;
      curve_changed_ = true;
      change_time_ = now;
      trace(out, now, "fail,dip=" + id);
    }
  }

  void run_drift_detection(Seconds now, Actions& out) {
    std::vector<DriftObservation> obs;
    for (const auto& id : order_) {
      auto& d = dips_[id];
      if (!d.alive || !d.explore.done || !d.curve || !d.latest) continue;
      const auto& s = *d.latest;
      if (s.time <= last_drift_time_) continue;
      const auto it = programmed_.find(id);
      if (it == programmed_.end()) continue;
      if (weight_units(s.weight, cfg_.denom) != weight_units(it->second, cfg_.denom)) continue;
      if (weight_units(s.weight, cfg_.denom) == 0) continue;  // nothing offered, nothing to compare
      obs.push_back({id, s.weight, predict_latency(*d.curve, s.weight, cfg_.denom), s.latency,
                     s.time});
    }
    if (obs.empty()) return;
    last_drift_time_ = now;

    const auto verdict = detect_traffic_change(obs, cfg_.drift_band, cfg_.traffic_quorum);
    if (verdict && *verdict != TrafficVerdict::None) {
      for (const auto& o : obs) {
        auto& d = dips_[o.dip];
        d.curve = rescale_curve(*d.curve, o.weight, o.observed, cfg_.denom);
      }
      curve_changed_ = true;
      change_time_ = now;
      trace(out, now,
            std::string("traffic,") +
                (*verdict == TrafficVerdict::Increase ? "increase" : "decrease") +
                ",dips=" + std::to_string(obs.size()));
      return;  // capacity handling suppressed for covered DIPs this tick
    }

    for (const auto& o : obs) {
      if (!detect_capacity_change(o, cfg_.drift_band)) continue;
      auto& d = dips_[o.dip];
      d.curve = rescale_curve(*d.curve, o.weight, o.observed, cfg_.denom);
      curve_changed_ = true;
      change_time_ = now;
      trace(out, now, "capacity,dip=" + o.dip + ",observed=" + detail::format_ms(o.observed) +
                          ",predicted=" + detail::format_ms(o.predicted));
    }
  }

  void advance_exploration(Seconds now, Actions& out) {
    for (const auto& id : order_) {
      auto& d = dips_[id];
      if (!d.alive || !d.awaiting || d.explore.done || !d.latest) continue;
      const auto& s = *d.latest;
      if (s.time <= d.await_since) continue;  // predates this measurement
      if (weight_units(s.weight, cfg_.denom) !=
          weight_units(d.explore.current_weight, cfg_.denom))
        continue;
      d.awaiting = false;
      const bool drop =
          effective_drop(d.explore.idle_latency, s.latency, s.dropped, cfg_.drop_factor);
      d.fit_samples.push_back({id, s.weight, s.latency, drop, s.time, 1});
      ++d.iterations;
      const auto step = next_weight(d.explore, s.latency, drop, cfg_.denom);
      d.explore = step.state;
      if (d.explore.done) {
        d.curve = fit_curve(d.fit_samples, d.explore.idle_latency, d.explore.max_safe_weight,
                            now, id);
        d.refresh_epoch = false;
        curve_changed_ = true;
        change_time_ = now;
        trace(out, now, "explored,dip=" + id + ",iters=" + std::to_string(d.iterations) +
                            ",wmax=" + detail::format_weight(d.explore.max_safe_weight));
      } else {
        const auto cls = d.refresh_epoch
                             ? MeasurementClass::Refresh
                             : classify({id, s.weight, s.latency, s.dropped, s.time, 1},
                                        d.explore.idle_latency, false, cfg_.overload_factor,
                                        cfg_.drop_factor);
        queue_.push(id, cls, now);
      }
    }
  }

  void run_refresh(Seconds now, Actions& out) {
    std::vector<RefreshCandidate> candidates;
    for (const auto& id : order_) {
      const auto& d = dips_.at(id);
      if (!d.alive) continue;
      RefreshCandidate c;
      c.dip = id;
      c.fitted_at = d.curve ? d.curve->fitted_at : now;
      c.capacity_proxy = d.explore.max_safe_weight;
      c.eligible = d.explore.done && d.curve && !queue_.contains(id) && !d.awaiting;
      candidates.push_back(c);
    }
    const auto selected =
        refresh_plan(candidates, now, cfg_.refresh_period, cfg_.refresh_budget);
    for (const auto& id : selected) {
      auto& d = dips_[id];
      d.refresh_epoch = true;
      d.iterations = 0;
      d.explore.done = false;
      d.explore.backtracked = false;
      d.explore.previous_weight = 0.0;
      d.explore.current_weight = std::max(quantize(0.5 * d.explore.max_safe_weight, cfg_.denom),
                                          1.0 / cfg_.denom);
      d.explore.max_safe_weight = 0.0;  // fresh epoch
      d.fit_samples.clear();
      d.fit_samples.push_back({id, 0.0, d.explore.idle_latency, false, now, 1});
      queue_.push(id, MeasurementClass::Refresh, now);
      trace(out, now, "refresh,dip=" + id);
    }
  }

  void schedule_measurements(Seconds now, Actions& out) {
    RoundContext ctx;
    ctx.denom = cfg_.denom;
    ctx.ilp = cfg_.ilp();
    for (const auto& id : order_) {
      const auto& d = dips_.at(id);
      if (!d.alive) continue;
      ctx.alive.push_back(id);
      if (d.awaiting && !d.explore.done)  // mid-measurement: keep the weight stable
        ctx.reserved[id] = d.explore.current_weight;
    }
    for (const auto& p : queue_.entries())
      ctx.desired[p.dip] = dips_.at(p.dip).explore.current_weight;
    ctx.explored = curves();
    for (const auto& [id, w] : ctx.desired) ctx.explored.erase(id);
    for (const auto& [id, w] : ctx.reserved) ctx.explored.erase(id);

    const auto plan = schedule_round(queue_, ctx);
    if (!plan) return;
    ++rounds_executed_;
    for (const auto& [id, w] : plan->measured) {
      auto& d = dips_[id];
      if (!d.awaiting) d.await_since = now;
      d.explore.current_weight = w;  // admission may have topped the weight up
      d.awaiting = true;
    }
    auto program = plan->combined();
    for (const auto& id : order_)
      if (!dips_.at(id).alive) program[id] = 0.0;
    std::ostringstream what;
    what << "round,ws=" << detail::format_weight(plan->scheduled_sum)
         << ",measured=" << plan->measured.size()
         << (plan->residual_ilp_used ? ",fill=ilp" : plan->equal_split_used ? ",fill=equal" : "");
    trace(out, now, what.str());
    apply_program(now, std::move(program), out);
  }

  void full_solve(Seconds now, Actions& out) {
    const auto curves_now = curves();
    if (curves_now.empty()) return;
    auto cfg = cfg_.ilp();
    const auto solved = solve_multistep(curves_now, cfg);
    if (!solved) {
      trace(out, now, "solve,unsat");
      curve_changed_ = false;
      return;
    }
    std::map<DipId, Weight> weights;
    bool any = false;
    for (const auto& [id, w] : solved->choice) {
      weights[id] = w;
      any = any || w > 0.0;
    }
    if (!any) {
      trace(out, now, "solve,degenerate");
      curve_changed_ = false;
      return;
    }
    auto program = normalize(weights, cfg_.denom);
    for (const auto& id : order_)
      if (!dips_.at(id).alive) program[id] = 0.0;
    ++full_solves_;
    curve_changed_ = false;
    std::ostringstream what;
    what << "solve,objective=" << detail::format_ms(solved->objective)
         << ",dips=" << solved->choice.size();
    trace(out, now, what.str());
    apply_program(now, std::move(program), out);
  }

  void apply_program(Seconds now, std::map<DipId, Weight> program, Actions& out) {
    long long sum = 0;
    for (const auto& [id, w] : program) sum += weight_units(w, cfg_.denom);
    if (sum != cfg_.denom)
      throw std::logic_error("controller: programmed weights must sum to exactly 1");
    std::ostringstream what;
    what << "program";
    for (const auto& [id, w] : program) what << "," << id << "=" << detail::format_weight(w);
    trace(out, now, what.str());
    for (const auto& [id, w] : program) programmed_[id] = w;
    out.program = std::move(program);
  }

  VipId vip_;
  ControllerConfig cfg_;
  std::vector<DipId> order_;
  std::map<DipId, DipRuntime> dips_;
  MeasurementQueue queue_;
  std::map<DipId, Weight> programmed_;
  std::vector<DipId> restored_this_tick_;
  bool booted_ = false;
  bool curve_changed_ = false;
  Seconds change_time_ = 0.0;
  Seconds last_drift_time_ = -1.0;
  int rounds_executed_ = 0;
  int full_solves_ = 0;
};

struct VipPriority {
  VipId vip;
  bool curve_changed = false;
  Seconds change_time = 0.0;
};

// Changed VIPs first, in change order; the rest round-robin, rotated by
// `cursor` so everyone gets solved within a full rotation.
inline std::vector<VipId> prioritize_vips(std::vector<VipPriority> states, size_t cursor) {
  std::vector<VipPriority> changed, rest;
  for (auto& s : states) (s.curve_changed ? changed : rest).push_back(s);
  std::sort(changed.begin(), changed.end(), [](const VipPriority& a, const VipPriority& b) {
    if (a.change_time != b.change_time) return a.change_time < b.change_time;
    return a.vip < b.vip;
  });
  std::vector<VipId> out;
  for (const auto& s : changed) out.push_back(s.vip);
  if (!rest.empty()) {
    const size_t n = rest.size();
    for (size_t i = 0; i < n; ++i) out.push_back(rest[(cursor + i) % n].vip);
  }
  return out;
}

}  // namespace klb

#pragma once

#include <cstdint>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>
#include <vector>

#include "klb/core.hpp"
#include "klb/rng.hpp"

namespace klb {

enum class Policy { RR, WRR, LC, WLC, Random, P2, Hash };

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::RR: return "rr";
    case Policy::WRR: return "wrr";
    case Policy::LC: return "lc";
    case Policy::WLC: return "wlc";
    case Policy::Random: return "random";
    case Policy::P2: return "p2";
    default: return "hash";
  }
}

inline std::optional<Policy> policy_from_string(const std::string& s) {
  for (Policy p : {Policy::RR, Policy::WRR, Policy::LC, Policy::WLC, Policy::Random,
                   Policy::P2, Policy::Hash})
    if (s == to_string(p)) return p;
  return std::nullopt;
}

// Probe latency models. The queueing ground truth is the M/M/1-PS
// mean response base/(1-rho); the quadratic alternative exists so curve
// fitting can be checked against an exactly representable target.
enum class LatencyModel { MM1, Quadratic };

// Where the probe takes its utilization from: the measured busy
// fraction since the last probe-window mark, or the expected value
// rate*mean_work*weight/capacity (exact, WRR only).
enum class UtilSource { Measured, Expected };

struct DipConfig {
  DipId id;
  double capacity = 1.0;      // work units per second
  Millis base_latency = 2.0;  // response latency at zero load
  double drop_util = 0.95;
};

struct TrafficConfig {
  double rate = 0.0;       // Poisson connection arrivals per second
  double mean_work = 1.0;  // exponential work units per connection
};

struct ProbeConfig {
  int requests = 100;
  double noise_frac = 0.02;  // sigma as a share of the model mean
  LatencyModel model = LatencyModel::MM1;
  UtilSource util_source = UtilSource::Measured;
  double quad_a = 1.0, quad_b = 8.0;  // quadratic model: base*(1 + a*u + b*u^2)
};

struct InjectedEvent {
  enum class Kind { FailDip, RestoreDip, ScaleCapacity, ScaleTraffic };
  Kind kind;
  Seconds at = 0.0;
  DipId dip;            // FailDip / RestoreDip / ScaleCapacity
  double factor = 1.0;  // ScaleCapacity / ScaleTraffic
};

struct ClusterConfig {
  std::vector<DipConfig> dips;
  TrafficConfig traffic;
  Policy policy = Policy::WRR;
  uint64_t seed = 1;
  ProbeConfig probe;
  bool record_ledger = false;  // keep per-connection work for conservation checks
};

struct ProbeResult {
  Millis mean = 0.0;
  bool dropped = false;
  bool failed = false;  // DIP down: no response at all
};

// Per-DIP stats over the window since the last drain of this struct.
struct WindowStats {
  double util = 0.0;
  uint64_t arrivals = 0, completed = 0, aborted = 0;
  Millis mean_sojourn = 0.0;  // completed connections only, 0 if none
  size_t active_now = 0;
};

struct ConnectionOutcome {
  double work = 0.0;
  enum class State { InFlight, Completed, Aborted } state = State::InFlight;
  DipId dip;
};

// Deterministic processor-sharing cluster. Each DIP serves its active
// connections at capacity/n each; connection affinity is structural
// (admission picks the DIP once, weight changes only steer later
// connections). Arrival, policy and probe randomness run on separate
// streams so different policies see identical arrival processes.
class Cluster {
 public:
  explicit Cluster(ClusterConfig cfg)
      : cfg_(std::move(cfg)),
        rng_traffic_(cfg_.seed),
        rng_policy_(splitmix_of(cfg_.seed, 0x9E3779B97F4A7C15ull)),
        rng_probe_(splitmix_of(cfg_.seed, 0xC2B2AE3D27D4EB4Full)) {
    if (cfg_.dips.empty()) throw std::invalid_argument("cluster: no DIPs");
    dips_.resize(cfg_.dips.size());
    for (size_t i = 0; i < cfg_.dips.size(); ++i) {
      dips_[i].cfg = cfg_.dips[i];
      dips_[i].capacity = cfg_.dips[i].capacity;
      index_by_id_[cfg_.dips[i].id] = i;
      weights_[cfg_.dips[i].id] = 0.0;
    }
    rate_ = cfg_.traffic.rate;
    if (rate_ > 0.0) schedule_arrival();
  }

  Seconds now() const { return now_; }
  const ClusterConfig& config() const { return cfg_; }

  void schedule(const InjectedEvent& ev) {
    if ((ev.kind == InjectedEvent::Kind::FailDip || ev.kind == InjectedEvent::Kind::RestoreDip ||
         ev.kind == InjectedEvent::Kind::ScaleCapacity) &&
        !index_by_id_.count(ev.dip))
      throw std::invalid_argument("inject: unknown DIP " + ev.dip);
    injected_.push_back(ev);
    push_event(ev.at, EventKind::Inject, static_cast<int>(injected_.size()) - 1, 0);
  }

  // Weight changes apply to connections admitted afterwards only.
  void set_weights(const std::map<DipId, Weight>& weights) {
    for (const auto& [id, w] : weights) {
      if (!index_by_id_.count(id)) throw std::invalid_argument("set_weights: unknown DIP " + id);
      weights_[id] = w;
    }
    swrr_ready_ = false;
  }

  const std::map<DipId, Weight>& weights() const { return weights_; }

  void run_until(Seconds t_end) {
    if (t_end < now_) throw std::invalid_argument("run_until: time moved backwards");
    while (!events_.empty()) {
      const Event ev = events_.top();
      if (ev.t > t_end) break;
      events_.pop();
      now_ = ev.t;
      switch (ev.kind) {
        case EventKind::Inject:
          apply_inject(injected_[ev.a]);
          break;
        case EventKind::Arrival:
          process_arrival();
          break;
        case EventKind::Departure:
          process_departure(static_cast<size_t>(ev.a), static_cast<uint64_t>(ev.b));
          break;
      }
    }
    now_ = t_end;
  }

  // Out-of-band probe: model latency at the DIP's utilization plus the
  // averaged Gaussian noise of `requests` probe requests.
  ProbeResult probe(const DipId& id) {
    auto& d = dip(id);
    advance_dip(d, now_);
    if (d.failed) return {0.0, true, true};
    const double util = probe_util(d);
    const double mean = model_latency(d, util);
    double noise = 0.0;
    for (int i = 0; i < cfg_.probe.requests; ++i)
      noise += rng_probe_.normal(0.0, cfg_.probe.noise_frac * mean);
    const double measured = mean + noise / cfg_.probe.requests;
    const bool dropped = util >= d.cfg.drop_util;
    return {std::max(measured, 1e-3), dropped, false};
  }

  // Start the utilization window probes read from (typically after the
  // drain gate of a weight change expires).
  void mark_probe_window(const DipId& id) {
    auto& d = dip(id);
    advance_dip(d, now_);
    d.window_mark_t = now_;
    d.window_mark_busy = d.busy_integral;
  }

  void mark_probe_windows() {
    for (const auto& c : cfg_.dips) mark_probe_window(c.id);
  }

  // Drains the per-DIP stats window (for metrics CSV rows).
  WindowStats window_stats(const DipId& id) {
    auto& d = dip(id);
    advance_dip(d, now_);
    WindowStats out;
    const double span = now_ - d.stats_mark_t;
    out.util = span > 0 ? (d.busy_integral - d.stats_mark_busy) / span : 0.0;
    out.arrivals = d.win_arrivals;
    out.completed = d.win_completed;
    out.aborted = d.win_aborted;
    out.mean_sojourn = d.win_completed ? d.win_sojourn_sum / d.win_completed : 0.0;
    out.active_now = d.levels.size();
    d.stats_mark_t = now_;
    d.stats_mark_busy = d.busy_integral;
    d.win_arrivals = d.win_completed = d.win_aborted = 0;
    d.win_sojourn_sum = 0.0;
    return out;
  }

  // Totals since construction.
  uint64_t total_completed() const {
    uint64_t n = 0;
    for (const auto& d : dips_) n += d.completed;
    return n;
  }
  uint64_t total_aborted() const {
    uint64_t n = 0;
    for (const auto& d : dips_) n += d.aborted;
    return n;
  }
  uint64_t admission_failures() const { return admission_failures_; }
  Millis mean_sojourn(const DipId& id) const {
    const auto& d = dips_[index_by_id_.at(id)];
    return d.completed ? d.sojourn_sum / d.completed : 0.0;
  }
  Millis overall_mean_sojourn() const {
    double sum = 0.0;
    uint64_t n = 0;
    for (const auto& d : dips_) {
      sum += d.sojourn_sum;
      n += d.completed;
    }
    return n ? sum / n : 0.0;
  }
  std::vector<Millis> sojourn_log() const { return sojourn_log_; }
  uint64_t admissions(const DipId& id) const { return dips_[index_by_id_.at(id)].arrivals; }
  size_t active(const DipId& id) const { return dips_[index_by_id_.at(id)].levels.size(); }
  bool failed(const DipId& id) const { return dips_[index_by_id_.at(id)].failed; }
  double cumulative_busy(const DipId& id) {
    auto& d = dip(id);
    advance_dip(d, now_);
    return d.busy_integral;
  }

  // Per-connection ledger (record_ledger only): work values partition
  // into completed / aborted / in-flight.
  const std::map<uint64_t, ConnectionOutcome>& ledger() const { return ledger_; }

 private:
  enum class EventKind : int { Inject = 0, Arrival = 1, Departure = 2 };

  struct Event {
    Seconds t;
    EventKind kind;
    uint64_t seq;
    int a = 0;       // inject index / dip index
    uint64_t b = 0;  // departure generation
    bool operator>(const Event& other) const {
      if (t != other.t) return t > other.t;
      if (kind != other.kind) return kind > other.kind;
      return seq > other.seq;
    }
  };

  struct Dip {
    DipConfig cfg;
    double capacity = 1.0;
    bool failed = false;
    // processor sharing: every active connection departs when
    // ps_progress (integral of capacity/n) reaches its level
    double ps_progress = 0.0;
    std::multiset<std::pair<double, uint64_t>> levels;
    std::map<uint64_t, std::pair<double, Seconds>> conn;  // id -> (work, admit time)
    uint64_t depart_gen = 0;
    Seconds last_advance = 0.0;
    double busy_integral = 0.0;
    // probe window
    Seconds window_mark_t = 0.0;
    double window_mark_busy = 0.0;
    // metrics window
    Seconds stats_mark_t = 0.0;
    double stats_mark_busy = 0.0;
    uint64_t win_arrivals = 0, win_completed = 0, win_aborted = 0;
    double win_sojourn_sum = 0.0;
    // totals
    uint64_t arrivals = 0, completed = 0, aborted = 0;
    double sojourn_sum = 0.0;
    // smooth WRR state
    long long swrr_current = 0;
  };

  static uint64_t splitmix_of(uint64_t seed, uint64_t salt) {
    uint64_t s = seed ^ salt;
    return splitmix64(s);
  }

  Dip& dip(const DipId& id) {
    const auto it = index_by_id_.find(id);
    if (it == index_by_id_.end()) throw std::invalid_argument("unknown DIP " + id);
    return dips_[it->second];
  }

  void push_event(Seconds t, EventKind kind, int a, uint64_t b) {
    events_.push({t, kind, next_seq_++, a, b});
  }

  void schedule_arrival() {
    next_arrival_ = now_ + rng_traffic_.exponential(1.0 / rate_);
    push_event(next_arrival_, EventKind::Arrival, 0, 0);
  }

  void advance_dip(Dip& d, Seconds t) {
    const double dt = t - d.last_advance;
    if (dt > 0 && !d.levels.empty()) {
      d.busy_integral += dt;
      d.ps_progress += dt * d.capacity / static_cast<double>(d.levels.size());
    }
    d.last_advance = t;
  }

  void reschedule_departure(size_t di) {
    Dip& d = dips_[di];
    ++d.depart_gen;
    if (d.levels.empty() || d.failed) return;
    const double remaining = d.levels.begin()->first - d.ps_progress;
    const double dt = std::max(0.0, remaining * static_cast<double>(d.levels.size()) / d.capacity);
    push_event(now_ + dt, EventKind::Departure, static_cast<int>(di), d.depart_gen);
  }

  std::vector<size_t> live_dips() const {
    std::vector<size_t> live;
    for (size_t i = 0; i < dips_.size(); ++i)
      if (!dips_[i].failed) live.push_back(i);
    return live;
  }

  void process_arrival() {
    schedule_arrival();
    const double work = rng_traffic_.exponential(cfg_.traffic.mean_work);
    const uint64_t conn_id = next_conn_id_++;
    const auto live = live_dips();
    if (live.empty()) {
      ++admission_failures_;
      return;
    }
    const size_t di = pick(live, conn_id);
    Dip& d = dips_[di];
    advance_dip(d, now_);
    d.levels.insert({d.ps_progress + work, conn_id});
    d.conn[conn_id] = {work, now_};
    ++d.arrivals;
    ++d.win_arrivals;
    if (cfg_.record_ledger)
      ledger_[conn_id] = {work, ConnectionOutcome::State::InFlight, d.cfg.id};
    reschedule_departure(di);
  }

  void process_departure(size_t di, uint64_t gen) {
    Dip& d = dips_[di];
    if (gen != d.depart_gen || d.levels.empty()) return;  // superseded
    advance_dip(d, now_);
    const auto top = *d.levels.begin();
    d.ps_progress = top.first;  // pin to the exact level, no drift
    d.levels.erase(d.levels.begin());
    const auto it = d.conn.find(top.second);
    const Millis sojourn = (now_ - it->second.second) * 1000.0 + d.cfg.base_latency;
    d.conn.erase(it);
    ++d.completed;
    ++d.win_completed;
    d.sojourn_sum += sojourn;
    d.win_sojourn_sum += sojourn;
    if (cfg_.record_ledger) ledger_[top.second].state = ConnectionOutcome::State::Completed;
    sojourn_log_.push_back(sojourn);
    reschedule_departure(di);
  }

  void apply_inject(const InjectedEvent& ev) {
    switch (ev.kind) {
      case InjectedEvent::Kind::FailDip: {
        Dip& d = dip(ev.dip);
        advance_dip(d, now_);
        d.aborted += d.levels.size();
        d.win_aborted += d.levels.size();
        if (cfg_.record_ledger)
          for (const auto& [level, id] : d.levels)
            ledger_[id].state = ConnectionOutcome::State::Aborted;
        d.levels.clear();
        d.conn.clear();
        d.failed = true;
        ++d.depart_gen;
        swrr_ready_ = false;
        break;
      }
      case InjectedEvent::Kind::RestoreDip: {
        Dip& d = dip(ev.dip);
        advance_dip(d, now_);
        d.failed = false;
        swrr_ready_ = false;
        break;
      }
      case InjectedEvent::Kind::ScaleCapacity: {
        Dip& d = dip(ev.dip);
        advance_dip(d, now_);
        d.capacity *= ev.factor;
        if (d.capacity <= 0) throw std::invalid_argument("inject: capacity must stay positive");
        reschedule_departure(index_by_id_.at(ev.dip));
        break;
      }
      case InjectedEvent::Kind::ScaleTraffic:
        rate_ *= ev.factor;
        break;
    }
  }

  // --- policies ---

  size_t pick(const std::vector<size_t>& live, uint64_t conn_id) {
    switch (cfg_.policy) {
      case Policy::RR:
        return live[rr_counter_++ % live.size()];
      case Policy::WRR:
        return pick_swrr(live);
      case Policy::LC: {
        size_t best = live[0];
        for (size_t i : live)
          if (dips_[i].levels.size() < dips_[best].levels.size()) best = i;
        return best;
      }
      case Policy::WLC:
        return pick_wlc(live);
      case Policy::Random:
        return live[rng_policy_.below(live.size())];
      case Policy::P2: {
        const size_t a = live[rng_policy_.below(live.size())];
        const size_t b = live[rng_policy_.below(live.size())];
        // instantaneous load per unit capacity decides
        const double la = static_cast<double>(dips_[a].levels.size()) / dips_[a].capacity;
        const double lb = static_cast<double>(dips_[b].levels.size()) / dips_[b].capacity;
        if (la != lb) return la < lb ? a : b;
        return std::min(a, b);
      }
      default: {  // Hash
        uint64_t h = conn_id ^ (cfg_.seed * 0x2545F4914F6CDD1Dull);
        return live[splitmix64(h) % live.size()];
      }
    }
  }

  size_t pick_swrr(const std::vector<size_t>& live) {
    long long total = 0;
    for (size_t i : live) total += weight_units(weights_.at(dips_[i].cfg.id));
    if (total <= 0) return live[rr_counter_++ % live.size()];  // no weights yet
    if (!swrr_ready_) {
      for (auto& d : dips_) d.swrr_current = 0;
      swrr_ready_ = true;
    }
    size_t best = live[0];
    for (size_t i : live) {
      dips_[i].swrr_current += weight_units(weights_.at(dips_[i].cfg.id));
      if (dips_[i].swrr_current > dips_[best].swrr_current) best = i;
    }
    dips_[best].swrr_current -= total;
    return best;
  }

  size_t pick_wlc(const std::vector<size_t>& live) {
    size_t best = live.size();  // sentinel
    for (size_t i : live) {
      const long long w = weight_units(weights_.at(dips_[i].cfg.id));
      if (w <= 0) continue;
      if (best == live.size()) {
        best = i;
        continue;
      }
      const long long wb = weight_units(weights_.at(dips_[best].cfg.id));
      // active/weight compared exactly via cross multiplication
      const auto lhs = static_cast<long long>(dips_[i].levels.size()) * wb;
      const auto rhs = static_cast<long long>(dips_[best].levels.size()) * w;
      if (lhs < rhs) best = i;
    }
    if (best == live.size()) {  // all weights zero: least connections
      best = live[0];
      for (size_t i : live)
        if (dips_[i].levels.size() < dips_[best].levels.size()) best = i;
    }
    return best;
  }

  double probe_util(const Dip& d) const {
    if (cfg_.probe.util_source == UtilSource::Expected) {
      const double rho = rate_ * cfg_.traffic.mean_work * weights_.at(d.cfg.id) / d.capacity;
      return std::min(rho, 1.0);
    }
    const double span = now_ - d.window_mark_t;
    if (span <= 0) return d.levels.empty() ? 0.0 : 1.0;
    return (d.busy_integral - d.window_mark_busy) / span;
  }

  double model_latency(const Dip& d, double util) const {
    if (cfg_.probe.model == LatencyModel::Quadratic) {
      return d.cfg.base_latency *
             (1.0 + cfg_.probe.quad_a * util + cfg_.probe.quad_b * util * util);
    }
    return d.cfg.base_latency / (1.0 - std::min(util, 0.99));
  }

  ClusterConfig cfg_;
  Rng rng_traffic_, rng_policy_, rng_probe_;
  std::vector<Dip> dips_;
  std::map<DipId, size_t> index_by_id_;
  std::map<DipId, Weight> weights_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::vector<InjectedEvent> injected_;
  Seconds now_ = 0.0;
  Seconds next_arrival_ = 0.0;
  double rate_ = 0.0;
  uint64_t next_seq_ = 0;
  uint64_t next_conn_id_ = 0;
  uint64_t rr_counter_ = 0;
  uint64_t admission_failures_ = 0;
  bool swrr_ready_ = false;
  std::map<uint64_t, ConnectionOutcome> ledger_;
  std::vector<Millis> sojourn_log_;
};

}  // namespace klb

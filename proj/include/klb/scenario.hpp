#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>

#include "klb/controller.hpp"
#include "klb/sim.hpp"

namespace klb {

struct DipClassSpec {
  int count = 0;
  double capacity = 1.0;
  Millis base_latency = 2.0;
};

// Full description of one deterministic run.
struct ScenarioConfig {
  std::string name = "scenario";
  uint64_t seed = 1;
  Seconds duration = 600.0;
  std::string policy = "klb";  // klb, rr, wrr, lc, wlc, random, p2, hash
  double load = 0.70;          // offered work as a fraction of total capacity
  double mean_work = 0.2;      // work units per connection
  double drop_util = 0.95;
  std::vector<DipClassSpec> classes;
  std::vector<InjectedEvent> events;
  ControllerConfig controller;
  ProbeConfig probe;

  double total_capacity() const {
    double c = 0.0;
    for (const auto& k : classes) c += k.count * k.capacity;
    return c;
  }
  double arrival_rate() const { return load * total_capacity() / mean_work; }

  std::vector<DipConfig> dip_configs() const {
    std::vector<DipConfig> out;
    int index = 1;
    for (const auto& k : classes)
      for (int i = 0; i < k.count; ++i, ++index) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "dip-%02d", index);
        out.push_back({buf, k.capacity, k.base_latency, drop_util});
      }
    return out;
  }

  ClusterConfig cluster_config() const {
    ClusterConfig cc;
    cc.dips = dip_configs();
    cc.traffic = {arrival_rate(), mean_work};
    cc.seed = seed;
    cc.probe = probe;
    if (policy != "klb") {
      const auto p = policy_from_string(policy);
      if (!p) throw std::invalid_argument("unknown policy: " + policy);
      cc.policy = *p;
    } else {
      cc.policy = Policy::WRR;  // the controller programs the weights
    }
    return cc;
  }

  // Baseline weights for the weighted policies: proportional to capacity.
  std::map<DipId, Weight> capacity_weights() const {
    std::map<DipId, Weight> w;
    for (const auto& d : dip_configs()) w[d.id] = d.capacity;
    return normalize(w, controller.denom);
  }
};

namespace cfgio {

struct ParseError : std::runtime_error {
  ParseError(const std::string& file, int line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what) {}
};

inline InjectedEvent parse_event(const std::string& spec, const std::string& file, int line) {
  std::istringstream is(spec);
  double at;
  std::string kind;
  if (!(is >> at >> kind)) throw ParseError(file, line, "event needs '<time> <kind> ...'");
  InjectedEvent ev;
  ev.at = at;
  if (kind == "fail_dip") {
    ev.kind = InjectedEvent::Kind::FailDip;
    if (!(is >> ev.dip)) throw ParseError(file, line, "fail_dip needs a DIP id");
  } else if (kind == "restore_dip") {
    ev.kind = InjectedEvent::Kind::RestoreDip;
    if (!(is >> ev.dip)) throw ParseError(file, line, "restore_dip needs a DIP id");
  } else if (kind == "scale_capacity") {
    ev.kind = InjectedEvent::Kind::ScaleCapacity;
    if (!(is >> ev.dip >> ev.factor)) throw ParseError(file, line, "scale_capacity needs '<dip> <factor>'");
  } else if (kind == "scale_traffic") {
    ev.kind = InjectedEvent::Kind::ScaleTraffic;
    if (!(is >> ev.factor)) throw ParseError(file, line, "scale_traffic needs a factor");
  } else {
    throw ParseError(file, line, "unknown event kind '" + kind + "'");
  }
  return ev;
}

// key = value format, '#' comments; dip_class and event repeat.
inline ScenarioConfig parse(std::istream& in, const std::string& file = "<config>") {
  ScenarioConfig cfg;
  cfg.classes.clear();
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    std::string line = hash == std::string::npos ? raw : raw.substr(0, hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) throw ParseError(file, lineno, "expected 'key = value'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) throw ParseError(file, lineno, "empty value for '" + key + "'");
    try {
      if (key == "name") cfg.name = value;
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "duration_s") cfg.duration = std::stod(value);
      else if (key == "policy") cfg.policy = value;
      else if (key == "load") cfg.load = std::stod(value);
      else if (key == "mean_work") cfg.mean_work = std::stod(value);
      else if (key == "drop_util") cfg.drop_util = std::stod(value);
      else if (key == "probe_period_s") cfg.controller.probe_period = std::stod(value);
      else if (key == "control_period_s") cfg.controller.control_period = std::stod(value);
      else if (key == "probe_noise_frac") cfg.probe.noise_frac = std::stod(value);
      else if (key == "probe_requests") cfg.probe.requests = std::stoi(value);
      else if (key == "latency_model") {
        if (value == "mm1") cfg.probe.model = LatencyModel::MM1;
        else if (value == "quadratic") cfg.probe.model = LatencyModel::Quadratic;
        else throw ParseError(file, lineno, "latency_model is 'mm1' or 'quadratic'");
      } else if (key == "util_source") {
        if (value == "measured") cfg.probe.util_source = UtilSource::Measured;
        else if (value == "expected") cfg.probe.util_source = UtilSource::Expected;
        else throw ParseError(file, lineno, "util_source is 'measured' or 'expected'");
      } else if (key == "ilp_points") cfg.controller.ilp_points = std::stoi(value);
      else if (key == "ilp_slack") cfg.controller.ilp_slack = std::stod(value);
      else if (key == "theta") {
        cfg.controller.max_imbalance =
            value == "inf" ? std::numeric_limits<double>::infinity() : std::stod(value);
      } else if (key == "weight_denom") cfg.controller.denom = std::stoi(value);
      else if (key == "refresh_period_s") cfg.controller.refresh_period = std::stod(value);
      else if (key == "initial_drain_s") cfg.controller.initial_drain = std::stod(value);
      else if (key == "drain_estimation") cfg.controller.drain_estimation = value == "1" || value == "true";
      else if (key == "dip_class") {
        std::istringstream is(value);
        DipClassSpec spec;
        if (!(is >> spec.count >> spec.capacity >> spec.base_latency))
          throw ParseError(file, lineno, "dip_class needs '<count> <capacity> <base_latency_ms>'");
        cfg.classes.push_back(spec);
      } else if (key == "event") {
        cfg.events.push_back(parse_event(value, file, lineno));
      } else {
        throw ParseError(file, lineno, "unknown key '" + key + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(file, lineno, "bad value for '" + key + "': " + e.what());
    }
  }
  if (cfg.classes.empty()) throw ParseError(file, lineno, "at least one dip_class is required");
  return cfg;
}

inline ScenarioConfig parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  return parse(in, path);
}

inline std::string serialize(const ScenarioConfig& cfg) {
  std::ostringstream os;
  char buf[128];
  os << "name = " << cfg.name << "\n";
  os << "seed = " << cfg.seed << "\n";
  std::snprintf(buf, sizeof(buf), "duration_s = %.6f\n", cfg.duration);
  os << buf;
  os << "policy = " << cfg.policy << "\n";
  std::snprintf(buf, sizeof(buf), "load = %.6f\nmean_work = %.6f\ndrop_util = %.6f\n",
                cfg.load, cfg.mean_work, cfg.drop_util);
  os << buf;
  std::snprintf(buf, sizeof(buf), "probe_period_s = %.6f\ncontrol_period_s = %.6f\n",
                cfg.controller.probe_period, cfg.controller.control_period);
  os << buf;
  std::snprintf(buf, sizeof(buf), "probe_noise_frac = %.6f\nprobe_requests = %d\n",
                cfg.probe.noise_frac, cfg.probe.requests);
  os << buf;
  os << "latency_model = " << (cfg.probe.model == LatencyModel::MM1 ? "mm1" : "quadratic")
     << "\n";
  os << "util_source = "
     << (cfg.probe.util_source == UtilSource::Measured ? "measured" : "expected") << "\n";
  os << "ilp_points = " << cfg.controller.ilp_points << "\n";
  std::snprintf(buf, sizeof(buf), "ilp_slack = %.6f\n", cfg.controller.ilp_slack);
  os << buf;
  if (std::isinf(cfg.controller.max_imbalance)) os << "theta = inf\n";
  else {
    std::snprintf(buf, sizeof(buf), "theta = %.6f\n", cfg.controller.max_imbalance);
    os << buf;
  }
  os << "weight_denom = " << cfg.controller.denom << "\n";
  std::snprintf(buf, sizeof(buf), "refresh_period_s = %.6f\ninitial_drain_s = %.6f\n",
                cfg.controller.refresh_period, cfg.controller.initial_drain);
  os << buf;
  os << "drain_estimation = " << (cfg.controller.drain_estimation ? 1 : 0) << "\n";
  for (const auto& k : cfg.classes) {
    std::snprintf(buf, sizeof(buf), "dip_class = %d %.6f %.6f\n", k.count, k.capacity,
                  k.base_latency);
    os << buf;
  }
  for (const auto& ev : cfg.events) {
    switch (ev.kind) {
      case InjectedEvent::Kind::FailDip:
        std::snprintf(buf, sizeof(buf), "event = %.6f fail_dip %s\n", ev.at, ev.dip.c_str());
        break;
      case InjectedEvent::Kind::RestoreDip:
        std::snprintf(buf, sizeof(buf), "event = %.6f restore_dip %s\n", ev.at, ev.dip.c_str());
        break;
      case InjectedEvent::Kind::ScaleCapacity:
        std::snprintf(buf, sizeof(buf), "event = %.6f scale_capacity %s %.6f\n", ev.at,
                      ev.dip.c_str(), ev.factor);
        break;
      case InjectedEvent::Kind::ScaleTraffic:
        std::snprintf(buf, sizeof(buf), "event = %.6f scale_traffic %.6f\n", ev.at, ev.factor);
        break;
    }
    os << buf;
  }
  return os.str();
}

}  // namespace cfgio

// Built-in presets mirroring the experiment lineup: the heterogeneous
// 30-DIP pool, the close-capacity 3-DIP pool, and the three dynamics
// scenarios layered on the 30-DIP pool.
inline std::optional<ScenarioConfig> preset(const std::string& name) {
  ScenarioConfig cfg;
  cfg.name = name;
  cfg.seed = 42;
  cfg.duration = 600.0;
  cfg.classes = {{16, 1.0, 2.0}, {8, 2.0, 2.0}, {4, 4.0, 2.0}, {2, 9.2, 2.0}};
  if (name == "pool30") return cfg;
  if (name == "pool3-noisy") {
    cfg.classes = {{1, 1.0, 2.0}, {1, 0.8, 2.0}, {1, 0.6, 2.0}};
    cfg.duration = 400.0;
    return cfg;
  }
  if (name == "failure") {
    cfg.events = {{InjectedEvent::Kind::FailDip, 300.0, "dip-25", 1.0},
                  {InjectedEvent::Kind::FailDip, 300.0, "dip-26", 1.0}};
    return cfg;
  }
  if (name == "capacity-change") {
    for (const char* dip : {"dip-25", "dip-26", "dip-27", "dip-28"})
      cfg.events.push_back({InjectedEvent::Kind::ScaleCapacity, 300.0, dip, 0.75});
    return cfg;
  }
  if (name == "traffic-change") {
    cfg.events = {{InjectedEvent::Kind::ScaleTraffic, 300.0, "", 1.10}};
    return cfg;
  }
  return std::nullopt;
}

inline std::vector<std::string> preset_names() {
  return {"pool30", "pool3-noisy", "failure", "capacity-change", "traffic-change"};
}

}  // namespace klb

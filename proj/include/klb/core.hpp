#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace klb {

using DipId = std::string;
using VipId = std::string;

// Traffic share in [0, 1]. Weights are kept on a fixed grid of
// 1/denom steps so that sums and equality tests are exact; the default
// grid of 1/1000 resolves the smallest shares seen in practice.
using Weight = double;
using Millis = double;
using Seconds = double;

inline constexpr int kDefaultWeightDenom = 1000;

// Nearest grid multiple; ties round away from zero.
inline Weight quantize(double raw, int denom = kDefaultWeightDenom) {
  if (!(raw >= 0.0 && raw <= 1.0))
    throw std::out_of_range("quantize: weight outside [0,1]");
  return std::floor(raw * denom + 0.5) / denom;
}

// Grid units of an already-quantized weight.
inline long long weight_units(Weight w, int denom = kDefaultWeightDenom) {
  return std::llround(w * denom);
}

// Scales the map proportionally so the grid units sum to exactly
// `target_units`, handing leftover units to the heaviest entries first
// (ties by DipId). Ordering of weights is preserved.
inline std::map<DipId, Weight> normalize_to(const std::map<DipId, Weight>& weights,
                                            long long target_units,
                                            int denom = kDefaultWeightDenom) {
  double sum = 0.0;
  for (const auto& [id, w] : weights) {
    if (w < 0.0) throw std::invalid_argument("normalize: negative weight for " + id);
    sum += w;
  }
  if (sum <= 0.0) throw std::invalid_argument("normalize: all weights are zero");

  struct Row {
    DipId id;
    double exact;
    long long units;
  };
  std::vector<Row> rows;
  rows.reserve(weights.size());
  long long assigned = 0;
  for (const auto& [id, w] : weights) {
    const double exact = w * static_cast<double>(target_units) / sum;
    const long long units = static_cast<long long>(std::floor(exact));
    assigned += units;
    rows.push_back({id, exact, units});
  }
  long long leftover = target_units - assigned;
  std::vector<int> order(rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (rows[a].exact != rows[b].exact) return rows[a].exact > rows[b].exact;
    return rows[a].id < rows[b].id;
  });
  for (size_t i = 0; leftover > 0; i = (i + 1) % order.size(), --leftover)
    rows[order[i]].units += 1;

  std::map<DipId, Weight> out;
  for (const auto& row : rows)
    out[row.id] = static_cast<double>(row.units) / denom;
  return out;
}

// Weights summing to exactly 1 on the grid.
inline std::map<DipId, Weight> normalize(const std::map<DipId, Weight>& weights,
                                         int denom = kDefaultWeightDenom) {
  return normalize_to(weights, denom, denom);
}

// One probe measurement: the mean latency seen on `dip` while it held
// `weight`, averaged over n_requests probe requests.
struct LatencySample {
  DipId dip;
  Weight weight = 0.0;
  Millis mean_latency = 0.0;
  bool dropped = false;
  Seconds timestamp = 0.0;
  int n_requests = 1;
};

}  // namespace klb

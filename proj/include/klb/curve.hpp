#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>

#include "klb/core.hpp"

namespace klb {

// Learned weight -> mean-latency mapping for one DIP. `a0..a2` is the
// least-squares quadratic over the drop-free samples. `domain_scale`
// stretches or shrinks the weight axis; the dynamics handlers adjust it
// instead of refitting when traffic or capacity drifts.
struct WeightLatencyCurve {
  DipId dip;
  std::vector<LatencySample> samples;
  double a0 = 0.0, a1 = 0.0, a2 = 0.0;
  Millis idle_latency = 0.0;     // latency at weight 0
  Weight max_safe_weight = 0.0;  // largest weight observed without drop
  Seconds fitted_at = 0.0;
  double domain_scale = 1.0;
  bool fitted = false;
};

namespace detail {

// Solves the 3x3 normal equations with partial pivoting.
inline std::array<double, 3> solve3(std::array<std::array<double, 4>, 3> m) {
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    std::swap(m[col], m[pivot]);
    if (std::fabs(m[col][col]) < 1e-30)
      throw std::runtime_error("curve fit: singular normal equations");
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  return {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
}

}  // namespace detail

// Least-squares fit over the drop-free samples. Three or more distinct
// weights give the quadratic; two fall back to a line, one to a
// constant. Throws if every sample carries the drop flag.
inline WeightLatencyCurve fit_curve(std::span<const LatencySample> samples,
                                    Millis idle_latency, Weight max_safe_weight,
                                    Seconds fitted_at, DipId dip = {}) {
  std::vector<LatencySample> clean;
  for (const auto& s : samples)
    if (!s.dropped) clean.push_back(s);
  if (clean.empty())
    throw std::invalid_argument("fit_curve: no drop-free samples for " + dip);

  std::vector<double> distinct;
  for (const auto& s : clean) {
    bool seen = false;
    for (double w : distinct) seen = seen || w == s.weight;
    if (!seen) distinct.push_back(s.weight);
  }

  WeightLatencyCurve curve;
  curve.dip = std::move(dip);
  curve.samples = clean;
  curve.idle_latency = idle_latency;
  curve.max_safe_weight = max_safe_weight;
  curve.fitted_at = fitted_at;

  if (distinct.size() >= 3) {
    // Normal equations for a0 + a1 w + a2 w^2.
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, t0 = 0, t1 = 0, t2 = 0;
    for (const auto& s : clean) {
      const double w = s.weight, w2 = w * w;
      s0 += 1;
      s1 += w;
      s2 += w2;
      s3 += w2 * w;
      s4 += w2 * w2;
      t0 += s.mean_latency;
      t1 += w * s.mean_latency;
      t2 += w2 * s.mean_latency;
    }
    const auto c = detail::solve3({{{s0, s1, s2, t0}, {s1, s2, s3, t1}, {s2, s3, s4, t2}}});
    curve.a0 = c[0];
    curve.a1 = c[1];
    curve.a2 = c[2];
  } else if (distinct.size() == 2) {
    double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
    for (const auto& s : clean) {
      s0 += 1;
      s1 += s.weight;
      s2 += s.weight * s.weight;
      t0 += s.mean_latency;
      t1 += s.weight * s.mean_latency;
    }
    const double det = s0 * s2 - s1 * s1;
    curve.a1 = (s0 * t1 - s1 * t0) / det;
    curve.a0 = (t0 - curve.a1 * s1) / s0;
    curve.a2 = 0.0;
  } else {
    double mean = 0;
    for (const auto& s : clean) mean += s.mean_latency;
    curve.a0 = mean / static_cast<double>(clean.size());
    curve.a1 = curve.a2 = 0.0;
  }
  curve.fitted = true;
  return curve;
}

// Monotone-corrected evaluation: the quadratic is walked on the weight
// grid from 0 up to w and the running maximum is returned, floored at
// half the idle latency so sparse fits cannot go nonphysical.
inline Millis predict_latency(const WeightLatencyCurve& curve, Weight w,
                              int denom = kDefaultWeightDenom) {
  if (!curve.fitted) throw std::logic_error("predict_latency: curve not fitted");
  if (!(w >= 0.0 && w <= 1.0))
    throw std::out_of_range("predict_latency: weight outside [0,1]");
  const double floor_ms = 0.5 * curve.idle_latency;
  const double x_top = w / curve.domain_scale;
  const double step = 1.0 / denom;
  const auto poly = [&](double x) { return curve.a0 + x * (curve.a1 + x * curve.a2); };
  double best = floor_ms;
  const long long n = static_cast<long long>(std::floor(x_top / step + 1e-9));
  for (long long k = 0; k <= n; ++k) best = std::max(best, poly(static_cast<double>(k) * step));
  best = std::max(best, poly(x_top));
  return best;
}

}  // namespace klb

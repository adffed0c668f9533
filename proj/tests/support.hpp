#pragma once

// Shared helpers for the unit and acceptance suites: random shape generators,
// finite-difference oracles and fixture paths.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fsf/fsf.hpp"

namespace fsf::test {

inline std::filesystem::path data_dir() { return FSF_DATA_DIR; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Complex polar_random(std::mt19937_64& rng, double max_radius) {
  return std::polar(uniform(rng, 0.0, max_radius), uniform(rng, 0.0, 2.0 * std::numbers::pi));
}

/// Counter-clockwise blob of order K: a dominant c_1, a smaller c_{-1} and
/// harmonics decaying like 1/k. The whole curve stays inside the unit grid.
inline FourierCoefficients random_smooth_theta(std::mt19937_64& rng, int K, double harmonic_scale = 0.04) {
  FourierCoefficients theta(K);
  theta[0] = {uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08)};
  theta[1] = std::polar(uniform(rng, 0.15, 0.28), uniform(rng, 0.0, 2.0 * std::numbers::pi));
  theta[-1] = polar_random(rng, 0.3 * std::abs(theta[1]));
  for (int k = 2; k <= K; ++k) {
    theta[k] = polar_random(rng, harmonic_scale / k);
    theta[-k] = polar_random(rng, harmonic_scale / k);
  }
  return theta;
}

/// Rejection-samples shapes that the self-intersection check calls simple.
inline FourierCoefficients random_simple_theta(std::mt19937_64& rng, int K, const CurveSampling& sampling,
                                               double harmonic_scale = 0.04) {
  for (;;) {
    FourierCoefficients theta = random_smooth_theta(rng, K, harmonic_scale);
    if (!self_intersection_check(theta, sampling)) return theta;
  }
}

/// O(N^2) check over all non-adjacent segment pairs of the sampled polyline.
inline bool brute_force_self_intersects(const FourierCoefficients& theta, const CurveSampling& sampling) {
  const CurvePoints pts = eval_curve(theta, sampling);
  const std::size_t n = pts.size() - 1;  // closed: the last sample repeats the first
  auto p = [&](std::size_t i) { return detail::Point2{pts.x[i], pts.y[i]}; };
  auto degenerate = [&](std::size_t i) { return pts.x[i] == pts.x[i + 1] && pts.y[i] == pts.y[i + 1]; };
  for (std::size_t i = 0; i < n; ++i) {
    if (degenerate(i)) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (degenerate(j)) continue;
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (detail::segments_intersect(p(i), p(i + 1), p(j), p(j + 1))) return true;
    }
  }
  return false;
}

/// Relative error with a floor that scales with the largest gradient entry,
/// so entries that are zero up to round-off are judged on absolute terms.
inline double relative_error(double analytic, double numeric, double scale) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6 * scale});
  return denom == 0.0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

/// True when some pixel changes clip or sign state between the two fields by
/// a non-negligible amount. Such perturbations straddle a non-differentiable
/// point of |I| or min(., 1), where central differences are meaningless.
inline bool crosses_kink(const Grid2D<double>& minus, const Grid2D<double>& plus) {
  for (std::size_t i = 0; i < minus.size(); ++i) {
    const double a = minus.values()[i];
    const double b = plus.values()[i];
    if (std::abs(b - a) <= 1e-9) continue;
    const bool clip_a = std::abs(a) < 1.0, clip_b = std::abs(b) < 1.0;
    const bool sign_a = a > 0.0, sign_b = b > 0.0;
    const bool zero_a = a == 0.0, zero_b = b == 0.0;
    if (clip_a != clip_b || sign_a != sign_b || zero_a != zero_b) return true;
  }
  return false;
}

/// ReLU activity pattern of the regularizer; a flip marks a kink.
inline std::vector<bool> reg_pattern(const FourierCoefficients& theta, double gamma) {
  const double budget = gamma * fundamental_amplitude(theta);
  std::vector<bool> out;
  for (int k = -theta.order(); k <= theta.order(); ++k)
    if (std::abs(k) >= 2) out.push_back(std::abs(theta[k]) > budget);
  return out;
}

inline FourierCoefficients perturbed(const FourierCoefficients& theta, std::size_t component, double h) {
  std::vector<double> flat = theta.to_flat();
  flat[component] += h;
  return FourierCoefficients::from_flat(theta.order(), flat);
}

struct FdComparison {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double worst = 0.0;
};

/// Central differences of `loss` per parameter, compared against `analytic`.
/// `kink(minus, plus)` decides whether a component is skipped.
inline FdComparison compare_gradient(const FourierCoefficients& theta, const CoefficientGradient& analytic,
                                     const std::function<double(const FourierCoefficients&)>& loss,
                                     const std::function<bool(const FourierCoefficients&,
                                                              const FourierCoefficients&)>& kink,
                                     double h = 1e-5) {
  FdComparison out;
  std::vector<double> numeric(analytic.size(), 0.0);
  std::vector<bool> valid(analytic.size(), false);
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    const FourierCoefficients minus = perturbed(theta, p, -h);
    const FourierCoefficients plus = perturbed(theta, p, h);
    if (kink(minus, plus)) {
      ++out.skipped;
      continue;
    }
    numeric[p] = (loss(plus) - loss(minus)) / (2.0 * h);
    valid[p] = true;
  }
  double scale = 0.0;
  for (std::size_t p = 0; p < analytic.size(); ++p)
    if (valid[p]) scale = std::max({scale, std::abs(numeric[p]), std::abs(analytic[p])});
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    if (!valid[p]) continue;
    ++out.checked;
    out.worst = std::max(out.worst, relative_error(analytic[p], numeric[p], scale));
  }
  return out;
}

inline Grid2D<double> random_grid(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                                  double hi = 1.0) {
  Grid2D<double> g(rows, cols);
  for (double& v : g.values()) v = uniform(rng, lo, hi);
  return g;
}

inline double dot(const Grid2D<double>& a, const Grid2D<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

/// Pixel-space distance from every pixel center to the sampled polyline.
inline Grid2D<double> distance_to_curve_px(const CurvePoints& pts, const GridSpec& grid) {
  Grid2D<double> out(grid.rows(), grid.cols());
  const double px = grid.pitch_x(), py = grid.pitch_y();
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      const double qx = grid.x(c), qy = grid.y(r);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j + 1 < pts.size(); ++j) {
        const double ax = (pts.x[j] - qx) / px, ay = (pts.y[j] - qy) / py;
        const double bx = (pts.x[j + 1] - qx) / px, by = (pts.y[j + 1] - qy) / py;
        const double dx = bx - ax, dy = by - ay;
        const double len2 = dx * dx + dy * dy;
        const double t = len2 > 0.0 ? std::clamp(-(ax * dx + ay * dy) / len2, 0.0, 1.0) : 0.0;
        best = std::min(best, std::hypot(ax + t * dx, ay + t * dy));
      }
      out(r, c) = best;
    }
  }
  return out;
}

inline FourierCoefficients circle(double radius, bool counter_clockwise = true) {
  FourierCoefficients theta(1);
  theta[counter_clockwise ? 1 : -1] = radius;
  return theta;
}

}  // namespace fsf::test

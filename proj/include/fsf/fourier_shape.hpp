#pragma once

// Closed planar curves parameterized by a truncated complex Fourier series
//
//   F(t) = f(t) + i g(t) = sum_{k=-K}^{K} c_k e^{ikt},  t in [0, 2pi].
//
// Shape space is the square [-0.5, 0.5]^2 that the rasterizer covers. c_0 is
// the centroid, c_1 and c_{-1} form the base ellipse, and |k| >= 2 add detail.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsf/error.hpp"

namespace fsf {

using Complex = std::complex<double>;

/// Gradient with respect to the shape parameters, in the flat layout
/// [re c_{-K}, im c_{-K}, ..., re c_K, im c_K].
using CoefficientGradient = std::vector<double>;

class FourierCoefficients {
 public:
  explicit FourierCoefficients(int order) : order_(order), coeffs_(checked_length(order)) {}

  FourierCoefficients(int order, std::vector<Complex> coeffs)
      : order_(order), coeffs_(std::move(coeffs)) {
    detail::require(coeffs_.size() == checked_length(order),
                    "coefficient count must be 2K+1 for K=" + std::to_string(order));
  }

  /// Unpacks the flat real layout used by optimizers and foreign callers.
  static FourierCoefficients from_flat(int order, std::span<const double> flat) {
    const std::size_t n = checked_length(order);
    detail::require(flat.size() == 2 * n, "flat coefficient array must hold 2(2K+1) values");
    std::vector<Complex> coeffs(n);
    for (std::size_t i = 0; i < n; ++i) coeffs[i] = {flat[2 * i], flat[2 * i + 1]};
    return {order, std::move(coeffs)};
  }

  int order() const noexcept { return order_; }
  std::size_t size() const noexcept { return coeffs_.size(); }
  std::size_t parameter_count() const noexcept { return 2 * coeffs_.size(); }

  Complex& operator[](int k) { return coeffs_.at(index_of(k)); }
  const Complex& operator[](int k) const { return coeffs_.at(index_of(k)); }

  std::span<const Complex> coefficients() const noexcept { return coeffs_; }

  std::vector<double> to_flat() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const Complex& c : coeffs_) {
      flat.push_back(c.real());
      flat.push_back(c.imag());
    }
    return flat;
  }

  bool is_finite() const noexcept {
    return std::all_of(coeffs_.begin(), coeffs_.end(), [](const Complex& c) {
      return std::isfinite(c.real()) && std::isfinite(c.imag());
    });
  }

  void validate() const {
    if (!is_finite()) throw InvalidInput("Fourier coefficients contain NaN or Inf");
  }

  friend bool operator==(const FourierCoefficients&, const FourierCoefficients&) = default;

 private:
  static std::size_t checked_length(int order) {
    detail::require(order >= 1, "harmonic order K must be >= 1");
    return 2 * static_cast<std::size_t>(order) + 1;
  }

  std::size_t index_of(int k) const {
    if (k < -order_ || k > order_) throw InvalidInput("harmonic index out of range");
    return static_cast<std::size_t>(k + order_);
  }

  int order_;
  std::vector<Complex> coeffs_;
};

/// Uniform grid t_j = 2 pi j / (N_s - 1) over [0, 2 pi], both endpoints included.
class CurveSampling {
 public:
  explicit CurveSampling(std::size_t count = 1000) : count_(count) {
    detail::require(count >= 8, "curve sampling needs at least 8 samples");
  }

  std::size_t count() const noexcept { return count_; }
  double step() const noexcept { return 2.0 * std::numbers::pi / static_cast<double>(count_ - 1); }

  double t(std::size_t j) const noexcept {
    if (j + 1 == count_) return 2.0 * std::numbers::pi;
    return 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(count_ - 1);
  }

  /// Trapezoid weight of node j, divided by 2 pi.
  double normalized_weight(std::size_t j) const noexcept {
    const double w = 1.0 / static_cast<double>(count_ - 1);
    return (j == 0 || j + 1 == count_) ? 0.5 * w : w;
  }

  /// Trapezoid weight of node j.
  double weight(std::size_t j) const noexcept {
    return 2.0 * std::numbers::pi * normalized_weight(j);
  }

 private:
  std::size_t count_;
};

/// Curve samples and analytic derivatives, structure-of-arrays.
struct CurvePoints {
  std::vector<double> x, y;    // f(t_j), g(t_j)
  std::vector<double> dx, dy;  // f'(t_j), g'(t_j)

  std::size_t size() const noexcept { return x.size(); }
};

namespace detail {

/// e^{ikt_j} for every node and harmonic, laid out [j * (2K+1) + (k+K)].
inline std::vector<Complex> harmonic_table(int order, const CurveSampling& sampling) {
  const std::size_t n = 2 * static_cast<std::size_t>(order) + 1;
  std::vector<Complex> table(sampling.count() * n);
  for (std::size_t j = 0; j < sampling.count(); ++j) {
    const double t = sampling.t(j);
    for (int k = -order; k <= order; ++k) {
      const double angle = static_cast<double>(k) * t;
      table[j * n + static_cast<std::size_t>(k + order)] = {std::cos(angle), std::sin(angle)};
    }
  }
  return table;
}

}  // namespace detail

inline CurvePoints eval_curve(const FourierCoefficients& theta, const CurveSampling& sampling) {
  theta.validate();
  const int order = theta.order();
  const std::size_t n = theta.size();
  const auto table = detail::harmonic_table(order, sampling);
  const auto coeffs = theta.coefficients();

  CurvePoints pts;
  const std::size_t count = sampling.count();
  pts.x.resize(count);
  pts.y.resize(count);
  pts.dx.resize(count);
  pts.dy.resize(count);
  for (std::size_t j = 0; j < count; ++j) {
    Complex value{0.0, 0.0};
    Complex derivative{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const Complex term = coeffs[i] * table[j * n + i];
      const double k = static_cast<double>(static_cast<int>(i) - order);
      value += term;
      derivative += Complex{-k * term.imag(), k * term.real()};  // i k c_k e^{ikt}
    }
    pts.x[j] = value.real();
    pts.y[j] = value.imag();
    pts.dx[j] = derivative.real();
    pts.dy[j] = derivative.imag();
  }
  return pts;
}

/// S_fund = |c_1| + |c_{-1}|.
inline double fundamental_amplitude(const FourierCoefficients& theta) {
  return std::abs(theta[1]) + std::abs(theta[-1]);
}

struct RegLoss {
  double value = 0.0;
  CoefficientGradient gradient;
};

/// Hinge penalty on high harmonics: sum over |k| >= 2 of ReLU(|c_k| - gamma S_fund).
///
/// Subgradient conventions: ReLU'(0) = 0, and d|c|/dc = 0 at c = 0.
inline RegLoss reg_loss(const FourierCoefficients& theta, double gamma) {
  detail::require(gamma > 0.0, "regularization gamma must be positive");
  theta.validate();

  const int order = theta.order();
  const double bound = gamma * fundamental_amplitude(theta);
  auto unit = [](const Complex& c) {
    const double mag = std::abs(c);
    return mag > 0.0 ? c / mag : Complex{0.0, 0.0};
  };

  RegLoss out;
  out.gradient.assign(theta.parameter_count(), 0.0);
  auto add = [&](int k, const Complex& g) {
    const auto i = static_cast<std::size_t>(k + order);
    out.gradient[2 * i] += g.real();
    out.gradient[2 * i + 1] += g.imag();
  };

  const Complex fund_pos = unit(theta[1]);
  const Complex fund_neg = unit(theta[-1]);
  for (int k = -order; k <= order; ++k) {
    if (std::abs(k) < 2) continue;
    const double excess = std::abs(theta[k]) - bound;
    if (excess <= 0.0) continue;
    out.value += excess;
    add(k, unit(theta[k]));
    add(1, -gamma * fund_pos);
    add(-1, -gamma * fund_neg);
  }
  return out;
}

/// Axis-aligned rectangle in shape space.
struct ShapeBox {
  double x0 = -0.5, y0 = -0.5, x1 = 0.5, y1 = 0.5;

  double center_x() const noexcept { return 0.5 * (x0 + x1); }
  double center_y() const noexcept { return 0.5 * (y0 + y1); }
  double half_width() const noexcept { return 0.5 * (x1 - x0); }
  double half_height() const noexcept { return 0.5 * (y1 - y0); }
};

struct InitOptions {
  double fraction = 0.8;  // base ellipse semi-axes relative to the box half-extents
  double gamma = 0.1;     // harmonics are kept within gamma * S_fund
};

/// Closed-form initial shape: a counter-clockwise ellipse inscribing
/// `fraction` of the placement box, plus small random harmonics.
///
/// Every |c_k| (|k| >= 2) is at most gamma S_fund / 2, so reg_loss starts at
/// zero, and the summed harmonic amplitude is capped at the remaining margin
/// (1 - fraction) of the smaller half-extent so the curve stays in the box.
inline FourierCoefficients init_coefficients(const ShapeBox& placement, int order, std::uint64_t seed,
                                             const InitOptions& options = {}) {
  detail::require(order >= 1, "harmonic order K must be >= 1");
  detail::require(placement.x0 < placement.x1 && placement.y0 < placement.y1,
                  "placement box must have positive extent");
  detail::require(placement.x0 >= -0.5 && placement.x1 <= 0.5 && placement.y0 >= -0.5 &&
                      placement.y1 <= 0.5,
                  "placement box must lie inside [-0.5, 0.5]^2");
  detail::require(options.fraction > 0.0 && options.fraction <= 1.0, "init fraction must be in (0, 1]");
  detail::require(options.gamma > 0.0, "gamma must be positive");

  FourierCoefficients theta(order);
  const double a = options.fraction * placement.half_width();
  const double b = options.fraction * placement.half_height();
  // A cos t + i B sin t = (A+B)/2 e^{it} + (A-B)/2 e^{-it}
  theta[0] = {placement.center_x(), placement.center_y()};
  theta[1] = {0.5 * (a + b), 0.0};
  theta[-1] = {0.5 * (a - b), 0.0};

  if (order >= 2) {
    const double margin = (1.0 - options.fraction) *
                          std::min(placement.half_width(), placement.half_height());
    const double amplitude = std::min(0.5 * options.gamma * fundamental_amplitude(theta),
                                      margin / static_cast<double>(2 * order - 2));
    std::mt19937_64 rng(seed);
    auto unit_draw = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    for (int k = -order; k <= order; ++k) {
      if (std::abs(k) < 2) continue;
      const double radius = amplitude * unit_draw();
      const double phase = 2.0 * std::numbers::pi * unit_draw();
      theta[k] = std::polar(radius, phase);
    }
  }
  return theta;
}

namespace detail {

struct Point2 {
  double x, y;
};

inline double cross(Point2 o, Point2 a, Point2 b) noexcept {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool on_segment(Point2 p, Point2 a, Point2 b) noexcept {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

/// Closed-segment intersection test (touching and collinear overlap count).
inline bool segments_intersect(Point2 a, Point2 b, Point2 c, Point2 d) noexcept {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(a, c, d)) return true;
  if (d2 == 0 && on_segment(b, c, d)) return true;
  if (d3 == 0 && on_segment(c, a, b)) return true;
  if (d4 == 0 && on_segment(d, a, b)) return true;
  return false;
}

}  // namespace detail

/// True iff two non-adjacent segments of the closed sample polyline intersect.
///
/// Segment j joins samples j and j+1; the last segment is adjacent to the
/// first. Zero-length segments are ignored, so a fully degenerate curve has
/// no crossings. Candidate pairs come from a sweep over x-extents.
inline bool self_intersection_check(const FourierCoefficients& theta, const CurveSampling& sampling) {
  const CurvePoints pts = eval_curve(theta, sampling);
  const std::size_t segments = pts.size() - 1;

  struct Segment {
    std::size_t index;
    detail::Point2 a, b;
    double xmin, xmax;
  };
  std::vector<Segment> live;
  live.reserve(segments);
  for (std::size_t j = 0; j < segments; ++j) {
    const detail::Point2 a{pts.x[j], pts.y[j]};
    const detail::Point2 b{pts.x[j + 1], pts.y[j + 1]};
    if (a.x == b.x && a.y == b.y) continue;
    live.push_back({j, a, b, std::min(a.x, b.x), std::max(a.x, b.x)});
  }
  std::sort(live.begin(), live.end(), [](const Segment& l, const Segment& r) {
    return l.xmin < r.xmin || (l.xmin == r.xmin && l.index < r.index);
  });

  auto adjacent = [segments](std::size_t i, std::size_t j) {
    const std::size_t lo = std::min(i, j);
    const std::size_t hi = std::max(i, j);
    return hi - lo <= 1 || (lo == 0 && hi == segments - 1);
  };

  std::vector<const Segment*> active;
  for (const Segment& seg : live) {
    std::erase_if(active, [&](const Segment* s) { return s->xmax < seg.xmin; });
    for (const Segment* other : active) {
      if (adjacent(seg.index, other->index)) continue;
      if (std::max(seg.a.y, seg.b.y) < std::min(other->a.y, other->b.y) ||
          std::max(other->a.y, other->b.y) < std::min(seg.a.y, seg.b.y))
        continue;
      if (detail::segments_intersect(seg.a, seg.b, other->a, other->b)) return true;
    }
    active.push_back(&seg);
  }
  return false;
}

}  // namespace fsf

#pragma once

// Placing a shape mask on a scene and compositing the patch.
//
// Pixel (r, c) of an image covers [c, c+1) x [r, r+1) in pixel coordinates,
// so its center is (c + 0.5, r + 0.5). Boxes use the same frame.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/grid.hpp"
#include "fsf/winding_raster.hpp"

namespace fsf {

/// Normalized thermal intensities in [0, 1].
struct ThermalImage : Grid2D<double> {
  using Grid2D<double>::Grid2D;
  explicit ThermalImage(Grid2D<double> pixels) : Grid2D<double>(std::move(pixels)) {}
};

struct TargetBox {
  double cx = 0.0, cy = 0.0;  // center, pixels
  double w = 0.0, h = 0.0;    // size, pixels

  static TargetBox from_top_left(double x, double y, double w, double h) {
    return {x + 0.5 * w, y + 0.5 * h, w, h};
  }

  double left() const noexcept { return cx - 0.5 * w; }
  double right() const noexcept { return cx + 0.5 * w; }
  double top() const noexcept { return cy - 0.5 * h; }
  double bottom() const noexcept { return cy + 0.5 * h; }
  double area() const noexcept { return w * h; }

  friend bool operator==(const TargetBox&, const TargetBox&) = default;
};

inline double iou(const TargetBox& a, const TargetBox& b) noexcept {
  const double iw = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
  const double ih = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct PlacementParams {
  double rho = 0.6;   // footprint size relative to the target box
  double gray = 0.0;  // patch intensity; 0 is a perfect heat blocker

  void validate() const {
    detail::require(rho > 0.0 && rho <= 1.5, "scale ratio rho must be in (0, 1.5]");
    detail::require(gray >= 0.0 && gray <= 1.0, "patch gray value must be in [0, 1]");
  }
};

struct AugmentationRanges {
  double translate_px = 10.0;
  double rotate_deg = 5.0;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double gray_jitter = 20.0 / 255.0;

  static AugmentationRanges none() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }

  void validate() const {
    detail::require(translate_px >= 0.0 && rotate_deg >= 0.0 && gray_jitter >= 0.0 && scale_lo > 0.0,
                    "augmentation ranges must be non-negative");
    detail::require(scale_lo <= scale_hi, "augmentation scale_lo must not exceed scale_hi");
  }
};

/// One augmentation sample, applied about the patch center.
struct AugmentationDraw {
  double tx = 0.0, ty = 0.0;  // pixels
  double rotation_deg = 0.0;
  double scale = 1.0;
  double gray_offset = 0.0;

  friend bool operator==(const AugmentationDraw&, const AugmentationDraw&) = default;
};

namespace detail {

/// Uniform double in [lo, hi] from the top 53 bits of one engine output.
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

}  // namespace detail

inline AugmentationDraw sample_augmentation(const AugmentationRanges& ranges, std::mt19937_64& rng) {
  ranges.validate();
  AugmentationDraw d;
  d.tx = detail::uniform(rng, -ranges.translate_px, ranges.translate_px);
  d.ty = detail::uniform(rng, -ranges.translate_px, ranges.translate_px);
  d.rotation_deg = detail::uniform(rng, -ranges.rotate_deg, ranges.rotate_deg);
  d.scale = detail::uniform(rng, ranges.scale_lo, ranges.scale_hi);
  d.gray_offset = detail::uniform(rng, 0.0, ranges.gray_jitter);
  return d;
}

inline double effective_gray(double gray, const AugmentationDraw& draw) {
  return std::clamp(gray + draw.gray_offset, 0.0, 1.0);
}

namespace detail {

inline void require_box_in_image(const TargetBox& box, std::size_t rows, std::size_t cols) {
  require(box.w > 0.0 && box.h > 0.0, "target box must have positive size");
  require(box.right() > 0.0 && box.left() < static_cast<double>(cols) && box.bottom() > 0.0 &&
              box.top() < static_cast<double>(rows),
          "target box does not intersect the image");
}

/// Visits every (image pixel, mask cell, bilinear weight) triple of one
/// placement. The forward pass and its adjoint share this enumeration, so
/// they are exact transposes of each other.
template <class Visit>
void for_each_tap(std::size_t mask_rows, std::size_t mask_cols, const TargetBox& box, double rho,
                  std::size_t rows, std::size_t cols, const AugmentationDraw& draw, Visit&& visit) {
  const double span_x = rho * box.w * draw.scale;
  const double span_y = rho * box.h * draw.scale;
  const double theta = draw.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double center_x = box.cx + draw.tx;
  const double center_y = box.cy + draw.ty;
  const double last_col = static_cast<double>(mask_cols - 1);
  const double last_row = static_cast<double>(mask_rows - 1);

  // Zero padding reaches one mask cell past the extent; bound it generously.
  const double pad_x = span_x / last_col;
  const double pad_y = span_y / last_row;
  const double radius = 0.5 * std::hypot(span_x + 2.0 * pad_x, span_y + 2.0 * pad_y) + 1.0;
  const auto r0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(center_y - radius)));
  const auto r1 = static_cast<std::ptrdiff_t>(
      std::min(static_cast<double>(rows), std::ceil(center_y + radius)));
  const auto c0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(center_x - radius)));
  const auto c1 = static_cast<std::ptrdiff_t>(
      std::min(static_cast<double>(cols), std::ceil(center_x + radius)));

  const auto mr = static_cast<std::ptrdiff_t>(mask_rows);
  const auto mc = static_cast<std::ptrdiff_t>(mask_cols);
  for (std::ptrdiff_t r = r0; r < r1; ++r) {
    for (std::ptrdiff_t c = c0; c < c1; ++c) {
      const double px = static_cast<double>(c) + 0.5 - center_x;
      const double py = static_cast<double>(r) + 0.5 - center_y;
      // Inverse rotation maps the image offset into the patch frame.
      const double lx = cos_t * px + sin_t * py;
      const double ly = -sin_t * px + cos_t * py;
      const double fj = (lx / span_x + 0.5) * last_col;
      const double fi = (ly / span_y + 0.5) * last_row;
      if (!(fj > -1.0 && fj < last_col + 1.0 && fi > -1.0 && fi < last_row + 1.0)) continue;
      const double j0f = std::floor(fj);
      const double i0f = std::floor(fi);
      const double ax = fj - j0f;
      const double ay = fi - i0f;
      const auto j0 = static_cast<std::ptrdiff_t>(j0f);
      const auto i0 = static_cast<std::ptrdiff_t>(i0f);
      const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
      const std::ptrdiff_t is[4] = {i0, i0, i0 + 1, i0 + 1};
      const std::ptrdiff_t js[4] = {j0, j0 + 1, j0, j0 + 1};
      for (int t = 0; t < 4; ++t) {
        if (wts[t] == 0.0 || is[t] < 0 || is[t] >= mr || js[t] < 0 || js[t] >= mc) continue;
        visit(static_cast<std::size_t>(r), static_cast<std::size_t>(c), static_cast<std::size_t>(is[t]),
              static_cast<std::size_t>(js[t]), wts[t]);
      }
    }
  }
}

}  // namespace detail

/// Raw (unclamped) sum of bilinear placements of `mask` at every box.
inline Grid2D<double> place_mask_sum(const Grid2D<double>& mask, std::span<const TargetBox> boxes,
                                     double rho, std::size_t rows, std::size_t cols,
                                     const AugmentationDraw& draw = {}) {
  detail::require(mask.rows() >= 2 && mask.cols() >= 2, "mask must be at least 2x2");
  detail::require(rho > 0.0 && rho <= 1.5, "scale ratio rho must be in (0, 1.5]");
  Grid2D<double> placed(rows, cols, 0.0);
  for (const TargetBox& box : boxes) {
    detail::require_box_in_image(box, rows, cols);
    detail::for_each_tap(mask.rows(), mask.cols(), box, rho, rows, cols, draw,
                         [&](std::size_t r, std::size_t c, std::size_t i, std::size_t j, double w) {
                           placed(r, c) += w * mask(i, j);
                         });
  }
  return placed;
}

/// Full-image mask for one or more targets sharing the same shape. Disjoint
/// footprints simply add; overlaps are summed and clamped to [0, 1].
inline Grid2D<double> place_mask(const Grid2D<double>& mask, std::span<const TargetBox> boxes, double rho,
                                 std::size_t rows, std::size_t cols, const AugmentationDraw& draw = {}) {
  Grid2D<double> placed = place_mask_sum(mask, boxes, rho, rows, cols, draw);
  for (double& v : placed.values()) v = std::clamp(v, 0.0, 1.0);
  return placed;
}

inline Grid2D<double> place_mask(const Grid2D<double>& mask, const TargetBox& box, double rho,
                                 std::size_t rows, std::size_t cols, const AugmentationDraw& draw = {}) {
  return place_mask(mask, std::span<const TargetBox>(&box, 1), rho, rows, cols, draw);
}

/// Transpose of the bilinear placement: scatters an image-space gradient back
/// onto the mask grid. Accumulation follows the fixed tap enumeration order.
inline Grid2D<double> place_mask_adjoint(const Grid2D<double>& image_grad, std::span<const TargetBox> boxes,
                                         double rho, std::size_t mask_rows, std::size_t mask_cols,
                                         const AugmentationDraw& draw = {}) {
  Grid2D<double> grad(mask_rows, mask_cols, 0.0);
  for (const TargetBox& box : boxes) {
    detail::require_box_in_image(box, image_grad.rows(), image_grad.cols());
    detail::for_each_tap(mask_rows, mask_cols, box, rho, image_grad.rows(), image_grad.cols(), draw,
                         [&](std::size_t r, std::size_t c, std::size_t i, std::size_t j, double w) {
                           grad(i, j) += w * image_grad(r, c);
                         });
  }
  return grad;
}

/// I_adv = I (1 - M) + gray M, clamped to [0, 1].
inline ThermalImage apply_patch(const ThermalImage& image, const Grid2D<double>& applied, double gray) {
  detail::require(image.same_shape(applied), "applied mask must match the image shape");
  detail::require(gray >= 0.0 && gray <= 1.0, "patch gray value must be in [0, 1]");
  ThermalImage out(image.rows(), image.cols());
  auto src = image.values();
  auto m = applied.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] = std::clamp(src[i] * (1.0 - m[i]) + gray * m[i], 0.0, 1.0);
  return out;
}

/// Adjoint of apply_patch(image, place_mask(mask, boxes, ...), gray): maps
/// dL/dI_adv to dL/dM_s on the mask grid. The gray value should already
/// include any augmentation offset. Clamps (the overlap clamp in placement and
/// the range clamp in compositing) pass no gradient where active.
inline Grid2D<double> pipeline_backward(const Grid2D<double>& mask, const ThermalImage& image,
                                        std::span<const TargetBox> boxes, double rho, double gray,
                                        const AugmentationDraw& draw, const Grid2D<double>& image_grad) {
  detail::require(image.same_shape(image_grad), "image gradient must match the image shape");
  for (double g : image_grad.values())
    detail::require(std::isfinite(g), "image gradient contains NaN or Inf");

  const Grid2D<double> raw = place_mask_sum(mask, boxes, rho, image.rows(), image.cols(), draw);
  Grid2D<double> applied_grad(image.rows(), image.cols(), 0.0);
  for (std::size_t r = 0; r < image.rows(); ++r) {
    for (std::size_t c = 0; c < image.cols(); ++c) {
      const double m_raw = raw(r, c);
      if (m_raw < 0.0 || m_raw > 1.0) continue;
      const double composite = image(r, c) * (1.0 - m_raw) + gray * m_raw;
      if (composite < 0.0 || composite > 1.0) continue;
      applied_grad(r, c) = (gray - image(r, c)) * image_grad(r, c);
    }
  }
  return place_mask_adjoint(applied_grad, boxes, rho, mask.rows(), mask.cols(), draw);
}

}  // namespace fsf

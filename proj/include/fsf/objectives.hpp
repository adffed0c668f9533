#pragma once

// Differentiable detection objectives: image -> scored proposals, plus the
// adjoint from per-proposal score gradients back to image gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/grid.hpp"
#include "fsf/parallel.hpp"
#include "fsf/patch_pipeline.hpp"

namespace fsf {

struct Proposal {
  TargetBox box;
  double score = 0.0;  // confidence in [0, 1]
};

/// Contract for a detector the attack can differentiate through.
///
/// `rescore` evaluates scores for fixed proposal boxes, so that `backward` is
/// the exact adjoint of `rescore` with the boxes held constant.
class DetectionObjective {
 public:
  virtual ~DetectionObjective() = default;

  virtual std::string name() const = 0;
  virtual std::vector<Proposal> detect(const ThermalImage& image) const = 0;
  virtual std::vector<double> rescore(const ThermalImage& image, std::span<const Proposal> proposals) const = 0;
  virtual Grid2D<double> backward(const ThermalImage& image, std::span<const Proposal> proposals,
                                  std::span<const double> score_grad) const = 0;
};

inline double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

namespace detail {

struct PixelRange {
  std::size_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;
  std::size_t count() const noexcept { return (r1 - r0) * (c1 - c0); }
};

/// Pixels whose centers fall in [left, right) x [top, bottom), clipped.
inline PixelRange pixels_in_box(const TargetBox& box, std::size_t rows, std::size_t cols) {
  auto lo = [](double edge, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(std::ceil(edge - 0.5), 0.0, static_cast<double>(n)));
  };
  PixelRange range{lo(box.top(), rows), lo(box.bottom(), rows), lo(box.left(), cols), lo(box.right(), cols)};
  range.r1 = std::max(range.r1, range.r0);
  range.c1 = std::max(range.c1, range.c0);
  return range;
}

inline void check_score_grad(std::span<const Proposal> proposals, std::span<const double> score_grad) {
  require(proposals.size() == score_grad.size(), "one score gradient per proposal is required");
}

}  // namespace detail

/// Proposals are the configured boxes; s = sigmoid(slope (mean(I in box) - offset)).
class MeanIntensityObjective final : public DetectionObjective {
 public:
  explicit MeanIntensityObjective(std::vector<TargetBox> boxes, double slope = 12.0, double offset = 0.35)
      : boxes_(std::move(boxes)), slope_(slope), offset_(offset) {}

  std::string name() const override { return "mean_intensity"; }

  std::vector<Proposal> detect(const ThermalImage& image) const override {
    std::vector<Proposal> out;
    out.reserve(boxes_.size());
    for (const TargetBox& box : boxes_) out.push_back({box, score(image, box)});
    return out;
  }

  std::vector<double> rescore(const ThermalImage& image, std::span<const Proposal> proposals) const override {
    std::vector<double> out;
    out.reserve(proposals.size());
    for (const Proposal& p : proposals) out.push_back(score(image, p.box));
    return out;
  }

  Grid2D<double> backward(const ThermalImage& image, std::span<const Proposal> proposals,
                          std::span<const double> score_grad) const override {
    detail::check_score_grad(proposals, score_grad);
    Grid2D<double> grad(image.rows(), image.cols(), 0.0);
    for (std::size_t p = 0; p < proposals.size(); ++p) {
      if (score_grad[p] == 0.0) continue;
      const auto range = pixel_range(image, proposals[p].box);
      const double s = score(image, proposals[p].box);
      const double d = score_grad[p] * s * (1.0 - s) * slope_ / static_cast<double>(range.count());
      for (std::size_t r = range.r0; r < range.r1; ++r)
        for (std::size_t c = range.c0; c < range.c1; ++c) grad(r, c) += d;
    }
    return grad;
  }

 private:
  detail::PixelRange pixel_range(const ThermalImage& image, const TargetBox& box) const {
    const auto range = detail::pixels_in_box(box, image.rows(), image.cols());
    detail::require(range.count() > 0, "proposal box covers no pixel centers");
    return range;
  }

  double score(const ThermalImage& image, const TargetBox& box) const {
    const auto range = pixel_range(image, box);
    double sum = 0.0;
    for (std::size_t r = range.r0; r < range.r1; ++r)
      for (std::size_t c = range.c0; c < range.c1; ++c) sum += image(r, c);
    return sigmoid(slope_ * (sum / static_cast<double>(range.count()) - offset_));
  }

  std::vector<TargetBox> boxes_;
  double slope_;
  double offset_;
};

struct TemplateOptions {
  std::vector<double> scales{0.8, 1.0, 1.25};
  std::size_t stride = 4;
  std::size_t top_k = 100;
  double slope = 8.0;
  double offset = -4.0;
  double variance_floor = 1e-6;
};

/// Sliding-window normalized cross-correlation against a fixed template at
/// several scales. Proposals are the top-k local maxima of the NCC maps,
/// scored s = sigmoid(slope NCC + offset).
///
/// `with_baseline` precomputes the NCC maps of a reference scene; detection on
/// an image that differs from it only locally then recomputes just the windows
/// touching the changed pixels. Each window is always evaluated by the same
/// loop, so cached and uncached results are bit-identical.
class TemplateCorrelationObjective final : public DetectionObjective {
 public:
  TemplateCorrelationObjective(const Grid2D<double>& templ, TemplateOptions options = {},
                               Parallelism par = {})
      : options_(std::move(options)), par_(par) {
    detail::require(templ.rows() >= 2 && templ.cols() >= 2, "template must be at least 2x2");
    detail::require(!options_.scales.empty(), "at least one template scale is required");
    detail::require(options_.stride >= 1 && options_.top_k >= 1, "stride and top_k must be positive");
    for (double s : options_.scales) levels_.push_back(make_level(templ, s));
  }

  std::string name() const override { return "template"; }

  TemplateCorrelationObjective with_baseline(const ThermalImage& reference) const {
    TemplateCorrelationObjective copy = *this;
    auto cache = std::make_shared<Baseline>();
    cache->image = reference;
    for (std::size_t l = 0; l < levels_.size(); ++l) cache->maps.push_back(ncc_map(reference, l, nullptr));
    copy.baseline_ = std::move(cache);
    return copy;
  }

  std::vector<Proposal> detect(const ThermalImage& image) const override {
    const Baseline* base = nullptr;
    if (baseline_ && baseline_->image.same_shape(image)) base = baseline_.get();

    struct Peak {
      double ncc;
      std::size_t level, row, col;
    };
    std::vector<Peak> peaks;
    const Region changed = base != nullptr ? changed_region(image, base->image) : Region{};
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      const Grid2D<double> map = ncc_map(image, l, base, changed);
      const auto nr = static_cast<std::ptrdiff_t>(map.rows());
      const auto nc = static_cast<std::ptrdiff_t>(map.cols());
      for (std::ptrdiff_t i = 0; i < nr; ++i) {
        for (std::ptrdiff_t j = 0; j < nc; ++j) {
          const double v = map(i, j);
          bool is_peak = true;
          for (std::ptrdiff_t di = -1; di <= 1 && is_peak; ++di) {
            for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
              if (di == 0 && dj == 0) continue;
              const std::ptrdiff_t ii = i + di, jj = j + dj;
              if (ii < 0 || jj < 0 || ii >= nr || jj >= nc) continue;
              const double u = map(ii, jj);
              // Plateaus keep their first cell in raster order.
              const bool earlier = di < 0 || (di == 0 && dj < 0);
              if (u > v || (earlier && u == v)) {
                is_peak = false;
                break;
              }
            }
          }
          if (is_peak) peaks.push_back({v, l, static_cast<std::size_t>(i), static_cast<std::size_t>(j)});
        }
      }
    }
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
      if (a.ncc != b.ncc) return a.ncc > b.ncc;
      return std::tie(a.level, a.row, a.col) < std::tie(b.level, b.row, b.col);
    });
    if (peaks.size() > options_.top_k) peaks.resize(options_.top_k);

    std::vector<Proposal> out;
    out.reserve(peaks.size());
    for (const Peak& p : peaks) {
      const Level& lv = levels_[p.level];
      const auto top = static_cast<double>(p.row * options_.stride);
      const auto left = static_cast<double>(p.col * options_.stride);
      out.push_back({TargetBox::from_top_left(left, top, static_cast<double>(lv.cols),
                                              static_cast<double>(lv.rows)),
                     score_of(p.ncc)});
    }
    return out;
  }

  std::vector<double> rescore(const ThermalImage& image, std::span<const Proposal> proposals) const override {
    std::vector<double> out;
    out.reserve(proposals.size());
    for (const Proposal& p : proposals) {
      const auto [level, row, col] = locate(image, p.box);
      out.push_back(score_of(window_ncc(image, level, row, col)));
    }
    return out;
  }

  Grid2D<double> backward(const ThermalImage& image, std::span<const Proposal> proposals,
                          std::span<const double> score_grad) const override {
    detail::check_score_grad(proposals, score_grad);
    Grid2D<double> grad(image.rows(), image.cols(), 0.0);
    for (std::size_t p = 0; p < proposals.size(); ++p) {
      if (score_grad[p] == 0.0) continue;
      const auto [level, row, col] = locate(image, proposals[p].box);
      const Level& lv = levels_[level];
      const WindowStats st = window_stats(image, level, row, col);
      const double s = score_of(st.ncc);
      const double d_ncc = score_grad[p] * s * (1.0 - s) * options_.slope;
      const double a = d_ncc / (lv.norm * st.sigma);
      const double b = d_ncc * st.ncc / (st.sigma * st.sigma);
      for (std::size_t tr = 0; tr < lv.rows; ++tr) {
        for (std::size_t tc = 0; tc < lv.cols; ++tc) {
          const double z = image(row + tr, col + tc) - st.mean;
          grad(row + tr, col + tc) += a * lv.zero_mean(tr, tc) - b * z;
        }
      }
    }
    return grad;
  }

  const TemplateOptions& options() const noexcept { return options_; }

 private:
  struct Level {
    std::size_t rows = 0, cols = 0;
    Grid2D<double> zero_mean;
    double norm = 0.0;
  };

  struct Baseline {
    ThermalImage image;
    std::vector<Grid2D<double>> maps;
  };

  struct WindowStats {
    double ncc, mean, sigma;
  };

  static Level make_level(const Grid2D<double>& templ, double scale) {
    detail::require(scale > 0.0, "template scales must be positive");
    Level lv;
    lv.rows = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(scale * templ.rows())));
    lv.cols = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(scale * templ.cols())));
    lv.zero_mean = Grid2D<double>(lv.rows, lv.cols);
    const double sy = static_cast<double>(templ.rows()) / static_cast<double>(lv.rows);
    const double sx = static_cast<double>(templ.cols()) / static_cast<double>(lv.cols);
    for (std::size_t r = 0; r < lv.rows; ++r) {
      for (std::size_t c = 0; c < lv.cols; ++c) {
        const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(templ.rows() - 1));
        const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0,
                                     static_cast<double>(templ.cols() - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t y1 = std::min(y0 + 1, templ.rows() - 1);
        const std::size_t x1 = std::min(x0 + 1, templ.cols() - 1);
        const double ay = fy - static_cast<double>(y0);
        const double ax = fx - static_cast<double>(x0);
        lv.zero_mean(r, c) = (1 - ay) * ((1 - ax) * templ(y0, x0) + ax * templ(y0, x1)) +
                             ay * ((1 - ax) * templ(y1, x0) + ax * templ(y1, x1));
      }
    }
    const double m = mean(lv.zero_mean);
    double sq = 0.0;
    for (double& v : lv.zero_mean.values()) {
      v -= m;
      sq += v * v;
    }
    lv.norm = std::sqrt(sq);
    detail::require(lv.norm > 0.0, "template must not be constant");
    return lv;
  }

  double score_of(double ncc) const noexcept { return sigmoid(options_.slope * ncc + options_.offset); }

  std::size_t window_rows(const ThermalImage& image, std::size_t level) const {
    const Level& lv = levels_[level];
    return image.rows() < lv.rows ? 0 : (image.rows() - lv.rows) / options_.stride + 1;
  }
  std::size_t window_cols(const ThermalImage& image, std::size_t level) const {
    const Level& lv = levels_[level];
    return image.cols() < lv.cols ? 0 : (image.cols() - lv.cols) / options_.stride + 1;
  }

  WindowStats window_stats(const ThermalImage& image, std::size_t level, std::size_t row,
                           std::size_t col) const {
    const Level& lv = levels_[level];
    double s_ti = 0.0, s_i = 0.0, s_ii = 0.0;
    for (std::size_t tr = 0; tr < lv.rows; ++tr) {
      const double* px = image.row(row + tr).data() + col;
      const double* tp = lv.zero_mean.row(tr).data();
      for (std::size_t tc = 0; tc < lv.cols; ++tc) {
        s_ti += tp[tc] * px[tc];
        s_i += px[tc];
        s_ii += px[tc] * px[tc];
      }
    }
    const double n = static_cast<double>(lv.rows * lv.cols);
    const double centered = std::max(s_ii - s_i * s_i / n, 0.0);
    const double sigma = std::sqrt(centered + options_.variance_floor);
    return {s_ti / (lv.norm * sigma), s_i / n, sigma};
  }

  double window_ncc(const ThermalImage& image, std::size_t level, std::size_t row, std::size_t col) const {
    return window_stats(image, level, row, col).ncc;
  }

  /// Bounding box [r0, r1) x [c0, c1) of pixels that differ from the baseline.
  struct Region {
    std::size_t r0, r1, c0, c1;
  };

  static Region changed_region(const ThermalImage& image, const ThermalImage& reference) {
    Region d{image.rows(), 0, image.cols(), 0};
    for (std::size_t r = 0; r < image.rows(); ++r) {
      for (std::size_t c = 0; c < image.cols(); ++c) {
        if (image(r, c) != reference(r, c)) {
          d.r0 = std::min(d.r0, r);
          d.r1 = std::max(d.r1, r + 1);
          d.c0 = std::min(d.c0, c);
          d.c1 = std::max(d.c1, c + 1);
        }
      }
    }
    return d;
  }

  Grid2D<double> ncc_map(const ThermalImage& image, std::size_t level, const Baseline* base,
                         const Region& changed = {}) const {
    const Level& lv = levels_[level];
    const std::size_t nr = window_rows(image, level);
    const std::size_t nc = window_cols(image, level);
    Grid2D<double> map(nr, nc, 0.0);

    parallel_for(nr, par_, [&](std::size_t i) {
      const std::size_t row = i * options_.stride;
      for (std::size_t j = 0; j < nc; ++j) {
        const std::size_t col = j * options_.stride;
        if (base != nullptr) {
          const bool touched = row < changed.r1 && row + lv.rows > changed.r0 && col < changed.c1 &&
                               col + lv.cols > changed.c0;
          if (!touched) {
            map(i, j) = base->maps[level](i, j);
            continue;
          }
        }
        map(i, j) = window_ncc(image, level, row, col);
      }
    });
    return map;
  }

  std::tuple<std::size_t, std::size_t, std::size_t> locate(const ThermalImage& image,
                                                           const TargetBox& box) const {
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      const Level& lv = levels_[l];
      if (box.w != static_cast<double>(lv.cols) || box.h != static_cast<double>(lv.rows)) continue;
      const double top = box.top();
      const double left = box.left();
      if (top < 0.0 || left < 0.0 || top != std::floor(top) || left != std::floor(left)) break;
      const auto row = static_cast<std::size_t>(top);
      const auto col = static_cast<std::size_t>(left);
      if (row + lv.rows > image.rows() || col + lv.cols > image.cols()) break;
      return {l, row, col};
    }
    throw InvalidInput("proposal box does not match a template window");
  }

  TemplateOptions options_;
  Parallelism par_;
  std::vector<Level> levels_;
  std::shared_ptr<const Baseline> baseline_;
};

struct MaskMatchResult {
  double loss = 0.0;
  Grid2D<double> gradient;
};

/// Mean squared error between a shape mask and a reference mask.
class MaskMatchObjective {
 public:
  explicit MaskMatchObjective(Grid2D<double> reference) : reference_(std::move(reference)) {
    detail::require(reference_.rows() >= 2 && reference_.cols() >= 2, "reference mask must be at least 2x2");
  }

  const Grid2D<double>& reference() const noexcept { return reference_; }

  MaskMatchResult evaluate(const Grid2D<double>& mask) const {
    detail::require(mask.same_shape(reference_), "mask shape does not match the reference");
    const auto n = static_cast<double>(mask.size());
    MaskMatchResult out{0.0, Grid2D<double>(mask.rows(), mask.cols())};
    auto m = mask.values();
    auto ref = reference_.values();
    auto g = out.gradient.values();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double diff = m[i] - ref[i];
      out.loss += diff * diff;
      g[i] = 2.0 * diff / n;
    }
    out.loss /= n;
    return out;
  }

 private:
  Grid2D<double> reference_;
};

}  // namespace fsf

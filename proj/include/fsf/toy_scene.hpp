#pragma once

// Synthetic thermal scenes for desk-scale attack experiments: a cool textured
// background with warm pedestrian-shaped blobs stamped from the detector's own
// template.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "fsf/grid.hpp"
#include "fsf/patch_pipeline.hpp"

namespace fsf::toy {

inline constexpr std::size_t kTemplateRows = 48;
inline constexpr std::size_t kTemplateCols = 20;
inline constexpr std::size_t kSceneSize = 320;

/// Vertical Gaussian blob, peak 1 at the center, quantized to 8 bits.
inline Grid2D<double> pedestrian_template(double sx = 4.0, double sy = 11.0) {
  Grid2D<double> t(kTemplateRows, kTemplateCols);
  const double cy = 0.5 * static_cast<double>(kTemplateRows - 1);
  const double cx = 0.5 * static_cast<double>(kTemplateCols - 1);
  for (std::size_t r = 0; r < kTemplateRows; ++r) {
    for (std::size_t c = 0; c < kTemplateCols; ++c) {
      const double dy = (static_cast<double>(r) - cy) / sy;
      const double dx = (static_cast<double>(c) - cx) / sx;
      const double v = std::exp(-0.5 * (dx * dx + dy * dy));
      t(r, c) = std::round(255.0 * v) / 255.0;
    }
  }
  return t;
}

struct Scene {
  ThermalImage image;
  std::vector<TargetBox> targets;
};

struct SceneOptions {
  std::size_t min_targets = 1;
  std::size_t max_targets = 3;
  double background = 0.22;
  double texture = 0.04;
  double noise = 0.015;
  double warmth = 0.65;
};

/// Deterministic scene for a seed. Targets never overlap and keep a margin
/// from the border; pixel values are quantized to 8 bits so the scene
/// survives a PGM round trip unchanged.
inline Scene make_scene(std::uint64_t seed, const Grid2D<double>& templ, const SceneOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  };

  const std::size_t n = kSceneSize;
  Scene scene{ThermalImage(n, n), {}};

  // Background: a few low-frequency plane waves plus fine noise.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i) {
    const double angle = uniform(0.0, std::numbers::pi);
    const double freq = uniform(0.01, 0.05);
    waves.push_back({freq * std::cos(angle), freq * std::sin(angle), uniform(0.0, 2.0 * std::numbers::pi),
                     uniform(0.5, 1.0)});
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double tex = 0.0;
      for (const Wave& w : waves)
        tex += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * c + w.fy * r) + w.phase);
      scene.image(r, c) = opt.background + 0.25 * opt.texture * tex + uniform(-opt.noise, opt.noise);
    }
  }

  const std::size_t span = opt.max_targets - opt.min_targets + 1;
  const std::size_t count = opt.min_targets + static_cast<std::size_t>(rng() % span);
  const std::size_t margin = 24;
  for (std::size_t placed = 0, attempts = 0; placed < count && attempts < 1000; ++attempts) {
    const auto top = static_cast<std::size_t>(uniform(margin, n - margin - templ.rows()));
    const auto left = static_cast<std::size_t>(uniform(margin, n - margin - templ.cols()));
    const TargetBox box = TargetBox::from_top_left(static_cast<double>(left), static_cast<double>(top),
                                                   static_cast<double>(templ.cols()),
                                                   static_cast<double>(templ.rows()));
    const bool clear = std::none_of(scene.targets.begin(), scene.targets.end(), [&](const TargetBox& o) {
      return std::abs(o.cx - box.cx) < o.w + 16.0 && std::abs(o.cy - box.cy) < o.h + 16.0;
    });
    if (!clear) continue;
    for (std::size_t r = 0; r < templ.rows(); ++r)
      for (std::size_t c = 0; c < templ.cols(); ++c) scene.image(top + r, left + c) += opt.warmth * templ(r, c);
    scene.targets.push_back(box);
    ++placed;
  }

  for (double& v : scene.image.values()) v = std::round(255.0 * std::clamp(v, 0.0, 1.0)) / 255.0;
  return scene;
}

}  // namespace fsf::toy

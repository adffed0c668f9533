#pragma once

// Composite attack loss L = L_adv + alpha L_area + beta L_reg, its gradient
// through the full raster -> place -> composite -> detect chain, and the Adam
// loop that minimizes it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/fourier_shape.hpp"
#include "fsf/grid.hpp"
#include "fsf/objectives.hpp"
#include "fsf/parallel.hpp"
#include "fsf/patch_pipeline.hpp"
#include "fsf/winding_raster.hpp"

namespace fsf {

struct EarlyStop {
  double score_threshold = 0.1;
  std::size_t consecutive_iters = 10;  // 0 disables early stopping
};

/// One-shot learning-rate drop the first time the score falls below a trigger.
struct LrSchedule {
  double trigger_conf = 0.2;
  double lr_factor = 0.2;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AttackConfig {
  int K = 6;
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.1;
  double learning_rate = 0.002;
  std::size_t max_iters = 1000;
  EarlyStop early_stop;
  std::optional<LrSchedule> schedule;
  GridSpec grid{200, 200};
  CurveSampling sampling{1000};
  PlacementParams placement;
  bool augment = false;
  AugmentationRanges augmentation;
  double association_iou = 0.5;
  std::uint64_t seed = 0;
  double init_fraction = 0.8;
  AdamParams adam;

  void validate() const {
    detail::require(K >= 1, "K must be >= 1");
    detail::require(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be non-negative");
    detail::require(gamma > 0.0, "gamma must be positive");
    detail::require(learning_rate > 0.0, "learning rate must be positive");
    detail::require(early_stop.score_threshold >= 0.0 && early_stop.score_threshold <= 1.0,
                    "early-stop threshold must be in [0, 1]");
    detail::require(association_iou >= 0.0 && association_iou <= 1.0, "association IoU must be in [0, 1]");
    if (schedule) {
      detail::require(schedule->trigger_conf >= 0.0 && schedule->trigger_conf <= 1.0,
                      "schedule trigger must be in [0, 1]");
      detail::require(schedule->lr_factor > 0.0, "schedule factor must be positive");
    }
    detail::require(init_fraction > 0.0 && init_fraction <= 1.0, "init fraction must be in (0, 1]");
    placement.validate();
    augmentation.validate();
  }
};

struct LossBreakdown {
  double total = 0.0;
  double adv = 0.0;
  double area = 0.0;
  double reg = 0.0;
  double max_associated_score = 0.0;
};

struct LossEvaluation {
  LossBreakdown loss;
  CoefficientGradient gradient;
  std::vector<double> target_max_scores;
};

/// Indices of the proposals associated with each target (IoU >= threshold).
/// A proposal may belong to several targets.
inline std::vector<std::vector<std::size_t>> associate_proposals(std::span<const Proposal> proposals,
                                                                 std::span<const TargetBox> targets,
                                                                 double iou_threshold) {
  std::vector<std::vector<std::size_t>> out(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t)
    for (std::size_t p = 0; p < proposals.size(); ++p)
      if (iou(proposals[p].box, targets[t]) >= iou_threshold) out[t].push_back(p);
  return out;
}

inline constexpr double kMaxScore = 1.0 - 1e-7;

struct AdvLoss {
  double value = 0.0;
  std::vector<double> gradient;  // dL/ds_i
};

/// -sum log(1 - s_i), with s clamped to at most 1 - 1e-7.
inline AdvLoss adv_loss(std::span<const double> scores) {
  AdvLoss out;
  out.gradient.reserve(scores.size());
  for (double s : scores) {
    const double clamped = std::min(s, kMaxScore);
    out.value -= std::log1p(-clamped);
    out.gradient.push_back(1.0 / (1.0 - clamped));
  }
  return out;
}

struct AreaLoss {
  double value = 0.0;
  Grid2D<double> gradient;
};

inline AreaLoss area_loss(const Grid2D<double>& mask) {
  detail::require(!mask.empty(), "mask must not be empty");
  return {mean(mask), Grid2D<double>(mask.rows(), mask.cols(), 1.0 / static_cast<double>(mask.size()))};
}

/// Highest associated proposal score per target, 0 when nothing associates.
inline std::vector<double> target_max_scores(std::span<const Proposal> proposals,
                                             std::span<const TargetBox> targets, double iou_threshold) {
  const auto assoc = associate_proposals(proposals, targets, iou_threshold);
  std::vector<double> out(targets.size(), 0.0);
  for (std::size_t t = 0; t < targets.size(); ++t)
    for (std::size_t p : assoc[t]) out[t] = std::max(out[t], proposals[p].score);
  return out;
}

namespace detail {

inline void require_finite_field(const WindingField& field) {
  for (double v : field.values())
    if (!std::isfinite(v)) throw NumericalAbort("winding field is not finite; the shape has diverged");
}

inline void add_scaled(CoefficientGradient& into, const CoefficientGradient& g, double scale) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * g[i];
}

}  // namespace detail

/// Full forward and adjoint pass for an attack on `targets` in `image`.
/// Draws one augmentation sample from `rng` when augmentation is enabled.
inline LossEvaluation total_loss(const ThermalImage& image, std::span<const TargetBox> targets,
                                 const FourierCoefficients& theta, const DetectionObjective& objective,
                                 const AttackConfig& config, std::mt19937_64& rng, Parallelism par = {}) {
  detail::require(theta.order() == config.K, "theta order does not match config K");
  detail::require(!targets.empty(), "at least one target box is required");

  const WindingField field = winding_field(theta, config.grid, config.sampling, par);
  detail::require_finite_field(field);
  const ShapeMask mask = normalize_mask(field);
  const AugmentationDraw draw = config.augment ? sample_augmentation(config.augmentation, rng) : AugmentationDraw{};
  const double gray = effective_gray(config.placement.gray, draw);
  const double rho = config.placement.rho;

  const Grid2D<double> applied = place_mask(mask, targets, rho, image.rows(), image.cols(), draw);
  const ThermalImage attacked = apply_patch(image, applied, gray);
  const std::vector<Proposal> proposals = objective.detect(attacked);
  const auto assoc = associate_proposals(proposals, targets, config.association_iou);

  LossEvaluation out;
  out.target_max_scores.assign(targets.size(), 0.0);
  std::vector<double> score_grad(proposals.size(), 0.0);
  bool any_associated = false;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (std::size_t p : assoc[t]) {
      const double s = proposals[p].score;
      const AdvLoss term = adv_loss(std::span<const double>(&s, 1));
      out.loss.adv += term.value;
      score_grad[p] += term.gradient[0];
      out.target_max_scores[t] = std::max(out.target_max_scores[t], s);
      any_associated = true;
    }
  }
  out.loss.max_associated_score =
      *std::max_element(out.target_max_scores.begin(), out.target_max_scores.end());

  Grid2D<double> mask_grad(mask.rows(), mask.cols(), 0.0);
  if (any_associated) {
    const Grid2D<double> image_grad = objective.backward(attacked, proposals, score_grad);
    mask_grad = pipeline_backward(mask, image, targets, rho, gray, draw, image_grad);
  }

  const AreaLoss area = area_loss(mask);
  out.loss.area = area.value;
  if (config.alpha != 0.0) {
    auto g = mask_grad.values();
    auto a = area.gradient.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += config.alpha * a[i];
  }

  out.gradient = rasterize_backward(theta, config.grid, config.sampling, field, mask_grad, par);
  const RegLoss reg = reg_loss(theta, config.gamma);
  out.loss.reg = reg.value;
  if (config.beta != 0.0) detail::add_scaled(out.gradient, reg.gradient, config.beta);

  out.loss.total = out.loss.adv + config.alpha * out.loss.area + config.beta * out.loss.reg;
  return out;
}

/// Shape-fitting variant: the attack term is the mask MSE against a reference.
inline LossEvaluation total_loss(const MaskMatchObjective& objective, const FourierCoefficients& theta,
                                 const AttackConfig& config, Parallelism par = {}) {
  detail::require(theta.order() == config.K, "theta order does not match config K");
  const WindingField field = winding_field(theta, config.grid, config.sampling, par);
  detail::require_finite_field(field);
  const ShapeMask mask = normalize_mask(field);
  MaskMatchResult fit = objective.evaluate(mask);

  LossEvaluation out;
  out.loss.adv = fit.loss;
  const AreaLoss area = area_loss(mask);
  out.loss.area = area.value;
  if (config.alpha != 0.0) {
    auto g = fit.gradient.values();
    auto a = area.gradient.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += config.alpha * a[i];
  }
  out.gradient = rasterize_backward(theta, config.grid, config.sampling, field, fit.gradient, par);
  const RegLoss reg = reg_loss(theta, config.gamma);
  out.loss.reg = reg.value;
  if (config.beta != 0.0) detail::add_scaled(out.gradient, reg.gradient, config.beta);
  out.loss.total = out.loss.adv + config.alpha * out.loss.area + config.beta * out.loss.reg;
  return out;
}

struct TraceEntry {
  std::size_t iter = 0;
  LossBreakdown loss;
  double learning_rate = 0.0;
};

enum class StopReason { early_stop, max_iters };

inline const char* to_string(StopReason r) noexcept {
  return r == StopReason::early_stop ? "early_stop" : "max_iters";
}

struct OptimizeResult {
  FourierCoefficients theta;
  std::vector<TraceEntry> trace;
  StopReason stop_reason = StopReason::max_iters;

  std::size_t iterations() const noexcept { return trace.size(); }
  const LossBreakdown& final_loss() const { return trace.back().loss; }
};

/// Thrown when the loss or gradient stops being finite; carries the trace so far.
class OptimizationAborted : public NumericalAbort {
 public:
  OptimizationAborted(const std::string& what, std::vector<TraceEntry> trace)
      : NumericalAbort(what), trace_(std::move(trace)) {}
  const std::vector<TraceEntry>& trace() const noexcept { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

class Adam {
 public:
  Adam(std::size_t n, AdamParams params) : params_(params), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> x, std::span<const double> grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = params_.beta1 * m_[i] + (1.0 - params_.beta1) * grad[i];
      v_[i] = params_.beta2 * v_[i] + (1.0 - params_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      x[i] -= lr * m_hat / (std::sqrt(v_hat) + params_.epsilon);
    }
  }

 private:
  AdamParams params_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

/// Adam loop over the 2(2K+1) real parameters.
///
/// `evaluate(theta, rng)` returns a LossEvaluation. Each iteration evaluates,
/// records a trace entry, then either stops or updates. The run stops after
/// max_iters evaluations, or once the max associated score has been below the
/// early-stop threshold for the configured number of consecutive iterations;
/// the returned theta is the one evaluated last.
template <class Evaluate>
OptimizeResult optimize_with(FourierCoefficients theta, const AttackConfig& config, Evaluate&& evaluate) {
  config.validate();
  detail::require(config.max_iters >= 1, "max_iters must be >= 1");
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(theta.parameter_count(), config.adam);
  std::vector<double> params = theta.to_flat();
  double lr = config.learning_rate;
  bool schedule_fired = false;
  std::size_t below = 0;

  OptimizeResult result{theta, {}, StopReason::max_iters};
  for (std::size_t it = 0; it < config.max_iters; ++it) {
    const FourierCoefficients current = FourierCoefficients::from_flat(config.K, params);
    LossEvaluation eval;
    try {
      eval = evaluate(current, rng);
    } catch (const OptimizationAborted&) {
      throw;
    } catch (const NumericalAbort& e) {
      throw OptimizationAborted(std::string(e.what()) + " at iteration " + std::to_string(it),
                                std::move(result.trace));
    }
    result.theta = current;

    const bool finite = std::isfinite(eval.loss.total) &&
                        std::all_of(eval.gradient.begin(), eval.gradient.end(),
                                    [](double g) { return std::isfinite(g); });
    if (config.schedule && !schedule_fired && eval.loss.max_associated_score < config.schedule->trigger_conf) {
      lr *= config.schedule->lr_factor;
      schedule_fired = true;
    }
    result.trace.push_back({it, eval.loss, lr});
    if (!finite) {
      std::ostringstream msg;
      msg << "non-finite loss or gradient at iteration " << it << " (total=" << eval.loss.total
          << ", adv=" << eval.loss.adv << ", area=" << eval.loss.area << ", reg=" << eval.loss.reg << ")";
      throw OptimizationAborted(msg.str(), std::move(result.trace));
    }

    if (config.early_stop.consecutive_iters > 0) {
      below = eval.loss.max_associated_score < config.early_stop.score_threshold ? below + 1 : 0;
      if (below >= config.early_stop.consecutive_iters) {
        result.stop_reason = StopReason::early_stop;
        return result;
      }
    }
    if (it + 1 < config.max_iters) adam.step(params, eval.gradient, lr);
  }
  return result;
}

/// Full-grid placement box used to seed the shape.
inline FourierCoefficients initial_theta(const AttackConfig& config) {
  return init_coefficients(ShapeBox{}, config.K, config.seed, {config.init_fraction, config.gamma});
}

/// Attack loop against a detection objective on one scene.
inline OptimizeResult optimize(const ThermalImage& image, std::span<const TargetBox> targets,
                               const DetectionObjective& objective, const AttackConfig& config,
                               Parallelism par = {}) {
  return optimize_with(initial_theta(config), config,
                       [&](const FourierCoefficients& theta, std::mt19937_64& rng) {
                         return total_loss(image, targets, theta, objective, config, rng, par);
                       });
}

/// Shape fitting against a reference mask. The grid follows the reference and
/// early stopping is off, since there is no detection score to watch.
inline OptimizeResult reconstruct(const MaskMatchObjective& objective, AttackConfig config,
                                  Parallelism par = {}) {
  config.grid = GridSpec(objective.reference().rows(), objective.reference().cols());
  config.early_stop.consecutive_iters = 0;
  return optimize_with(initial_theta(config), config,
                       [&](const FourierCoefficients& theta, std::mt19937_64&) {
                         return total_loss(objective, theta, config, par);
                       });
}

/// Intersection over union of two binary masks (value > 0.5 counts as set).
inline double mask_iou(const Grid2D<double>& a, const Grid2D<double>& b) {
  detail::require(a.same_shape(b), "mask shapes differ");
  std::size_t inter = 0, uni = 0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const bool x = av[i] > 0.5;
    const bool y = bv[i] > 0.5;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct AsrScene {
  ThermalImage image;
  std::vector<TargetBox> targets;
  FourierCoefficients theta;
};

struct TargetEvaluation {
  double clean_max = 0.0;
  double patched_max = 0.0;
};

struct AsrReport {
  std::vector<double> thresholds;
  std::vector<double> asr;
  std::vector<TargetEvaluation> targets;
  double mean_confidence_drop = 0.0;
  bool vacuous = false;  // no clean target reached the smallest threshold
};

/// ASR(tau) = fraction of targets whose patched max associated score is < tau.
/// Patches are applied without augmentation.
inline AsrReport evaluate_asr(std::span<const AsrScene> scenes, const DetectionObjective& objective,
                              const AttackConfig& config, std::span<const double> thresholds,
                              Parallelism par = {}) {
  for (double tau : thresholds)
    detail::require(tau > 0.0 && tau < 1.0, "ASR thresholds must be in (0, 1)");

  AsrReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  for (const AsrScene& scene : scenes) {
    const auto clean = target_max_scores(objective.detect(scene.image), scene.targets, config.association_iou);
    const ShapeMask mask = rasterize(scene.theta, config.grid, config.sampling, par);
    const Grid2D<double> applied =
        place_mask(mask, scene.targets, config.placement.rho, scene.image.rows(), scene.image.cols());
    const ThermalImage attacked = apply_patch(scene.image, applied, config.placement.gray);
    const auto patched = target_max_scores(objective.detect(attacked), scene.targets, config.association_iou);
    for (std::size_t t = 0; t < scene.targets.size(); ++t) report.targets.push_back({clean[t], patched[t]});
  }

  const double min_tau =
      thresholds.empty() ? 0.0 : *std::min_element(thresholds.begin(), thresholds.end());
  report.vacuous = !report.targets.empty() &&
                   std::all_of(report.targets.begin(), report.targets.end(),
                               [&](const TargetEvaluation& t) { return t.clean_max < min_tau; });
  const auto n = static_cast<double>(report.targets.size());
  for (double tau : thresholds) {
    std::size_t hits = 0;
    for (const auto& t : report.targets) hits += t.patched_max < tau ? 1 : 0;
    report.asr.push_back(report.targets.empty() ? 0.0 : static_cast<double>(hits) / n);
  }
  double drop = 0.0;
  for (const auto& t : report.targets) drop += t.clean_max - t.patched_max;
  report.mean_confidence_drop = report.targets.empty() ? 0.0 : drop / n;
  return report;
}

}  // namespace fsf

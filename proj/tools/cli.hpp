#pragma once

// Command-line front end: optimize, rasterize, reconstruct, eval and bench.
//
// Every command accepts --config with a flat JSON object whose keys are flag
// names; flags given on the command line win over file values. Exit codes are
// 0 on success, 2 on invalid input and 3 when optimization hits a non-finite
// loss.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fsf/fsf.hpp"

namespace fsf::cli {

using json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitNumerical = 3;

namespace detail {

using fsf::detail::require;

inline void require_grid(std::size_t n) { require(n >= 2, "grid must be >= 2"); }

template <class T>
void load_value(const json& j, T& var) {
  var = j.get<T>();
}

template <class T>
void load_value(const json& j, std::optional<T>& var) {
  if (j.is_null())
    var.reset();
  else
    var = j.get<T>();
}

/// Options of one subcommand, indexed by flag name so a config file can fill
/// in whatever the command line left unset.
class FlagTable {
 public:
  explicit FlagTable(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* option(const std::string& name, T& var, const std::string& help) {
    CLI::Option* opt = app_->add_option("--" + name, var, help);
    if constexpr (!is_optional<T>::value) opt->capture_default_str();
    entries_[name] = {opt, [&var](const json& j) { load_value(j, var); }};
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    CLI::Option* opt = app_->add_flag("--" + name, var, help);
    entries_[name] = {opt, [&var](const json& j) { var = j.get<bool>(); }};
    return opt;
  }

  void apply_file(const std::string& path) {
    json doc;
    try {
      doc = json::parse(io::read_text(path));
    } catch (const json::exception& e) {
      throw InvalidInput("malformed config " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw InvalidInput("config file must hold a JSON object");
    for (const auto& [key, value] : doc.items()) {
      auto it = entries_.find(key);
      if (it == entries_.end()) throw InvalidInput("unknown config key \"" + key + "\"");
      if (it->second.opt->count() > 0) continue;
      try {
        it->second.load(value);
      } catch (const json::exception& e) {
        throw InvalidInput("bad value for config key \"" + key + "\": " + e.what());
      }
    }
  }

 private:
  template <class T>
  struct is_optional : std::false_type {};
  template <class T>
  struct is_optional<std::optional<T>> : std::true_type {};

  struct Entry {
    CLI::Option* opt;
    std::function<void(const json&)> load;
  };
  CLI::App* app_;
  std::map<std::string, Entry> entries_;
};

/// Flat mirror of AttackConfig with CLI-friendly scalar fields.
struct AttackFlags {
  int K = 6;
  double rho = 0.6;
  double gray = 0.0;
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.1;
  double lr = 0.002;
  std::size_t max_iters = 1000;
  double early_stop_threshold = 0.1;
  std::size_t early_stop_iters = 10;
  std::size_t grid = 200;
  std::size_t samples = 1000;
  bool augment = false;
  AugmentationRanges ranges;
  double iou = 0.5;
  std::uint64_t seed = 0;
  double init_fraction = 0.8;
  AdamParams adam;
  std::optional<double> schedule_trigger;
  double schedule_factor = 0.2;

  void add_to(FlagTable& t) {
    t.option("K", K, "Fourier order");
    t.option("rho", rho, "patch size relative to the target box");
    t.option("gray", gray, "patch gray value in [0, 1]");
    t.option("alpha", alpha, "area-loss weight");
    t.option("beta", beta, "regularizer weight");
    t.option("gamma", gamma, "harmonic budget relative to the fundamental");
    t.option("lr", lr, "Adam learning rate");
    t.option("max-iters", max_iters, "iteration cap");
    t.option("early-stop-threshold", early_stop_threshold, "score below which an iteration counts as suppressed");
    t.option("early-stop-iters", early_stop_iters, "consecutive suppressed iterations before stopping (0 = off)");
    t.option("grid", grid, "shape grid side length");
    t.option("samples", samples, "curve samples");
    t.flag("augment", augment, "enable placement augmentation");
    t.option("translate-px", ranges.translate_px, "augmentation translation range");
    t.option("rotate-deg", ranges.rotate_deg, "augmentation rotation range");
    t.option("scale-lo", ranges.scale_lo, "augmentation lower scale");
    t.option("scale-hi", ranges.scale_hi, "augmentation upper scale");
    t.option("gray-jitter", ranges.gray_jitter, "augmentation gray jitter");
    t.option("iou", iou, "proposal-target association IoU");
    t.option("seed", seed, "random seed");
    t.option("init-fraction", init_fraction, "initial ellipse size as a fraction of the grid");
    t.option("adam-beta1", adam.beta1, "Adam first-moment decay");
    t.option("adam-beta2", adam.beta2, "Adam second-moment decay");
    t.option("adam-eps", adam.epsilon, "Adam epsilon");
    t.option("schedule-trigger", schedule_trigger, "score that triggers a one-shot LR drop");
    t.option("schedule-factor", schedule_factor, "LR multiplier of that drop");
  }

  AttackConfig build() const {
    require_grid(grid);
    require(samples >= 8, "samples must be >= 8");
    AttackConfig c;
    c.K = K;
    c.placement = {rho, gray};
    c.alpha = alpha;
    c.beta = beta;
    c.gamma = gamma;
    c.learning_rate = lr;
    c.max_iters = max_iters;
    c.early_stop = {early_stop_threshold, early_stop_iters};
    c.grid = GridSpec(grid, grid);
    c.sampling = CurveSampling(samples);
    c.augment = augment;
    c.augmentation = ranges;
    c.association_iou = iou;
    c.seed = seed;
    c.init_fraction = init_fraction;
    c.adam = adam;
    if (schedule_trigger) c.schedule = LrSchedule{*schedule_trigger, schedule_factor};
    c.validate();
    return c;
  }
};

struct DetectorFlags {
  std::string objective = "template";
  std::string templ;
  std::size_t top_k = TemplateOptions{}.top_k;
  std::size_t stride = TemplateOptions{}.stride;

  void add_to(FlagTable& t, bool allow_mask_match) {
    t.option("objective", objective, "detection objective")
        ->check(allow_mask_match ? CLI::IsMember(std::vector<std::string>{"mean_intensity", "template", "mask_match"})
                                 : CLI::IsMember(std::vector<std::string>{"mean_intensity", "template"}));
    t.option("template", templ, "template PGM (default: built-in pedestrian blob)");
    t.option("top-k", top_k, "template detector proposal count");
    t.option("stride", stride, "template detector window stride");
  }

  std::unique_ptr<DetectionObjective> build(const ThermalImage& image, const std::vector<TargetBox>& boxes,
                                            Parallelism par) const {
    require(objective == "mean_intensity" || objective == "template", "unsupported objective " + objective);
    if (objective == "mean_intensity") return std::make_unique<MeanIntensityObjective>(boxes);
    TemplateOptions opt;
    opt.top_k = top_k;
    opt.stride = stride;
    const Grid2D<double> t = templ.empty() ? toy::pedestrian_template() : io::read_pgm(templ);
    return std::make_unique<TemplateCorrelationObjective>(
        TemplateCorrelationObjective(t, opt, par).with_baseline(image));
  }

  json to_json() const {
    return {{"objective", objective}, {"template", templ}, {"top-k", top_k}, {"stride", stride}};
  }
};

inline Grid2D<double> binarize(const Grid2D<double>& m) {
  Grid2D<double> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.values()[i] = m.values()[i] > 0.5 ? 1.0 : 0.0;
  return out;
}

inline void emit_json(const json& doc, const std::string& path, std::ostream& out) {
  const std::string text = doc.dump(2) + "\n";
  if (path.empty())
    out << text;
  else
    io::write_text(path, text);
}

inline json scores_json(const std::vector<double>& v) { return json(v); }

// ------------------------------------------------------------ commands

struct OptimizeCmd {
  AttackFlags attack;
  DetectorFlags detector;
  std::string image, boxes, out_shape, out_mask, trace, report;
  unsigned threads = 0;

  void add_to(FlagTable& t) {
    attack.add_to(t);
    detector.add_to(t, true);
    t.option("image", image, "input image PGM (reference mask for mask_match)")->required();
    t.option("boxes", boxes, "target boxes JSON");
    t.option("out-shape", out_shape, "output coefficient JSON")->required();
    t.option("out-mask", out_mask, "output shape mask PGM");
    t.option("trace", trace, "output loss trace CSV");
    t.option("report", report, "output report JSON (default: standard output)");
    t.option("threads", threads, "worker threads (0 = FSF_THREADS or all cores)");
  }

  int run(std::ostream& out, std::ostream& err) const {
    AttackConfig config = attack.build();
    const Parallelism par{threads};
    const ThermalImage img{io::read_pgm(image)};

    json rep = {{"command", "optimize"}, {"image", image}, {"boxes", boxes}};
    rep.update(detector.to_json());

    std::optional<OptimizeResult> result;
    std::vector<double> clean, patched;
    try {
      if (detector.objective == "mask_match") {
        const Grid2D<double> target = binarize(img);
        require(mean(target) > 0.0, "reference mask is empty");
        result = fsf::reconstruct(MaskMatchObjective(target), config, par);
        config.grid = GridSpec(target.rows(), target.cols());
        config.early_stop.consecutive_iters = 0;
        rep["iou"] = mask_iou(rasterize(result->theta, config.grid, config.sampling, par), target);
      } else {
        require(!boxes.empty(), "--boxes is required for detection objectives");
        const std::vector<TargetBox> targets = io::read_boxes(boxes);
        require(!targets.empty(), "boxes file lists no targets");
        const auto objective = detector.build(img, targets, par);
        result = fsf::optimize(img, targets, *objective, config, par);
        clean = target_max_scores(objective->detect(img), targets, config.association_iou);
        const ShapeMask mask = rasterize(result->theta, config.grid, config.sampling, par);
        const ThermalImage attacked = apply_patch(
            img, place_mask(mask, targets, config.placement.rho, img.rows(), img.cols()), config.placement.gray);
        patched = target_max_scores(objective->detect(attacked), targets, config.association_iou);
      }
    } catch (const OptimizationAborted& e) {
      if (!trace.empty()) io::write_text(trace, io::trace_csv(e.trace()));
      throw;
    }

    io::write_coefficients(out_shape, result->theta);
    if (!out_mask.empty()) io::write_pgm(out_mask, rasterize(result->theta, config.grid, config.sampling, par));
    if (!trace.empty()) io::write_text(trace, io::trace_csv(result->trace));

    rep["config"] = io::config_to_json(config);
    rep["stop_reason"] = to_string(result->stop_reason);
    rep["iterations"] = result->iterations();
    rep["final"] = io::loss_to_json(result->final_loss());
    if (!clean.empty()) {
      rep["clean_max"] = clean;
      rep["patched_max"] = patched;
    }
    emit_json(rep, report, out);
    (void)err;
    return kExitOk;
  }
};

struct RasterizeCmd {
  std::string shape, out_path, svg, raw;
  std::size_t grid = 200;
  std::size_t samples = 1000;
  unsigned threads = 0;

  void add_to(FlagTable& t) {
    t.option("shape", shape, "coefficient JSON")->required();
    t.option("grid", grid, "grid side length");
    t.option("samples", samples, "curve samples");
    t.option("out", out_path, "output mask PGM")->required();
    t.option("svg", svg, "optional SVG outline");
    t.option("raw", raw, "optional float64 dump of the mask");
    t.option("threads", threads, "worker threads (0 = FSF_THREADS or all cores)");
  }

  int run(std::ostream&, std::ostream&) const {
    require_grid(grid);
    require(samples >= 8, "samples must be >= 8");
    const FourierCoefficients theta = io::read_coefficients(shape);
    const CurveSampling sampling(samples);
    const ShapeMask mask = rasterize(theta, GridSpec(grid, grid), sampling, Parallelism{threads});
    io::write_pgm(out_path, mask);
    if (!raw.empty()) io::write_raw_f64(raw, mask);
    if (!svg.empty()) io::write_text(svg, io::curve_svg(eval_curve(theta, sampling)));
    return kExitOk;
  }
};

struct ReconstructCmd {
  AttackFlags attack;
  std::string target, out_path, report, trace;
  unsigned threads = 0;

  ReconstructCmd() {
    attack.alpha = 0.0;
    attack.beta = 0.0;
  }

  void add_to(FlagTable& t) {
    t.option("target", target, "binary target mask PGM")->required();
    t.option("K", attack.K, "Fourier order");
    t.option("iters", attack.max_iters, "iteration count");
    t.option("lr", attack.lr, "Adam learning rate");
    t.option("alpha", attack.alpha, "area-loss weight");
    t.option("beta", attack.beta, "regularizer weight");
    t.option("gamma", attack.gamma, "harmonic budget relative to the fundamental");
    t.option("samples", attack.samples, "curve samples");
    t.option("seed", attack.seed, "random seed");
    t.option("init-fraction", attack.init_fraction, "initial ellipse size as a fraction of the grid");
    t.option("out", out_path, "output coefficient JSON")->required();
    t.option("report", report, "output report JSON (default: standard output)");
    t.option("trace", trace, "output loss trace CSV");
    t.option("threads", threads, "worker threads (0 = FSF_THREADS or all cores)");
  }

  int run(std::ostream& out, std::ostream&) const {
    const Parallelism par{threads};
    const Grid2D<double> mask = binarize(io::read_pgm(target));
    require(mean(mask) > 0.0, "target mask is empty");
    AttackFlags flags = attack;
    flags.grid = std::max<std::size_t>(mask.rows(), 2);
    AttackConfig config = flags.build();

    const OptimizeResult result = fsf::reconstruct(MaskMatchObjective(mask), config, par);
    config.grid = GridSpec(mask.rows(), mask.cols());
    config.early_stop.consecutive_iters = 0;
    io::write_coefficients(out_path, result.theta);
    if (!trace.empty()) io::write_text(trace, io::trace_csv(result.trace));

    const double fit = mask_iou(rasterize(result.theta, config.grid, config.sampling, par), mask);
    json rep = {{"command", "reconstruct"},
                {"target", target},
                {"config", io::config_to_json(config)},
                {"iterations", result.iterations()},
                {"final", io::loss_to_json(result.final_loss())},
                {"iou", fit}};
    emit_json(rep, report, out);
    return kExitOk;
  }
};

struct EvalCmd {
  AttackFlags attack;
  DetectorFlags detector;
  std::string image, boxes, shape, out_path, svg_curve;
  std::vector<double> thresholds{0.1, 0.3, 0.5, 0.7, 0.9};
  unsigned threads = 0;

  void add_to(FlagTable& t) {
    detector.add_to(t, false);
    t.option("image", image, "input image PGM")->required();
    t.option("boxes", boxes, "target boxes JSON")->required();
    t.option("shape", shape, "coefficient JSON")->required();
    t.option("thresholds", thresholds, "comma-separated confidence thresholds")->delimiter(',');
    t.option("rho", attack.rho, "patch size relative to the target box");
    t.option("gray", attack.gray, "patch gray value in [0, 1]");
    t.option("grid", attack.grid, "shape grid side length");
    t.option("samples", attack.samples, "curve samples");
    t.option("iou", attack.iou, "proposal-target association IoU");
    t.option("out", out_path, "output report JSON (default: standard output)");
    t.option("svg-curve", svg_curve, "optional ASR-versus-threshold SVG");
    t.option("threads", threads, "worker threads (0 = FSF_THREADS or all cores)");
  }

  int run(std::ostream& out, std::ostream&) const {
    const Parallelism par{threads};
    require(!thresholds.empty(), "at least one threshold is required");
    const FourierCoefficients theta = io::read_coefficients(shape);
    AttackFlags flags = attack;
    flags.K = theta.order();
    const AttackConfig config = flags.build();
    const ThermalImage img{io::read_pgm(image)};
    const std::vector<TargetBox> targets = io::read_boxes(boxes);
    require(!targets.empty(), "boxes file lists no targets");

    const auto objective = detector.build(img, targets, par);
    const AsrScene scene{img, targets, theta};
    const AsrReport asr = evaluate_asr(std::span<const AsrScene>(&scene, 1), *objective, config, thresholds, par);
    if (!svg_curve.empty()) io::write_text(svg_curve, io::asr_curve_svg(asr.thresholds, asr.asr));

    json rep = {{"command", "eval"}, {"image", image}, {"boxes", boxes}, {"shape", shape}};
    rep.update(detector.to_json());
    rep["config"] = io::config_to_json(config);
    rep["asr"] = io::asr_to_json(asr);
    emit_json(rep, out_path, out);
    return kExitOk;
  }
};

struct Timing {
  std::vector<double> ms;

  double median() const { return percentile(0.5); }
  double p95() const { return percentile(0.95); }

  // Nearest-rank percentile.
  double percentile(double q) const {
    std::vector<double> s = ms;
    std::sort(s.begin(), s.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(s.size())));
    return s[std::clamp<std::size_t>(rank, 1, s.size()) - 1];
  }

  json to_json() const { return {{"median_ms", median()}, {"p95_ms", p95()}, {"samples_ms", ms}}; }
};

template <class Fn>
Timing time_repeats(std::size_t repeats, Fn&& fn) {
  Timing t;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  return t;
}

struct BenchCmd {
  std::size_t grid = 200;
  std::size_t samples = 1000;
  int K = 6;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out_path;

  void add_to(FlagTable& t) {
    t.option("grid", grid, "grid side length");
    t.option("samples", samples, "curve samples");
    t.option("K", K, "Fourier order");
    t.option("repeats", repeats, "timed repetitions per measurement");
    t.option("seed", seed, "seed of the benchmarked shape");
    t.option("threads", threads, "multi-thread worker count (0 = FSF_THREADS or all cores)");
    t.option("out", out_path, "output JSON (default: standard output)");
  }

  int run(std::ostream& out, std::ostream&) const {
    require_grid(grid);
    require(repeats >= 1, "repeats must be >= 1");
    require(K >= 1, "K must be >= 1");
    const CurveSampling sampling(samples);
    const FourierCoefficients theta = init_coefficients(ShapeBox{}, K, seed);
    const Parallelism single{1};
    const Parallelism multi{resolve_threads(Parallelism{threads})};

    auto forward_timing = [&](std::size_t n, Parallelism par) {
      const GridSpec spec(n, n);
      return time_repeats(repeats, [&] { (void)winding_field(theta, spec, sampling, par); });
    };
    const GridSpec spec(grid, grid);
    const Grid2D<double> ones(grid, grid, 1.0);

    const Timing fwd_multi = forward_timing(grid, multi);
    const Timing fwd_single = forward_timing(grid, single);
    const Timing both = time_repeats(repeats, [&] {
      const WindingField field = winding_field(theta, spec, sampling, multi);
      (void)rasterize_backward(theta, spec, sampling, field, ones, multi);
    });
    const std::size_t half = std::max<std::size_t>(grid / 2, 2);
    const Timing fwd_half = forward_timing(half, multi);

    const WindingField f1 = winding_field(theta, spec, sampling, single);
    const WindingField fn = winding_field(theta, spec, sampling, multi);
    const auto g1 = rasterize_backward(theta, spec, sampling, f1, ones, single);
    const auto gn = rasterize_backward(theta, spec, sampling, fn, ones, multi);
    const bool bitwise = f1 == fn && g1 == gn;

    const double work = static_cast<double>(grid * grid) * static_cast<double>(samples);
    json rep = {{"command", "bench"},
                {"grid", grid},
                {"samples", samples},
                {"K", K},
                {"repeats", repeats},
                {"seed", seed},
                {"threads", multi.threads},
                {"forward", fwd_multi.to_json()},
                {"forward_backward", both.to_json()},
                {"forward_single_thread", fwd_single.to_json()},
                {"throughput_pixel_samples_per_s", work / (fwd_multi.median() * 1e-3)},
                {"speedup", fwd_single.median() / fwd_multi.median()},
                {"bitwise_equal", bitwise},
                {"half_grid", half},
                {"forward_half_grid", fwd_half.to_json()},
                {"grid_ratio", fwd_multi.median() / fwd_half.median()}};
    emit_json(rep, out_path, out);
    return kExitOk;
  }
};

}  // namespace detail

/// Runs one command line (without the program name). Diagnostics go to `err`
/// as a single line; reports without an output path go to `out`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Fourier-series shape attacks on thermal detectors", "fsf"};
  app.require_subcommand(1);

  std::string config_path;
  detail::OptimizeCmd optimize_cmd;
  detail::RasterizeCmd rasterize_cmd;
  detail::ReconstructCmd reconstruct_cmd;
  detail::EvalCmd eval_cmd;
  detail::BenchCmd bench_cmd;

  std::vector<std::pair<CLI::App*, std::unique_ptr<detail::FlagTable>>> tables;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    auto table = std::make_unique<detail::FlagTable>(sub);
    cmd.add_to(*table);
    sub->add_option("--config", config_path, "flat JSON config; command-line flags take precedence");
    tables.emplace_back(sub, std::move(table));
  };
  add("optimize", "optimize a patch shape against a detector", optimize_cmd);
  add("rasterize", "rasterize a coefficient file", rasterize_cmd);
  add("reconstruct", "fit a shape to a binary mask", reconstruct_cmd);
  add("eval", "attack success rate of a shape", eval_cmd);
  add("bench", "time the rasterizer kernels", bench_cmd);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }

  try {
    for (auto& [sub, table] : tables) {
      if (!sub->parsed()) continue;
      if (!config_path.empty()) table->apply_file(config_path);
      if (sub->get_name() == "optimize") return optimize_cmd.run(out, err);
      if (sub->get_name() == "rasterize") return rasterize_cmd.run(out, err);
      if (sub->get_name() == "reconstruct") return reconstruct_cmd.run(out, err);
      if (sub->get_name() == "eval") return eval_cmd.run(out, err);
      if (sub->get_name() == "bench") return bench_cmd.run(out, err);
    }
  } catch (const NumericalAbort& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const nlohmann::json::exception& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitInvalid;
}

}  // namespace fsf::cli

// Acceptance suite: one PASS/FAIL line per criterion. `--only N` runs a single
// criterion; without it every criterion runs in order. Exit status is non-zero
// when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "support.hpp"

namespace fsf {
namespace {

using nlohmann::json;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() / ("fsf_acceptance_" + tag)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() { std::filesystem::remove_all(path_); }
  std::string operator()(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "fsf %s exited %d: %s\n", args.front().c_str(), code, err.str().c_str());
  return code;
}

// --- rasterizer gradient -------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  const GridSpec grid(64, 64);
  const CurveSampling s(400);
  std::size_t checked = 0, skipped = 0, failing_shapes = 0;
  double worst = 0.0, worst_fine = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const FourierCoefficients theta = test::random_smooth_theta(rng, 6);
    const Grid2D<double> w = test::random_grid(rng, 64, 64);
    const auto g = rasterize_backward(theta, grid, s, w);
    auto loss = [&](const FourierCoefficients& t) { return test::dot(w, rasterize(t, grid, s)); };
    auto kink = [&](const FourierCoefficients& m, const FourierCoefficients& p) {
      return test::crosses_kink(winding_field(m, grid, s), winding_field(p, grid, s));
    };
    const auto cmp = test::compare_gradient(theta, g, loss, kink, 1e-5);
    checked += cmp.checked;
    skipped += cmp.skipped;
    worst = std::max(worst, cmp.worst);
    failing_shapes += cmp.worst > 1e-3 ? 1 : 0;
    // Diagnostic only: the same comparison one decade finer.
    worst_fine = std::max(worst_fine, test::compare_gradient(theta, g, loss, kink, 1e-6).worst);
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-3 && checked > 0 && elapsed < 120.0,
          fmt("h=1e-5: worst rel err %.3g over %zu components (%zu kink-skipped), %zu/20 shapes above 1e-3; "
              "h=1e-6 worst %.3g; %.1fs",
              worst, checked, skipped, failing_shapes, worst_fine, elapsed)};
}

// --- winding number against geometry -------------------------------------

Verdict winding_vs_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(7);
  const GridSpec grid(64, 64);
  const CurveSampling s(400);
  std::size_t compared = 0, disagree = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const FourierCoefficients theta = test::random_simple_theta(rng, 6, s, 0.1);
    const CurvePoints pts = eval_curve(theta, s);
    const ShapeMask m = rasterize(theta, grid, s);
    const auto inside = pip_oracle(pts, grid);
    const auto dist = test::distance_to_curve_px(pts, grid);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (dist.values()[i] < 2.0) continue;
      ++compared;
      disagree += (m.values()[i] > 0.5) != (inside.values()[i] == 1) ? 1 : 0;
    }
  }
  const double agreement = 1.0 - static_cast<double>(disagree) / static_cast<double>(compared);
  const double elapsed = seconds_since(t0);
  return {agreement >= 0.99 && elapsed < 120.0,
          fmt("agreement %.5f on %zu pixels (%zu disagree), %.1fs", agreement, compared, disagree, elapsed)};
}

// --- analytic circle -----------------------------------------------------

Verdict analytic_circle() {
  const FourierCoefficients theta = test::circle(0.3);
  const GridSpec grid(200, 200);
  const CurveSampling s(1000);
  const WindingField f = winding_field(theta, grid, s);
  // 200 pixels put no center at the origin; average the four around it.
  const double center = 0.25 * (f(99, 99) + f(99, 100) + f(100, 99) + f(100, 100));
  const double area = mean(normalize_mask(f));
  const double exact = std::numbers::pi * 0.09;
  const double green = green_area(theta, s);
  const bool ok = std::abs(center - 1.0) <= 1e-3 && std::abs(area - exact) <= 0.02 * exact &&
                  std::abs(green - exact) <= 1e-6;
  return {ok, fmt("center winding %.9f, mask mean %.6f vs %.6f (%.3f%%), green area error %.2e", center, area,
                  exact, 100.0 * std::abs(area - exact) / exact, std::abs(green - exact))};
}

// --- area loss against Green's theorem -----------------------------------

Verdict area_consistency() {
  std::mt19937_64 rng(11);
  const GridSpec grid(200, 200);
  const CurveSampling s(1000);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const FourierCoefficients theta = test::random_simple_theta(rng, 6, s, 0.1);
    const double green = std::abs(green_area(theta, s));
    worst = std::max(worst, std::abs(mean(rasterize(theta, grid, s)) - green) / green);
  }
  return {worst <= 0.03, fmt("worst relative area mismatch %.4f over 20 shapes", worst)};
}

// --- end-to-end gradient -------------------------------------------------

/// True when some pixel of the summed placement crosses the clamp at 1 by a
/// non-negligible amount. Fully covered pixels sit at 1 up to round-off.
bool crosses_clamp(const Grid2D<double>& minus, const Grid2D<double>& plus) {
  for (std::size_t i = 0; i < minus.size(); ++i) {
    const double a = minus.values()[i], b = plus.values()[i];
    if (std::abs(b - a) > 1e-9 && (a < 1.0) != (b < 1.0)) return true;
  }
  return false;
}

Verdict end_to_end_gradient() {
  std::mt19937_64 rng(5);
  std::size_t checked = 0, skipped = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    AttackConfig c;
    c.grid = GridSpec(48, 48);
    c.sampling = CurveSampling(300);
    c.alpha = test::uniform(rng, 0.0, 1.0);
    c.beta = test::uniform(rng, 0.0, 0.5);
    c.placement.rho = test::uniform(rng, 0.4, 1.2);
    c.placement.gray = test::uniform(rng, 0.0, 0.8);
    const ThermalImage image{test::random_grid(rng, 80, 100, 0.2, 0.9)};
    const std::vector<TargetBox> boxes{{test::uniform(rng, 22, 28), test::uniform(rng, 30, 50), 24, 36},
                                       {test::uniform(rng, 70, 78), test::uniform(rng, 30, 50), 20, 30}};
    const MeanIntensityObjective obj(boxes);
    const FourierCoefficients theta = test::random_smooth_theta(rng, c.K, 0.1);

    std::mt19937_64 unused;
    const LossEvaluation e = total_loss(image, boxes, theta, obj, c, unused);
    auto loss = [&](const FourierCoefficients& t) { return total_loss(image, boxes, t, obj, c, unused).loss.total; };
    auto placed = [&](const FourierCoefficients& t) {
      return place_mask_sum(rasterize(t, c.grid, c.sampling), boxes, c.placement.rho, image.rows(), image.cols());
    };
    auto kink = [&](const FourierCoefficients& m, const FourierCoefficients& p) {
      return test::crosses_kink(winding_field(m, c.grid, c.sampling), winding_field(p, c.grid, c.sampling)) ||
             test::reg_pattern(m, c.gamma) != test::reg_pattern(p, c.gamma) || crosses_clamp(placed(m), placed(p));
    };
    const auto cmp = test::compare_gradient(theta, e.gradient, loss, kink, 1e-6);
    checked += cmp.checked;
    skipped += cmp.skipped;
    worst = std::max(worst, cmp.worst);
  }
  return {worst <= 1e-3 && checked > 0,
          fmt("worst rel err %.3g over %zu components (%zu kink-skipped), h=1e-6", worst, checked, skipped)};
}

// --- toy attack sweeps ---------------------------------------------------

struct ToyScene {
  ThermalImage image;
  std::vector<TargetBox> targets;
  TemplateCorrelationObjective detector;
  double clean = 0.0;

  static const ToyScene& get() {
    static const ToyScene scene = [] {
      ThermalImage image{io::read_pgm(test::data_dir() / "toy_scene.pgm")};
      auto targets = io::read_boxes(test::data_dir() / "toy_boxes.json");
      auto detector =
          TemplateCorrelationObjective(io::read_pgm(test::data_dir() / "template.pgm")).with_baseline(image);
      const auto clean = target_max_scores(detector.detect(image), targets, 0.5);
      return ToyScene{std::move(image), std::move(targets), std::move(detector),
                      *std::max_element(clean.begin(), clean.end())};
    }();
    return scene;
  }
};

struct Run {
  double final_score = 0.0;
  double area = 0.0;
  double reg = 0.0;
  std::size_t iterations = 0;
  bool success = false;
};

struct SweepKey {
  double alpha, beta, gray;
  auto operator<=>(const SweepKey&) const = default;
};

AttackConfig toy_config(const SweepKey& key, std::uint64_t seed) {
  AttackConfig c;
  c.K = 6;
  c.placement.rho = 0.6;
  c.alpha = key.alpha;
  c.beta = key.beta;
  c.placement.gray = key.gray;
  c.learning_rate = 0.002;
  c.max_iters = 1000;
  c.grid = GridSpec(64, 64);
  c.sampling = CurveSampling(256);
  c.init_fraction = 0.25;
  c.seed = seed;
  return c;
}

/// Ten seeds of the toy attack; results are memoized across criteria.
const std::vector<Run>& sweep(const SweepKey& key) {
  static std::map<SweepKey, std::vector<Run>> cache;
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const ToyScene& scene = ToyScene::get();
  std::vector<Run> runs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const OptimizeResult r = optimize(scene.image, scene.targets, scene.detector, toy_config(key, seed));
    const LossBreakdown& f = r.final_loss();
    runs.push_back({f.max_associated_score, f.area, f.reg, r.iterations(),
                    scene.clean >= 0.9 && f.max_associated_score <= 0.1});
  }
  return cache[key] = std::move(runs);
}

constexpr SweepKey kDefaults{1.0, 0.1, 0.0};

Verdict toy_convergence() {
  const auto& runs = sweep(kDefaults);
  std::size_t ok = 0, slowest = 0;
  for (const Run& r : runs) {
    ok += r.success ? 1 : 0;
    if (r.success) slowest = std::max(slowest, r.iterations);
  }
  // Pilot rate 10/10 is the frozen bound.
  return {ok >= 10, fmt("clean score %.4f, %zu/10 seeds reach <= 0.1 (slowest %zu iterations)",
                        ToyScene::get().clean, ok, slowest)};
}

Verdict regularization_effect() {
  const auto& with = sweep(kDefaults);
  const auto& without = sweep({1.0, 0.0, 0.0});
  double worst_with = 0.0, max_without = 0.0;
  std::size_t passing = 0;
  for (const Run& r : with) {
    if (!r.success) continue;
    ++passing;
    worst_with = std::max(worst_with, r.reg);
  }
  for (const Run& r : without) max_without = std::max(max_without, r.reg);
  const bool simple = passing > 0 && worst_with < 1e-3;
  const bool contrast = max_without > 1e-2;
  return {simple && contrast, fmt("beta=0.1: max L_reg %.4f over %zu passing seeds (need < 1e-3); "
                                  "beta=0: max L_reg %.4f (need > 1e-2)",
                                  worst_with, passing, max_without)};
}

Verdict area_effect() {
  const auto& with = sweep(kDefaults);
  const auto& without = sweep({0.0, 0.1, 0.0});
  double a1 = 0.0, a0 = 0.0;
  std::size_t ok1 = 0, ok0 = 0;
  for (const Run& r : with) a1 += r.area / 10.0, ok1 += r.success ? 1 : 0;
  for (const Run& r : without) a0 += r.area / 10.0, ok0 += r.success ? 1 : 0;
  return {a1 < a0 && ok1 == 10 && ok0 == 10,
          fmt("mean area alpha=1 %.4f (%zu/10 successful) vs alpha=0 %.4f (%zu/10 successful)", a1, ok1, a0, ok0)};
}

Verdict gray_trend() {
  std::vector<double> means;
  std::string table;
  for (double g : {0.0, 0.2, 0.4, 0.6, 0.8}) {
    double m = 0.0;
    for (const Run& r : sweep({1.0, 0.1, g})) m += r.final_score / 10.0;
    means.push_back(m);
    table += fmt("%sg=%.1f: %.4f", table.empty() ? "" : ", ", g, m);
  }
  std::size_t inversions = 0;
  for (std::size_t i = 1; i < means.size(); ++i) inversions += means[i] < means[i - 1] ? 1 : 0;
  // One inversion allowed, frozen after the pilot sweep.
  return {inversions <= 1, fmt("mean final score %s; %zu inversion(s)", table.c_str(), inversions)};
}

// --- CLI-level checks ----------------------------------------------------

Grid2D<double> polar_target(std::size_t n, const std::function<double(double)>& radius) {
  const GridSpec grid(n, n);
  Grid2D<double> m(n, n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      m(r, c) = std::hypot(grid.x(c), grid.y(r)) < radius(std::atan2(grid.y(r), grid.x(c))) ? 1.0 : 0.0;
  return m;
}

double reconstruct_iou(const ScratchDir& dir, const std::string& target, int K) {
  const std::string report = dir("r" + std::to_string(K) + ".json");
  if (cli({"reconstruct", "--target", target, "--K", std::to_string(K), "--iters", "1000", "--samples", "256",
           "--out", dir("theta.json"), "--report", report}) != 0)
    return -1.0;
  return json::parse(io::read_text(report))["iou"].get<double>();
}

Verdict representational_power() {
  const ScratchDir dir("reconstruct");
  io::write_pgm(dir("star.pgm"), polar_target(64, [](double phi) { return 0.3 + 0.1 * std::cos(5.0 * phi); }));
  io::write_pgm(dir("disc.pgm"), polar_target(64, [](double) { return 0.3; }));
  const double star1 = reconstruct_iou(dir, dir("star.pgm"), 1);
  const double star10 = reconstruct_iou(dir, dir("star.pgm"), 10);
  const double disc1 = reconstruct_iou(dir, dir("disc.pgm"), 1);
  return {star10 - star1 > 0.05 && disc1 >= 0.95,
          fmt("star IoU K=1 %.4f, K=10 %.4f (gain %.4f); disc IoU K=1 %.4f", star1, star10, star10 - star1, disc1)};
}

Verdict determinism_and_scaling() {
  const ScratchDir dir("determinism");
  const std::vector<std::string> outputs{"shape.json", "mask.pgm", "trace.csv", "report.json"};
  std::vector<std::string> reference;
  bool identical = true;
  for (unsigned threads : {1u, 2u, 8u}) {
    const std::string t = std::to_string(threads);
    if (cli({"optimize", "--image", (test::data_dir() / "toy_scene.pgm").string(), "--boxes",
             (test::data_dir() / "toy_boxes.json").string(), "--config",
             (test::data_dir() / "toy_config.json").string(), "--seed", "3", "--threads", t, "--out-shape",
             dir(t + "shape.json"), "--out-mask", dir(t + "mask.pgm"), "--trace", dir(t + "trace.csv"),
             "--report", dir(t + "report.json")}) != 0)
      return {false, "optimize failed"};
    std::vector<std::string> bytes;
    for (const std::string& o : outputs) bytes.push_back(io::read_text(dir(t + o)));
    if (reference.empty())
      reference = bytes;
    else
      identical = identical && bytes == reference;
  }

  if (cli({"bench", "--grid", "200", "--samples", "1000", "--repeats", "3", "--out", dir("bench.json")}) != 0)
    return {false, "bench failed"};
  const json bench = json::parse(io::read_text(dir("bench.json")));
  const double ratio = bench["grid_ratio"].get<double>();
  return {identical && ratio >= 3.0 && ratio <= 5.0,
          fmt("optimize outputs %s across 1/2/8 threads; forward time ratio grid 200 / grid 100 = %.3f",
              identical ? "byte-identical" : "DIFFER", ratio)};
}

const std::vector<std::pair<int, std::function<Verdict()>>>& criteria() {
  static const std::vector<std::pair<int, std::function<Verdict()>>> all{
      {1, gradient_correctness}, {2, winding_vs_oracle},     {3, analytic_circle},
      {4, area_consistency},     {5, end_to_end_gradient},   {6, toy_convergence},
      {7, regularization_effect}, {8, area_effect},          {9, gray_trend},
      {10, representational_power}, {11, determinism_and_scaling}};
  return all;
}

}  // namespace
}  // namespace fsf

int main(int argc, char** argv) {
  CLI::App app{"fsf acceptance suite"};
  int only = 0;
  app.add_option("--only", only, "run a single criterion")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  bool all_pass = true;
  for (const auto& [id, check] : fsf::criteria()) {
    if (only != 0 && id != only) continue;
    fsf::Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s (%s)\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && v.pass;
  }
  return all_pass ? 0 : 1;
}

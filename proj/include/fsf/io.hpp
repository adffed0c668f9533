#pragma once

// File formats: binary PGM images, coefficient JSON, box JSON, raw float
// dumps, SVG figures and trace CSV.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsf/attack.hpp"
#include "fsf/error.hpp"
#include "fsf/fourier_shape.hpp"
#include "fsf/grid.hpp"
#include "fsf/patch_pipeline.hpp"
#include "fsf/winding_raster.hpp"

namespace fsf::io {

using json = nlohmann::json;

/// printf-style %.17g, enough digits to round-trip any double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

// ---------------------------------------------------------------- PGM (P5)

/// Decodes a binary PGM, normalizing intensities to [0, 1] by maxval.
inline Grid2D<double> decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> unsigned long {
    skip_space();
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw InvalidInput("malformed PGM header");
    return std::stoul(bytes.substr(start, pos - start));
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw InvalidInput("not a binary PGM (P5) file");
  pos = 2;
  const unsigned long width = read_uint();
  const unsigned long height = read_uint();
  const unsigned long maxval = read_uint();
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) throw InvalidInput("invalid PGM dimensions");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw InvalidInput("malformed PGM header");
  ++pos;

  const std::size_t depth = maxval > 255 ? 2 : 1;
  const std::size_t count = width * height;
  if (bytes.size() - pos < count * depth) throw InvalidInput("truncated PGM pixel data");
  Grid2D<double> img(height, width);
  auto out = img.values();
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned value = depth == 1 ? data[i] : (static_cast<unsigned>(data[2 * i]) << 8) | data[2 * i + 1];
    out[i] = std::min(1.0, static_cast<double>(value) / static_cast<double>(maxval));
  }
  return img;
}

inline Grid2D<double> read_pgm(const std::filesystem::path& path) { return decode_pgm(read_text(path)); }

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

/// 8-bit P5 encoding, value = round(255 v).
inline std::string encode_pgm(const Grid2D<double>& img) {
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (double v : img.values()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const Grid2D<double>& img) {
  write_text(path, encode_pgm(img));
}

/// Rounds every value to the nearest 8-bit level, as a PGM round trip would.
inline Grid2D<double> quantize8(Grid2D<double> img) {
  for (double& v : img.values()) v = static_cast<double>(to_byte(v)) / 255.0;
  return img;
}

// ------------------------------------------------------- coefficient JSON

inline std::string coefficients_to_json(const FourierCoefficients& theta) {
  std::string out = "{\n  \"K\": " + std::to_string(theta.order()) + ",\n  \"coefficients\": [\n";
  for (int k = -theta.order(); k <= theta.order(); ++k) {
    out += "    {\"k\": " + std::to_string(k) + ", \"re\": " + format_double(theta[k].real()) +
           ", \"im\": " + format_double(theta[k].imag()) + "}";
    out += k == theta.order() ? "\n" : ",\n";
  }
  out += "  ]\n}\n";
  return out;
}

inline FourierCoefficients coefficients_from_json(const json& doc) {
  try {
    if (!doc.is_object() || !doc.contains("K") || !doc.contains("coefficients"))
      throw InvalidInput("coefficient JSON needs \"K\" and \"coefficients\"");
    const int order = doc.at("K").get<int>();
    FourierCoefficients theta(order);
    const json& list = doc.at("coefficients");
    if (!list.is_array() || list.size() != theta.size())
      throw InvalidInput("coefficient list must hold 2K+1 entries");
    std::vector<bool> seen(theta.size(), false);
    for (const json& entry : list) {
      const int k = entry.at("k").get<int>();
      if (k < -order || k > order || seen[static_cast<std::size_t>(k + order)])
        throw InvalidInput("coefficient index out of range or repeated");
      seen[static_cast<std::size_t>(k + order)] = true;
      theta[k] = {entry.at("re").get<double>(), entry.at("im").get<double>()};
    }
    theta.validate();
    return theta;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed coefficient JSON: ") + e.what());
  }
}

inline FourierCoefficients read_coefficients(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw InvalidInput("malformed JSON in " + path.string() + ": " + e.what());
  }
  return coefficients_from_json(doc);
}

inline void write_coefficients(const std::filesystem::path& path, const FourierCoefficients& theta) {
  write_text(path, coefficients_to_json(theta));
}

// ---------------------------------------------------------------- boxes

/// Accepts center form {"cx","cy","w","h"} or top-left form {"x","y","w","h"}.
inline std::vector<TargetBox> boxes_from_json(const json& doc) {
  try {
    if (!doc.is_array()) throw InvalidInput("boxes JSON must be an array");
    std::vector<TargetBox> boxes;
    for (const json& b : doc) {
      const double w = b.at("w").get<double>();
      const double h = b.at("h").get<double>();
      if (b.contains("cx") && b.contains("cy")) {
        boxes.push_back({b.at("cx").get<double>(), b.at("cy").get<double>(), w, h});
      } else if (b.contains("x") && b.contains("y")) {
        boxes.push_back(TargetBox::from_top_left(b.at("x").get<double>(), b.at("y").get<double>(), w, h));
      } else {
        throw InvalidInput("box needs cx/cy or x/y keys");
      }
      if (!(w > 0.0 && h > 0.0)) throw InvalidInput("box width and height must be positive");
    }
    return boxes;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed boxes JSON: ") + e.what());
  }
}

inline std::vector<TargetBox> read_boxes(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw InvalidInput("malformed JSON in " + path.string() + ": " + e.what());
  }
  return boxes_from_json(doc);
}

inline json boxes_to_json(const std::vector<TargetBox>& boxes) {
  json out = json::array();
  for (const TargetBox& b : boxes) out.push_back({{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}});
  return out;
}

// ------------------------------------------------------------ raw dumps

/// Row-major little-endian float64 values plus a {"h","w"} JSON sidecar.
inline void write_raw_f64(const std::filesystem::path& path, const Grid2D<double>& grid) {
  std::string bytes(grid.size() * 8, '\0');
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(grid.values()[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  write_text(path, bytes);
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  write_text(sidecar, json{{"h", grid.rows()}, {"w", grid.cols()}}.dump() + "\n");
}

inline Grid2D<double> read_raw_f64(const std::filesystem::path& path) {
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  const json meta = json::parse(read_text(sidecar));
  const auto h = meta.at("h").get<std::size_t>();
  const auto w = meta.at("w").get<std::size_t>();
  const std::string bytes = read_text(path);
  if (bytes.size() != h * w * 8) throw InvalidInput("raw dump size does not match its sidecar");
  Grid2D<double> grid(h, w);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    grid.values()[i] = std::bit_cast<double>(bits);
  }
  return grid;
}

// ------------------------------------------------------------------ SVG

/// Closed stroke-only path through the curve samples. Shape space maps onto a
/// `size`-pixel square with y pointing down, matching mask row order.
inline std::string curve_svg(const CurvePoints& curve, double size = 512.0) {
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  svg << "  <rect width=\"" << size << "\" height=\"" << size << "\" fill=\"none\" stroke=\"#bbbbbb\"/>\n";
  svg << "  <path fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" d=\"";
  char buf[64];
  for (std::size_t j = 0; j < curve.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%c%.4f %.4f ", j == 0 ? 'M' : 'L', (curve.x[j] + 0.5) * size,
                  (curve.y[j] + 0.5) * size);
    svg << buf;
  }
  svg << "Z\"/>\n</svg>\n";
  return svg.str();
}

/// ASR-versus-threshold polyline on a unit square plot.
inline std::string asr_curve_svg(const std::vector<double>& thresholds, const std::vector<double>& asr,
                                 double size = 400.0) {
  std::ostringstream svg;
  const double pad = 40.0;
  const double inner = size - 2 * pad;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  svg << "  <rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << inner << "\" height=\"" << inner
      << "\" fill=\"none\" stroke=\"#888888\"/>\n";
  svg << "  <text x=\"" << size / 2 << "\" y=\"" << size - 8 << "\" text-anchor=\"middle\">confidence threshold</text>\n";
  svg << "  <text x=\"12\" y=\"" << size / 2 << "\" transform=\"rotate(-90 12 " << size / 2
      << ")\" text-anchor=\"middle\">ASR</text>\n";
  svg << "  <polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"";
  char buf[64];
  for (std::size_t i = 0; i < thresholds.size() && i < asr.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f ", pad + thresholds[i] * inner, pad + (1.0 - asr[i]) * inner);
    svg << buf;
  }
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

// ------------------------------------------------------------------ CSV

inline std::string trace_csv(const std::vector<TraceEntry>& trace) {
  std::string out = "iter,total,adv,area,reg,max_score,lr\n";
  for (const TraceEntry& e : trace) {
    out += std::to_string(e.iter) + "," + format_double(e.loss.total) + "," + format_double(e.loss.adv) + "," +
           format_double(e.loss.area) + "," + format_double(e.loss.reg) + "," +
           format_double(e.loss.max_associated_score) + "," + format_double(e.learning_rate) + "\n";
  }
  return out;
}

// ---------------------------------------------------------- config echo

inline json loss_to_json(const LossBreakdown& l) {
  return {{"total", l.total},
          {"adv", l.adv},
          {"area", l.area},
          {"reg", l.reg},
          {"max_score", l.max_associated_score}};
}

/// Every effective attack setting, keyed by its CLI flag name.
inline json config_to_json(const AttackConfig& c) {
  json out = {{"K", c.K},
              {"rho", c.placement.rho},
              {"gray", c.placement.gray},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"gamma", c.gamma},
              {"lr", c.learning_rate},
              {"max-iters", c.max_iters},
              {"early-stop-threshold", c.early_stop.score_threshold},
              {"early-stop-iters", c.early_stop.consecutive_iters},
              {"grid", c.grid.rows()},
              {"samples", c.sampling.count()},
              {"augment", c.augment},
              {"translate-px", c.augmentation.translate_px},
              {"rotate-deg", c.augmentation.rotate_deg},
              {"scale-lo", c.augmentation.scale_lo},
              {"scale-hi", c.augmentation.scale_hi},
              {"gray-jitter", c.augmentation.gray_jitter},
              {"iou", c.association_iou},
              {"seed", c.seed},
              {"init-fraction", c.init_fraction},
              {"adam-beta1", c.adam.beta1},
              {"adam-beta2", c.adam.beta2},
              {"adam-eps", c.adam.epsilon}};
  if (c.schedule) {
    out["schedule-trigger"] = c.schedule->trigger_conf;
    out["schedule-factor"] = c.schedule->lr_factor;
  } else {
    out["schedule-trigger"] = nullptr;
    out["schedule-factor"] = nullptr;
  }
  return out;
}

inline json asr_to_json(const AsrReport& r) {
  json table = json::array();
  for (std::size_t i = 0; i < r.thresholds.size(); ++i)
    table.push_back({{"threshold", r.thresholds[i]}, {"asr", r.asr[i]}});
  json targets = json::array();
  for (const auto& t : r.targets)
    targets.push_back({{"clean_max", t.clean_max}, {"patched_max", t.patched_max}});
  return {{"table", table},
          {"targets", targets},
          {"mean_confidence_drop", r.mean_confidence_drop},
          {"vacuous", r.vacuous}};
}

}  // namespace fsf::io

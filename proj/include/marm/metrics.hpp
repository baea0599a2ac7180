#pragma once

// PSNR, Bjontegaard deltas and the curve file schema shared by the CLI.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "marm/image.hpp"

namespace marm::metrics {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double psnr(const image::Image& a, const image::Image& b) {
  MARM_REQUIRE(a.width == b.width && a.height == b.height, "psnr: ", a.width, "x", a.height, " vs ", b.width,
               "x", b.height);
  MARM_REQUIRE(!a.rgb.empty(), "psnr: empty images");
  double se = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.rgb.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline double bpp(std::size_t bytes, std::size_t width, std::size_t height) {
  return 8.0 * static_cast<double>(bytes) / static_cast<double>(width * height);
}

// x is rate (bpp) or decode time (s); quality is PSNR in dB.
struct CurvePoint {
  double x = 0, psnr = 0;
};

namespace detail {

// Least-squares cubic in centred/scaled q; returns coefficients and the
// affine map so that p(q) = c0 + c1 t + c2 t^2 + c3 t^3 with t = (q - m) / s.
struct Cubic {
  Eigen::Vector4d c;
  double m = 0, s = 1;
  double operator()(double q) const {
    const double t = (q - m) / s;
    return ((c[3] * t + c[2]) * t + c[1]) * t + c[0];
  }
};

inline Cubic fit_cubic(const std::vector<CurvePoint>& pts) {
  Cubic f;
  double lo = pts.front().psnr, hi = lo;
  for (const auto& p : pts) {
    lo = std::min(lo, p.psnr);
    hi = std::max(hi, p.psnr);
  }
  f.m = 0.5 * (lo + hi);
  f.s = hi > lo ? 0.5 * (hi - lo) : 1.0;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(pts.size()), 4);
  Eigen::VectorXd b(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double t = (pts[i].psnr - f.m) / f.s;
    const auto r = static_cast<Eigen::Index>(i);
    a(r, 0) = 1;
    a(r, 1) = t;
    a(r, 2) = t * t;
    a(r, 3) = t * t * t;
    b(r) = std::log10(pts[i].x);
  }
  f.c = a.colPivHouseholderQr().solve(b);
  return f;
}

inline std::vector<CurvePoint> usable(const std::vector<CurvePoint>& in, const char* name) {
  std::vector<CurvePoint> out;
  for (const auto& p : in) {
    if (std::isinf(p.psnr)) {
      std::cerr << "warning: " << name << ": dropping point with infinite PSNR (x=" << p.x << ")\n";
      continue;
    }
    if (!std::isfinite(p.psnr) || !std::isfinite(p.x) || p.x <= 0)
      throw MetricError(std::string(name) + ": non-finite or non-positive curve point");
    out.push_back(p);
  }
  if (out.size() < 4) throw MetricError(std::string(name) + ": need at least 4 finite points");
  std::sort(out.begin(), out.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return std::tie(a.psnr, a.x) < std::tie(b.psnr, b.x);
  });
  return out;
}

}  // namespace detail

inline constexpr int kBdSamples = 1000;

// Average log10 difference of curve B relative to A over the common PSNR
// interval, expressed as a percentage change of x. Cubic least-squares fit
// of log10(x) against PSNR, integrated with the trapezoid rule.
inline double bd_delta(const std::vector<CurvePoint>& a, const std::vector<CurvePoint>& b) {
  const auto pa = detail::usable(a, "curve A");
  const auto pb = detail::usable(b, "curve B");
  const double lo = std::max(pa.front().psnr, pb.front().psnr);
  const double hi = std::min(pa.back().psnr, pb.back().psnr);
  if (!(hi > lo)) throw MetricError("curves have no overlapping PSNR interval");
  const detail::Cubic fa = detail::fit_cubic(pa), fb = detail::fit_cubic(pb);
  const double step = (hi - lo) / kBdSamples;
  double acc = 0;
  for (int i = 0; i <= kBdSamples; ++i) {
    const double q = lo + step * i;
    const double d = fb(q) - fa(q);
    acc += (i == 0 || i == kBdSamples) ? 0.5 * d : d;
  }
  const double avg = acc * step / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

inline double bd_rate(const std::vector<CurvePoint>& a, const std::vector<CurvePoint>& b) { return bd_delta(a, b); }
inline double bd_time(const std::vector<CurvePoint>& a, const std::vector<CurvePoint>& b) { return bd_delta(a, b); }

// One row of a benchmark sweep.
struct CurveRow {
  std::string image;
  double lambda = 0;
  std::size_t arm_levels = 0;
  double bpp = 0, psnr_db = 0, enc_s = 0;
  double dec_total_s = 0, dec_params_s = 0, dec_latents_s = 0, dec_synth_s = 0;
  double macs_per_px = 0;
};

inline const char* kCurveHeader =
    "image,lambda,M,bpp,psnr_db,enc_s,dec_total_s,dec_params_s,dec_latents_s,dec_synth_s,macs_per_px";

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string to_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << kCurveHeader << '\n';
  for (const auto& r : rows) {
    os << r.image << ',' << format_double(r.lambda) << ',' << r.arm_levels << ',' << format_double(r.bpp) << ','
       << format_double(r.psnr_db) << ',' << format_double(r.enc_s) << ',' << format_double(r.dec_total_s) << ','
       << format_double(r.dec_params_s) << ',' << format_double(r.dec_latents_s) << ','
       << format_double(r.dec_synth_s) << ',' << format_double(r.macs_per_px) << '\n';
  }
  return os.str();
}

inline std::vector<CurveRow> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw MetricError("curve csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCurveHeader) throw MetricError("curve csv: unexpected header '" + line + "'");
  std::vector<CurveRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 11) throw MetricError("curve csv: line " + std::to_string(lineno) + " has wrong field count");
    try {
      CurveRow r;
      r.image = f[0];
      r.lambda = std::stod(f[1]);
      r.arm_levels = std::stoul(f[2]);
      r.bpp = std::stod(f[3]);
      r.psnr_db = std::stod(f[4]);
      r.enc_s = std::stod(f[5]);
      r.dec_total_s = std::stod(f[6]);
      r.dec_params_s = std::stod(f[7]);
      r.dec_latents_s = std::stod(f[8]);
      r.dec_synth_s = std::stod(f[9]);
      r.macs_per_px = std::stod(f[10]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw MetricError("curve csv: unparseable number on line " + std::to_string(lineno));
    }
  }
  return rows;
}

inline nlohmann::json to_json(const CurveRow& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return format_double(v);
  };
  return {{"image", r.image},         {"lambda", r.lambda},           {"M", r.arm_levels},
          {"bpp", r.bpp},             {"psnr_db", num(r.psnr_db)},    {"enc_s", r.enc_s},
          {"dec_total_s", r.dec_total_s}, {"dec_params_s", r.dec_params_s}, {"dec_latents_s", r.dec_latents_s},
          {"dec_synth_s", r.dec_synth_s}, {"macs_per_px", r.macs_per_px}};
}

inline nlohmann::json to_json(const std::vector<CurveRow>& rows) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows) a.push_back(to_json(r));
  return a;
}

// Mean over images for every (M, lambda) cell, ordered by M then lambda.
inline std::vector<CurveRow> aggregate(const std::vector<CurveRow>& rows) {
  std::map<std::pair<std::size_t, double>, std::pair<CurveRow, std::size_t>> acc;
  for (const auto& r : rows) {
    auto& [sum, n] = acc[{r.arm_levels, r.lambda}];
    if (n == 0) {
      sum = r;
      sum.image = "mean";
    } else {
      sum.bpp += r.bpp;
      sum.psnr_db += r.psnr_db;
      sum.enc_s += r.enc_s;
      sum.dec_total_s += r.dec_total_s;
      sum.dec_params_s += r.dec_params_s;
      sum.dec_latents_s += r.dec_latents_s;
      sum.dec_synth_s += r.dec_synth_s;
      sum.macs_per_px += r.macs_per_px;
    }
    ++n;
  }
  std::vector<CurveRow> out;
  for (auto& [key, v] : acc) {
    auto [r, n] = v;
    const double k = static_cast<double>(n);
    r.bpp /= k;
    r.psnr_db /= k;
    r.enc_s /= k;
    r.dec_total_s /= k;
    r.dec_params_s /= k;
    r.dec_latents_s /= k;
    r.dec_synth_s /= k;
    r.macs_per_px /= k;
    out.push_back(r);
  }
  return out;
}

enum class BdMode { rate, time };

// Curve points of one configuration (all rows must share M).
inline std::vector<CurvePoint> curve_points(const std::vector<CurveRow>& rows, BdMode mode) {
  std::vector<CurvePoint> pts;
  for (const auto& r : rows) pts.push_back({mode == BdMode::rate ? r.bpp : r.dec_total_s, r.psnr_db});
  return pts;
}

}  // namespace marm::metrics

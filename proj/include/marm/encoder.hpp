#pragma once

// Encoding is training: latents and all three networks are fitted to one
// image under D + lambda * R, then weights and latents are quantized and
// coded. Phase A relaxes quantization with uniform noise, phase B with
// straight-through rounding.

#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "marm/bitstream.hpp"
#include "marm/decoder.hpp"
#include "marm/image.hpp"
#include "marm/latent_coding.hpp"
#include "marm/metrics.hpp"
#include "marm/model.hpp"
#include "marm/param_coding.hpp"

#ifndef MARM_VERSION
#define MARM_VERSION "dev"
#endif

namespace marm::codec {

inline constexpr std::array<double, 5> kLambdaPresets{0.02, 0.004, 0.001, 0.0004, 0.0001};

struct EncodeConfig {
  double lambda = 0.001;
  std::size_t iterations = 2000;
  double phase_a_fraction = 0.9;
  double lr_start = 1e-2, lr_end = 1e-5;
  uint64_t seed = 0;
  // Latents are stored as parameters divided by this gain, so one Adam step
  // moves a latent by up to gain * lr quantization units.
  double latent_gain = 16.0;
  entropy::MarmConfig marm;  // levels and arm_levels live here
  pipeline::SynthesisConfig synthesis;
  std::size_t trace_every = 100;

  void validate() const {
    MARM_REQUIRE(lambda >= 0 && std::isfinite(lambda), "encode: lambda must be >= 0");
    MARM_REQUIRE(iterations >= 1, "encode: at least one iteration");
    MARM_REQUIRE(phase_a_fraction >= 0 && phase_a_fraction <= 1, "encode: phase split outside [0,1]");
    MARM_REQUIRE(latent_gain > 0 && std::isfinite(latent_gain), "encode: latent gain must be positive");
    marm.validate();
  }

  std::size_t phase_a_iterations() const {
    return static_cast<std::size_t>(std::floor(phase_a_fraction * static_cast<double>(iterations)));
  }

  nlohmann::json to_json() const {
    return {{"lambda", lambda},
            {"iterations", iterations},
            {"phase_a_fraction", phase_a_fraction},
            {"lr_start", lr_start},
            {"lr_end", lr_end},
            {"seed", seed},
            {"latent_gain", latent_gain},
            {"levels", marm.levels},
            {"arm_levels", marm.arm_levels},
            {"arm_context", marm.arm_context},
            {"arm_width", marm.arm_width},
            {"aru_width", marm.aru_width},
            {"aru_pass1_kernel", marm.aru_pass1_kernel},
            {"aru_pass2_kernel", marm.aru_pass2_kernel},
            {"entropy_hidden_layers", marm.mlp_hidden_layers},
            {"synthesis_layers", synthesis.conv_layers},
            {"synthesis_kernel", synthesis.kernel},
            {"synthesis_mlp_width", synthesis.mlp_width},
            {"synthesis_hidden_layers", synthesis.mlp_hidden_layers}};
  }
};

// Cosine decay from lr_start at t = 0 to lr_end at t = total.
inline double learning_rate(const EncodeConfig& c, std::size_t t) {
  const double f = c.iterations > 1 ? static_cast<double>(t) / static_cast<double>(c.iterations - 1) : 1.0;
  return c.lr_end + 0.5 * (c.lr_start - c.lr_end) * (1.0 + std::cos(std::numbers::pi * f));
}

struct TracePoint {
  std::size_t iteration = 0;
  double loss = 0, mse = 0, bpp = 0;
};

struct EncodeReport {
  EncodeConfig config;
  std::size_t width = 0, height = 0;
  double final_loss = 0;  // D + lambda * bpp at the quantized state
  double distortion = 0;  // MSE of the exported 8-bit image, [0,1] scale
  double rate_bits = 0;   // modeled latent bits under the quantized tables
  std::size_t latent_bytes = 0, param_bytes = 0, total_bytes = 0;
  double bpp = 0, psnr = 0;
  std::array<int, 3> step_exponents{};
  double train_s = 0, quantize_s = 0, code_s = 0, total_s = 0;
  ScheduleCounters counters;
  std::vector<TracePoint> trace;

  nlohmann::json to_json() const {
    nlohmann::json tr = nlohmann::json::array();
    for (const auto& p : trace) tr.push_back({{"iteration", p.iteration}, {"loss", p.loss}, {"mse", p.mse}, {"bpp", p.bpp}});
    return {{"config", config.to_json()},
            {"version", MARM_VERSION},
            {"width", width},
            {"height", height},
            {"final_loss", final_loss},
            {"distortion", distortion},
            {"rate_bits", rate_bits},
            {"latent_bytes", latent_bytes},
            {"param_bytes", param_bytes},
            {"total_bytes", total_bytes},
            {"bpp", bpp},
            {"psnr", std::isfinite(psnr) ? nlohmann::json(psnr) : nlohmann::json("inf")},
            {"step_exponents", {{"psi", step_exponents[0]}, {"phi", step_exponents[1]}, {"theta", step_exponents[2]}}},
            {"train_s", train_s},
            {"quantize_s", quantize_s},
            {"code_s", code_s},
            {"total_s", total_s},
            {"aru_passes", counters.aru_passes},
            {"arm_evaluations", counters.arm_evaluations},
            {"symbols", counters.symbols},
            {"trace", tr}};
  }
};

struct EncodeResult {
  std::vector<uint8_t> bitstream;
  image::Image reconstruction;
  latent::LatentPyramid latents;
  EncodeReport report;
};

inline double image_mse(const image::Image& a, const image::Image& b) {
  MARM_REQUIRE(a.rgb.size() == b.rgb.size(), "image_mse: size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = (static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i])) / 255.0;
    s += d * d;
  }
  return s / static_cast<double>(a.rgb.size());
}

// Training objective on relaxed latents: MSE on [0,1] RGB plus lambda times
// modeled bits per pixel. `bits` is left undefined when lambda = 0.
template <typename T>
struct LossTerms {
  ad::Var<T> loss, mse, bits;
};

template <typename T>
LossTerms<T> loss(const CodecModel<T>& m, const std::vector<ad::Var<T>>& y, const Tensor<T>& target, double lambda) {
  const latent::Geometry g = m.geometry();
  MARM_REQUIRE(target.shape() == (Shape{3, g.height, g.width}), "loss: target shape ", target.shape());
  LossTerms<T> t;
  const ad::Var<T> xhat = m.synthesis.forward(m.upsampler.forward(y, g));
  t.mse = ad::mse(xhat, ad::constant(target));
  t.loss = t.mse;
  if (lambda > 0) {
    t.bits = entropy::taped_rate(m.marm, y);
    t.loss = ad::add(t.loss, ad::scale(t.bits, static_cast<T>(lambda / static_cast<double>(g.height * g.width))));
  }
  return t;
}

// Lowest objective wins; ties go to the lowest seed.
inline std::size_t greedy_best_of(std::span<const EncodeReport> reports) {
  MARM_REQUIRE(!reports.empty(), "greedy_best_of: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const auto& a = reports[i];
    const auto& b = reports[best];
    if (a.final_loss < b.final_loss || (a.final_loss == b.final_loss && a.config.seed < b.config.seed)) best = i;
  }
  return best;
}

namespace detail {

inline latent::LatentPyramid round_latents(const latent::RealLatentPyramid<Real>& y, double gain) {
  latent::LatentPyramid q(y.geometry);
  for (std::size_t i = 0; i < y.levels.size(); ++i) {
    const auto& v = y.levels[i].value();
    for (std::size_t k = 0; k < v.size(); ++k)
      q.levels[i][k] = latent::quantize_latent(gain * static_cast<double>(v[k]));
  }
  return q;
}

}  // namespace detail

inline EncodeResult encode(const image::Image& img, EncodeConfig cfg, ParamTrace* param_trace = nullptr) {
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  MARM_REQUIRE(img.width >= 1 && img.height >= 1, "encode: empty image");
  cfg.validate();
  const auto t0 = clock::now();

  CodecConfig cc;
  cc.height = img.height;
  cc.width = img.width;
  cc.marm = cfg.marm;
  cc.synthesis = cfg.synthesis;
  cc.validate();

  std::mt19937_64 rng(cfg.seed);
  CodecModel<Real> model = CodecModel<Real>::make(cc, rng);
  const latent::Geometry g = model.geometry();
  auto latents = latent::init_pyramid<Real>(g.height, g.width, g.levels);
  const Tensor<Real> target = image::to_tensor<Real>(img);
  const double pixels = static_cast<double>(g.height * g.width);

  nn::ParamList<Real> params = model.all_params();
  for (auto& p : latents.levels) params.push_back(&p);

  EncodeResult res;
  EncodeReport& rep = res.report;
  rep.config = cfg;
  rep.width = img.width;
  rep.height = img.height;

  const std::size_t phase_a = cfg.phase_a_iterations();
  const Real gain = static_cast<Real>(cfg.latent_gain);
  const Real latent_lo = static_cast<Real>(latent::kLatentMin / cfg.latent_gain);
  const Real latent_hi = static_cast<Real>(latent::kLatentMax / cfg.latent_gain);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<ad::Var<Real>> y;
    for (auto& p : latents.levels) {
      const ad::Var<Real> scaled = ad::scale(p.var, gain);
      if (it < phase_a) y.push_back(ad::add_const(scaled, latent::uniform_noise<Real>(p.shape(), rng)));
      else y.push_back(latent::relax_ste(scaled));
    }
    const LossTerms<Real> lt = loss(model, y, target, cfg.lambda);
    const double lv = lt.loss.value().item();
    if (!std::isfinite(lv))
      throw EncodeError("encode: non-finite loss at iteration " + std::to_string(it) +
                        " (mse=" + std::to_string(lt.mse.value().item()) + ")");
    if (cfg.trace_every && (it % cfg.trace_every == 0 || it + 1 == cfg.iterations))
      rep.trace.push_back({it, lv, static_cast<double>(lt.mse.value().item()),
                           lt.bits.defined() ? lt.bits.value().item() / pixels : 0.0});
    ad::backward(lt.loss);
    ad::AdamOptions opt;
    opt.lr = learning_rate(cfg, it);
    ad::adam_step<Real>(params, opt, true);
    for (auto& p : latents.levels)
      for (auto& v : p.mutable_value().vec()) v = std::clamp(v, latent_lo, latent_hi);
  }
  const auto t1 = clock::now();

  // Quantize latents, then pick a weight step per group by coordinate search
  // on the true objective with everything else held at its current state.
  res.latents = detail::round_latents(latents, cfg.latent_gain);
  const std::vector<LatentRange> ranges = latent_ranges(res.latents);

  std::array<std::vector<float>, 3> original;
  std::array<nn::ParamList<Real>, 3> groups;
  for (std::size_t gi = 0; gi < 3; ++gi) {
    groups[gi] = model.params(kNetworkGroups[gi]);
    original[gi] = flatten(groups[gi]);
  }
  std::array<double, 3> group_bits{0, 0, 0};
  double cached_d = -1, cached_rate = -1;
  auto distortion = [&] { return image_mse(image::from_tensor(reconstruct(model, res.latents)), img); };
  auto latent_bits = [&] { return encode_latents(model.marm, res.latents, ranges, false).modeled_bits; };
  auto objective = [&](double d, double rate) {
    return d + cfg.lambda * (rate + group_bits[0] + group_bits[1] + group_bits[2]) / pixels;
  };
  for (std::size_t gi = 0; gi < 3; ++gi) {
    const bool is_psi = kNetworkGroups[gi] == ad::Group::psi;
    if (is_psi || cached_d < 0) cached_d = distortion();
    if (!is_psi || cached_rate < 0) cached_rate = latent_bits();
    if (groups[gi].empty()) {
      group_bits[gi] = 0;
      res.report.step_exponents[gi] = kMaxStepExp;
      continue;
    }
    const GroupCoding best = choose_group_step(original[gi], [&](const GroupCoding& c) {
      assign<Real>(groups[gi], decode_group(c, original[gi].size()));
      group_bits[gi] = c.bits();
      const double d = is_psi ? cached_d : distortion();
      const double rate = is_psi ? latent_bits() : cached_rate;
      return objective(d, rate);
    });
    assign<Real>(groups[gi], decode_group(best, original[gi].size()));
    group_bits[gi] = best.bits();
    rep.step_exponents[gi] = best.step_exp;
    cached_d = cached_rate = -1;
  }
  const auto t2 = clock::now();

  Bitstream bs;
  bs.config = cc;
  bs.ranges = ranges;
  for (std::size_t gi = 0; gi < 3; ++gi) {
    auto coded = code_group(original[gi], rep.step_exponents[gi]);
    MARM_REQUIRE(coded.has_value(), "encode: chosen step no longer codable");
    bs.groups[gi] = std::move(*coded);
    rep.param_bytes += bs.groups[gi].payload.size();
  }
  LatentCodingResult lc;
  try {
    lc = encode_latents(model.marm, res.latents, ranges, true, param_trace);
  } catch (const BitstreamError& e) {
    throw EncodeError(std::string("encode: entropy model failed on the final latents: ") + e.what());
  }
  bs.latents = std::move(lc.bytes);
  res.bitstream = write_bitstream(bs);
  res.reconstruction = image::from_tensor(reconstruct(model, res.latents));
  const auto t3 = clock::now();

  rep.rate_bits = lc.modeled_bits;
  rep.counters = lc.counters;
  rep.latent_bytes = bs.latents.size();
  rep.total_bytes = res.bitstream.size();
  rep.bpp = 8.0 * static_cast<double>(rep.total_bytes) / pixels;
  rep.distortion = image_mse(res.reconstruction, img);
  rep.psnr = metrics::psnr(res.reconstruction, img);
  rep.final_loss = rep.distortion + cfg.lambda * rep.bpp;
  rep.train_s = secs(t0, t1);
  rep.quantize_s = secs(t1, t2);
  rep.code_s = secs(t2, t3);
  rep.total_s = secs(t0, t3);
  return res;
}

}  // namespace marm::codec

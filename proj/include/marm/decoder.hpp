#pragma once

// Bitstream -> image. Weights come first, then latents under the entropy
// model, then upsampling and synthesis. No gradient tape is ever built.

#include <chrono>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "marm/bitstream.hpp"
#include "marm/image.hpp"
#include "marm/latent_coding.hpp"
#include "marm/model.hpp"

namespace marm::codec {

struct DecodeReport {
  double params_s = 0, latents_s = 0, synthesis_s = 0, export_s = 0, total_s = 0;
  ScheduleCounters counters;
  std::size_t bytes = 0;
  double bpp = 0;

  nlohmann::json to_json() const {
    return {{"params_s", params_s},
            {"latents_s", latents_s},
            {"synthesis_s", synthesis_s},
            {"export_s", export_s},
            {"total_s", total_s},
            {"aru_passes", counters.aru_passes},
            {"arm_evaluations", counters.arm_evaluations},
            {"symbols", counters.symbols},
            {"bytes", bytes},
            {"bpp", bpp}};
  }
};

struct Decoded {
  image::Image image;
  latent::LatentPyramid latents;
  DecodeReport report;
};

// Network weights exactly as the encoder quantized them.
inline CodecModel<Real> instantiate_model(const Bitstream& bs) {
  std::mt19937_64 rng(0);
  CodecModel<Real> m = CodecModel<Real>::make(bs.config, rng);
  m.zero_all();
  for (std::size_t gi = 0; gi < kNetworkGroups.size(); ++gi) {
    const auto ps = m.params(kNetworkGroups[gi]);
    std::size_t n = 0;
    for (auto* p : ps) n += p->size();
    const std::vector<float> w = decode_group(bs.groups[gi], n);
    assign<Real>(ps, w);
  }
  return m;
}

// Upsample and synthesize integer latents; shared by encoder and decoder.
inline Tensor<Real> reconstruct(const CodecModel<Real>& m, const latent::LatentPyramid& y) {
  const latent::Geometry g = m.geometry();
  MARM_REQUIRE(y.geometry == g, "reconstruct: latent geometry does not match the model");
  std::vector<Tensor<Real>> levels;
  for (std::size_t i = 0; i < g.levels; ++i) {
    const latent::Extent e = g.level(i);
    Tensor<Real> t(Shape{1, e.h, e.w});
    for (std::size_t k = 0; k < e.count(); ++k) t[k] = static_cast<Real>(y.levels[i][k]);
    levels.push_back(std::move(t));
  }
  return m.synthesis.infer(m.upsampler.infer(levels, g));
}

inline Decoded decode(std::span<const uint8_t> bytes, ParamTrace* trace = nullptr) {
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  const auto t0 = clock::now();
  const Bitstream bs = read_bitstream(bytes);
  const CodecModel<Real> model = instantiate_model(bs);
  const auto t1 = clock::now();

  Decoded out;
  out.latents = decode_latents(model.marm, model.geometry(), bs.ranges, bs.latents, out.report.counters, trace);
  const auto t2 = clock::now();
  const Tensor<Real> x = reconstruct(model, out.latents);
  const auto t3 = clock::now();
  out.image = image::from_tensor(x);
  const auto t4 = clock::now();

  DecodeReport& r = out.report;
  r.params_s = secs(t0, t1);
  r.latents_s = secs(t1, t2);
  r.synthesis_s = secs(t2, t3);
  r.export_s = secs(t3, t4);
  r.total_s = secs(t0, t4);
  r.bytes = bytes.size();
  r.bpp = 8.0 * static_cast<double>(bytes.size()) / static_cast<double>(bs.config.height * bs.config.width);
  return out;
}

}  // namespace marm::codec

#pragma once

// The one schedule both sides run. Coding order: level 0 -> L-1; inside an
// ARU level anchors (raster) then non-anchors (raster); inside an ARM level
// raster order. The encoder plugs in a sink that pushes known symbols, the
// decoder one that pulls them from the stream, so (mu, sigma) are produced
// by literally the same code on both sides.

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "marm/entropy_model.hpp"
#include "marm/error.hpp"
#include "marm/rans.hpp"

namespace marm::codec {

struct LatentRange {
  int32_t min = 0, max = 0;
  friend bool operator==(const LatentRange&, const LatentRange&) = default;
};

inline std::vector<LatentRange> latent_ranges(const latent::LatentPyramid& y) {
  std::vector<LatentRange> r;
  for (const auto& level : y.levels) {
    LatentRange lr{0, 0};
    if (!level.empty()) lr = {*std::min_element(level.begin(), level.end()), *std::max_element(level.begin(), level.end())};
    r.push_back(lr);
  }
  return r;
}

struct ScheduleCounters {
  std::size_t aru_passes = 0;       // vectorized network evaluations
  std::size_t arm_evaluations = 0;  // per-pixel network evaluations
  std::size_t symbols = 0;
};

// (mu, sigma) in coding order; filled when tracing is requested.
struct ParamTrace {
  std::vector<float> mu, sigma;
  friend bool operator==(const ParamTrace&, const ParamTrace&) = default;
};

namespace detail {

// Reuses the previous table when the model repeats bit-for-bit.
class CdfCache {
 public:
  const coder::QuantizedCdf& get(float mu, float sigma, const LatentRange& r) {
    if (!std::isfinite(mu) || !std::isfinite(sigma) || !(sigma > 0))
      throw BitstreamError(BitstreamError::Kind::corrupt_payload, "entropy model produced a non-finite prediction");
    const uint32_t mb = std::bit_cast<uint32_t>(mu), sb = std::bit_cast<uint32_t>(sigma);
    if (valid_ && mb == mu_ && sb == sigma_ && r == range_) return cdf_;
    // Predictions far outside the alphabet only ever select the edge symbol.
    const double m = std::clamp(static_cast<double>(mu), static_cast<double>(r.min) - 64.0,
                                static_cast<double>(r.max) + 64.0);
    cdf_.assign_laplace(m, static_cast<double>(sigma), r.min, r.max);
    mu_ = mb;
    sigma_ = sb;
    range_ = r;
    valid_ = true;
    return cdf_;
  }

 private:
  coder::QuantizedCdf cdf_;
  uint32_t mu_ = 0, sigma_ = 0;
  LatentRange range_;
  bool valid_ = false;
};

}  // namespace detail

// Sink contract: int32_t operator()(std::size_t level, std::size_t index,
// const coder::QuantizedCdf& cdf) returns the symbol at that position.
template <typename Sink>
void run_latent_schedule(const entropy::MarmNetworks<Real>& nets, const latent::Geometry& g,
                         std::span<const LatentRange> ranges, latent::LatentPyramid& y, Sink& sink,
                         ScheduleCounters& counters, ParamTrace* trace = nullptr) {
  const entropy::MarmConfig& cfg = nets.config;
  MARM_REQUIRE(cfg.levels == g.levels && ranges.size() == g.levels && y.levels.size() == g.levels,
               "latent schedule: level count mismatch");
  detail::CdfCache cache;
  auto code_one = [&](std::size_t level, std::size_t idx, float mu, float sigma) {
    if (trace) {
      trace->mu.push_back(mu);
      trace->sigma.push_back(sigma);
    }
    const int32_t v = sink(level, idx, cache.get(mu, sigma, ranges[level]));
    y.levels[level][idx] = v;
    ++counters.symbols;
    return v;
  };

  entropy::LevelParams<Real> prev;
  for (std::size_t i = 0; i < g.levels; ++i) {
    const latent::Extent e = g.level(i);
    std::vector<int32_t>& level = y.levels[i];
    MARM_REQUIRE(level.size() == e.count(), "latent schedule: level ", i, " has wrong size");

    if (cfg.is_arm_level(i)) {
      entropy::ArmEvaluator<Real> ev(nets, i, e);
      for (std::size_t r = 0; r < e.h; ++r)
        for (std::size_t c = 0; c < e.w; ++c) {
          const auto [mu, sigma] = ev.params(r, c);
          ++counters.arm_evaluations;
          ev.set(r, c, static_cast<Real>(code_one(i, r * e.w + c, mu, sigma)));
        }
      continue;
    }

    entropy::LevelParams<Real> anchors;
    if (i == 0) {
      anchors = entropy::constant_params<Real>(e);
    } else {
      const latent::Extent pe = g.level(i - 1);
      Tensor<Real> py(Shape{1, pe.h, pe.w});
      for (std::size_t k = 0; k < pe.count(); ++k) py[k] = static_cast<Real>(y.levels[i - 1][k]);
      anchors = entropy::infer_pass1(nets, py, prev, i, e);
      ++counters.aru_passes;
    }
    Tensor<Real> cur(Shape{1, e.h, e.w});
    for (std::size_t r = 0; r < e.h; ++r)
      for (std::size_t c = (r & 1); c < e.w; c += 2) {
        const std::size_t k = r * e.w + c;
        cur[k] = static_cast<Real>(code_one(i, k, anchors.mu[k], anchors.sigma[k]));
      }
    const entropy::LevelParams<Real> rest = entropy::infer_pass2(nets, cur, anchors, i);
    ++counters.aru_passes;
    for (std::size_t r = 0; r < e.h; ++r)
      for (std::size_t c = 1 - (r & 1); c < e.w; c += 2) {
        const std::size_t k = r * e.w + c;
        code_one(i, k, rest.mu[k], rest.sigma[k]);
      }
    prev = anchors;
    for (std::size_t k = 0; k < e.count(); ++k)
      if (!latent::is_anchor(k / e.w, k % e.w)) {
        prev.mu[k] = rest.mu[k];
        prev.sigma[k] = rest.sigma[k];
      }
  }
}

// Encoder side: pushes the known symbol and accumulates its exact cost.
struct EncodingSink {
  const latent::LatentPyramid* source = nullptr;
  coder::RansEncoder* encoder = nullptr;  // null = measure only
  double bits = 0;

  int32_t operator()(std::size_t level, std::size_t idx, const coder::QuantizedCdf& cdf) {
    const int32_t v = source->levels[level][idx];
    MARM_REQUIRE(cdf.contains(v), "latent ", v, " outside the signaled range of level ", level);
    bits += cdf.bits(v);
    if (encoder) encoder->put(cdf, v);
    return v;
  }
};

struct DecodingSink {
  coder::RansDecoder* decoder = nullptr;

  int32_t operator()(std::size_t, std::size_t, const coder::QuantizedCdf& cdf) {
    return static_cast<int32_t>(decoder->decode(cdf));
  }
};

struct LatentCodingResult {
  std::vector<uint8_t> bytes;
  double modeled_bits = 0;  // sum of -log2 p over the quantized tables
  ScheduleCounters counters;
};

inline LatentCodingResult encode_latents(const entropy::MarmNetworks<Real>& nets, const latent::LatentPyramid& y,
                                         std::span<const LatentRange> ranges, bool emit = true,
                                         ParamTrace* trace = nullptr) {
  coder::RansEncoder enc;
  EncodingSink sink{&y, emit ? &enc : nullptr, 0.0};
  latent::LatentPyramid scratch(y.geometry);
  LatentCodingResult r;
  run_latent_schedule(nets, y.geometry, ranges, scratch, sink, r.counters, trace);
  r.modeled_bits = sink.bits;
  if (emit) r.bytes = enc.finish();
  return r;
}

inline latent::LatentPyramid decode_latents(const entropy::MarmNetworks<Real>& nets, const latent::Geometry& g,
                                            std::span<const LatentRange> ranges, std::span<const uint8_t> bytes,
                                            ScheduleCounters& counters, ParamTrace* trace = nullptr) {
  coder::RansDecoder dec(bytes);
  DecodingSink sink{&dec};
  latent::LatentPyramid y(g);
  run_latent_schedule(nets, g, ranges, y, sink, counters, trace);
  dec.finish();
  return y;
}

}  // namespace marm::codec

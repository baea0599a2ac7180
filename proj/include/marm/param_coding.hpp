#pragma once

// Network weight coding. Each group is quantized to a uniform step 2^-e,
// e in [4, 9], and the integers are rANS-coded under one zero-mean Laplace
// whose scale is fitted to the group and sent in the header.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "marm/error.hpp"
#include "marm/latents.hpp"
#include "marm/rans.hpp"

namespace marm::codec {

inline constexpr int kMinStepExp = 4;
inline constexpr int kMaxStepExp = 9;
// Widest integer alphabet a group may use.
inline constexpr int64_t kMaxParamSpan = int64_t{1} << 14;

inline double step_of(int exp) { return std::ldexp(1.0, -exp); }

// q * 2^-exp, exact in float for |q| < 2^24.
inline float dequantize_weight(int64_t q, int exp) { return static_cast<float>(std::ldexp(static_cast<double>(q), -exp)); }

struct GroupCoding {
  int step_exp = kMaxStepExp;
  int32_t qmin = 0, qmax = 0;
  float sigma = 1.0f;
  std::vector<uint8_t> payload;

  double bits() const { return 8.0 * static_cast<double>(payload.size()); }
};

inline std::vector<int64_t> quantize_weights(std::span<const float> w, int exp) {
  const double inv = std::ldexp(1.0, exp);
  std::vector<int64_t> q(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = static_cast<double>(w[i]) * inv;
    MARM_REQUIRE(std::isfinite(v), "quantize_weights: non-finite weight");
    q[i] = std::abs(v) < 1e15 ? latent::quantize_uniform(v) : (v > 0 ? int64_t{1} << 50 : -(int64_t{1} << 50));
  }
  return q;
}

// Laplace fit for integers q: sigma = sqrt(2) * mean|q|, floored so an
// all-zero group still gets a valid (very peaked) model.
inline float fit_sigma(std::span<const int64_t> q) {
  double s = 0;
  for (int64_t v : q) s += static_cast<double>(std::llabs(v));
  const double mean_abs = q.empty() ? 0.0 : s / static_cast<double>(q.size());
  return static_cast<float>(std::max(mean_abs * std::numbers::sqrt2, 0.05));
}

// nullopt when the integer span exceeds the coder alphabet bound.
inline std::optional<GroupCoding> code_group(std::span<const float> w, int exp) {
  MARM_REQUIRE(exp >= kMinStepExp && exp <= kMaxStepExp, "code_group: step exponent ", exp);
  const auto q = quantize_weights(w, exp);
  GroupCoding g;
  g.step_exp = exp;
  int64_t lo = 0, hi = 0;
  for (int64_t v : q) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo + 1 > kMaxParamSpan) return std::nullopt;
  g.qmin = static_cast<int32_t>(lo);
  g.qmax = static_cast<int32_t>(hi);
  g.sigma = fit_sigma(q);
  const coder::QuantizedCdf cdf = coder::quantize_cdf(0.0, g.sigma, lo, hi);
  coder::RansEncoder enc;
  for (int64_t v : q) enc.put(cdf, v);
  g.payload = enc.finish();
  return g;
}

inline std::vector<float> decode_group(const GroupCoding& g, std::size_t count) {
  if (g.step_exp < kMinStepExp || g.step_exp > kMaxStepExp || g.qmin > g.qmax ||
      static_cast<int64_t>(g.qmax) - g.qmin + 1 > kMaxParamSpan || !(g.sigma > 0) || !std::isfinite(g.sigma))
    throw BitstreamError(BitstreamError::Kind::bad_header, "parameter group header out of range");
  const coder::QuantizedCdf cdf = coder::quantize_cdf(0.0, g.sigma, g.qmin, g.qmax);
  coder::RansDecoder dec(g.payload);
  std::vector<float> w(count);
  for (auto& v : w) v = dequantize_weight(dec.decode(cdf), g.step_exp);
  dec.finish();
  return w;
}

// Exhaustive search over the step exponents. `objective(coding)` returns the
// cost of using that coding; ties go to the smaller payload, then the
// coarser step.
inline GroupCoding choose_group_step(std::span<const float> w,
                                     const std::function<double(const GroupCoding&)>& objective) {
  std::optional<GroupCoding> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int e = kMinStepExp; e <= kMaxStepExp; ++e) {
    auto g = code_group(w, e);
    if (!g) continue;
    const double cost = objective(*g);
    if (!best || cost < best_cost || (cost == best_cost && g->payload.size() < best->payload.size())) {
      best_cost = cost;
      best = std::move(g);
    }
  }
  if (!best) throw EncodeError("no weight step keeps the parameter alphabet below 2^14 symbols");
  return *best;
}

}  // namespace marm::codec

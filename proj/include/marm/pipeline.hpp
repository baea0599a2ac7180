#pragma once

// Latent upsampler and mixed synthesis network.
//
// Synthesis wiring (input z: [L,H,W]):
//   h_0 = z
//   h_n = h_{n-1} + pointwise_n(depthwise_n(relu(h_{n-1}))) + bias_n,  n = 1..N
//   m   = relu(W2 relu(W1 z + b1) + b2)                (per-pixel MLP branch)
//   out = P [h_N ; m] + c                              (1x1 projection to RGB)
// Depthwise kernels start as Dirac, pointwise weights and the MLP columns of
// P start at zero, so at initialisation out = P_h z + c.

#include <cmath>
#include <random>
#include <vector>

#include "marm/entropy_model.hpp"
#include "marm/latents.hpp"
#include "marm/nn.hpp"

namespace marm::pipeline {

struct SynthesisConfig {
  std::size_t conv_layers = 3;
  std::size_t kernel = 7;
  std::size_t mlp_width = 12;
  std::size_t mlp_hidden_layers = 2;

  friend bool operator==(const SynthesisConfig&, const SynthesisConfig&) = default;
};

inline constexpr std::size_t kUpsamplerKernel = 8;
inline constexpr std::size_t kUpsamplerPad = 2;

inline double bicubic_weight(double d, double a = -0.75) {
  d = std::abs(d);
  if (d <= 1) return ((a + 2) * d - (a + 3)) * d * d + 1;
  if (d < 2) return ((a * d - 5 * a) * d + 8 * a) * d - 4 * a;
  return 0;
}

// 2x bicubic interpolation expressed as a stride-2 transposed-conv kernel.
template <typename T>
Tensor<T> bicubic_upsampling_kernel(std::size_t k = kUpsamplerKernel) {
  std::vector<double> taps(k);
  const double centre = (static_cast<double>(k) - 1.0) / 2.0;
  for (std::size_t j = 0; j < k; ++j) taps[j] = bicubic_weight((static_cast<double>(j) - centre) / 2.0);
  Tensor<T> w(Shape{1, 1, k, k});
  for (std::size_t y = 0; y < k; ++y)
    for (std::size_t x = 0; x < k; ++x) w[y * k + x] = static_cast<T>(taps[y] * taps[x]);
  return w;
}

// One shared learnable stride-2 kernel applied repeatedly, with edge
// replication before each step and a centre crop to the next level's extent.
template <typename T>
struct UpsamplerNetwork {
  ad::Parameter<T> kernel;

  static UpsamplerNetwork make() {
    return {ad::Parameter<T>(bicubic_upsampling_kernel<T>(), ad::Group::phi)};
  }

  void collect(nn::ParamList<T>& out) { out.push_back(&kernel); }
  std::size_t param_count() const { return kernel.size(); }

  ad::Var<T> step(const ad::Var<T>& x, latent::Extent target) const {
    return ad::center_crop(ad::transposed_conv2d(ad::pad_replicate(x, kUpsamplerPad), kernel.var), target.h,
                           target.w);
  }

  // z = [L,H,W]: level i upsampled L-1-i times; the last level passes through.
  ad::Var<T> forward(const std::vector<ad::Var<T>>& levels, const latent::Geometry& g) const {
    MARM_REQUIRE(levels.size() == g.levels, "upsample: ", levels.size(), " levels for L=", g.levels);
    std::vector<ad::Var<T>> chans;
    for (std::size_t i = 0; i < g.levels; ++i) {
      const latent::Extent e = g.level(i);
      MARM_REQUIRE(levels[i].shape() == (Shape{1, e.h, e.w}), "upsample: level ", i, " has shape ",
                   levels[i].shape());
      ad::Var<T> v = levels[i];
      for (std::size_t s = i + 1; s < g.levels; ++s) v = step(v, g.level(s));
      chans.push_back(v);
    }
    return ad::concat_channels(chans);
  }

  Tensor<T> infer_step(const Tensor<T>& x, latent::Extent target) const {
    const Chw d = chw_of(x);
    const std::size_t p = kUpsamplerPad;
    const std::size_t ph = d.h + 2 * p, pw = d.w + 2 * p;
    Tensor<T> padded(Shape{1, ph, pw});
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) - static_cast<long>(p), 0, static_cast<long>(d.h) - 1));
      for (std::size_t xx = 0; xx < pw; ++xx) {
        const std::size_t sx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(xx) - static_cast<long>(p), 0, static_cast<long>(d.w) - 1));
        padded[y * pw + xx] = x[sy * d.w + sx];
      }
    }
    Tensor<T> full(Shape{1, 2 * ph, 2 * pw});
    kernels::tconv2_forward(padded.data(), 1, ph, pw, kernel.value().data(), static_cast<const T*>(nullptr), 1,
                            kUpsamplerKernel, full.data());
    return entropy::detail::crop(full, target.h, target.w);
  }

  Tensor<T> infer(const std::vector<Tensor<T>>& levels, const latent::Geometry& g) const {
    MARM_REQUIRE(levels.size() == g.levels, "upsample: ", levels.size(), " levels for L=", g.levels);
    Tensor<T> z(Shape{g.levels, g.height, g.width});
    const std::size_t plane = g.height * g.width;
    for (std::size_t i = 0; i < g.levels; ++i) {
      const latent::Extent e = g.level(i);
      MARM_REQUIRE(levels[i].shape() == (Shape{1, e.h, e.w}), "upsample: level ", i, " has shape ",
                   levels[i].shape());
      Tensor<T> v = levels[i];
      for (std::size_t s = i + 1; s < g.levels; ++s) v = infer_step(v, g.level(s));
      std::copy(v.vec().begin(), v.vec().end(), z.vec().begin() + static_cast<long>(i * plane));
    }
    return z;
  }
};

template <typename T>
struct SynthesisNetwork {
  SynthesisConfig config;
  std::size_t in_channels = 0;
  std::vector<ad::Parameter<T>> depthwise, pointwise, pointwise_bias;
  std::vector<nn::Dense<T>> mlp;  // hidden layers only
  nn::Dense<T> projection;        // [3, L + mlp_width]

  template <typename Rng>
  static SynthesisNetwork make(std::size_t channels, const SynthesisConfig& cfg, Rng& rng) {
    MARM_REQUIRE(channels >= 1, "synthesis: zero input channels");
    MARM_REQUIRE(cfg.kernel % 2 == 1, "synthesis: kernel must be odd");
    SynthesisNetwork s;
    s.config = cfg;
    s.in_channels = channels;
    const std::size_t k = cfg.kernel;
    for (std::size_t n = 0; n < cfg.conv_layers; ++n) {
      Tensor<T> dirac(Shape{channels, k, k}, T(0));
      for (std::size_t c = 0; c < channels; ++c) dirac[c * k * k + (k / 2) * k + k / 2] = T(1);
      s.depthwise.emplace_back(std::move(dirac), ad::Group::theta);
      s.pointwise.emplace_back(Tensor<T>(Shape{channels, channels}, T(0)), ad::Group::theta);
      s.pointwise_bias.emplace_back(Tensor<T>(Shape{channels}, T(0)), ad::Group::theta);
    }
    std::size_t cur = channels;
    for (std::size_t i = 0; i < cfg.mlp_hidden_layers; ++i) {
      s.mlp.push_back({ad::Parameter<T>(nn::he_uniform<T>(Shape{cfg.mlp_width, cur}, cur, rng), ad::Group::theta),
                       ad::Parameter<T>(Tensor<T>(Shape{cfg.mlp_width}, T(0)), ad::Group::theta)});
      cur = cfg.mlp_width;
    }
    const std::size_t mlp_out = cfg.mlp_hidden_layers ? cfg.mlp_width : 0;
    Tensor<T> proj(Shape{3, channels + mlp_out}, T(0));
    const Tensor<T> ph = nn::he_uniform<T>(Shape{3, channels}, channels, rng);
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t c = 0; c < channels; ++c) proj[o * (channels + mlp_out) + c] = ph[o * channels + c];
    s.projection = {ad::Parameter<T>(std::move(proj), ad::Group::theta),
                    ad::Parameter<T>(Tensor<T>(Shape{3}, T(0.5)), ad::Group::theta)};
    return s;
  }

  void collect(nn::ParamList<T>& out) {
    for (std::size_t n = 0; n < depthwise.size(); ++n) {
      out.push_back(&depthwise[n]);
      out.push_back(&pointwise[n]);
      out.push_back(&pointwise_bias[n]);
    }
    for (auto& l : mlp) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    out.push_back(&projection.w);
    out.push_back(&projection.b);
  }

  std::size_t param_count() {
    nn::ParamList<T> ps;
    collect(ps);
    std::size_t n = 0;
    for (auto* p : ps) n += p->size();
    return n;
  }

  ad::Var<T> forward(const ad::Var<T>& z) const {
    MARM_REQUIRE(z.value().rank() == 3 && z.shape()[0] == in_channels, "synthesize: expected ", in_channels,
                 " channels, got ", z.shape());
    ad::Var<T> h = z;
    for (std::size_t n = 0; n < depthwise.size(); ++n)
      h = ad::add(h, ad::separable_conv2d(ad::relu(h), depthwise[n].var, pointwise[n].var, &pointwise_bias[n].var));
    std::vector<ad::Var<T>> parts{h};
    if (!mlp.empty()) {
      ad::Var<T> m = z;
      for (const auto& l : mlp) m = ad::relu(ad::channel_mix(m, l.w.var, l.b.var));
      parts.push_back(m);
    }
    return ad::channel_mix(parts.size() > 1 ? ad::concat_channels(parts) : h, projection.w.var, projection.b.var);
  }

  Tensor<T> infer(const Tensor<T>& z) const {
    MARM_REQUIRE(z.rank() == 3 && z.shape()[0] == in_channels, "synthesize: expected ", in_channels,
                 " channels, got ", z.shape());
    const Chw d = chw_of(z);
    const std::size_t plane = d.plane();
    Tensor<T> h = z;
    Tensor<T> act(z.shape()), dw(z.shape()), pw(z.shape());
    for (std::size_t n = 0; n < depthwise.size(); ++n) {
      for (std::size_t i = 0; i < h.size(); ++i) act[i] = h[i] > T(0) ? h[i] : T(0);
      kernels::depthwise_forward(act.data(), d.c, d.h, d.w, depthwise[n].value().data(), config.kernel, dw.data());
      kernels::channel_mix_forward(dw.data(), d.c, plane, pointwise[n].value().data(),
                                   pointwise_bias[n].value().data(), d.c, pw.data());
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += pw[i];
    }
    Tensor<T> cat = h;
    if (!mlp.empty()) {
      Tensor<T> m = z;
      for (const auto& l : mlp) {
        Tensor<T> next(Shape{l.out(), d.h, d.w});
        kernels::channel_mix_forward(m.data(), l.in(), plane, l.w.value().data(), l.b.value().data(), l.out(),
                                     next.data());
        for (auto& v : next.vec()) v = v > T(0) ? v : T(0);
        m = std::move(next);
      }
      cat = Tensor<T>(Shape{h.shape()[0] + m.shape()[0], d.h, d.w});
      std::copy(h.vec().begin(), h.vec().end(), cat.vec().begin());
      std::copy(m.vec().begin(), m.vec().end(), cat.vec().begin() + static_cast<long>(h.size()));
    }
    Tensor<T> out(Shape{3, d.h, d.w});
    kernels::channel_mix_forward(cat.data(), cat.shape()[0], plane, projection.w.value().data(),
                                 projection.b.value().data(), 3, out.data());
    return out;
  }
};

// Analytic multiply-accumulate counts per decoded image pixel.
struct MacsReport {
  double upsampler = 0, synthesis = 0, aru = 0, arm = 0;
  double total() const { return upsampler + synthesis + aru + arm; }
};

inline double synthesis_macs_per_pixel(std::size_t levels, const SynthesisConfig& s) {
  const double L = static_cast<double>(levels);
  const double k2 = static_cast<double>(s.kernel * s.kernel);
  double macs = static_cast<double>(s.conv_layers) * (L * k2 + L * L);
  double cur = L;
  for (std::size_t i = 0; i < s.mlp_hidden_layers; ++i) {
    macs += cur * static_cast<double>(s.mlp_width);
    cur = static_cast<double>(s.mlp_width);
  }
  const double mlp_out = s.mlp_hidden_layers ? static_cast<double>(s.mlp_width) : 0.0;
  if (s.conv_layers == 0 && s.mlp_hidden_layers == 0) return 0;
  macs += 3.0 * (L + mlp_out);
  return macs;
}

inline double mlp_macs(std::size_t in, std::size_t width, std::size_t hidden, std::size_t out) {
  double m = 0, cur = static_cast<double>(in);
  for (std::size_t i = 0; i < hidden; ++i) {
    m += cur * static_cast<double>(width);
    cur = static_cast<double>(width);
  }
  return m + cur * static_cast<double>(out);
}

// Per-latent-pixel costs of the entropy networks.
inline double aru_pass1_macs(const entropy::MarmConfig& c) {
  const double k2 = static_cast<double>(c.aru_pass1_kernel * c.aru_pass1_kernel);
  return 3.0 * static_cast<double>(c.aru_width) * k2 / 4.0 +
         mlp_macs(c.aru_width + 3, c.aru_width, c.mlp_hidden_layers, 2);
}
inline double aru_pass2_macs(const entropy::MarmConfig& c) {
  const double k2 = static_cast<double>(c.aru_pass2_kernel * c.aru_pass2_kernel);
  return 3.0 * static_cast<double>(c.aru_width) * k2 + mlp_macs(c.aru_width + 3, c.aru_width, c.mlp_hidden_layers, 2);
}
inline double arm_macs(const entropy::MarmConfig& c) {
  return mlp_macs(c.arm_context + 1, c.arm_width, c.mlp_hidden_layers, 2);
}

inline MacsReport count_macs(const latent::Geometry& g, const entropy::MarmConfig& marm, const SynthesisConfig& syn) {
  MacsReport r;
  const double n = static_cast<double>(g.height * g.width);
  const double up_per_out = static_cast<double>(kUpsamplerKernel * kUpsamplerKernel) / 4.0;
  for (std::size_t i = 0; i + 1 < g.levels; ++i)
    for (std::size_t s = i + 1; s < g.levels; ++s) r.upsampler += up_per_out * static_cast<double>(g.level(s).count());
  r.upsampler /= n;
  r.synthesis = synthesis_macs_per_pixel(g.levels, syn);
  for (std::size_t i = 0; i < g.levels; ++i) {
    const double px = static_cast<double>(g.level(i).count()) / n;
    if (marm.is_arm_level(i)) {
      r.arm += arm_macs(marm) * px;
    } else {
      if (i > 0) r.aru += aru_pass1_macs(marm) * px;
      r.aru += aru_pass2_macs(marm) * px;
    }
  }
  return r;
}

}  // namespace marm::pipeline

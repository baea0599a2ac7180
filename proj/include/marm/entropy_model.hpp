#pragma once

// Mixed autoregressive entropy model. Levels [0, L-M) are parameterised by
// autoregressive upsampler (ARU) passes that predict a whole level at once
// from the level below, with a two-pass checkerboard inside each level.
// Levels [L-M, L) use one shared pixel-wise autoregressive model (ARM) over a
// causal raster neighbourhood.

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "marm/laplace.hpp"
#include "marm/latents.hpp"
#include "marm/nn.hpp"

namespace marm::entropy {

struct MarmConfig {
  std::size_t levels = 7;           // L
  std::size_t arm_levels = 0;       // M
  std::size_t arm_context = 12;
  std::size_t arm_width = 12;
  std::size_t aru_width = 6;
  std::size_t aru_pass1_kernel = 4;  // transposed conv, stride 2
  std::size_t aru_pass2_kernel = 3;
  std::size_t mlp_hidden_layers = 2;

  std::size_t aru_levels() const { return levels - arm_levels; }
  bool is_arm_level(std::size_t i) const { return i >= aru_levels(); }

  void validate() const {
    MARM_REQUIRE(levels >= 1, "MarmConfig: L must be >= 1");
    MARM_REQUIRE(arm_levels <= levels, "MarmConfig: M=", arm_levels, " exceeds L=", levels);
    MARM_REQUIRE(arm_context >= 1 && arm_context <= 40, "MarmConfig: ARM context size ", arm_context);
    MARM_REQUIRE(arm_width >= 1 && aru_width >= 1, "MarmConfig: zero network width");
    MARM_REQUIRE(aru_pass1_kernel >= 2, "MarmConfig: pass-1 kernel below stride");
    MARM_REQUIRE(aru_pass2_kernel % 2 == 1, "MarmConfig: pass-2 kernel must be odd");
  }

  friend bool operator==(const MarmConfig&, const MarmConfig&) = default;
};

// Causal raster neighbours, nearest first (ties in raster order).
inline std::vector<std::pair<int, int>> arm_offsets(std::size_t count) {
  std::vector<std::pair<int, int>> all;
  for (int dy = -6; dy <= 0; ++dy)
    for (int dx = -6; dx <= 6; ++dx)
      if (dy < 0 || dx < 0) all.emplace_back(dy, dx);
  std::stable_sort(all.begin(), all.end(), [](auto a, auto b) {
    const int da = a.first * a.first + a.second * a.second;
    const int db = b.first * b.first + b.second * b.second;
    return da < db;
  });
  MARM_REQUIRE(count <= all.size(), "arm_offsets: ", count, " neighbours requested");
  all.resize(count);
  std::sort(all.begin(), all.end());  // raster order
  return all;
}

// Decode plan: one step per network evaluation / coding group.
struct PlanStep {
  enum class Kind { aru_constant_anchors, aru_pass1, aru_pass2, arm_level };
  Kind kind;
  std::size_t level;
};

struct Plan {
  std::vector<PlanStep> steps;
  std::size_t vectorized_passes = 0;  // ARU network evaluations
  std::size_t arm_levels = 0;
};

// Levels 0..L-M-1 use ARU (level 0 anchors under the constant prior),
// levels L-M..L-1 use the shared ARM. The ARU segment costs 2(L-M)-1
// vectorised passes regardless of image size.
inline Plan marm_param_schedule(const latent::Geometry& g, const MarmConfig& cfg) {
  cfg.validate();
  MARM_REQUIRE(g.levels == cfg.levels, "schedule: geometry has ", g.levels, " levels, config ", cfg.levels);
  Plan p;
  for (std::size_t i = 0; i < cfg.levels; ++i) {
    if (cfg.is_arm_level(i)) {
      p.steps.push_back({PlanStep::Kind::arm_level, i});
      ++p.arm_levels;
      continue;
    }
    if (i == 0) {
      p.steps.push_back({PlanStep::Kind::aru_constant_anchors, 0});
    } else {
      p.steps.push_back({PlanStep::Kind::aru_pass1, i});
      ++p.vectorized_passes;
    }
    p.steps.push_back({PlanStep::Kind::aru_pass2, i});
    ++p.vectorized_passes;
  }
  return p;
}

// (mu, sigma) for one level, each [1,H,W].
template <typename T>
struct LevelParams {
  Tensor<T> mu, sigma;
};

template <typename T>
struct MarmNetworks {
  MarmConfig config;
  // ARU pass 1: tconv [3, width, k, k] + bias, then per-pixel MLP over
  // (features, PE, LE) -> (mu, log sigma).
  ad::Parameter<T> pass1_w, pass1_b;
  nn::Mlp<T> pass1_mlp;
  // ARU pass 2: conv [width, 3, k, k] + bias over masked anchors, then MLP.
  ad::Parameter<T> pass2_w, pass2_b;
  nn::Mlp<T> pass2_mlp;
  // ARM: MLP over (context, LE) -> (mu, log sigma).
  nn::Mlp<T> arm_mlp;

  template <typename Rng>
  static MarmNetworks make(const MarmConfig& cfg, Rng& rng) {
    cfg.validate();
    MarmNetworks n;
    n.config = cfg;
    const std::size_t w = cfg.aru_width, k1 = cfg.aru_pass1_kernel, k2 = cfg.aru_pass2_kernel;
    n.pass1_w = ad::Parameter<T>(nn::he_uniform<T>(Shape{3, w, k1, k1}, 3 * k1 * k1 / 4, rng), ad::Group::psi);
    n.pass1_b = ad::Parameter<T>(Tensor<T>(Shape{w}, T(0)), ad::Group::psi);
    n.pass1_mlp = nn::Mlp<T>::make(w + 3, w, cfg.mlp_hidden_layers, 2, ad::Group::psi, rng);
    n.pass2_w = ad::Parameter<T>(nn::he_uniform<T>(Shape{w, 3, k2, k2}, 3 * k2 * k2, rng), ad::Group::psi);
    n.pass2_b = ad::Parameter<T>(Tensor<T>(Shape{w}, T(0)), ad::Group::psi);
    n.pass2_mlp = nn::Mlp<T>::make(w + 3, w, cfg.mlp_hidden_layers, 2, ad::Group::psi, rng);
    n.arm_mlp = nn::Mlp<T>::make(cfg.arm_context + 1, cfg.arm_width, cfg.mlp_hidden_layers, 2, ad::Group::psi, rng);
    return n;
  }

  void collect(nn::ParamList<T>& out) {
    out.push_back(&pass1_w);
    out.push_back(&pass1_b);
    pass1_mlp.collect(out);
    out.push_back(&pass2_w);
    out.push_back(&pass2_b);
    pass2_mlp.collect(out);
    arm_mlp.collect(out);
  }

  std::size_t param_count() {
    nn::ParamList<T> ps;
    collect(ps);
    std::size_t n = 0;
    for (auto* p : ps) n += p->size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Taped (training) forward.

template <typename T>
struct TapedLevel {
  ad::Var<T> mu, sigma;
};

namespace detail {

template <typename T>
ad::Var<T> with_encodings(const ad::Var<T>& features, std::size_t level, std::size_t levels) {
  const latent::Extent e{features.shape()[1], features.shape()[2]};
  return ad::concat_channels<T>({features, ad::constant(latent::positional_encoding<T>(e)),
                                 ad::constant(latent::level_encoding_plane<T>(level, levels, e))});
}

template <typename T>
TapedLevel<T> split_head(const ad::Var<T>& head) {
  return {ad::slice_channels(head, 0, 1),
          ad::exp_clamped(ad::slice_channels(head, 1, 2), static_cast<T>(laplace::kSigmaFloor),
                          static_cast<T>(laplace::kSigmaCap))};
}

}  // namespace detail

// Pass 1: anchor parameters of level i from level i-1's values and params.
template <typename T>
TapedLevel<T> aru_pass1(const MarmNetworks<T>& n, const ad::Var<T>& prev_y, const TapedLevel<T>& prev,
                        std::size_t level, latent::Extent target) {
  MARM_REQUIRE(level >= 1, "aru_pass1: level 0 has no predecessor");
  MARM_REQUIRE(prev_y.shape() == prev.mu.shape() && prev_y.shape() == prev.sigma.shape(),
               "aru_pass1: geometry mismatch");
  const ad::Var<T> in = ad::concat_channels<T>({prev_y, prev.mu, prev.sigma});
  ad::Var<T> f = ad::transposed_conv2d(in, n.pass1_w.var, &n.pass1_b.var);
  f = ad::relu(ad::center_crop(f, target.h, target.w));
  return detail::split_head(n.pass1_mlp.forward(detail::with_encodings(f, level, n.config.levels)));
}

// Pass 2: non-anchor parameters from the level's anchors and anchor params.
template <typename T>
TapedLevel<T> aru_pass2(const MarmNetworks<T>& n, const ad::Var<T>& y, const TapedLevel<T>& anchors,
                        std::size_t level) {
  MARM_REQUIRE(y.shape() == anchors.mu.shape() && y.shape() == anchors.sigma.shape(),
               "aru_pass2: geometry mismatch");
  const latent::Extent e{y.shape()[1], y.shape()[2]};
  const Tensor<T> mask = latent::anchor_mask<T>(e);
  const ad::Var<T> in = ad::concat_channels<T>(
      {ad::mul_const(y, mask), ad::mul_const(anchors.mu, mask), ad::mul_const(anchors.sigma, mask)});
  ad::Var<T> f = ad::relu(ad::conv2d(in, n.pass2_w.var, n.pass2_b.var));
  return detail::split_head(n.pass2_mlp.forward(detail::with_encodings(f, level, n.config.levels)));
}

template <typename T>
TapedLevel<T> arm_params_map(const MarmNetworks<T>& n, const ad::Var<T>& y, std::size_t level) {
  const latent::Extent e{y.shape()[1], y.shape()[2]};
  const ad::Var<T> ctx = ad::gather_neighbors(y, arm_offsets(n.config.arm_context));
  const ad::Var<T> in =
      ad::concat_channels<T>({ctx, ad::constant(latent::level_encoding_plane<T>(level, n.config.levels, e))});
  return detail::split_head(n.arm_mlp.forward(in));
}

template <typename T>
TapedLevel<T> constant_prior(latent::Extent e) {
  return {ad::constant(Tensor<T>(Shape{1, e.h, e.w}, T(0))),
          ad::constant(Tensor<T>(Shape{1, e.h, e.w}, static_cast<T>(laplace::kSigmaInit)))};
}

// Entropy parameters of every level given (relaxed) latents, following the
// same plan the decoder runs.
template <typename T>
std::vector<TapedLevel<T>> taped_params(const MarmNetworks<T>& n, const std::vector<ad::Var<T>>& y) {
  const MarmConfig& cfg = n.config;
  MARM_REQUIRE(y.size() == cfg.levels, "taped_params: ", y.size(), " levels for L=", cfg.levels);
  std::vector<TapedLevel<T>> out;
  for (std::size_t i = 0; i < cfg.levels; ++i) {
    const latent::Extent e{y[i].shape()[1], y[i].shape()[2]};
    if (cfg.is_arm_level(i)) {
      out.push_back(arm_params_map(n, y[i], i));
      continue;
    }
    const TapedLevel<T> anchors = i == 0 ? constant_prior<T>(e) : aru_pass1(n, y[i - 1], out[i - 1], i, e);
    const TapedLevel<T> rest = aru_pass2(n, y[i], anchors, i);
    const Tensor<T> mask = latent::anchor_mask<T>(e);
    out.push_back({ad::select(mask, anchors.mu, rest.mu), ad::select(mask, anchors.sigma, rest.sigma)});
  }
  return out;
}

// Total modeled bits of the relaxed latents.
template <typename T>
ad::Var<T> taped_rate(const MarmNetworks<T>& n, const std::vector<ad::Var<T>>& y) {
  const auto params = taped_params(n, y);
  ad::Var<T> total;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ad::Var<T> b = laplace::bits(y[i], params[i].mu, params[i].sigma);
    total = total.defined() ? ad::add(total, b) : b;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Inference forward (no tape). Used identically by encoder and decoder.

namespace detail {

template <typename T>
Tensor<T> concat_planes(std::initializer_list<const Tensor<T>*> xs) {
  std::size_t c = 0;
  const Chw d0 = chw_of(**xs.begin());
  for (auto* x : xs) c += chw_of(*x).c;
  Tensor<T> out(Shape{c, d0.h, d0.w});
  std::size_t off = 0;
  for (auto* x : xs) {
    std::copy(x->vec().begin(), x->vec().end(), out.vec().begin() + off);
    off += x->size();
  }
  return out;
}

template <typename T>
LevelParams<T> head_to_params(const Tensor<T>& head) {
  const Chw d = chw_of(head);
  LevelParams<T> p{Tensor<T>(Shape{1, d.h, d.w}), Tensor<T>(Shape{1, d.h, d.w})};
  const std::size_t n = d.plane();
  for (std::size_t i = 0; i < n; ++i) {
    p.mu[i] = head[i];
    p.sigma[i] = std::clamp(std::exp(head[n + i]), static_cast<T>(laplace::kSigmaFloor),
                            static_cast<T>(laplace::kSigmaCap));
  }
  return p;
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (auto& v : t.vec()) v = v > T(0) ? v : T(0);
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t h, std::size_t w) {
  const Chw d = chw_of(x);
  if (d.h == h && d.w == w) return x;
  const std::size_t oy = (d.h - h) / 2, ox = (d.w - w) / 2;
  Tensor<T> out(Shape{d.c, h, w});
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, y + oy, xx + ox);
  return out;
}

}  // namespace detail

template <typename T>
LevelParams<T> infer_pass1(const MarmNetworks<T>& n, const Tensor<T>& prev_y, const LevelParams<T>& prev,
                           std::size_t level, latent::Extent target) {
  MARM_REQUIRE(level >= 1, "aru_pass1: level 0 has no predecessor");
  MARM_REQUIRE(prev_y.shape() == prev.mu.shape() && prev_y.shape() == prev.sigma.shape(),
               "aru_pass1: geometry mismatch");
  MARM_REQUIRE(target.h <= 2 * prev_y.shape()[1] && target.w <= 2 * prev_y.shape()[2],
               "aru_pass1: target extent too large");
  const Tensor<T> in = detail::concat_planes<T>({&prev_y, &prev.mu, &prev.sigma});
  const Chw d = chw_of(in);
  const std::size_t w = n.config.aru_width, k = n.config.aru_pass1_kernel;
  Tensor<T> f(Shape{w, 2 * d.h, 2 * d.w});
  kernels::tconv2_forward(in.data(), 3, d.h, d.w, n.pass1_w.value().data(), n.pass1_b.value().data(), w, k, f.data());
  f = detail::crop(f, target.h, target.w);
  detail::relu_inplace(f);
  const Tensor<T> pe = latent::positional_encoding<T>(target);
  const Tensor<T> le = latent::level_encoding_plane<T>(level, n.config.levels, target);
  return detail::head_to_params(n.pass1_mlp.infer(detail::concat_planes<T>({&f, &pe, &le})));
}

template <typename T>
LevelParams<T> infer_pass2(const MarmNetworks<T>& n, const Tensor<T>& y, const LevelParams<T>& anchors,
                           std::size_t level) {
  MARM_REQUIRE(y.shape() == anchors.mu.shape() && y.shape() == anchors.sigma.shape(),
               "aru_pass2: geometry mismatch");
  const Chw d = chw_of(y);
  const latent::Extent e{d.h, d.w};
  const Tensor<T> mask = latent::anchor_mask<T>(e);
  Tensor<T> in(Shape{3, d.h, d.w});
  const std::size_t plane = d.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    in[i] = y[i] * mask[i];
    in[plane + i] = anchors.mu[i] * mask[i];
    in[2 * plane + i] = anchors.sigma[i] * mask[i];
  }
  const std::size_t w = n.config.aru_width, k = n.config.aru_pass2_kernel;
  Tensor<T> f(Shape{w, d.h, d.w});
  kernels::conv2d_forward(in.data(), 3, d.h, d.w, n.pass2_w.value().data(), n.pass2_b.value().data(), w, k, f.data());
  detail::relu_inplace(f);
  const Tensor<T> pe = latent::positional_encoding<T>(e);
  const Tensor<T> le = latent::level_encoding_plane<T>(level, n.config.levels, e);
  return detail::head_to_params(n.pass2_mlp.infer(detail::concat_planes<T>({&f, &pe, &le})));
}

template <typename T>
LevelParams<T> constant_params(latent::Extent e) {
  return {Tensor<T>(Shape{1, e.h, e.w}, T(0)), Tensor<T>(Shape{1, e.h, e.w}, static_cast<T>(laplace::kSigmaInit))};
}

// Pixel-wise ARM evaluator over one level. Keeps a zero-padded copy of the
// level so context gathers need no bounds checks; values are written back
// with set() as they are decoded.
template <typename T>
class ArmEvaluator {
 public:
  ArmEvaluator(const MarmNetworks<T>& n, std::size_t level, latent::Extent e)
      : mlp_(&n.arm_mlp), e_(e), offsets_(arm_offsets(n.config.arm_context)) {
    int pad = 0;
    for (auto [dy, dx] : offsets_) pad = std::max({pad, -dy, dx < 0 ? -dx : dx});
    pad_ = static_cast<std::size_t>(pad);
    stride_ = e.w + 2 * pad_;
    grid_.assign((e.h + pad_) * stride_, T(0));
    for (auto [dy, dx] : offsets_) rel_.push_back(static_cast<long>(dy) * static_cast<long>(stride_) + dx);
    input_.assign(offsets_.size() + 1, T(0));
    input_.back() = static_cast<T>(latent::level_encoding(level, n.config.levels));
    width_ = mlp_->max_width();
    scratch_.assign(2 * width_, T(0));
  }

  // (mu, sigma) for pixel (y, x); only pixels before it in raster order are read.
  std::pair<T, T> params(std::size_t y, std::size_t x) {
    const T* base = &grid_[(y + pad_) * stride_ + x + pad_];
    for (std::size_t k = 0; k < rel_.size(); ++k) input_[k] = base[rel_[k]];
    T out[2];
    mlp_->infer_vector(input_.data(), out, scratch_.data(), width_);
    const T sigma =
        std::clamp(std::exp(out[1]), static_cast<T>(laplace::kSigmaFloor), static_cast<T>(laplace::kSigmaCap));
    return {out[0], sigma};
  }

  void set(std::size_t y, std::size_t x, T v) { grid_[(y + pad_) * stride_ + x + pad_] = v; }

 private:
  const nn::Mlp<T>* mlp_;
  latent::Extent e_;
  std::vector<std::pair<int, int>> offsets_;
  std::vector<long> rel_;
  std::size_t pad_ = 0, stride_ = 0, width_ = 0;
  std::vector<T> grid_, input_, scratch_;
};

// (mu, sigma) at raster index t of a fully known level, via the pixel-wise path.
template <typename T>
std::pair<T, T> arm_params(const MarmNetworks<T>& n, std::span<const int32_t> level_values, latent::Extent e,
                           std::size_t level, std::size_t t) {
  MARM_REQUIRE(level_values.size() == e.count() && t < e.count(), "arm_params: bad level or index");
  ArmEvaluator<T> ev(n, level, e);
  for (std::size_t i = 0; i < t; ++i) ev.set(i / e.w, i % e.w, static_cast<T>(level_values[i]));
  return ev.params(t / e.w, t % e.w);
}

}  // namespace marm::entropy

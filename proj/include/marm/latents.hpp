#pragma once

// Latent pyramid geometry, quantizers and the per-level encodings fed to the
// entropy networks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "marm/autodiff.hpp"
#include "marm/ops.hpp"
#include "marm/error.hpp"
#include "marm/tensor.hpp"

namespace marm::latent {

inline constexpr int kLatentMin = -128;
inline constexpr int kLatentMax = 127;

struct Extent {
  std::size_t h = 0, w = 0;
  std::size_t count() const { return h * w; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

inline std::size_t ceil_div_pow2(std::size_t v, std::size_t shift) {
  return (v + (std::size_t{1} << shift) - 1) >> shift;
}

// Level i has extents ceil(H / 2^(L-i-1)) x ceil(W / 2^(L-i-1)); the last
// level matches the image.
struct Geometry {
  std::size_t height = 0, width = 0, levels = 0, channels = 1;

  Geometry() = default;
  Geometry(std::size_t h, std::size_t w, std::size_t l, std::size_t c = 1)
      : height(h), width(w), levels(l), channels(c) {
    MARM_REQUIRE(l >= 1, "latent pyramid needs at least one level");
    MARM_REQUIRE(h >= 1 && w >= 1, "latent pyramid over an empty image");
    MARM_REQUIRE(c >= 1, "latent pyramid needs at least one channel per level");
    MARM_REQUIRE(l <= 16, "latent pyramid with ", l, " levels");
  }

  Extent level(std::size_t i) const {
    MARM_REQUIRE(i < levels, "level ", i, " out of ", levels);
    const std::size_t shift = levels - i - 1;
    return {ceil_div_pow2(height, shift), ceil_div_pow2(width, shift)};
  }

  // Total latent symbols, sum_i c * H_i * W_i.
  std::size_t symbol_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < levels; ++i) n += channels * level(i).count();
    return n;
  }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

// Integer latents; one [H_i, W_i] grid per level (c = 1).
struct LatentPyramid {
  Geometry geometry;
  std::vector<std::vector<int32_t>> levels;

  explicit LatentPyramid(Geometry g = {}) : geometry(g) {
    for (std::size_t i = 0; i < g.levels; ++i) levels.emplace_back(g.level(i).count() * g.channels, 0);
  }
};

// Real-valued training twin: one trainable [1, H_i, W_i] parameter per level.
template <typename T>
struct RealLatentPyramid {
  Geometry geometry;
  std::vector<ad::Parameter<T>> levels;
};

template <typename T = Real>
RealLatentPyramid<T> init_pyramid(std::size_t h, std::size_t w, std::size_t l, std::size_t c = 1) {
  Geometry g(h, w, l, c);
  RealLatentPyramid<T> p{g, {}};
  for (std::size_t i = 0; i < l; ++i) {
    const Extent e = g.level(i);
    p.levels.emplace_back(Tensor<T>(Shape{c, e.h, e.w}, T(0)), ad::Group::latent);
  }
  return p;
}

// Uniform scalar quantizer: round half away from zero.
inline int64_t quantize_uniform(double y) {
  MARM_REQUIRE(std::isfinite(y), "quantize_uniform: non-finite input");
  return static_cast<int64_t>(std::llround(y));
}

inline int32_t quantize_latent(double y) {
  return static_cast<int32_t>(std::clamp<int64_t>(quantize_uniform(y), kLatentMin, kLatentMax));
}

// Additive U(-0.5, 0.5) relaxation of rounding.
template <typename T, typename Rng>
T relax_noise(T y, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  return y + static_cast<T>(u(rng));
}

template <typename T, typename Rng>
Tensor<T> uniform_noise(const Shape& s, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

// Straight-through rounding (forward round, backward identity).
template <typename T>
ad::Var<T> relax_ste(const ad::Var<T>& y) { return ad::ste_round(y); }

// Anchors are pixels with (row + col) even.
inline bool is_anchor(std::size_t row, std::size_t col) { return ((row + col) & 1u) == 0; }

inline std::size_t anchor_count(Extent e) { return (e.count() + 1) / 2; }

template <typename T>
Tensor<T> anchor_mask(Extent e) {
  Tensor<T> m(Shape{1, e.h, e.w});
  for (std::size_t y = 0; y < e.h; ++y)
    for (std::size_t x = 0; x < e.w; ++x) m.at(0, y, x) = is_anchor(y, x) ? T(1) : T(0);
  return m;
}

// Anchors and non-anchors of a grid, each in raster order.
template <typename V>
struct CheckerboardParts {
  std::vector<V> anchors;
  std::vector<V> non_anchors;
};

template <typename V>
CheckerboardParts<V> checkerboard_split(std::span<const V> grid, Extent e) {
  MARM_REQUIRE(grid.size() == e.count(), "checkerboard_split: grid of ", grid.size(), " for ", e.h, "x", e.w);
  CheckerboardParts<V> parts;
  parts.anchors.reserve(anchor_count(e));
  parts.non_anchors.reserve(e.count() - anchor_count(e));
  for (std::size_t y = 0; y < e.h; ++y)
    for (std::size_t x = 0; x < e.w; ++x)
      (is_anchor(y, x) ? parts.anchors : parts.non_anchors).push_back(grid[y * e.w + x]);
  return parts;
}

template <typename V>
std::vector<V> checkerboard_merge(const CheckerboardParts<V>& parts, Extent e) {
  MARM_REQUIRE(parts.anchors.size() == anchor_count(e) &&
                   parts.non_anchors.size() == e.count() - anchor_count(e),
               "checkerboard_merge: part sizes do not match ", e.h, "x", e.w);
  std::vector<V> grid(e.count());
  std::size_t a = 0, n = 0;
  for (std::size_t y = 0; y < e.h; ++y)
    for (std::size_t x = 0; x < e.w; ++x)
      grid[y * e.w + x] = is_anchor(y, x) ? parts.anchors[a++] : parts.non_anchors[n++];
  return grid;
}

// Merge of two full grids: anchor positions from `first`, the rest from `second`.
template <typename V>
std::vector<V> checkerboard_merge(std::span<const V> first, std::span<const V> second, Extent e) {
  MARM_REQUIRE(first.size() == e.count() && second.size() == e.count(),
               "checkerboard_merge: extent mismatch");
  std::vector<V> grid(e.count());
  for (std::size_t y = 0; y < e.h; ++y)
    for (std::size_t x = 0; x < e.w; ++x) {
      const std::size_t i = y * e.w + x;
      grid[i] = is_anchor(y, x) ? first[i] : second[i];
    }
  return grid;
}

// Mesh-grid position: channel 0 = a/H - 0.5, channel 1 = b/W - 0.5.
template <typename T = Real>
Tensor<T> positional_encoding(Extent e) {
  Tensor<T> pe(Shape{2, e.h, e.w});
  for (std::size_t a = 0; a < e.h; ++a)
    for (std::size_t b = 0; b < e.w; ++b) {
      pe.at(0, a, b) = static_cast<T>(static_cast<double>(a) / static_cast<double>(e.h) - 0.5);
      pe.at(1, a, b) = static_cast<T>(static_cast<double>(b) / static_cast<double>(e.w) - 0.5);
    }
  return pe;
}

inline double level_encoding(std::size_t i, std::size_t levels) {
  MARM_REQUIRE(i < levels, "level_encoding: level ", i, " of ", levels);
  return 2.0 * static_cast<double>(i) / static_cast<double>(levels);
}

template <typename T = Real>
Tensor<T> level_encoding_plane(std::size_t i, std::size_t levels, Extent e) {
  return Tensor<T>(Shape{1, e.h, e.w}, static_cast<T>(level_encoding(i, levels)));
}

}  // namespace marm::latent

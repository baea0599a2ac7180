#pragma once

// Small building blocks shared by every network in the codec. Each block has
// a taped forward (training) and an inference forward that runs the same
// kernels on plain tensors.

#include <cmath>
#include <random>
#include <vector>

#include "marm/autodiff.hpp"
#include "marm/kernels.hpp"
#include "marm/ops.hpp"

namespace marm::nn {

template <typename T>
using ParamList = std::vector<ad::Parameter<T>*>;

template <typename T, typename Rng>
Tensor<T> he_uniform(Shape s, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> t(std::move(s));
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

// Per-pixel affine layer: w [out,in], b [out].
template <typename T>
struct Dense {
  ad::Parameter<T> w, b;

  std::size_t in() const { return w.shape()[1]; }
  std::size_t out() const { return w.shape()[0]; }
  std::size_t param_count() const { return w.size() + b.size(); }
};

// Fully connected stack applied independently to every pixel, ReLU between
// layers and none after the last (the "head").
template <typename T>
struct Mlp {
  std::vector<Dense<T>> layers;

  template <typename Rng>
  static Mlp make(std::size_t in, std::size_t width, std::size_t hidden_layers, std::size_t out, ad::Group g,
                  Rng& rng, bool zero_head = true) {
    Mlp m;
    std::size_t cur = in;
    for (std::size_t i = 0; i < hidden_layers; ++i) {
      m.layers.push_back({ad::Parameter<T>(he_uniform<T>(Shape{width, cur}, cur, rng), g),
                          ad::Parameter<T>(Tensor<T>(Shape{width}, T(0)), g)});
      cur = width;
    }
    Tensor<T> head = zero_head ? Tensor<T>(Shape{out, cur}, T(0)) : he_uniform<T>(Shape{out, cur}, cur, rng);
    m.layers.push_back({ad::Parameter<T>(std::move(head), g), ad::Parameter<T>(Tensor<T>(Shape{out}, T(0)), g)});
    return m;
  }

  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }

  // MACs to evaluate one pixel.
  std::size_t macs() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size();
    return n;
  }

  void collect(ParamList<T>& out) {
    for (auto& l : layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  }

  ad::Var<T> forward(const ad::Var<T>& x) const {
    ad::Var<T> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = ad::channel_mix(h, layers[i].w.var, layers[i].b.var);
      if (i + 1 < layers.size()) h = ad::relu(h);
    }
    return h;
  }

  // Same arithmetic as forward() on a [C,H,W] tensor, without a tape.
  Tensor<T> infer(const Tensor<T>& x) const {
    const Chw d = chw_of(x);
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      Tensor<T> next(Shape{l.out(), d.h, d.w});
      kernels::channel_mix_forward(cur.data(), l.in(), d.plane(), l.w.value().data(), l.b.value().data(), l.out(),
                                   next.data());
      if (i + 1 < layers.size())
        for (auto& v : next.vec()) v = v > T(0) ? v : T(0);
      cur = std::move(next);
    }
    return cur;
  }

  // One input vector; scratch must hold 2 * max width values.
  void infer_vector(const T* in, T* out, T* scratch, std::size_t scratch_stride) const {
    const T* cur = in;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      T* dst = (i + 1 == layers.size()) ? out : scratch + (i % 2) * scratch_stride;
      const T* W = l.w.value().data();
      const T* B = l.b.value().data();
      const std::size_t ni = l.in(), no = l.out();
      for (std::size_t o = 0; o < no; ++o) {
        T s = B[o];
        const T* wr = W + o * ni;
        for (std::size_t k = 0; k < ni; ++k) s += wr[k] * cur[k];
        dst[o] = (i + 1 < layers.size() && s < T(0)) ? T(0) : s;
      }
      cur = dst;
    }
  }

  std::size_t max_width() const {
    std::size_t w = 0;
    for (const auto& l : layers) w = std::max({w, l.in(), l.out()});
    return w;
  }
};

}  // namespace marm::nn

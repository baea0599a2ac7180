#pragma once

// Differentiable ops. Spatial tensors are [C,H,W]; matrices are [N,C].

#include <cmath>
#include <utility>
#include <vector>

#include "marm/autodiff.hpp"
#include "marm/kernels.hpp"

namespace marm::ad {

namespace detail {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  MARM_REQUIRE(a.shape() == b.shape(), op, ": shape mismatch ", a.shape(), " vs ", b.shape());
}

template <typename T>
bool wants(const std::shared_ptr<Node<T>>& p) { return p->requires_grad; }

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    for (auto& p : n.parents) {
      if (!detail::wants(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    if (detail::wants(n.parents[0])) {
      auto& g = n.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (detail::wants(n.parents[1])) {
      auto& g = n.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  return Var<T>::make(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

// a + c for a constant tensor c (e.g. relaxation noise); d/da = 1.
template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
  MARM_REQUIRE(a.shape() == c.shape(), "add_const: shape mismatch ", a.shape(), " vs ", c.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

// a * c elementwise for a constant tensor c (masks).
template <typename T>
Var<T> mul_const(const Var<T>& a, Tensor<T> c) {
  MARM_REQUIRE(a.shape() == c.shape(), "mul_const: shape mismatch ", a.shape(), " vs ", c.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return Var<T>::make(std::move(out), {a}, [c = std::move(c)](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c[i] * n.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    const T* y = n.value.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += y[i] > T(0) ? n.grad[i] : T(0);
  });
}

// Straight-through rounding: forward rounds half away from zero, backward is identity.
template <typename T>
Var<T> ste_round(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = std::round(v);
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().vec()) s += v;
  return Var<T>::make(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->ensure_grad();
    const T gv = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
  });
}

// Mean of squared differences.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mse");
  const std::size_t n = a.size();
  MARM_REQUIRE(n > 0, "mse of empty tensors");
  double s = 0;
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    s += d * d;
  }
  return Var<T>::make(Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n))), {a, b},
                      [](Node<T>& nd) {
                        const auto& A = nd.parents[0]->value;
                        const auto& B = nd.parents[1]->value;
                        const T k = T(2) * nd.grad[0] / static_cast<T>(A.size());
                        if (detail::wants(nd.parents[0])) {
                          auto& g = nd.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (A[i] - B[i]);
                        }
                        if (detail::wants(nd.parents[1])) {
                          auto& g = nd.parents[1]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (A[i] - B[i]);
                        }
                      });
}

// y = x W^T + b with x [N,Cin], W [Cout,Cin], b [Cout].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  MARM_REQUIRE(x.value().rank() == 2 && w.value().rank() == 2 && b.value().rank() == 1,
               "linear: expected x[N,Cin], w[Cout,Cin], b[Cout]");
  const std::size_t n = x.shape()[0], cin = x.shape()[1], cout = w.shape()[0];
  MARM_REQUIRE(w.shape()[1] == cin, "linear: inner extents ", cin, " vs ", w.shape()[1]);
  MARM_REQUIRE(b.shape()[0] == cout, "linear: bias extent ", b.shape()[0], " vs ", cout);
  Tensor<T> out(Shape{n, cout});
  const T* X = x.value().data();
  const T* W = w.value().data();
  const T* B = b.value().data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t co = 0; co < cout; ++co) {
      T s = B[co];
      for (std::size_t ci = 0; ci < cin; ++ci) s += X[r * cin + ci] * W[co * cin + ci];
      out[r * cout + co] = s;
    }
  return Var<T>::make(std::move(out), {x, w, b}, [n, cin, cout](Node<T>& nd) {
    const T* X = nd.parents[0]->value.data();
    const T* W = nd.parents[1]->value.data();
    const T* G = nd.grad.data();
    T* dx = detail::wants(nd.parents[0]) ? nd.parents[0]->ensure_grad().data() : nullptr;
    T* dw = detail::wants(nd.parents[1]) ? nd.parents[1]->ensure_grad().data() : nullptr;
    T* db = detail::wants(nd.parents[2]) ? nd.parents[2]->ensure_grad().data() : nullptr;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t co = 0; co < cout; ++co) {
        const T g = G[r * cout + co];
        if (db) db[co] += g;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          if (dx) dx[r * cin + ci] += g * W[co * cin + ci];
          if (dw) dw[co * cin + ci] += g * X[r * cin + ci];
        }
      }
  });
}

// Per-pixel linear map (1x1 convolution): x [Cin,H,W], w [Cout,Cin], optional b [Cout].
template <typename T>
Var<T> channel_mix(const Var<T>& x, const Var<T>& w, const Var<T>* b = nullptr) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(w.value().rank() == 2 && w.shape()[1] == d.c, "channel_mix: weight ", w.shape(),
               " does not accept ", d.c, " channels");
  const std::size_t cout = w.shape()[0];
  if (b) MARM_REQUIRE(b->shape() == Shape{cout}, "channel_mix: bias shape ", b->shape());
  Tensor<T> out(Shape{cout, d.h, d.w});
  kernels::channel_mix_forward(x.value().data(), d.c, d.plane(), w.value().data(),
                               b ? b->value().data() : nullptr, cout, out.data());
  std::vector<Var<T>> parents{x, w};
  if (b) parents.push_back(*b);
  return Var<T>::make(std::move(out), std::move(parents), [d, cout](Node<T>& nd) {
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    T* dx = detail::wants(px) ? px->ensure_grad().data() : nullptr;
    T* dw = detail::wants(pw) ? pw->ensure_grad().data() : nullptr;
    T* db = nullptr;
    if (nd.parents.size() > 2 && detail::wants(nd.parents[2])) db = nd.parents[2]->ensure_grad().data();
    kernels::channel_mix_backward(px->value.data(), d.c, d.plane(), pw->value.data(), cout,
                                  nd.grad.data(), dx, dw, db);
  });
}

template <typename T>
Var<T> channel_mix(const Var<T>& x, const Var<T>& w, const Var<T>& b) { return channel_mix(x, w, &b); }

// Per-channel k x k convolution with zero "same" padding; k [C,ks,ks], ks odd.
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& k) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(k.value().rank() == 3 && k.shape()[0] == d.c && k.shape()[1] == k.shape()[2],
               "depthwise_conv2d: kernel ", k.shape(), " for ", d.c, " channels");
  const std::size_t ks = k.shape()[1];
  MARM_REQUIRE(ks % 2 == 1, "depthwise_conv2d: kernel size must be odd, got ", ks);
  Tensor<T> out(x.shape());
  kernels::depthwise_forward(x.value().data(), d.c, d.h, d.w, k.value().data(), ks, out.data());
  return Var<T>::make(std::move(out), {x, k}, [d, ks](Node<T>& nd) {
    auto& px = nd.parents[0];
    auto& pk = nd.parents[1];
    kernels::depthwise_backward(px->value.data(), d.c, d.h, d.w, pk->value.data(), ks, nd.grad.data(),
                                detail::wants(px) ? px->ensure_grad().data() : nullptr,
                                detail::wants(pk) ? pk->ensure_grad().data() : nullptr);
  });
}

// Depthwise k x k followed by a 1x1 channel mix (pointwise [C,C]).
template <typename T>
Var<T> separable_conv2d(const Var<T>& x, const Var<T>& depthwise, const Var<T>& pointwise,
                        const Var<T>* bias = nullptr) {
  MARM_REQUIRE(pointwise.value().rank() == 2 && pointwise.shape()[1] == x.shape()[0],
               "separable_conv2d: pointwise ", pointwise.shape(), " for input ", x.shape());
  return channel_mix(depthwise_conv2d(x, depthwise), pointwise, bias);
}

// Dense k x k convolution with zero "same" padding; w [Cout,Cin,ks,ks].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(w.value().rank() == 4 && w.shape()[1] == d.c && w.shape()[2] == w.shape()[3],
               "conv2d: weight ", w.shape(), " for ", d.c, " channels");
  const std::size_t cout = w.shape()[0], ks = w.shape()[2];
  MARM_REQUIRE(ks % 2 == 1, "conv2d: kernel size must be odd, got ", ks);
  MARM_REQUIRE(b.shape() == Shape{cout}, "conv2d: bias shape ", b.shape());
  Tensor<T> out(Shape{cout, d.h, d.w});
  kernels::conv2d_forward(x.value().data(), d.c, d.h, d.w, w.value().data(), b.value().data(), cout,
                          ks, out.data());
  return Var<T>::make(std::move(out), {x, w, b}, [d, cout, ks](Node<T>& nd) {
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    auto& pb = nd.parents[2];
    kernels::conv2d_backward(px->value.data(), d.c, d.h, d.w, pw->value.data(), cout, ks,
                             nd.grad.data(), detail::wants(px) ? px->ensure_grad().data() : nullptr,
                             detail::wants(pw) ? pw->ensure_grad().data() : nullptr,
                             detail::wants(pb) ? pb->ensure_grad().data() : nullptr);
  });
}

// Stride-2 transposed convolution, output center-cropped to (2H, 2W).
// w [Cin,Cout,ks,ks] with ks >= 2; optional bias [Cout].
template <typename T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* b = nullptr) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(w.value().rank() == 4 && w.shape()[0] == d.c && w.shape()[2] == w.shape()[3],
               "transposed_conv2d: weight ", w.shape(), " for ", d.c, " channels");
  const std::size_t cout = w.shape()[1], ks = w.shape()[2];
  MARM_REQUIRE(ks >= 2, "transposed_conv2d: kernel extent ", ks, " below stride 2");
  if (b) MARM_REQUIRE(b->shape() == Shape{cout}, "transposed_conv2d: bias shape ", b->shape());
  Tensor<T> out(Shape{cout, 2 * d.h, 2 * d.w});
  kernels::tconv2_forward(x.value().data(), d.c, d.h, d.w, w.value().data(),
                          b ? b->value().data() : nullptr, cout, ks, out.data());
  std::vector<Var<T>> parents{x, w};
  if (b) parents.push_back(*b);
  return Var<T>::make(std::move(out), std::move(parents), [d, cout, ks](Node<T>& nd) {
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    T* db = nullptr;
    if (nd.parents.size() > 2 && detail::wants(nd.parents[2])) db = nd.parents[2]->ensure_grad().data();
    kernels::tconv2_backward(px->value.data(), d.c, d.h, d.w, pw->value.data(), cout, ks,
                             nd.grad.data(), detail::wants(px) ? px->ensure_grad().data() : nullptr,
                             detail::wants(pw) ? pw->ensure_grad().data() : nullptr, db);
  });
}

// Edge-replicating spatial padding by p on every side.
template <typename T>
Var<T> pad_replicate(const Var<T>& x, std::size_t p) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(d.h > 0 && d.w > 0, "pad_replicate: empty input");
  const std::size_t oh = d.h + 2 * p, ow = d.w + 2 * p;
  auto src = [d, p](std::size_t o, std::size_t n) {
    const long v = static_cast<long>(o) - static_cast<long>(p);
    return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(n) - 1));
  };
  Tensor<T> out(Shape{d.c, oh, ow});
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out.at(c, y, xx) = x.value().at(c, src(y, d.h), src(xx, d.w));
  return Var<T>::make(std::move(out), {x}, [d, p, oh, ow, src](Node<T>& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) g.at(c, src(y, d.h), src(xx, d.w)) += nd.grad.at(c, y, xx);
  });
}

// Center crop to (h, w); the larger half of an odd excess is dropped at the end.
template <typename T>
Var<T> center_crop(const Var<T>& x, std::size_t h, std::size_t w) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(h <= d.h && w <= d.w, "center_crop: target ", h, "x", w, " exceeds ", d.h, "x", d.w);
  if (h == d.h && w == d.w) return x;
  const std::size_t oy = (d.h - h) / 2, ox = (d.w - w) / 2;
  Tensor<T> out(Shape{d.c, h, w});
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.value().at(c, y + oy, xx + ox);
  return Var<T>::make(std::move(out), {x}, [d, h, w, oy, ox](Node<T>& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) g.at(c, y + oy, xx + ox) += nd.grad.at(c, y, xx);
  });
}

// Stacks [Ci,H,W] tensors along the channel axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  MARM_REQUIRE(!xs.empty(), "concat_channels: no inputs");
  const Chw d0 = chw_of(xs[0].value());
  std::size_t c = 0;
  for (const auto& x : xs) {
    const Chw d = chw_of(x.value());
    MARM_REQUIRE(d.h == d0.h && d.w == d0.w, "concat_channels: spatial mismatch ", x.shape(), " vs ",
                 xs[0].shape());
    c += d.c;
  }
  Tensor<T> out(Shape{c, d0.h, d0.w});
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().vec().begin(), x.value().vec().end(), out.vec().begin() + off);
    off += x.size();
  }
  return Var<T>::make(std::move(out), xs, [](Node<T>& nd) {
    std::size_t off = 0;
    for (auto& p : nd.parents) {
      const std::size_t n = p->value.size();
      if (detail::wants(p)) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += nd.grad[off + i];
      }
      off += n;
    }
  });
}

// Channels [begin, end) of x.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t end) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(begin < end && end <= d.c, "slice_channels: [", begin, ",", end, ") of ", d.c);
  const std::size_t plane = d.plane();
  Tensor<T> out(Shape{end - begin, d.h, d.w});
  std::copy(x.value().vec().begin() + begin * plane, x.value().vec().begin() + end * plane,
            out.vec().begin());
  return Var<T>::make(std::move(out), {x}, [begin, plane](Node<T>& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < nd.grad.size(); ++i) g[begin * plane + i] += nd.grad[i];
  });
}

// Picks a where mask != 0 and b elsewhere (checkerboard merge).
template <typename T>
Var<T> select(const Tensor<T>& mask, const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "select");
  MARM_REQUIRE(mask.shape() == a.shape(), "select: mask shape ", mask.shape(), " vs ", a.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] != T(0) ? a.value()[i] : b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [mask](Node<T>& nd) {
    if (detail::wants(nd.parents[0])) {
      auto& g = nd.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i] != T(0)) g[i] += nd.grad[i];
    }
    if (detail::wants(nd.parents[1])) {
      auto& g = nd.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (mask[i] == T(0)) g[i] += nd.grad[i];
    }
  });
}

// sigma = clamp(exp(s), lo, hi); zero gradient where clamped.
template <typename T>
Var<T> exp_clamped(const Var<T>& s, T lo, T hi) {
  Tensor<T> out = s.value();
  for (auto& v : out.vec()) v = std::clamp(std::exp(v), lo, hi);
  return Var<T>::make(std::move(out), {s}, [lo, hi](Node<T>& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = nd.value[i];
      if (y > lo && y < hi) g[i] += nd.grad[i] * y;
    }
  });
}

// Clamps values into [lo, hi]; gradient passes only inside.
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = std::clamp(v, lo, hi);
  return Var<T>::make(std::move(out), {x}, [lo, hi](Node<T>& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    const auto& xv = nd.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] >= lo && xv[i] <= hi) g[i] += nd.grad[i];
  });
}

// Gathers a causal neighbourhood: out[k, y, x] = x[0, y+dy_k, x+dx_k], zero outside.
template <typename T>
Var<T> gather_neighbors(const Var<T>& x, const std::vector<std::pair<int, int>>& offsets) {
  const Chw d = chw_of(x.value());
  MARM_REQUIRE(d.c == 1, "gather_neighbors: single-channel input expected, got ", x.shape());
  const std::size_t k = offsets.size();
  Tensor<T> out(Shape{k, d.h, d.w});
  const long H = static_cast<long>(d.h), W = static_cast<long>(d.w);
  for (std::size_t i = 0; i < k; ++i) {
    const auto [dy, dx] = offsets[i];
    for (long y = 0; y < H; ++y) {
      const long sy = y + dy;
      if (sy < 0 || sy >= H) continue;
      for (long xx = 0; xx < W; ++xx) {
        const long sx = xx + dx;
        if (sx < 0 || sx >= W) continue;
        out[(i * d.h + y) * d.w + xx] = x.value()[sy * W + sx];
      }
    }
  }
  return Var<T>::make(std::move(out), {x}, [d, offsets](Node<T>& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    const long H = static_cast<long>(d.h), W = static_cast<long>(d.w);
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      const auto [dy, dx] = offsets[i];
      for (long y = 0; y < H; ++y) {
        const long sy = y + dy;
        if (sy < 0 || sy >= H) continue;
        for (long xx = 0; xx < W; ++xx) {
          const long sx = xx + dx;
          if (sx < 0 || sx >= W) continue;
          g[sy * W + sx] += nd.grad[(i * d.h + y) * d.w + xx];
        }
      }
    }
  });
}

}  // namespace marm::ad

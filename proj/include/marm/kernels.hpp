#pragma once

// Raw forward/backward loops over [C,H,W] buffers. The differentiable ops in
// autodiff.hpp and the inference-only paths in the decoder both call these,
// so training and decoding share one arithmetic order.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

#include "marm/error.hpp"

namespace marm::kernels {

inline constexpr std::size_t kTile = 512;

// Fixed-order sums with 16 interleaved partial accumulators, so the compiler
// can vectorize without reassociating (results stay run-to-run identical).
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t K = 16;
  T acc[K] = {};
  std::size_t i = 0;
  for (; i + K <= n; i += K)
    for (std::size_t k = 0; k < K; ++k) acc[k] += a[i + k] * b[i + k];
  T s = 0;
  for (; i < n; ++i) s += a[i] * b[i];
  for (std::size_t k = 0; k < K; ++k) s += acc[k];
  return s;
}

template <typename T>
T sum(const T* a, std::size_t n) {
  constexpr std::size_t K = 16;
  T acc[K] = {};
  std::size_t i = 0;
  for (; i + K <= n; i += K)
    for (std::size_t k = 0; k < K; ++k) acc[k] += a[i + k];
  T s = 0;
  for (; i < n; ++i) s += a[i];
  for (std::size_t k = 0; k < K; ++k) s += acc[k];
  return s;
}

// out[co, n] = b[co] + sum_ci w[co, ci] * x[ci, n]; b may be null.
// Blocks of kLanes outputs stay in registers across the ci loop; the sum
// order per element is bias, then ci ascending.
inline constexpr std::size_t kLanes = 16;
inline constexpr std::size_t kMaxKernel = 15;

template <typename T>
void channel_mix_forward(const T* x, std::size_t cin, std::size_t n, const T* w, const T* b,
                         std::size_t cout, T* out) {
  std::size_t i0 = 0;
  for (; i0 + kLanes <= n; i0 += kLanes) {
    for (std::size_t co = 0; co < cout; ++co) {
      T acc[kLanes];
      const T bias = b ? b[co] : T(0);
      for (std::size_t k = 0; k < kLanes; ++k) acc[k] = bias;
      const T* wr = w + co * cin;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T wv = wr[ci];
        const T* xi = x + ci * n + i0;
        for (std::size_t k = 0; k < kLanes; ++k) acc[k] += wv * xi[k];
      }
      std::copy_n(acc, kLanes, out + co * n + i0);
    }
  }
  for (; i0 < n; ++i0)
    for (std::size_t co = 0; co < cout; ++co) {
      T s = b ? b[co] : T(0);
      for (std::size_t ci = 0; ci < cin; ++ci) s += w[co * cin + ci] * x[ci * n + i0];
      out[co * n + i0] = s;
    }
}

// Accumulating backward of channel_mix_forward. Any of dx/dw/db may be null.
template <typename T>
void channel_mix_backward(const T* x, std::size_t cin, std::size_t n, const T* w,
                          std::size_t cout, const T* dout, T* dx, T* dw, T* db) {
  for (std::size_t t0 = 0; t0 < n; t0 += kTile) {
    const std::size_t t1 = std::min(n, t0 + kTile);
    for (std::size_t co = 0; co < cout; ++co) {
      const T* g = dout + co * n;
      if (db) db[co] += sum(g + t0, t1 - t0);
      if (dw)
        for (std::size_t ci = 0; ci < cin; ++ci) dw[co * cin + ci] += dot(g + t0, x + ci * n + t0, t1 - t0);
    }
  }
  if (!dx) return;
  std::size_t i0 = 0;
  for (; i0 + kLanes <= n; i0 += kLanes)
    for (std::size_t ci = 0; ci < cin; ++ci) {
      T acc[kLanes];
      T* d = dx + ci * n + i0;
      std::copy_n(d, kLanes, acc);
      for (std::size_t co = 0; co < cout; ++co) {
        const T wv = w[co * cin + ci];
        const T* g = dout + co * n + i0;
        for (std::size_t k = 0; k < kLanes; ++k) acc[k] += wv * g[k];
      }
      std::copy_n(acc, kLanes, d);
    }
  for (; i0 < n; ++i0)
    for (std::size_t ci = 0; ci < cin; ++ci) {
      T s = dx[ci * n + i0];
      for (std::size_t co = 0; co < cout; ++co) s += w[co * cin + ci] * dout[co * n + i0];
      dx[ci * n + i0] = s;
    }
}

// Copies an h x w plane into a zero-initialised (h+2p) x (w+2p) buffer.
template <typename T>
void pad_plane_zero(const T* src, std::size_t h, std::size_t w, std::size_t p, std::vector<T>& dst) {
  const std::size_t pw = w + 2 * p;
  dst.assign((h + 2 * p) * pw, T(0));
  for (std::size_t y = 0; y < h; ++y) std::memcpy(&dst[(y + p) * pw + p], src + y * w, w * sizeof(T));
}

// out[y, x] += sum_{ky,kx} k[ky,kx] * p[y+ky, x+kx] over a padded plane p
// with row stride pw. Taps are added in raster order.
template <typename T>
void correlate_rows(const T* p, std::size_t pw, std::size_t h, std::size_t w, const T* k, std::size_t ks,
                    T* out) {
  for (std::size_t y = 0; y < h; ++y) {
    T* o = out + y * w;
    std::size_t x0 = 0;
    for (; x0 + kLanes <= w; x0 += kLanes) {
      T acc[kLanes];
      std::copy_n(o + x0, kLanes, acc);
      for (std::size_t ky = 0; ky < ks; ++ky) {
        const T* row = p + (y + ky) * pw + x0;
        for (std::size_t kx = 0; kx < ks; ++kx) {
          const T kv = k[ky * ks + kx];
          for (std::size_t j = 0; j < kLanes; ++j) acc[j] += kv * row[kx + j];
        }
      }
      std::copy_n(acc, kLanes, o + x0);
    }
    for (; x0 < w; ++x0) {
      T s = o[x0];
      for (std::size_t ky = 0; ky < ks; ++ky)
        for (std::size_t kx = 0; kx < ks; ++kx) s += k[ky * ks + kx] * p[(y + ky) * pw + x0 + kx];
      o[x0] = s;
    }
  }
}

// out += correlate(x, k) with zero "same" padding; one plane, odd k.
template <typename T>
void correlate_plane_acc(const T* x, std::size_t h, std::size_t w, const T* k, std::size_t ks, T* out,
                         std::vector<T>& scratch) {
  const std::size_t p = ks / 2;
  pad_plane_zero(x, h, w, p, scratch);
  correlate_rows(scratch.data(), w + 2 * p, h, w, k, ks, out);
}

// Backward of correlate_plane_acc: dx += full-correlation of dout with the
// flipped kernel, dk += sum dout * shifted x. Either output may be null.
template <typename T>
void correlate_plane_backward(const T* x, std::size_t h, std::size_t w, const T* k, std::size_t ks,
                              const T* dout, T* dx, T* dk, std::vector<T>& scratch) {
  const std::size_t p = ks / 2;
  const std::size_t pw = w + 2 * p;
  if (dk) {
    pad_plane_zero(x, h, w, p, scratch);
    for (std::size_t ky = 0; ky < ks; ++ky) {
      for (std::size_t kx = 0; kx < ks; ++kx) {
        T s = 0;
        for (std::size_t y = 0; y < h; ++y) s += dot(dout + y * w, &scratch[(y + ky) * pw + kx], w);
        dk[ky * ks + kx] += s;
      }
    }
  }
  if (dx) {
    // dx[y][x] = sum_{ky,kx} k[ky][kx] * dout[y - ky + p][x - kx + p], i.e. a
    // correlation of the padded gradient with the flipped kernel.
    pad_plane_zero(dout, h, w, p, scratch);
    T flipped[kMaxKernel * kMaxKernel];
    MARM_REQUIRE(ks <= kMaxKernel, "correlate: kernel ", ks, " too large");
    for (std::size_t i = 0; i < ks * ks; ++i) flipped[i] = k[ks * ks - 1 - i];
    correlate_rows(scratch.data(), pw, h, w, flipped, ks, dx);
  }
}

// Per-channel k x k correlation, zero "same" padding. x, out: [c,h,w]; k: [c,ks,ks].
template <typename T>
void depthwise_forward(const T* x, std::size_t c, std::size_t h, std::size_t w, const T* k,
                       std::size_t ks, T* out) {
  std::vector<T> scratch;
  std::fill(out, out + c * h * w, T(0));
  for (std::size_t ch = 0; ch < c; ++ch)
    correlate_plane_acc(x + ch * h * w, h, w, k + ch * ks * ks, ks, out + ch * h * w, scratch);
}

template <typename T>
void depthwise_backward(const T* x, std::size_t c, std::size_t h, std::size_t w, const T* k,
                        std::size_t ks, const T* dout, T* dx, T* dk) {
  std::vector<T> scratch;
  for (std::size_t ch = 0; ch < c; ++ch)
    correlate_plane_backward(x + ch * h * w, h, w, k + ch * ks * ks, ks, dout + ch * h * w,
                             dx ? dx + ch * h * w : nullptr, dk ? dk + ch * ks * ks : nullptr,
                             scratch);
}

// Dense k x k convolution, zero "same" padding. w: [cout,cin,ks,ks]; b may be null.
template <typename T>
void conv2d_forward(const T* x, std::size_t cin, std::size_t h, std::size_t w, const T* wt,
                    const T* b, std::size_t cout, std::size_t ks, T* out) {
  std::vector<T> scratch;
  const std::size_t plane = h * w;
  for (std::size_t co = 0; co < cout; ++co) {
    T* o = out + co * plane;
    std::fill(o, o + plane, b ? b[co] : T(0));
    for (std::size_t ci = 0; ci < cin; ++ci)
      correlate_plane_acc(x + ci * plane, h, w, wt + (co * cin + ci) * ks * ks, ks, o, scratch);
  }
}

template <typename T>
void conv2d_backward(const T* x, std::size_t cin, std::size_t h, std::size_t w, const T* wt,
                     std::size_t cout, std::size_t ks, const T* dout, T* dx, T* dw, T* db) {
  std::vector<T> scratch;
  const std::size_t plane = h * w;
  for (std::size_t co = 0; co < cout; ++co) {
    const T* g = dout + co * plane;
    if (db) db[co] += sum(g, plane);
    for (std::size_t ci = 0; ci < cin; ++ci)
      correlate_plane_backward(x + ci * plane, h, w, wt + (co * cin + ci) * ks * ks, ks, g,
                               dx ? dx + ci * plane : nullptr,
                               dw ? dw + (co * cin + ci) * ks * ks : nullptr, scratch);
  }
}

// Stride-2 transposed convolution. The full output (2(h-1)+ks per axis) is
// center-cropped to exactly (2h, 2w): output index o maps to full index
// o + (ks-2)/2. w: [cin,cout,ks,ks]; b may be null.
template <typename T>
void tconv2_forward(const T* x, std::size_t cin, std::size_t h, std::size_t w, const T* wt,
                    const T* b, std::size_t cout, std::size_t ks, T* out) {
  const std::size_t oh = 2 * h, ow = 2 * w;
  const long off = static_cast<long>((ks - 2) / 2);
  for (std::size_t co = 0; co < cout; ++co) std::fill(out + co * oh * ow, out + (co + 1) * oh * ow, b ? b[co] : T(0));
  for (std::size_t co = 0; co < cout; ++co) {
    T* o = out + co * oh * ow;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xi = x + ci * h * w;
      const T* k = wt + (ci * cout + co) * ks * ks;
      for (std::size_t ky = 0; ky < ks; ++ky) {
        for (std::size_t iy = 0; iy < h; ++iy) {
          const long oy = 2 * static_cast<long>(iy) + static_cast<long>(ky) - off;
          if (oy < 0 || oy >= static_cast<long>(oh)) continue;
          T* orow = o + oy * ow;
          const T* xrow = xi + iy * w;
          for (std::size_t kx = 0; kx < ks; ++kx) {
            const T kv = k[ky * ks + kx];
            // ox = 2*ix + kx - off must lie in [0, ow)
            long ix0 = 0;
            const long base = static_cast<long>(kx) - off;
            if (base < 0) ix0 = (-base + 1) / 2;
            long ix1 = static_cast<long>(w);
            while (ix1 > ix0 && 2 * (ix1 - 1) + base >= static_cast<long>(ow)) --ix1;
            for (long ix = ix0; ix < ix1; ++ix) orow[2 * ix + base] += kv * xrow[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void tconv2_backward(const T* x, std::size_t cin, std::size_t h, std::size_t w, const T* wt,
                     std::size_t cout, std::size_t ks, const T* dout, T* dx, T* dw, T* db) {
  const std::size_t oh = 2 * h, ow = 2 * w;
  const long off = static_cast<long>((ks - 2) / 2);
  for (std::size_t co = 0; co < cout; ++co) {
    const T* g = dout + co * oh * ow;
    if (db) db[co] += sum(g, oh * ow);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xi = x + ci * h * w;
      T* dxi = dx ? dx + ci * h * w : nullptr;
      const T* k = wt + (ci * cout + co) * ks * ks;
      T* dk = dw ? dw + (ci * cout + co) * ks * ks : nullptr;
      for (std::size_t ky = 0; ky < ks; ++ky) {
        for (std::size_t iy = 0; iy < h; ++iy) {
          const long oy = 2 * static_cast<long>(iy) + static_cast<long>(ky) - off;
          if (oy < 0 || oy >= static_cast<long>(oh)) continue;
          const T* grow = g + oy * ow;
          const T* xrow = xi + iy * w;
          for (std::size_t kx = 0; kx < ks; ++kx) {
            const long base = static_cast<long>(kx) - off;
            long ix0 = 0;
            if (base < 0) ix0 = (-base + 1) / 2;
            long ix1 = static_cast<long>(w);
            while (ix1 > ix0 && 2 * (ix1 - 1) + base >= static_cast<long>(ow)) --ix1;
            if (dk) {
              T s = 0;
              for (long ix = ix0; ix < ix1; ++ix) s += grow[2 * ix + base] * xrow[ix];
              dk[ky * ks + kx] += s;
            }
            if (dxi) {
              const T kv = k[ky * ks + kx];
              T* drow = dxi + iy * w;
              for (long ix = ix0; ix < ix1; ++ix) drow[ix] += kv * grow[2 * ix + base];
            }
          }
        }
      }
    }
  }
}

}  // namespace marm::kernels

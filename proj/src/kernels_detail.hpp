#pragma once

#include <algorithm>

#include "repmlp/kernels.hpp"

namespace repmlp::kernels::detail {

// Computes output plane (n, o). Accumulation order per element is
// (input channel, ky, kx), then bias.
template <typename T>
inline void conv_plane(const ConvGeometry& g, const T* in, const T* ker, const T* bias, T* out,
                       int64_t n, int64_t o) {
  const int64_t oh = g.out_h();
  const int64_t ow = g.out_w();
  const int64_t cpg = g.in_channels / g.groups;
  const int64_t opg = g.out_channels / g.groups;
  const int64_t grp = o / opg;
  T* dst = out + (n * g.out_channels + o) * oh * ow;
  std::fill(dst, dst + oh * ow, T(0));
  for (int64_t ic = 0; ic < cpg; ++ic) {
    const int64_t c = grp * cpg + ic;
    const T* src = in + (n * g.in_channels + c) * g.height * g.width;
    const T* kk = ker + (o * cpg + ic) * g.kernel_h * g.kernel_w;
    for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
      // output rows y whose source row y + ky - pad_h lies inside the input
      const int64_t y0 = std::max<int64_t>(0, g.pad_h - ky);
      const int64_t y1 = std::min<int64_t>(oh, g.height + g.pad_h - ky);
      for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const T wv = kk[ky * g.kernel_w + kx];
        const int64_t x0 = std::max<int64_t>(0, g.pad_w - kx);
        const int64_t x1 = std::min<int64_t>(ow, g.width + g.pad_w - kx);
        for (int64_t y = y0; y < y1; ++y) {
          const T* srow = src + (y + ky - g.pad_h) * g.width + (kx - g.pad_w);
          T* drow = dst + y * ow;
          for (int64_t x = x0; x < x1; ++x) drow[x] += wv * srow[x];
        }
      }
    }
  }
  if (bias) {
    const T b = bias[o];
    for (int64_t i = 0; i < oh * ow; ++i) dst[i] += b;
  }
}

template <typename T>
inline T fc_element(const FcGeometry& g, const T* in, const T* ker, const T* bias, int64_t n,
                    int64_t q) {
  const int64_t ppg = g.in_dim / g.groups;
  const int64_t qpg = g.out_dim / g.groups;
  const int64_t grp = q / qpg;
  const T* x = in + n * g.in_dim + grp * ppg;
  const T* wr = ker + q * ppg;
  T acc = T(0);
  for (int64_t j = 0; j < ppg; ++j) acc += wr[j] * x[j];
  if (bias) acc += bias[q];
  return acc;
}

}  // namespace repmlp::kernels::detail

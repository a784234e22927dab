#pragma once

// Test-only reference computations. None of these call the library kernels;
// they are written from the mathematical definitions so they can check the
// implementation independently.

#include <cmath>
#include <cstdint>
#include <vector>

#include "repmlp/tensor.hpp"

namespace oracle {

using repmlp::BnParams;
using repmlp::ConvSpec;
using repmlp::FcSpec;
using repmlp::Shape4;
using repmlp::Tensor4;

// Dense (g = 1) stride-1 zero-padded conv computed per output element with an
// explicit bounds test on every tap.
template <typename T>
Tensor4<T> dense_conv(const Tensor4<T>& x, const Tensor4<T>& k, int64_t ph, int64_t pw) {
  const Shape4 s = x.shape();
  const Shape4 ks = k.shape();
  const int64_t oh = s.h + 2 * ph - ks.h + 1;
  const int64_t ow = s.w + 2 * pw - ks.w + 1;
  Tensor4<T> out({s.n, ks.n, oh, ow});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t o = 0; o < ks.n; ++o)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          long double acc = 0;
          for (int64_t c = 0; c < ks.c; ++c)
            for (int64_t i = 0; i < ks.h; ++i)
              for (int64_t j = 0; j < ks.w; ++j) {
                const int64_t sy = y - ph + i;
                const int64_t sx = xx - pw + j;
                if (sy < 0 || sy >= s.h || sx < 0 || sx >= s.w) continue;
                acc += static_cast<long double>(k.at(o, c, i, j)) * x.at(n, c, sy, sx);
              }
          out.at(n, o, y, xx) = static_cast<T>(acc);
        }
  return out;
}

// Grouped conv as g dense convs on channel slices, concatenated.
template <typename T>
Tensor4<T> group_split_conv(const Tensor4<T>& x, const ConvSpec<T>& spec) {
  const Shape4 s = x.shape();
  const Shape4 ks = spec.kernel.shape();
  const int64_t g = spec.groups;
  const int64_t cpg = s.c / g;
  const int64_t opg = ks.n / g;
  Tensor4<T> out;
  std::vector<Tensor4<T>> parts;
  for (int64_t grp = 0; grp < g; ++grp) {
    Tensor4<T> xs({s.n, cpg, s.h, s.w});
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < cpg; ++c)
        for (int64_t y = 0; y < s.h; ++y)
          for (int64_t xx = 0; xx < s.w; ++xx) xs.at(n, c, y, xx) = x.at(n, grp * cpg + c, y, xx);
    Tensor4<T> kslice({opg, ks.c, ks.h, ks.w});
    for (int64_t o = 0; o < opg; ++o)
      for (int64_t c = 0; c < ks.c; ++c)
        for (int64_t i = 0; i < ks.h; ++i)
          for (int64_t j = 0; j < ks.w; ++j) kslice.at(o, c, i, j) = spec.kernel.at(grp * opg + o, c, i, j);
    parts.push_back(dense_conv(xs, kslice, spec.pad_h, spec.pad_w));
  }
  const Shape4 ps = parts[0].shape();
  Tensor4<T> cat({s.n, ks.n, ps.h, ps.w});
  for (int64_t grp = 0; grp < g; ++grp)
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t o = 0; o < opg; ++o)
        for (int64_t y = 0; y < ps.h; ++y)
          for (int64_t xx = 0; xx < ps.w; ++xx) {
            T v = parts[grp].at(n, o, y, xx);
            if (spec.bias) v += (*spec.bias)[grp * opg + o];
            cat.at(n, grp * opg + o, y, xx) = v;
          }
  return cat;
}

// Explicit Q x P block-diagonal matrix of a grouped FC.
template <typename T>
std::vector<std::vector<T>> block_diagonal(const FcSpec<T>& fc) {
  std::vector<std::vector<T>> m(fc.out_dim, std::vector<T>(fc.in_dim, T(0)));
  const int64_t ppg = fc.in_dim / fc.groups;
  const int64_t qpg = fc.out_dim / fc.groups;
  for (int64_t q = 0; q < fc.out_dim; ++q)
    for (int64_t j = 0; j < ppg; ++j) m[q][(q / qpg) * ppg + j] = fc.kernel[q * ppg + j];
  return m;
}

// y = M x (+ b) for every sample of a flattened (N, P) input.
template <typename T>
std::vector<T> dense_apply(const std::vector<std::vector<T>>& m, const std::vector<T>& x,
                           int64_t batch, const std::vector<T>* bias = nullptr) {
  const int64_t q = static_cast<int64_t>(m.size());
  const int64_t p = q ? static_cast<int64_t>(m[0].size()) : 0;
  std::vector<T> y(static_cast<size_t>(batch * q));
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t r = 0; r < q; ++r) {
      long double acc = bias ? (*bias)[r] : T(0);
      for (int64_t c = 0; c < p; ++c) acc += static_cast<long double>(m[r][c]) * x[n * p + c];
      y[n * q + r] = static_cast<T>(acc);
    }
  return y;
}

// FC matrix of a same-padded conv on h x w maps, assembled column by column
// from impulse responses: column j is the conv output for a one-hot input at
// flattened position j. Returns the dense (O*h*w) x (C*h*w) matrix.
template <typename T>
std::vector<std::vector<T>> impulse_matrix(const ConvSpec<T>& spec, int64_t c, int64_t h, int64_t w) {
  const int64_t o = spec.kernel.shape().n;
  std::vector<std::vector<T>> m(o * h * w, std::vector<T>(c * h * w, T(0)));
  for (int64_t j = 0; j < c * h * w; ++j) {
    Tensor4<T> x({1, c, h, w});
    x.data()[j] = T(1);
    ConvSpec<T> bare = spec;
    bare.bias.reset();
    Tensor4<T> y = group_split_conv(x, bare);
    for (int64_t r = 0; r < o * h * w; ++r) m[r][j] = y.data()[r];
  }
  return m;
}

// Partition index map from the reshape/permute definition: element at
// (n, c, ip*h + y, jp*w + x) of the input lands at partition
// (n*Hp + ip)*Wp + jp, channel c, pixel (y, x).
template <typename T>
Tensor4<T> partition_by_index(const Tensor4<T>& x, int64_t h, int64_t w) {
  const Shape4 s = x.shape();
  const int64_t hp = s.h / h;
  const int64_t wp = s.w / w;
  Tensor4<T> out({s.n * hp * wp, s.c, h, w});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t yy = 0; yy < s.h; ++yy)
        for (int64_t xx = 0; xx < s.w; ++xx)
          out.at((n * hp + yy / h) * wp + xx / w, c, yy % h, xx % w) = x.at(n, c, yy, xx);
  return out;
}

template <typename T>
T bn_scalar(T x, T mean, T var, T gamma, T beta, T eps) {
  return gamma * (x - mean) / std::sqrt(var + eps) + beta;
}

}  // namespace oracle

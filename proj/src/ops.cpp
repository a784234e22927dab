#include "repmlp/ops.hpp"

#include <algorithm>
#include <limits>

#include "repmlp/kernels.hpp"

namespace repmlp {

namespace {
std::string num(int64_t v) { return std::to_string(v); }
}  // namespace

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvSpec<T>& spec, Exec exec) {
  spec.validate();
  const Shape4& s = input.shape();
  if (s.c % spec.groups != 0)
    throw ShapeError("conv input channels " + num(s.c) + " not divisible by groups " +
                     num(spec.groups));
  if (s.c / spec.groups != spec.kernel.shape().c)
    throw ShapeError("conv expects " + num(spec.in_channels()) + " input channels, got " +
                     num(s.c));
  kernels::ConvGeometry geo{s.n,           s.c,           s.h,           s.w,
                            spec.out_channels(), spec.kernel_h(), spec.kernel_w(), spec.pad_h,
                            spec.pad_w,    spec.groups};
  if (geo.out_h() < 1 || geo.out_w() < 1)
    throw ShapeError("conv kernel " + num(geo.kernel_h) + "x" + num(geo.kernel_w) +
                     " larger than padded input " + s.str());
  Tensor4<T> out({s.n, geo.out_channels, geo.out_h(), geo.out_w()});
  std::span<const T> bias;
  if (spec.bias) bias = *spec.bias;
  if (exec == Exec::serial)
    kernels::serial::conv2d<T>(geo, input.data(), spec.kernel.data(), bias, out.data());
  else
    kernels::omp::conv2d<T>(geo, input.data(), spec.kernel.data(), bias, out.data());
  return out;
}

template <typename T>
Tensor4<T> grouped_fc(const Tensor4<T>& input, const FcSpec<T>& spec, Exec exec) {
  spec.validate();
  const Shape4& s = input.shape();
  const int64_t p = s.c * s.h * s.w;
  if (p != spec.in_dim)
    throw ShapeError("fc expects " + num(spec.in_dim) + " input features, got " + num(p));
  kernels::FcGeometry geo{s.n, spec.in_dim, spec.out_dim, spec.groups};
  Tensor4<T> out({s.n, spec.out_dim, 1, 1});
  std::span<const T> bias;
  if (spec.bias) bias = *spec.bias;
  std::span<const T> kernel(spec.kernel);
  if (exec == Exec::serial)
    kernels::serial::grouped_fc<T>(geo, input.data(), kernel, bias, out.data());
  else
    kernels::omp::grouped_fc<T>(geo, input.data(), kernel, bias, out.data());
  return out;
}

template <typename T>
Tensor4<T> batchnorm_inference(const Tensor4<T>& input, const BnParams<T>& bn) {
  bn.validate();
  const Shape4& s = input.shape();
  if (bn.size() != s.c)
    throw ShapeError("batch-norm has " + num(bn.size()) + " channels, input has " + num(s.c));
  Tensor4<T> out(s);
  auto src = input.data();
  auto dst = out.data();
  const int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const T sd = bn.std_at(c);
      const int64_t base = (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i)
        dst[base + i] = bn.gamma[c] * (src[base + i] - bn.mean[c]) / sd + bn.beta[c];
    }
  return out;
}

template <typename T>
Tensor4<T> batchnorm1d_inference(const Tensor4<T>& input, const BnParams<T>& bn) {
  const Shape4& s = input.shape();
  const int64_t f = s.c * s.h * s.w;
  if (bn.size() != f)
    throw ShapeError("1-D batch-norm has " + num(bn.size()) + " features, input has " + num(f));
  Tensor4<T> flat = input.reshaped({s.n, f, 1, 1});
  return batchnorm_inference(flat, bn).reshaped(s);
}

template <typename T>
Tensor4<T> avg_pool_global(const Tensor4<T>& input) {
  const Shape4& s = input.shape();
  if (s.h < 1 || s.w < 1) throw ShapeError("average pooling over empty spatial dims " + s.str());
  Tensor4<T> out({s.n, s.c, 1, 1});
  auto src = input.data();
  const int64_t plane = s.h * s.w;
  for (int64_t i = 0; i < s.n * s.c; ++i) {
    T acc = T(0);
    for (int64_t j = 0; j < plane; ++j) acc += src[i * plane + j];
    out.data()[i] = acc / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
Tensor4<T> max_pool(const Tensor4<T>& input, int64_t window) {
  const Shape4& s = input.shape();
  if (window < 1 || s.h % window != 0 || s.w % window != 0)
    throw ShapeError("max pool window " + num(window) + " does not tile " + s.str());
  Tensor4<T> out({s.n, s.c, s.h / window, s.w / window});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t y = 0; y < s.h / window; ++y)
        for (int64_t x = 0; x < s.w / window; ++x) {
          T m = -std::numeric_limits<T>::infinity();
          for (int64_t dy = 0; dy < window; ++dy)
            for (int64_t dx = 0; dx < window; ++dx)
              m = std::max(m, input.at(n, c, y * window + dy, x * window + dx));
          out.at(n, c, y, x) = m;
        }
  return out;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input) {
  Tensor4<T> out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("add shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor4<T> out(a.shape());
  auto da = a.data();
  auto db = b.data();
  auto dst = out.data();
  for (size_t i = 0; i < da.size(); ++i) dst[i] = da[i] + db[i];
  return out;
}

template <typename T>
Tensor4<T> partition(const Tensor4<T>& input, int64_t h, int64_t w) {
  const Shape4& s = input.shape();
  if (h < 1 || w < 1 || s.h % h != 0 || s.w % w != 0)
    throw ShapeError("partition " + num(h) + "x" + num(w) + " does not tile " + s.str());
  const int64_t hp = s.h / h;
  const int64_t wp = s.w / w;
  Tensor4<T> out({s.n * hp * wp, s.c, h, w});
  auto src = input.data();
  auto dst = out.data();
  int64_t idx = 0;
  // destination order (n, ip, jp, c, y, x)
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t ip = 0; ip < hp; ++ip)
      for (int64_t jp = 0; jp < wp; ++jp)
        for (int64_t c = 0; c < s.c; ++c)
          for (int64_t y = 0; y < h; ++y) {
            const int64_t row = input.offset(n, c, ip * h + y, jp * w);
            for (int64_t x = 0; x < w; ++x) dst[idx++] = src[row + x];
          }
  return out;
}

template <typename T>
Tensor4<T> inverse_partition(const Tensor4<T>& pmap, int64_t n, int64_t height, int64_t width) {
  const Shape4& s = pmap.shape();
  if (n < 1 || s.h < 1 || s.w < 1 || height % s.h != 0 || width % s.w != 0)
    throw ShapeError("inverse_partition: tiles " + s.str() + " do not fit " + num(height) + "x" +
                     num(width));
  const int64_t hp = height / s.h;
  const int64_t wp = width / s.w;
  if (s.n != n * hp * wp)
    throw ShapeError("inverse_partition: expected " + num(n * hp * wp) + " partitions, got " +
                     num(s.n));
  Tensor4<T> out({n, s.c, height, width});
  auto src = pmap.data();
  auto dst = out.data();
  int64_t idx = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ip = 0; ip < hp; ++ip)
      for (int64_t jp = 0; jp < wp; ++jp)
        for (int64_t c = 0; c < s.c; ++c)
          for (int64_t y = 0; y < s.h; ++y) {
            const int64_t row = out.offset(b, c, ip * s.h + y, jp * s.w);
            for (int64_t x = 0; x < s.w; ++x) dst[row + x] = src[idx++];
          }
  return out;
}

#define REPMLP_INSTANTIATE_OPS(T)                                                           \
  template Tensor4<T> conv2d(const Tensor4<T>&, const ConvSpec<T>&, Exec);                  \
  template Tensor4<T> grouped_fc(const Tensor4<T>&, const FcSpec<T>&, Exec);                \
  template Tensor4<T> batchnorm_inference(const Tensor4<T>&, const BnParams<T>&);           \
  template Tensor4<T> batchnorm1d_inference(const Tensor4<T>&, const BnParams<T>&);         \
  template Tensor4<T> avg_pool_global(const Tensor4<T>&);                                   \
  template Tensor4<T> max_pool(const Tensor4<T>&, int64_t);                                 \
  template Tensor4<T> relu(const Tensor4<T>&);                                              \
  template Tensor4<T> add(const Tensor4<T>&, const Tensor4<T>&);                            \
  template Tensor4<T> partition(const Tensor4<T>&, int64_t, int64_t);                       \
  template Tensor4<T> inverse_partition(const Tensor4<T>&, int64_t, int64_t, int64_t);

REPMLP_INSTANTIATE_OPS(float)
REPMLP_INSTANTIATE_OPS(double)

}  // namespace repmlp

#include "repmlp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace repmlp {

std::string Shape4::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
    throw ShapeError("negative tensor dimension " + shape.str());
  data_.assign(static_cast<size_t>(shape.numel()), T(0));
}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
    throw ShapeError("negative tensor dimension " + shape.str());
  if (static_cast<int64_t>(data_.size()) != shape.numel())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
}

template <typename T>
Tensor4<T> Tensor4<T>::filled(Shape4 shape, T value) {
  Tensor4 t(shape);
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
Tensor4<T> Tensor4<T>::reshaped(Shape4 shape) const {
  if (shape.numel() != shape_.numel())
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor4(shape, data_);
}

template <typename T>
void ConvSpec<T>::validate() const {
  const Shape4& k = kernel.shape();
  if (groups < 1) throw ShapeError("conv groups must be >= 1");
  if (k.n % groups != 0)
    throw ShapeError("conv output channels " + std::to_string(k.n) + " not divisible by groups " +
                     std::to_string(groups));
  if (k.h < 1 || k.w < 1) throw ShapeError("conv kernel has empty spatial extent");
  if (pad_h < 0 || pad_w < 0) throw ShapeError("negative conv padding");
  if (bias && static_cast<int64_t>(bias->size()) != k.n)
    throw ShapeError("conv bias length " + std::to_string(bias->size()) +
                     " != output channels " + std::to_string(k.n));
}

template <typename T>
ConvSpec<T> ConvSpec<T>::same(Tensor4<T> kernel, int64_t groups) {
  ConvSpec spec;
  spec.pad_h = kernel.shape().h / 2;
  spec.pad_w = kernel.shape().w / 2;
  spec.kernel = std::move(kernel);
  spec.groups = groups;
  spec.validate();
  return spec;
}

template <typename T>
void FcSpec<T>::validate() const {
  if (groups < 1) throw ShapeError("fc groups must be >= 1");
  if (in_dim % groups != 0 || out_dim % groups != 0)
    throw ShapeError("fc dims " + std::to_string(in_dim) + "->" + std::to_string(out_dim) +
                     " not divisible by groups " + std::to_string(groups));
  if (static_cast<int64_t>(kernel.size()) != out_dim * (in_dim / groups))
    throw ShapeError("fc kernel has " + std::to_string(kernel.size()) + " entries, expected " +
                     std::to_string(out_dim * (in_dim / groups)));
  if (bias && static_cast<int64_t>(bias->size()) != out_dim)
    throw ShapeError("fc bias length mismatch");
}

template <typename T>
FcSpec<T> FcSpec<T>::zeros(int64_t in_dim, int64_t out_dim, int64_t groups, bool with_bias) {
  FcSpec fc;
  fc.groups = groups;
  fc.in_dim = in_dim;
  fc.out_dim = out_dim;
  if (groups < 1 || in_dim % groups != 0 || out_dim % groups != 0)
    throw ShapeError("fc dims not divisible by groups");
  fc.kernel.assign(static_cast<size_t>(out_dim * (in_dim / groups)), T(0));
  if (with_bias) fc.bias = std::vector<T>(static_cast<size_t>(out_dim), T(0));
  return fc;
}

template <typename T>
T BnParams<T>::std_at(int64_t i) const {
  return std::sqrt(var[i] + eps);
}

template <typename T>
void BnParams<T>::validate() const {
  const size_t n = mean.size();
  if (var.size() != n || gamma.size() != n || beta.size() != n)
    throw ShapeError("batch-norm vectors differ in length");
  if (!(eps > T(0))) throw ShapeError("batch-norm eps must be positive");
  for (size_t i = 0; i < n; ++i)
    if (!(var[i] + eps > T(0))) throw ShapeError("batch-norm variance + eps must be positive");
}

template <typename T>
BnParams<T> BnParams<T>::identity(int64_t n, T eps) {
  BnParams bn;
  bn.eps = eps;
  bn.mean.assign(n, T(0));
  bn.var.assign(n, T(1) - eps);
  bn.gamma.assign(n, T(1));
  bn.beta.assign(n, T(0));
  return bn;
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (size_t i = 0; i < da.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(da[i]) - static_cast<double>(db[i])));
  return m;
}

template class Tensor4<float>;
template class Tensor4<double>;
template struct ConvSpec<float>;
template struct ConvSpec<double>;
template struct FcSpec<float>;
template struct FcSpec<double>;
template struct BnParams<float>;
template struct BnParams<double>;
template double max_abs_diff(const Tensor4<float>&, const Tensor4<float>&);
template double max_abs_diff(const Tensor4<double>&, const Tensor4<double>&);

}  // namespace repmlp

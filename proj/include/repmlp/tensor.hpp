#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace repmlp {

// Thrown on every shape, divisibility, or configuration violation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape4 {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense N x C x H x W feature map, row-major in (n, c, h, w).
///
/// The shape is fixed at construction. `reshaped` returns a new tensor with
/// the same element order; element values can be written through `data()`
/// while a tensor is being filled.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape);
  Tensor4(Shape4 shape, std::vector<T> data);

  static Tensor4 filled(Shape4 shape, T value);

  const Shape4& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  int64_t offset(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int64_t n, int64_t c, int64_t y, int64_t x) { return data_[offset(n, c, y, x)]; }
  const T& at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data_[offset(n, c, y, x)];
  }

  Tensor4 reshaped(Shape4 shape) const;

  template <typename U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor4<U>(shape_, std::move(out));
  }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

/// Grouped 2-D convolution, stride 1, zero padding.
/// kernel dims are (O, C/g, Kh, Kw).
template <typename T>
struct ConvSpec {
  Tensor4<T> kernel;
  std::optional<std::vector<T>> bias;
  int64_t pad_h = 0;
  int64_t pad_w = 0;
  int64_t groups = 1;

  int64_t out_channels() const { return kernel.shape().n; }
  int64_t in_channels() const { return kernel.shape().c * groups; }
  int64_t kernel_h() const { return kernel.shape().h; }
  int64_t kernel_w() const { return kernel.shape().w; }

  // Throws ShapeError if the kernel, bias, padding and groups disagree.
  void validate() const;

  // Square K x K kernel with "same" padding floor(K/2).
  static ConvSpec same(Tensor4<T> kernel, int64_t groups);
};

/// Grouped fully-connected layer: block-diagonal Q x P matrix stored as
/// Q rows of P/g entries. Row q belongs to group q / (Q/g) and reads input
/// features [grp*P/g, (grp+1)*P/g).
template <typename T>
struct FcSpec {
  std::vector<T> kernel;
  std::optional<std::vector<T>> bias;
  int64_t groups = 1;
  int64_t in_dim = 0;
  int64_t out_dim = 0;

  int64_t in_per_group() const { return in_dim / groups; }
  int64_t out_per_group() const { return out_dim / groups; }
  T& weight(int64_t q, int64_t j) { return kernel[q * in_per_group() + j]; }
  const T& weight(int64_t q, int64_t j) const { return kernel[q * in_per_group() + j]; }

  void validate() const;

  static FcSpec zeros(int64_t in_dim, int64_t out_dim, int64_t groups, bool with_bias);
};

/// Inference-mode batch-norm statistics and affine parameters.
template <typename T>
struct BnParams {
  std::vector<T> mean;
  std::vector<T> var;
  std::vector<T> gamma;
  std::vector<T> beta;
  T eps = T(1e-5);

  int64_t size() const { return static_cast<int64_t>(mean.size()); }
  // Effective standard deviation sqrt(var + eps).
  T std_at(int64_t i) const;
  void validate() const;

  // mean 0, var 1 - eps, gamma 1, beta 0.
  static BnParams identity(int64_t n, T eps = T(1e-5));
};

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b);

}  // namespace repmlp

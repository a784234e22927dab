#pragma once

#include "repmlp/tensor.hpp"

namespace repmlp {

enum class Exec { serial, parallel };

/// Grouped 2-D convolution with stride 1 and zero padding. Output is
/// (N, O, H + 2p_h - K_h + 1, W + 2p_w - K_w + 1); with p = floor(K/2) and
/// odd K this keeps the input resolution.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvSpec<T>& spec, Exec exec = Exec::parallel);

/// Grouped FC. Each sample's C*H*W elements are read as one feature vector of
/// length spec.in_dim; the result is (N, Q, 1, 1).
template <typename T>
Tensor4<T> grouped_fc(const Tensor4<T>& input, const FcSpec<T>& spec, Exec exec = Exec::parallel);

template <typename T>
Tensor4<T> batchnorm_inference(const Tensor4<T>& input, const BnParams<T>& bn);

/// 1-D batch norm over the flattened C*H*W features of each sample.
template <typename T>
Tensor4<T> batchnorm1d_inference(const Tensor4<T>& input, const BnParams<T>& bn);

template <typename T>
Tensor4<T> avg_pool_global(const Tensor4<T>& input);

/// Non-overlapping max pooling with a square window and matching stride.
template <typename T>
Tensor4<T> max_pool(const Tensor4<T>& input, int64_t window);

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input);

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b);

/// Splits (N, C, H, W) into h x w tiles: reshape to (N, C, H/h, h, W/w, w),
/// permute to (N, H/h, W/w, C, h, w), reshape to (N*H/h*W/w, C, h, w).
template <typename T>
Tensor4<T> partition(const Tensor4<T>& input, int64_t h, int64_t w);

/// Exact inverse of partition for a map produced from an (N, *, H, W) input.
template <typename T>
Tensor4<T> inverse_partition(const Tensor4<T>& pmap, int64_t n, int64_t height, int64_t width);

}  // namespace repmlp

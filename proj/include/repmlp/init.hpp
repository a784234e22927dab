#pragma once

#include <cstdint>
#include <random>

#include "repmlp/block.hpp"

namespace repmlp {

// Ranges for randomized weights. Values are drawn in double and rounded to T,
// so the same generator state yields matching float and double weights.
struct InitRanges {
  double weight = 0.5;      // kernels, biases, gamma, beta ~ U[-weight, weight]
  double var_lo = 0.5;      // running variance ~ U[var_lo, var_hi]
  double var_hi = 1.5;
  double mean = 0.1;        // running mean ~ U[-mean, mean]
  double branch_kernel_offset = 0.0;  // added to every branch conv kernel entry
  bool positive_branch_gamma = false;  // branch BN gamma ~ U[0.5, 1.5] instead
};

template <typename T>
Tensor4<T> random_tensor(Shape4 shape, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5);

template <typename T>
BnParams<T> random_bn(int64_t n, std::mt19937_64& rng, const InitRanges& r = {}, double eps = 1e-5);

template <typename T>
FcSpec<T> random_fc(int64_t in, int64_t out, int64_t groups, bool bias, std::mt19937_64& rng,
                    double range = 0.5);

template <typename T>
RepMLPTrainWeights<T> random_train_weights(const RepMLPConfig& cfg, std::mt19937_64& rng,
                                           const InitRanges& r = {});

// All kernels zero, identity BNs with zero shift.
template <typename T>
RepMLPTrainWeights<T> zero_train_weights(const RepMLPConfig& cfg);

}  // namespace repmlp

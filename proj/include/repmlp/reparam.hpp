#pragma once

#include "repmlp/block.hpp"

namespace repmlp {

/// Inference-time block: FC1 (with the Global Perceptron BN absorbed), FC2,
/// and a single grouped FC3 carrying every conv branch and both BNs.
template <typename T>
struct RepMLPInferWeights {
  FcSpec<T> fc1;  // empty when the config has no Global Perceptron
  FcSpec<T> fc2;
  FcSpec<T> fc3;  // (O*h*w) x (C*h*w/g) with bias

  void validate(const RepMLPConfig& cfg) const;
  int64_t param_count() const;
};

/// Folds an inference BN into the preceding conv:
/// F'_i = (gamma_i / sigma_i) F_i,  b'_i = (b_i - mu_i) gamma_i / sigma_i + beta_i,
/// with sigma_i = sqrt(var_i + eps) and b_i = 0 for a bias-free conv.
template <typename T>
ConvSpec<T> fuse_bn_into_conv(const ConvSpec<T>& conv, const BnParams<T>& bn);

/// FC kernel equivalent to a stride-1 "same" conv on h x w inputs, obtained by
/// convolving the (C*h*w/g)-dim identity (replicated across the g groups and
/// viewed as C*h*w/g feature maps of shape (C, h, w)) with the conv kernel.
/// The result (C*h*w/g, O, h, w) is read as a (C*h*w/g) x (O*h*w) matrix and
/// transposed. A conv bias is replicated h*w times per output channel.
template <typename T>
FcSpec<T> conv_to_fc(const ConvSpec<T>& conv, int64_t channels, int64_t h, int64_t w);

/// Row-wise fold of a 1-D BN (over fc.out_dim features) into the FC.
template <typename T>
FcSpec<T> fuse_bn1d_into_fc(const FcSpec<T>& fc, const BnParams<T>& bn);

/// Removes a per-channel affine BN applied before a dense FC whose input is
/// channel-major with in_dim / bn.size() entries per channel.
template <typename T>
FcSpec<T> absorb_bn_into_fc1(const BnParams<T>& bn, const FcSpec<T>& fc1);

/// One-shot conversion. FC3's kernel is accumulated as: BN-fused FC3 first,
/// then the BN-fused branches in ascending kernel size.
template <typename T>
RepMLPInferWeights<T> convert_block(const RepMLPConfig& cfg, const RepMLPTrainWeights<T>& train);

template <typename T>
Tensor4<T> repmlp_forward_infer(const Tensor4<T>& input, const RepMLPConfig& cfg,
                                const RepMLPInferWeights<T>& infer);

struct JacobianReport {
  double linearity = 0.0;  // max |c2f(F + dE) - c2f(F) - d c2f(E)| over basis E
  double finite_difference = 0.0;  // max |(c2f(F + dE) - c2f(F)) / d - J E|
  int64_t basis_checked = 0;
  double max() const { return linearity > finite_difference ? linearity : finite_difference; }
};

/// Checks that conv_to_fc is linear in the kernel and that its finite-difference
/// Jacobian equals the index map (o, y, x) <- (c, y + ky - p, x + kx - p).
/// Every kernel entry is perturbed when max_basis <= 0, otherwise the first
/// max_basis entries. step == 0 perturbs nothing and reports zero.
JacobianReport conv_to_fc_jacobian_check(const ConvSpec<double>& conv, int64_t h, int64_t w,
                                         double step, int64_t max_basis = 0);

}  // namespace repmlp

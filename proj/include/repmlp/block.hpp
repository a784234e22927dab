#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repmlp/ops.hpp"
#include "repmlp/tensor.hpp"

namespace repmlp {

enum class Activation { relu, identity };

/// Hyper-parameters of one RepMLP block.
///
/// The Global Perceptron pools every h x w partition, so one sample yields
/// C * (H/h) * (W/w) pooled values (channel-major). FC1 maps that vector to
/// `gp_hidden()` features and FC2 maps it back. When h == H and w == W there
/// is a single partition and the Global Perceptron does not exist.
struct RepMLPConfig {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  int64_t part_h = 0;
  int64_t part_w = 0;
  int64_t groups = 1;
  std::vector<int64_t> branch_kernels;
  int64_t gp_internal_dim = 0;  // 0 selects gp_in_dim()
  Activation gp_activation = Activation::relu;
  double eps = 1e-5;

  int64_t parts_h() const { return height / part_h; }
  int64_t parts_w() const { return width / part_w; }
  int64_t num_parts() const { return parts_h() * parts_w(); }
  bool has_global() const { return part_h != height || part_w != width; }
  int64_t gp_in_dim() const { return in_channels * num_parts(); }
  int64_t gp_hidden() const { return gp_internal_dim > 0 ? gp_internal_dim : gp_in_dim(); }
  int64_t fc3_in() const { return in_channels * part_h * part_w; }
  int64_t fc3_out() const { return out_channels * part_h * part_w; }

  void validate() const;
  // Stable identifier, e.g. "C4_O8_H12W7_h6w7_g2_K1-3".
  std::string name() const;
};

template <typename T>
struct ConvBnBranch {
  ConvSpec<T> conv;  // bias-free
  BnParams<T> bn;    // over out_channels
};

template <typename T>
struct RepMLPTrainWeights {
  // Global Perceptron; empty when the config has no Global Perceptron.
  BnParams<T> gp_bn;  // over in_channels
  FcSpec<T> fc1;
  FcSpec<T> fc2;
  // One entry per cfg.branch_kernels, same order.
  std::vector<ConvBnBranch<T>> branches;
  FcSpec<T> fc3;  // bias-free, groups g
  BnParams<T> fc3_bn;  // 1-D over out_channels * h * w

  void validate(const RepMLPConfig& cfg) const;
  int64_t param_count() const;
};

template <typename T>
Tensor4<T> global_perceptron(const Tensor4<T>& input, const RepMLPConfig& cfg,
                             const RepMLPTrainWeights<T>& weights);

template <typename T>
Tensor4<T> local_perceptron(const Tensor4<T>& pmap, const RepMLPConfig& cfg,
                            const RepMLPTrainWeights<T>& weights);

template <typename T>
Tensor4<T> partition_perceptron(const Tensor4<T>& pmap, const RepMLPConfig& cfg,
                                const RepMLPTrainWeights<T>& weights);

template <typename T>
Tensor4<T> repmlp_forward_train(const Tensor4<T>& input, const RepMLPConfig& cfg,
                                const RepMLPTrainWeights<T>& weights);

namespace detail {
// Partition + pool + (optional BN) + FC1 + act + FC2 + broadcast add.
template <typename T>
Tensor4<T> global_mix(const Tensor4<T>& input, const RepMLPConfig& cfg, const BnParams<T>* bn,
                      const FcSpec<T>& fc1, const FcSpec<T>& fc2);
void check_input(const Shape4& s, const RepMLPConfig& cfg);
}  // namespace detail

enum class Form { train, infer };

// Parameter and MAC counts of one block; FLOPs are per sample.
int64_t block_params(const RepMLPConfig& cfg, Form form);
int64_t block_flops(const RepMLPConfig& cfg, Form form);

}  // namespace repmlp

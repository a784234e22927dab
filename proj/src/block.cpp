#include "repmlp/block.hpp"

#include <algorithm>
#include <sstream>

namespace repmlp {

namespace {
std::string num(int64_t v) { return std::to_string(v); }

template <typename T>
int64_t fc_params(const FcSpec<T>& fc) {
  return static_cast<int64_t>(fc.kernel.size() + (fc.bias ? fc.bias->size() : 0));
}

template <typename T>
void check_fc(const FcSpec<T>& fc, int64_t in, int64_t out, int64_t groups, const char* what) {
  fc.validate();
  if (fc.in_dim != in || fc.out_dim != out || fc.groups != groups)
    throw ShapeError(std::string(what) + " is " + num(fc.in_dim) + "->" + num(fc.out_dim) + "/g" +
                     num(fc.groups) + ", config expects " + num(in) + "->" + num(out) + "/g" +
                     num(groups));
}

template <typename T>
void check_bn(const BnParams<T>& bn, int64_t n, const char* what) {
  bn.validate();
  if (bn.size() != n)
    throw ShapeError(std::string(what) + " has " + num(bn.size()) + " entries, expected " + num(n));
}
}  // namespace

void RepMLPConfig::validate() const {
  if (in_channels < 1 || out_channels < 1 || height < 1 || width < 1 || part_h < 1 || part_w < 1)
    throw ShapeError("RepMLP dims must be positive: " + name());
  if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0)
    throw ShapeError("RepMLP channels " + num(in_channels) + "/" + num(out_channels) +
                     " not divisible by groups " + num(groups));
  if (height % part_h != 0 || width % part_w != 0)
    throw ShapeError("resolution " + num(height) + "x" + num(width) +
                     " not divisible by partition " + num(part_h) + "x" + num(part_w));
  for (size_t i = 0; i < branch_kernels.size(); ++i) {
    const int64_t k = branch_kernels[i];
    for (size_t j = 0; j < i; ++j)
      if (branch_kernels[j] == k) throw ShapeError("branch kernel " + num(k) + " repeated");
    if (k < 1 || k % 2 == 0) throw ShapeError("branch kernel " + num(k) + " must be odd");
    if (k > part_h || k > part_w)
      throw ShapeError("branch kernel " + num(k) + " exceeds partition " + num(part_h) + "x" +
                       num(part_w));
  }
  if (gp_internal_dim < 0) throw ShapeError("negative Global Perceptron width");
  if (!(eps > 0.0)) throw ShapeError("eps must be positive");
}

std::string RepMLPConfig::name() const {
  std::ostringstream os;
  os << 'C' << in_channels << "_O" << out_channels << "_H" << height << 'W' << width << "_h"
     << part_h << 'w' << part_w << "_g" << groups << "_K";
  if (branch_kernels.empty()) os << "none";
  for (size_t i = 0; i < branch_kernels.size(); ++i) os << (i ? "-" : "") << branch_kernels[i];
  return os.str();
}

template <typename T>
void RepMLPTrainWeights<T>::validate(const RepMLPConfig& cfg) const {
  cfg.validate();
  if (cfg.has_global()) {
    check_bn(gp_bn, cfg.in_channels, "gp_bn");
    check_fc(fc1, cfg.gp_in_dim(), cfg.gp_hidden(), 1, "fc1");
    check_fc(fc2, cfg.gp_hidden(), cfg.gp_in_dim(), 1, "fc2");
  }
  if (branches.size() != cfg.branch_kernels.size())
    throw ShapeError("weights carry " + num(branches.size()) + " branches, config lists " +
                     num(cfg.branch_kernels.size()));
  for (size_t i = 0; i < branches.size(); ++i) {
    const auto& br = branches[i];
    br.conv.validate();
    const Shape4& ks = br.conv.kernel.shape();
    const int64_t k = cfg.branch_kernels[i];
    if (ks.n != cfg.out_channels || ks.c != cfg.in_channels / cfg.groups || ks.h != k ||
        ks.w != k || br.conv.groups != cfg.groups)
      throw ShapeError("branch " + num(k) + " kernel " + ks.str() + " does not match config");
    if (br.conv.pad_h != k / 2 || br.conv.pad_w != k / 2)
      throw ShapeError("branch " + num(k) + " padding must be " + num(k / 2));
    if (br.conv.bias) throw ShapeError("branch convs carry no bias");
    check_bn(br.bn, cfg.out_channels, "branch bn");
  }
  check_fc(fc3, cfg.fc3_in(), cfg.fc3_out(), cfg.groups, "fc3");
  if (fc3.bias) throw ShapeError("fc3 carries no bias in the training form");
  check_bn(fc3_bn, cfg.fc3_out(), "fc3_bn");
}

template <typename T>
int64_t RepMLPTrainWeights<T>::param_count() const {
  int64_t total = fc_params(fc1) + fc_params(fc2) + fc_params(fc3);
  // BN: gamma and beta are parameters; running statistics are not.
  total += 2 * (gp_bn.size() + fc3_bn.size());
  for (const auto& br : branches) total += br.conv.kernel.numel() + 2 * br.bn.size();
  return total;
}

void detail::check_input(const Shape4& s, const RepMLPConfig& cfg) {
  if (s.c != cfg.in_channels || s.h != cfg.height || s.w != cfg.width)
    throw ShapeError("RepMLP " + cfg.name() + " got input " + s.str());
}

template <typename T>
Tensor4<T> detail::global_mix(const Tensor4<T>& input, const RepMLPConfig& cfg,
                              const BnParams<T>* bn, const FcSpec<T>& fc1,
                              const FcSpec<T>& fc2) {
  Tensor4<T> pmap = partition(input, cfg.part_h, cfg.part_w);
  if (!cfg.has_global()) return pmap;

  const int64_t n = input.shape().n;
  const int64_t parts = cfg.num_parts();
  const int64_t c = cfg.in_channels;
  Tensor4<T> pooled = avg_pool_global(pmap);  // (n*parts, c, 1, 1)
  if (bn) pooled = batchnorm_inference(pooled, *bn);

  // (n, parts, c) -> (n, c, parts): one channel-major vector per sample
  Tensor4<T> joint({n, c * parts, 1, 1});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t p = 0; p < parts; ++p)
      for (int64_t ch = 0; ch < c; ++ch)
        joint.data()[(b * c + ch) * parts + p] = pooled.data()[(b * parts + p) * c + ch];

  Tensor4<T> hidden = grouped_fc(joint, fc1);
  if (cfg.gp_activation == Activation::relu) hidden = relu(hidden);
  Tensor4<T> mixed = grouped_fc(hidden, fc2);

  const int64_t plane = cfg.part_h * cfg.part_w;
  auto dst = pmap.data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t p = 0; p < parts; ++p)
      for (int64_t ch = 0; ch < c; ++ch) {
        const T v = mixed.data()[(b * c + ch) * parts + p];
        T* tile = dst.data() + ((b * parts + p) * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) tile[i] += v;
      }
  return pmap;
}

template <typename T>
Tensor4<T> global_perceptron(const Tensor4<T>& input, const RepMLPConfig& cfg,
                             const RepMLPTrainWeights<T>& weights) {
  cfg.validate();
  detail::check_input(input.shape(), cfg);
  return detail::global_mix(input, cfg, &weights.gp_bn, weights.fc1, weights.fc2);
}

template <typename T>
Tensor4<T> local_perceptron(const Tensor4<T>& pmap, const RepMLPConfig& cfg,
                            const RepMLPTrainWeights<T>& weights) {
  const Shape4& s = pmap.shape();
  if (s.c != cfg.in_channels || s.h != cfg.part_h || s.w != cfg.part_w)
    throw ShapeError("local perceptron expects (*, " + num(cfg.in_channels) + ", " +
                     num(cfg.part_h) + ", " + num(cfg.part_w) + "), got " + s.str());
  for (int64_t k : cfg.branch_kernels)
    if (k > cfg.part_h || k > cfg.part_w)
      throw ShapeError("branch kernel " + num(k) + " exceeds partition size");
  if (weights.branches.size() != cfg.branch_kernels.size())
    throw ShapeError("branch count does not match config");
  Tensor4<T> out({s.n, cfg.out_channels, s.h, s.w});
  for (const auto& br : weights.branches)
    out = add(out, batchnorm_inference(conv2d(pmap, br.conv), br.bn));
  return out;
}

template <typename T>
Tensor4<T> partition_perceptron(const Tensor4<T>& pmap, const RepMLPConfig& cfg,
                                const RepMLPTrainWeights<T>& weights) {
  const Shape4& s = pmap.shape();
  if (s.c != cfg.in_channels || s.h != cfg.part_h || s.w != cfg.part_w)
    throw ShapeError("partition perceptron expects (*, " + num(cfg.in_channels) + ", " +
                     num(cfg.part_h) + ", " + num(cfg.part_w) + "), got " + s.str());
  Tensor4<T> v = grouped_fc(pmap, weights.fc3);
  v = batchnorm_inference(v, weights.fc3_bn);
  return v.reshaped({s.n, cfg.out_channels, cfg.part_h, cfg.part_w});
}

template <typename T>
Tensor4<T> repmlp_forward_train(const Tensor4<T>& input, const RepMLPConfig& cfg,
                                const RepMLPTrainWeights<T>& weights) {
  weights.validate(cfg);
  detail::check_input(input.shape(), cfg);
  Tensor4<T> pmap = detail::global_mix(input, cfg, &weights.gp_bn, weights.fc1, weights.fc2);
  Tensor4<T> out = add(local_perceptron(pmap, cfg, weights), partition_perceptron(pmap, cfg, weights));
  return inverse_partition(out, input.shape().n, cfg.height, cfg.width);
}

int64_t block_params(const RepMLPConfig& cfg, Form form) {
  cfg.validate();
  int64_t total = 0;
  if (cfg.has_global()) {
    const int64_t in = cfg.gp_in_dim();
    const int64_t hid = cfg.gp_hidden();
    total += in * hid + hid + hid * in + in;
    if (form == Form::train) total += 2 * cfg.in_channels;
  }
  total += cfg.fc3_out() * (cfg.fc3_in() / cfg.groups);
  if (form == Form::train) {
    total += 2 * cfg.fc3_out();
    for (int64_t k : cfg.branch_kernels)
      total += cfg.out_channels * (cfg.in_channels / cfg.groups) * k * k + 2 * cfg.out_channels;
  } else {
    total += cfg.fc3_out();
  }
  return total;
}

int64_t block_flops(const RepMLPConfig& cfg, Form form) {
  cfg.validate();
  int64_t total = 0;
  if (cfg.has_global()) total += 2 * cfg.gp_in_dim() * cfg.gp_hidden();
  const int64_t parts = cfg.num_parts();
  total += parts * cfg.fc3_out() * (cfg.fc3_in() / cfg.groups);
  if (form == Form::train)
    for (int64_t k : cfg.branch_kernels)
      total += parts * cfg.out_channels * (cfg.in_channels / cfg.groups) * k * k * cfg.part_h *
               cfg.part_w;
  return total;
}

#define REPMLP_INSTANTIATE_BLOCK(T)                                                          \
  template struct RepMLPTrainWeights<T>;                                                     \
  template Tensor4<T> detail::global_mix(const Tensor4<T>&, const RepMLPConfig&,             \
                                         const BnParams<T>*, const FcSpec<T>&,               \
                                         const FcSpec<T>&);                                  \
  template Tensor4<T> global_perceptron(const Tensor4<T>&, const RepMLPConfig&,              \
                                        const RepMLPTrainWeights<T>&);                       \
  template Tensor4<T> local_perceptron(const Tensor4<T>&, const RepMLPConfig&,               \
                                       const RepMLPTrainWeights<T>&);                        \
  template Tensor4<T> partition_perceptron(const Tensor4<T>&, const RepMLPConfig&,           \
                                           const RepMLPTrainWeights<T>&);                    \
  template Tensor4<T> repmlp_forward_train(const Tensor4<T>&, const RepMLPConfig&,           \
                                           const RepMLPTrainWeights<T>&);

REPMLP_INSTANTIATE_BLOCK(float)
REPMLP_INSTANTIATE_BLOCK(double)

}  // namespace repmlp

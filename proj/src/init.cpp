#include "repmlp/init.hpp"

namespace repmlp {

namespace {
double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <typename T>
std::vector<T> uniform_vec(int64_t n, std::mt19937_64& rng, double lo, double hi) {
  std::vector<T> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<T>(uniform(rng, lo, hi));
  return v;
}
}  // namespace

template <typename T>
Tensor4<T> random_tensor(Shape4 shape, std::mt19937_64& rng, double lo, double hi) {
  return Tensor4<T>(shape, uniform_vec<T>(shape.numel(), rng, lo, hi));
}

template <typename T>
BnParams<T> random_bn(int64_t n, std::mt19937_64& rng, const InitRanges& r, double eps) {
  BnParams<T> bn;
  bn.eps = static_cast<T>(eps);
  bn.mean = uniform_vec<T>(n, rng, -r.mean, r.mean);
  bn.var = uniform_vec<T>(n, rng, r.var_lo, r.var_hi);
  bn.gamma = uniform_vec<T>(n, rng, -r.weight, r.weight);
  bn.beta = uniform_vec<T>(n, rng, -r.weight, r.weight);
  return bn;
}

template <typename T>
FcSpec<T> random_fc(int64_t in, int64_t out, int64_t groups, bool bias, std::mt19937_64& rng,
                    double range) {
  FcSpec<T> fc = FcSpec<T>::zeros(in, out, groups, false);
  for (auto& x : fc.kernel) x = static_cast<T>(uniform(rng, -range, range));
  if (bias) fc.bias = uniform_vec<T>(out, rng, -range, range);
  return fc;
}

template <typename T>
RepMLPTrainWeights<T> random_train_weights(const RepMLPConfig& cfg, std::mt19937_64& rng,
                                           const InitRanges& r) {
  cfg.validate();
  RepMLPTrainWeights<T> wts;
  if (cfg.has_global()) {
    wts.gp_bn = random_bn<T>(cfg.in_channels, rng, r, cfg.eps);
    wts.fc1 = random_fc<T>(cfg.gp_in_dim(), cfg.gp_hidden(), 1, true, rng, r.weight);
    wts.fc2 = random_fc<T>(cfg.gp_hidden(), cfg.gp_in_dim(), 1, true, rng, r.weight);
  }
  for (int64_t k : cfg.branch_kernels) {
    ConvBnBranch<T> br;
    Tensor4<T> kernel({cfg.out_channels, cfg.in_channels / cfg.groups, k, k});
    for (auto& x : kernel.data())
      x = static_cast<T>(uniform(rng, -r.weight, r.weight) + r.branch_kernel_offset);
    br.conv = ConvSpec<T>::same(std::move(kernel), cfg.groups);
    br.bn = random_bn<T>(cfg.out_channels, rng, r, cfg.eps);
    if (r.positive_branch_gamma)
      for (auto& g : br.bn.gamma) g = static_cast<T>(uniform(rng, 0.5, 1.5));
    wts.branches.push_back(std::move(br));
  }
  wts.fc3 = random_fc<T>(cfg.fc3_in(), cfg.fc3_out(), cfg.groups, false, rng, r.weight);
  wts.fc3_bn = random_bn<T>(cfg.fc3_out(), rng, r, cfg.eps);
  return wts;
}

template <typename T>
RepMLPTrainWeights<T> zero_train_weights(const RepMLPConfig& cfg) {
  cfg.validate();
  const T eps = static_cast<T>(cfg.eps);
  RepMLPTrainWeights<T> wts;
  if (cfg.has_global()) {
    wts.gp_bn = BnParams<T>::identity(cfg.in_channels, eps);
    wts.fc1 = FcSpec<T>::zeros(cfg.gp_in_dim(), cfg.gp_hidden(), 1, true);
    wts.fc2 = FcSpec<T>::zeros(cfg.gp_hidden(), cfg.gp_in_dim(), 1, true);
  }
  for (int64_t k : cfg.branch_kernels) {
    ConvBnBranch<T> br;
    br.conv = ConvSpec<T>::same(Tensor4<T>({cfg.out_channels, cfg.in_channels / cfg.groups, k, k}),
                                cfg.groups);
    br.bn = BnParams<T>::identity(cfg.out_channels, eps);
    wts.branches.push_back(std::move(br));
  }
  wts.fc3 = FcSpec<T>::zeros(cfg.fc3_in(), cfg.fc3_out(), cfg.groups, false);
  wts.fc3_bn = BnParams<T>::identity(cfg.fc3_out(), eps);
  return wts;
}

#define REPMLP_INSTANTIATE_INIT(T)                                                              \
  template Tensor4<T> random_tensor(Shape4, std::mt19937_64&, double, double);                  \
  template BnParams<T> random_bn(int64_t, std::mt19937_64&, const InitRanges&, double);         \
  template FcSpec<T> random_fc(int64_t, int64_t, int64_t, bool, std::mt19937_64&, double);      \
  template RepMLPTrainWeights<T> random_train_weights(const RepMLPConfig&, std::mt19937_64&,    \
                                                      const InitRanges&);                       \
  template RepMLPTrainWeights<T> zero_train_weights(const RepMLPConfig&);

REPMLP_INSTANTIATE_INIT(float)
REPMLP_INSTANTIATE_INIT(double)

}  // namespace repmlp

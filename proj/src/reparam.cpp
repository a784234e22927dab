#include "repmlp/reparam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace repmlp {

namespace {
std::string num(int64_t v) { return std::to_string(v); }

template <typename T>
void add_into(std::vector<T>& acc, const std::vector<T>& v) {
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}
}  // namespace

template <typename T>
void RepMLPInferWeights<T>::validate(const RepMLPConfig& cfg) const {
  cfg.validate();
  if (cfg.has_global()) {
    fc1.validate();
    fc2.validate();
    if (fc1.in_dim != cfg.gp_in_dim() || fc1.out_dim != cfg.gp_hidden() || fc1.groups != 1 ||
        fc2.in_dim != cfg.gp_hidden() || fc2.out_dim != cfg.gp_in_dim() || fc2.groups != 1)
      throw ShapeError("inference fc1/fc2 do not match config " + cfg.name());
  }
  fc3.validate();
  if (fc3.in_dim != cfg.fc3_in() || fc3.out_dim != cfg.fc3_out() || fc3.groups != cfg.groups)
    throw ShapeError("inference fc3 does not match config " + cfg.name());
}

template <typename T>
int64_t RepMLPInferWeights<T>::param_count() const {
  int64_t total = 0;
  for (const FcSpec<T>* fc : {&fc1, &fc2, &fc3})
    total += static_cast<int64_t>(fc->kernel.size() + (fc->bias ? fc->bias->size() : 0));
  return total;
}

template <typename T>
ConvSpec<T> fuse_bn_into_conv(const ConvSpec<T>& conv, const BnParams<T>& bn) {
  conv.validate();
  bn.validate();
  const int64_t o = conv.out_channels();
  if (bn.size() != o)
    throw ShapeError("BN over " + num(bn.size()) + " channels cannot fuse into a conv with " +
                     num(o) + " outputs");
  ConvSpec<T> fused = conv;
  const int64_t per_out = conv.kernel.numel() / std::max<int64_t>(o, 1);
  auto k = fused.kernel.data();
  std::vector<T> bias(static_cast<size_t>(o));
  for (int64_t i = 0; i < o; ++i) {
    const T scale = bn.gamma[i] / bn.std_at(i);
    for (int64_t j = 0; j < per_out; ++j) k[i * per_out + j] *= scale;
    const T b0 = conv.bias ? (*conv.bias)[i] : T(0);
    bias[i] = (b0 - bn.mean[i]) * scale + bn.beta[i];
  }
  fused.bias = std::move(bias);
  return fused;
}

template <typename T>
FcSpec<T> conv_to_fc(const ConvSpec<T>& conv, int64_t channels, int64_t h, int64_t w) {
  conv.validate();
  const int64_t g = conv.groups;
  const int64_t o = conv.out_channels();
  if (conv.in_channels() != channels)
    throw ShapeError("conv reads " + num(conv.in_channels()) + " channels, block has " +
                     num(channels));
  if (channels % g != 0 || o % g != 0) throw ShapeError("channels not divisible by groups");
  if (conv.pad_h != conv.kernel_h() / 2 || conv.pad_w != conv.kernel_w() / 2 ||
      conv.kernel_h() % 2 == 0 || conv.kernel_w() % 2 == 0)
    throw ShapeError("conv_to_fc needs an odd kernel with padding floor(K/2)");

  const int64_t cols = channels * h * w / g;  // per-group input features
  // Row i has a one at feature i of every group.
  Tensor4<T> eye({cols, channels, h, w});
  auto e = eye.data();
  for (int64_t i = 0; i < cols; ++i)
    for (int64_t grp = 0; grp < g; ++grp) e[i * channels * h * w + grp * cols + i] = T(1);

  ConvSpec<T> bare = conv;
  bare.bias.reset();
  // (cols, O, h, w): entry [i, (o, y, x)] is the weight from group-local input i to output (o, y, x)
  Tensor4<T> response = conv2d(eye, bare);

  FcSpec<T> fc = FcSpec<T>::zeros(channels * h * w, o * h * w, g, false);
  const int64_t rows = o * h * w;
  auto r = response.data();
  for (int64_t i = 0; i < cols; ++i)
    for (int64_t q = 0; q < rows; ++q) fc.kernel[q * cols + i] = r[i * rows + q];
  if (conv.bias) {
    std::vector<T> bias(static_cast<size_t>(rows));
    for (int64_t oc = 0; oc < o; ++oc)
      std::fill_n(bias.begin() + oc * h * w, h * w, (*conv.bias)[oc]);
    fc.bias = std::move(bias);
  }
  return fc;
}

template <typename T>
FcSpec<T> fuse_bn1d_into_fc(const FcSpec<T>& fc, const BnParams<T>& bn) {
  fc.validate();
  bn.validate();
  if (bn.size() != fc.out_dim)
    throw ShapeError("1-D BN over " + num(bn.size()) + " features cannot fuse into an FC with " +
                     num(fc.out_dim) + " outputs");
  FcSpec<T> fused = fc;
  const int64_t per_row = fc.in_per_group();
  std::vector<T> bias(static_cast<size_t>(fc.out_dim));
  for (int64_t q = 0; q < fc.out_dim; ++q) {
    const T scale = bn.gamma[q] / bn.std_at(q);
    for (int64_t j = 0; j < per_row; ++j) fused.kernel[q * per_row + j] *= scale;
    const T b0 = fc.bias ? (*fc.bias)[q] : T(0);
    bias[q] = (b0 - bn.mean[q]) * scale + bn.beta[q];
  }
  fused.bias = std::move(bias);
  return fused;
}

template <typename T>
FcSpec<T> absorb_bn_into_fc1(const BnParams<T>& bn, const FcSpec<T>& fc1) {
  fc1.validate();
  bn.validate();
  if (fc1.groups != 1) throw ShapeError("absorb_bn_into_fc1 needs a dense FC1");
  if (bn.size() < 1 || fc1.in_dim % bn.size() != 0)
    throw ShapeError("FC1 input " + num(fc1.in_dim) + " is not a multiple of BN width " +
                     num(bn.size()));
  const int64_t repeat = fc1.in_dim / bn.size();
  std::vector<T> scale(static_cast<size_t>(fc1.in_dim));
  std::vector<T> shift(static_cast<size_t>(fc1.in_dim));
  for (int64_t c = 0; c < bn.size(); ++c) {
    const T s = bn.gamma[c] / bn.std_at(c);
    const T b = bn.beta[c] - bn.mean[c] * s;
    for (int64_t r = 0; r < repeat; ++r) {
      scale[c * repeat + r] = s;
      shift[c * repeat + r] = b;
    }
  }
  FcSpec<T> out = fc1;
  std::vector<T> bias = fc1.bias ? *fc1.bias : std::vector<T>(fc1.out_dim, T(0));
  for (int64_t q = 0; q < fc1.out_dim; ++q) {
    T proj = T(0);
    for (int64_t j = 0; j < fc1.in_dim; ++j) proj += fc1.weight(q, j) * shift[j];
    bias[q] += proj;
    for (int64_t j = 0; j < fc1.in_dim; ++j) out.weight(q, j) *= scale[j];
  }
  out.bias = std::move(bias);
  return out;
}

template <typename T>
RepMLPInferWeights<T> convert_block(const RepMLPConfig& cfg, const RepMLPTrainWeights<T>& train) {
  train.validate(cfg);
  RepMLPInferWeights<T> out;
  if (cfg.has_global()) {
    out.fc1 = absorb_bn_into_fc1(train.gp_bn, train.fc1);
    out.fc2 = train.fc2;
  }
  FcSpec<T> fc3 = fuse_bn1d_into_fc(train.fc3, train.fc3_bn);

  std::vector<size_t> order(train.branches.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return cfg.branch_kernels[a] < cfg.branch_kernels[b];
  });
  for (size_t idx : order) {
    const auto& br = train.branches[idx];
    FcSpec<T> part =
        conv_to_fc(fuse_bn_into_conv(br.conv, br.bn), cfg.in_channels, cfg.part_h, cfg.part_w);
    add_into(fc3.kernel, part.kernel);
    add_into(*fc3.bias, *part.bias);
  }
  out.fc3 = std::move(fc3);
  return out;
}

template <typename T>
Tensor4<T> repmlp_forward_infer(const Tensor4<T>& input, const RepMLPConfig& cfg,
                                const RepMLPInferWeights<T>& infer) {
  infer.validate(cfg);
  detail::check_input(input.shape(), cfg);
  Tensor4<T> pmap = detail::global_mix<T>(input, cfg, nullptr, infer.fc1, infer.fc2);
  Tensor4<T> v = grouped_fc(pmap, infer.fc3);
  v = v.reshaped({pmap.shape().n, cfg.out_channels, cfg.part_h, cfg.part_w});
  return inverse_partition(v, input.shape().n, cfg.height, cfg.width);
}

JacobianReport conv_to_fc_jacobian_check(const ConvSpec<double>& conv, int64_t h, int64_t w,
                                         double step, int64_t max_basis) {
  if (step < 0.0 || !std::isfinite(step)) throw ShapeError("jacobian step must be >= 0");
  JacobianReport rep;
  if (step == 0.0) return rep;

  const int64_t c = conv.in_channels();
  const int64_t g = conv.groups;
  const int64_t o = conv.out_channels();
  const int64_t cpg = c / g;
  const int64_t kh = conv.kernel_h();
  const int64_t kw = conv.kernel_w();
  const int64_t cols = c * h * w / g;

  ConvSpec<double> bare = conv;
  bare.bias.reset();
  const FcSpec<double> base = conv_to_fc(bare, c, h, w);
  const int64_t total = bare.kernel.numel();
  const int64_t count = max_basis > 0 ? std::min(max_basis, total) : total;

  for (int64_t e = 0; e < count; ++e) {
    ConvSpec<double> unit = bare;
    std::fill(unit.kernel.data().begin(), unit.kernel.data().end(), 0.0);
    unit.kernel.data()[e] = 1.0;
    ConvSpec<double> moved = bare;
    moved.kernel.data()[e] += step;

    const FcSpec<double> fe = conv_to_fc(unit, c, h, w);
    const FcSpec<double> fm = conv_to_fc(moved, c, h, w);

    // kernel entry e = ((oc * cpg + ic) * kh + ky) * kw + kx
    const int64_t kx = e % kw;
    const int64_t ky = (e / kw) % kh;
    const int64_t ic = (e / (kw * kh)) % cpg;
    const int64_t oc = e / (kw * kh * cpg);

    for (int64_t q = 0; q < o * h * w; ++q) {
      const int64_t qo = q / (h * w);
      const int64_t y = (q / w) % h;
      const int64_t x = q % w;
      for (int64_t j = 0; j < cols; ++j) {
        const int64_t jc = j / (h * w);  // group-local input channel
        const int64_t jy = (j / w) % h;
        const int64_t jx = j % w;
        double analytic = 0.0;
        if (qo == oc && jc == ic && jy == y + ky - kh / 2 && jx == x + kx - kw / 2) analytic = 1.0;
        const size_t at = static_cast<size_t>(q * cols + j);
        const double diff = fm.kernel[at] - base.kernel[at];
        rep.linearity = std::max(rep.linearity, std::abs(diff - step * fe.kernel[at]));
        rep.finite_difference = std::max(rep.finite_difference, std::abs(diff / step - analytic));
      }
    }
    ++rep.basis_checked;
  }
  return rep;
}

#define REPMLP_INSTANTIATE_REPARAM(T)                                                           \
  template struct RepMLPInferWeights<T>;                                                        \
  template ConvSpec<T> fuse_bn_into_conv(const ConvSpec<T>&, const BnParams<T>&);               \
  template FcSpec<T> conv_to_fc(const ConvSpec<T>&, int64_t, int64_t, int64_t);                 \
  template FcSpec<T> fuse_bn1d_into_fc(const FcSpec<T>&, const BnParams<T>&);                   \
  template FcSpec<T> absorb_bn_into_fc1(const BnParams<T>&, const FcSpec<T>&);                  \
  template RepMLPInferWeights<T> convert_block(const RepMLPConfig&,                             \
                                               const RepMLPTrainWeights<T>&);                   \
  template Tensor4<T> repmlp_forward_infer(const Tensor4<T>&, const RepMLPConfig&,              \
                                           const RepMLPInferWeights<T>&);

REPMLP_INSTANTIATE_REPARAM(float)
REPMLP_INSTANTIATE_REPARAM(double)

}  // namespace repmlp

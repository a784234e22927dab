#include "repmlp/model.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "repmlp/init.hpp"
#include "repmlp/ops.hpp"

namespace repmlp {

namespace {

std::string num(int64_t v) { return std::to_string(v); }

std::string dims_str(const FeatureDims& d) { return num(d.c) + "x" + num(d.h) + "x" + num(d.w); }

[[noreturn]] void fail(const LayerSpec& l, const std::string& msg) {
  throw ShapeError(std::string(kind_name(l.kind)) + " '" + l.name + "': " + msg);
}

int64_t pooled_extent(int64_t x, int64_t k, int64_t s, int64_t p) { return (x + 2 * p - k) / s + 1; }

FeatureDims infer_seq(const std::vector<LayerSpec>& seq, FeatureDims d, std::set<std::string>& names);

FeatureDims infer_layer(const LayerSpec& l, FeatureDims d, std::set<std::string>& names) {
  if (!l.name.empty() && !names.insert(l.name).second) fail(l, "duplicate layer name");
  if (l.name.find_first_of(" \t\n=") != std::string::npos) fail(l, "name contains whitespace or '='");
  switch (l.kind) {
    case LayerKind::conv: {
      if (d.c != l.in_channels) fail(l, "expects " + num(l.in_channels) + " channels, got " + dims_str(d));
      if (l.kernel < 1 || l.stride < 1 || l.pad < 0 || l.groups < 1) fail(l, "bad hyper-parameters");
      if (l.in_channels % l.groups || l.out_channels % l.groups) fail(l, "channels not divisible by groups");
      if (d.h + 2 * l.pad < l.kernel || d.w + 2 * l.pad < l.kernel) fail(l, "kernel exceeds padded input");
      return {l.out_channels, pooled_extent(d.h, l.kernel, l.stride, l.pad),
              pooled_extent(d.w, l.kernel, l.stride, l.pad)};
    }
    case LayerKind::fc:
      if (d.h != 1 || d.w != 1 || d.c != l.in_channels)
        fail(l, "expects a flat " + num(l.in_channels) + "-vector, got " + dims_str(d));
      return {l.out_channels, 1, 1};
    case LayerKind::bn:
      if (d.c != l.out_channels) fail(l, "expects " + num(l.out_channels) + " channels, got " + dims_str(d));
      return d;
    case LayerKind::repmlp_train:
    case LayerKind::repmlp_infer: {
      const RepMLPConfig& b = l.block;
      try {
        b.validate();
      } catch (const std::exception& e) {
        fail(l, e.what());
      }
      if (d != FeatureDims{b.in_channels, b.height, b.width})
        fail(l, "expects " + dims_str({b.in_channels, b.height, b.width}) + ", got " + dims_str(d));
      return {b.out_channels, b.height, b.width};
    }
    case LayerKind::pool:
      if (l.pool == PoolMode::avg_global) return {d.c, 1, 1};
      if (l.kernel < 1 || l.stride < 1 || l.pad < 0 || d.h + 2 * l.pad < l.kernel ||
          d.w + 2 * l.pad < l.kernel)
        fail(l, "bad window for " + dims_str(d));
      return {d.c, pooled_extent(d.h, l.kernel, l.stride, l.pad), pooled_extent(d.w, l.kernel, l.stride, l.pad)};
    case LayerKind::add: {
      if (l.branches.size() < 2) fail(l, "needs at least two branches");
      FeatureDims out = infer_seq(l.branches[0], d, names);
      for (size_t i = 1; i < l.branches.size(); ++i) {
        FeatureDims other = infer_seq(l.branches[i], d, names);
        if (other != out) fail(l, "branch outputs differ: " + dims_str(out) + " vs " + dims_str(other));
      }
      return out;
    }
    case LayerKind::relu:
      return d;
    case LayerKind::flatten:
      return {d.c * d.h * d.w, 1, 1};
  }
  fail(l, "unknown kind");
}

FeatureDims infer_seq(const std::vector<LayerSpec>& seq, FeatureDims d, std::set<std::string>& names) {
  for (const LayerSpec& l : seq) d = infer_layer(l, d, names);
  return d;
}

// Calls fn(layer, input dims) for every layer, descending into add branches.
template <typename Fn>
FeatureDims walk(const std::vector<LayerSpec>& seq, FeatureDims d, Fn&& fn) {
  std::set<std::string> scratch;
  for (const LayerSpec& l : seq) {
    fn(l, d);
    if (l.kind == LayerKind::add)
      for (const auto& br : l.branches) walk(br, d, fn);
    scratch.clear();
    d = infer_layer(l, d, scratch);
  }
  return d;
}

}  // namespace

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::fc: return "fc";
    case LayerKind::repmlp_train: return "repmlp_train";
    case LayerKind::repmlp_infer: return "repmlp_infer";
    case LayerKind::bn: return "bn";
    case LayerKind::pool: return "pool";
    case LayerKind::add: return "add";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

FeatureDims ModelGraph::validate() const {
  if (input.c < 1 || input.h < 1 || input.w < 1) throw ShapeError("model '" + name + "': empty input");
  std::set<std::string> names;
  return infer_seq(layers, input, names);
}

LayerSpec conv_layer(std::string name, int64_t in, int64_t out, int64_t k, int64_t stride, int64_t groups,
                     bool bias) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.name = std::move(name);
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = k;
  l.stride = stride;
  l.pad = k / 2;
  l.groups = groups;
  l.bias = bias;
  return l;
}

LayerSpec fc_layer(std::string name, int64_t in, int64_t out, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::fc;
  l.name = std::move(name);
  l.in_channels = in;
  l.out_channels = out;
  l.bias = bias;
  return l;
}

LayerSpec bn_layer(std::string name, int64_t channels) {
  LayerSpec l;
  l.kind = LayerKind::bn;
  l.name = std::move(name);
  l.out_channels = channels;
  return l;
}

LayerSpec relu_layer(std::string name) {
  LayerSpec l;
  l.kind = LayerKind::relu;
  l.name = std::move(name);
  return l;
}

LayerSpec repmlp_layer(std::string name, const RepMLPConfig& cfg) {
  LayerSpec l;
  l.kind = LayerKind::repmlp_train;
  l.name = std::move(name);
  l.block = cfg;
  return l;
}

LayerSpec max_pool_layer(std::string name, int64_t k, int64_t stride, int64_t pad) {
  LayerSpec l;
  l.kind = LayerKind::pool;
  l.name = std::move(name);
  l.pool = PoolMode::max;
  l.kernel = k;
  l.stride = stride;
  l.pad = pad;
  return l;
}

LayerSpec avg_pool_layer(std::string name) {
  LayerSpec l;
  l.kind = LayerKind::pool;
  l.name = std::move(name);
  l.pool = PoolMode::avg_global;
  return l;
}

LayerSpec flatten_layer(std::string name) {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  l.name = std::move(name);
  return l;
}

// ---------------------------------------------------------------------------
// builders

namespace {

void conv_bn(std::vector<LayerSpec>& seq, const std::string& name, int64_t in, int64_t out, int64_t k,
             int64_t stride = 1, bool act = true) {
  seq.push_back(conv_layer(name, in, out, k, stride));
  seq.push_back(bn_layer(name + ".bn", out));
  if (act) seq.push_back(relu_layer(name + ".relu"));
}

RepMLPConfig square_block(int64_t c, int64_t res, int64_t part, int64_t groups, std::vector<int64_t> ks) {
  RepMLPConfig cfg;
  cfg.in_channels = cfg.out_channels = c;
  cfg.height = cfg.width = res;
  cfg.part_h = cfg.part_w = part;
  cfg.groups = groups;
  cfg.branch_kernels = std::move(ks);
  return cfg;
}

// Stem, then per stage [mixer, 1x1, mixer] with a 1x1 widening and 2x2 max
// pool between stages, then flatten and a linear classifier.
template <typename Mixer>
ModelGraph cifar_skeleton(const std::string& name, const CifarOptions& opt,
                          const std::vector<int64_t>& default_widths, Mixer&& mixer) {
  const std::vector<int64_t>& widths = opt.widths.empty() ? default_widths : opt.widths;
  ModelGraph g;
  g.name = name;
  g.input = {3, opt.resolution, opt.resolution};
  int64_t res = opt.resolution;
  conv_bn(g.layers, "stem", 3, widths[0], 1);
  for (size_t s = 0; s < widths.size(); ++s) {
    const std::string p = "s" + std::to_string(s + 1) + ".";
    const int64_t c = widths[s];
    mixer(g.layers, p + "mix1", c, res);
    conv_bn(g.layers, p + "fc", c, c, 1);
    mixer(g.layers, p + "mix2", c, res);
    if (s + 1 < widths.size()) {
      conv_bn(g.layers, p + "expand", c, widths[s + 1], 1);
      g.layers.push_back(max_pool_layer(p + "pool", 2, 2));
      res /= 2;
    }
  }
  g.layers.push_back(flatten_layer("flatten"));
  g.layers.push_back(fc_layer("head", widths.back() * res * res, opt.classes));
  g.validate();
  return g;
}

}  // namespace

ModelGraph build_pure_mlp_cifar(const CifarOptions& opt) {
  return cifar_skeleton("pure-mlp-cifar", opt, {16, 32, 64},
                        [](std::vector<LayerSpec>& seq, const std::string& n, int64_t c, int64_t res) {
                          seq.push_back(repmlp_layer(n, square_block(c, res, 8, 2, {1, 3, 5, 7})));
                          seq.push_back(relu_layer(n + ".relu"));
                        });
}

ModelGraph build_wide_convnet(const CifarOptions& opt) {
  return cifar_skeleton("wide-convnet", opt, {32, 64, 128},
                        [](std::vector<LayerSpec>& seq, const std::string& n, int64_t c, int64_t) {
                          conv_bn(seq, n, c, c, 3);
                        });
}

void BottleneckConfig::validate() const {
  if (in_channels < 1 || planes < 1 || stride < 1 || height < 1 || width < 1)
    throw ShapeError("bottleneck: non-positive dimension");
  if (variant == BottleneckVariant::original) return;
  if (stride != 1 || in_channels != 4 * planes)
    throw ShapeError("bottleneck: only stride-1 identity-shortcut blocks can hold a RepMLP");
  if (r != 2 && r != 4 && r != 8) throw ShapeError("bottleneck: r must be 2, 4 or 8");
  const int64_t mid = variant == BottleneckVariant::repmlp_light ? 4 * planes / r : planes / r;
  square_block(mid, height, part, groups, branch_kernels).validate();
}

std::vector<LayerSpec> bottleneck(const std::string& name, const BottleneckConfig& cfg) {
  cfg.validate();
  const int64_t out = 4 * cfg.planes;
  LayerSpec node;
  node.kind = LayerKind::add;
  node.name = name;
  std::vector<LayerSpec> body, shortcut;
  const std::string p = name + ".";
  switch (cfg.variant) {
    case BottleneckVariant::original:
      conv_bn(body, p + "conv1", cfg.in_channels, cfg.planes, 1);
      conv_bn(body, p + "conv2", cfg.planes, cfg.planes, 3, cfg.stride);
      conv_bn(body, p + "conv3", cfg.planes, out, 1, 1, false);
      if (cfg.stride != 1 || cfg.in_channels != out)
        conv_bn(shortcut, p + "down", cfg.in_channels, out, 1, cfg.stride, false);
      break;
    case BottleneckVariant::repmlp_bottleneck: {
      const int64_t mid = cfg.planes / cfg.r;
      conv_bn(body, p + "conv1", cfg.in_channels, cfg.planes, 1);
      conv_bn(body, p + "conv2", cfg.planes, mid, 3);
      body.push_back(repmlp_layer(p + "repmlp", square_block(mid, cfg.height, cfg.part, cfg.groups,
                                                             cfg.branch_kernels)));
      body.push_back(relu_layer(p + "repmlp.relu"));
      conv_bn(body, p + "conv3", mid, cfg.planes, 3);
      conv_bn(body, p + "conv4", cfg.planes, out, 1, 1, false);
      break;
    }
    case BottleneckVariant::repmlp_light: {
      const int64_t mid = out / cfg.r;
      conv_bn(body, p + "conv1", cfg.in_channels, mid, 1);
      body.push_back(repmlp_layer(p + "repmlp", square_block(mid, cfg.height, cfg.part, cfg.groups,
                                                             cfg.branch_kernels)));
      body.push_back(relu_layer(p + "repmlp.relu"));
      conv_bn(body, p + "conv2", mid, out, 1, 1, false);
      break;
    }
  }
  node.branches = {std::move(body), std::move(shortcut)};
  return {node, relu_layer(name + ".relu")};
}

ModelGraph build_repmlp_resnet50(const ResNetOptions& opt) {
  if (opt.resolution < 32 || opt.resolution % 32 != 0)
    throw ShapeError("resnet: resolution must be a positive multiple of 32");
  for (const auto& [stage, rep] : opt.replace)
    if (stage != "c2" && stage != "c3" && stage != "c4" && stage != "c5")
      throw ShapeError("resnet: unknown stage '" + stage + "'");

  ModelGraph g;
  g.name = "resnet50";
  g.input = {3, opt.resolution, opt.resolution};
  g.layers.push_back(conv_layer("stem", 3, 64, 7, 2));
  g.layers.push_back(bn_layer("stem.bn", 64));
  g.layers.push_back(relu_layer("stem.relu"));
  g.layers.push_back(max_pool_layer("stem.pool", 3, 2, 1));

  // Partitions match the last stage's resolution (7 at 224, 10 at 320).
  const int64_t part = opt.resolution / 32;
  std::vector<int64_t> kernels;
  for (int64_t k : part <= 7 ? std::vector<int64_t>{1, 3, 5} : std::vector<int64_t>{1, 3, 5, 7})
    if (k <= part) kernels.push_back(k);

  struct Stage {
    const char* name;
    int64_t planes, blocks, stride;
  };
  const Stage stages[] = {{"c2", 64, 3, 1}, {"c3", 128, 4, 2}, {"c4", 256, 6, 2}, {"c5", 512, 3, 2}};
  int64_t res = opt.resolution / 4;
  int64_t in = 64;
  for (const Stage& st : stages) {
    const auto rep = opt.replace.find(st.name);
    for (int64_t b = 0; b < st.blocks; ++b) {
      BottleneckConfig bc;
      bc.in_channels = in;
      bc.planes = st.planes;
      bc.stride = b == 0 ? st.stride : 1;
      bc.height = bc.width = res;
      if (b > 0 && rep != opt.replace.end()) {
        bc.variant = opt.variant;
        bc.r = rep->second.r;
        bc.groups = rep->second.groups;
        bc.part = part;
        bc.branch_kernels = kernels;
      }
      for (LayerSpec& l : bottleneck(std::string(st.name) + ".b" + std::to_string(b), bc))
        g.layers.push_back(std::move(l));
      res = pooled_extent(res, 1, bc.stride, 0);
      in = 4 * st.planes;
    }
  }
  g.layers.push_back(avg_pool_layer("avgpool"));
  g.layers.push_back(flatten_layer("flatten"));
  g.layers.push_back(fc_layer("head", in, opt.classes));
  g.validate();
  return g;
}

ModelGraph build_resnet50(int64_t resolution) {
  ResNetOptions opt;
  opt.resolution = resolution;
  return build_repmlp_resnet50(opt);
}

ModelGraph build_repmlp_light_resnet50(int64_t resolution) {
  ResNetOptions opt;
  opt.resolution = resolution;
  opt.variant = BottleneckVariant::repmlp_light;
  opt.replace = {{"c3", {8, 8}}, {"c4", {8, 8}}};
  ModelGraph g = build_repmlp_resnet50(opt);
  g.name = "repmlp-light-res50";
  return g;
}

std::vector<std::string> model_names() {
  return {"resnet50",           "repmlp-res50",   "repmlp-res50-c4-r4", "repmlp-res50-c4-r8",
          "repmlp-light-res50", "pure-mlp-cifar", "wide-convnet"};
}

ModelGraph build_named_model(const std::string& name, int64_t resolution) {
  if (name == "pure-mlp-cifar" || name == "wide-convnet") {
    CifarOptions opt;
    opt.resolution = resolution;
    return name == "pure-mlp-cifar" ? build_pure_mlp_cifar(opt) : build_wide_convnet(opt);
  }
  if (name == "resnet50") return build_resnet50(resolution);
  if (name == "repmlp-light-res50") return build_repmlp_light_resnet50(resolution);
  ResNetOptions opt;
  opt.resolution = resolution;
  if (name == "repmlp-res50")
    opt.replace = {{"c3", {2, 8}}, {"c4", {4, 8}}};
  else if (name == "repmlp-res50-c4-r4")
    opt.replace = {{"c4", {4, 8}}};
  else if (name == "repmlp-res50-c4-r8")
    opt.replace = {{"c4", {8, 8}}};
  else
    throw std::invalid_argument("unknown model '" + name + "'");
  ModelGraph g = build_repmlp_resnet50(opt);
  g.name = name;
  return g;
}

// ---------------------------------------------------------------------------
// counting

int64_t count_params(const ModelGraph& g) {
  g.validate();
  int64_t total = 0;
  walk(g.layers, g.input, [&](const LayerSpec& l, const FeatureDims&) {
    switch (l.kind) {
      case LayerKind::conv:
        total += l.out_channels * (l.in_channels / l.groups) * l.kernel * l.kernel + (l.bias ? l.out_channels : 0);
        break;
      case LayerKind::fc: total += l.in_channels * l.out_channels + (l.bias ? l.out_channels : 0); break;
      case LayerKind::bn: total += 2 * l.out_channels; break;
      case LayerKind::repmlp_train: total += block_params(l.block, Form::train); break;
      case LayerKind::repmlp_infer: total += block_params(l.block, Form::infer); break;
      default: break;
    }
  });
  return total;
}

int64_t count_flops(const ModelGraph& g) {
  g.validate();
  int64_t total = 0;
  walk(g.layers, g.input, [&](const LayerSpec& l, const FeatureDims& d) {
    switch (l.kind) {
      case LayerKind::conv:
        total += l.out_channels * (l.in_channels / l.groups) * l.kernel * l.kernel *
                 pooled_extent(d.h, l.kernel, l.stride, l.pad) * pooled_extent(d.w, l.kernel, l.stride, l.pad);
        break;
      case LayerKind::fc: total += l.in_channels * l.out_channels; break;
      case LayerKind::repmlp_train: total += block_flops(l.block, Form::train); break;
      case LayerKind::repmlp_infer: total += block_flops(l.block, Form::infer); break;
      default: break;
    }
  });
  return total;
}

// ---------------------------------------------------------------------------
// conversion

namespace {

bool fusable(const std::vector<LayerSpec>& seq, size_t i) {
  return seq[i].kind == LayerKind::conv && i + 1 < seq.size() && seq[i + 1].kind == LayerKind::bn &&
         seq[i + 1].out_channels == seq[i].out_channels;
}

std::vector<LayerSpec> convert_seq(const std::vector<LayerSpec>& seq) {
  std::vector<LayerSpec> out;
  for (size_t i = 0; i < seq.size(); ++i) {
    LayerSpec l = seq[i];
    if (fusable(seq, i)) {
      l.bias = true;
      ++i;
    } else if (l.kind == LayerKind::repmlp_train) {
      l.kind = LayerKind::repmlp_infer;
    } else if (l.kind == LayerKind::add) {
      for (auto& br : l.branches) br = convert_seq(br);
    }
    out.push_back(std::move(l));
  }
  return out;
}

template <typename T, typename W>
const W& get(const ModelWeights<T>& w, const LayerSpec& l) {
  auto it = w.find(l.name);
  if (it == w.end()) throw std::invalid_argument("missing weights for layer '" + l.name + "'");
  const W* p = std::get_if<W>(&it->second);
  if (!p) throw std::invalid_argument("layer '" + l.name + "' holds weights of the wrong kind");
  return *p;
}

template <typename T>
void convert_weights_seq(const std::vector<LayerSpec>& seq, const ModelWeights<T>& in, ModelWeights<T>& out) {
  for (size_t i = 0; i < seq.size(); ++i) {
    const LayerSpec& l = seq[i];
    switch (l.kind) {
      case LayerKind::conv:
        if (fusable(seq, i)) {
          out[l.name] = fuse_bn_into_conv(get<T, ConvSpec<T>>(in, l), get<T, BnParams<T>>(in, seq[i + 1]));
          ++i;
        } else {
          out[l.name] = get<T, ConvSpec<T>>(in, l);
        }
        break;
      case LayerKind::fc: out[l.name] = get<T, FcSpec<T>>(in, l); break;
      case LayerKind::bn: out[l.name] = get<T, BnParams<T>>(in, l); break;
      case LayerKind::repmlp_train:
        out[l.name] = convert_block(l.block, get<T, RepMLPTrainWeights<T>>(in, l));
        break;
      case LayerKind::repmlp_infer: out[l.name] = get<T, RepMLPInferWeights<T>>(in, l); break;
      case LayerKind::add:
        for (const auto& br : l.branches) convert_weights_seq(br, in, out);
        break;
      default: break;
    }
  }
}

template <typename T>
void random_weights_seq(const std::vector<LayerSpec>& seq, std::mt19937_64& rng, ModelWeights<T>& out) {
  for (const LayerSpec& l : seq) {
    switch (l.kind) {
      case LayerKind::conv: {
        const double fan_in = static_cast<double>(l.in_channels / l.groups * l.kernel * l.kernel);
        const double a = std::sqrt(3.0 / fan_in);
        ConvSpec<T> c{random_tensor<T>({l.out_channels, l.in_channels / l.groups, l.kernel, l.kernel}, rng, -a, a),
                      std::nullopt, l.pad, l.pad, l.groups};
        if (l.bias) c.bias = random_tensor<T>({1, l.out_channels, 1, 1}, rng, -0.1, 0.1).vec();
        out[l.name] = std::move(c);
        break;
      }
      case LayerKind::fc:
        out[l.name] = random_fc<T>(l.in_channels, l.out_channels, 1, l.bias, rng,
                                   std::sqrt(3.0 / static_cast<double>(l.in_channels)));
        break;
      case LayerKind::bn: out[l.name] = random_bn<T>(l.out_channels, rng); break;
      case LayerKind::repmlp_train: {
        InitRanges r;
        r.weight = std::sqrt(3.0 / static_cast<double>(l.block.fc3_in() / l.block.groups));
        out[l.name] = random_train_weights<T>(l.block, rng, r);
        break;
      }
      case LayerKind::repmlp_infer:
        out[l.name] = convert_block(l.block, random_train_weights<T>(l.block, rng));
        break;
      case LayerKind::add:
        for (const auto& br : l.branches) random_weights_seq(br, rng, out);
        break;
      default: break;
    }
  }
}

template <typename T>
Tensor4<T> forward_seq(const std::vector<LayerSpec>& seq, const ModelWeights<T>& w, Tensor4<T> x) {
  for (const LayerSpec& l : seq) {
    switch (l.kind) {
      case LayerKind::conv: {
        if (l.stride != 1) fail(l, "forward supports stride-1 convs only");
        const ConvSpec<T>& c = get<T, ConvSpec<T>>(w, l);
        if (c.out_channels() != l.out_channels || c.kernel_h() != l.kernel || c.groups != l.groups)
          fail(l, "weights do not match the layer");
        x = conv2d(x, c);
        break;
      }
      case LayerKind::fc: x = grouped_fc(x, get<T, FcSpec<T>>(w, l)); break;
      case LayerKind::bn: x = batchnorm_inference(x, get<T, BnParams<T>>(w, l)); break;
      case LayerKind::repmlp_train:
        x = repmlp_forward_train(x, l.block, get<T, RepMLPTrainWeights<T>>(w, l));
        break;
      case LayerKind::repmlp_infer:
        x = repmlp_forward_infer(x, l.block, get<T, RepMLPInferWeights<T>>(w, l));
        break;
      case LayerKind::pool:
        if (l.pool == PoolMode::avg_global) {
          x = avg_pool_global(x);
        } else {
          if (l.kernel != l.stride || l.pad != 0) fail(l, "forward supports non-overlapping max pools only");
          x = max_pool(x, l.kernel);
        }
        break;
      case LayerKind::add: {
        Tensor4<T> sum = forward_seq(l.branches[0], w, x);
        for (size_t i = 1; i < l.branches.size(); ++i) sum = add(sum, forward_seq(l.branches[i], w, x));
        x = std::move(sum);
        break;
      }
      case LayerKind::relu: x = relu(x); break;
      case LayerKind::flatten: {
        const Shape4 s = x.shape();
        x = x.reshaped({s.n, s.c * s.h * s.w, 1, 1});
        break;
      }
    }
  }
  return x;
}

}  // namespace

ModelGraph convert_graph(const ModelGraph& g) {
  g.validate();
  ModelGraph out = g;
  out.layers = convert_seq(g.layers);
  return out;
}

template <typename T>
ModelWeights<T> random_model_weights(const ModelGraph& g, std::mt19937_64& rng) {
  g.validate();
  ModelWeights<T> out;
  random_weights_seq(g.layers, rng, out);
  return out;
}

template <typename T>
ModelWeights<T> convert_weights(const ModelGraph& g, const ModelWeights<T>& w) {
  g.validate();
  ModelWeights<T> out;
  convert_weights_seq(g.layers, w, out);
  return out;
}

template <typename T>
Tensor4<T> forward(const ModelGraph& g, const ModelWeights<T>& w, const Tensor4<T>& input) {
  g.validate();
  const Shape4 s = input.shape();
  if (FeatureDims{s.c, s.h, s.w} != g.input)
    throw ShapeError("model '" + g.name + "' expects " + dims_str(g.input) + " inputs, got " + s.str());
  return forward_seq(g.layers, w, input);
}

// ---------------------------------------------------------------------------
// text format: one layer per line, `kind key=value ...`; add nodes open with
// `add name=...`, separate branches with `branch`, and close with `end`.

namespace {

void emit_seq(std::ostringstream& os, const std::vector<LayerSpec>& seq, int depth) {
  const std::string ind(2 * depth, ' ');
  for (const LayerSpec& l : seq) {
    os << ind << kind_name(l.kind) << " name=" << l.name;
    switch (l.kind) {
      case LayerKind::conv:
        os << " in=" << l.in_channels << " out=" << l.out_channels << " k=" << l.kernel << " s=" << l.stride
           << " p=" << l.pad << " g=" << l.groups << " bias=" << l.bias;
        break;
      case LayerKind::fc: os << " in=" << l.in_channels << " out=" << l.out_channels << " bias=" << l.bias; break;
      case LayerKind::bn: os << " c=" << l.out_channels; break;
      case LayerKind::repmlp_train:
      case LayerKind::repmlp_infer: {
        const RepMLPConfig& b = l.block;
        os << " C=" << b.in_channels << " O=" << b.out_channels << " H=" << b.height << " W=" << b.width
           << " h=" << b.part_h << " w=" << b.part_w << " g=" << b.groups << " K=";
        if (b.branch_kernels.empty()) os << "none";
        for (size_t i = 0; i < b.branch_kernels.size(); ++i) os << (i ? "," : "") << b.branch_kernels[i];
        os << " gp=" << b.gp_internal_dim << " act=" << (b.gp_activation == Activation::relu ? "relu" : "identity")
           << " eps=" << b.eps;
        break;
      }
      case LayerKind::pool:
        if (l.pool == PoolMode::avg_global)
          os << " mode=avg";
        else
          os << " mode=max k=" << l.kernel << " s=" << l.stride << " p=" << l.pad;
        break;
      default: break;
    }
    os << "\n";
    if (l.kind == LayerKind::add) {
      for (const auto& br : l.branches) {
        os << ind << "branch\n";
        emit_seq(os, br, depth + 1);
      }
      os << ind << "end\n";
    }
  }
}

struct Line {
  int number;
  std::string kind;
  std::map<std::string, std::string> kv;
};

[[noreturn]] void parse_fail(const Line& ln, const std::string& msg) {
  throw std::invalid_argument("graph text line " + std::to_string(ln.number) + ": " + msg);
}

std::string field(const Line& ln, const std::string& key) {
  auto it = ln.kv.find(key);
  if (it == ln.kv.end()) parse_fail(ln, "missing '" + key + "'");
  return it->second;
}

int64_t ifield(const Line& ln, const std::string& key) {
  const std::string v = field(ln, key);
  size_t used = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) parse_fail(ln, "'" + key + "' is not an integer: " + v);
  return out;
}

LayerSpec parse_layer(const Line& ln) {
  LayerSpec l;
  l.name = field(ln, "name");
  if (ln.kind == "conv") {
    l = conv_layer(l.name, ifield(ln, "in"), ifield(ln, "out"), ifield(ln, "k"), ifield(ln, "s"),
                   ifield(ln, "g"), ifield(ln, "bias") != 0);
    l.pad = ifield(ln, "p");
  } else if (ln.kind == "fc") {
    l = fc_layer(l.name, ifield(ln, "in"), ifield(ln, "out"), ifield(ln, "bias") != 0);
  } else if (ln.kind == "bn") {
    l = bn_layer(l.name, ifield(ln, "c"));
  } else if (ln.kind == "relu") {
    l = relu_layer(l.name);
  } else if (ln.kind == "flatten") {
    l = flatten_layer(l.name);
  } else if (ln.kind == "pool") {
    const std::string mode = field(ln, "mode");
    if (mode == "avg")
      l = avg_pool_layer(l.name);
    else if (mode == "max")
      l = max_pool_layer(l.name, ifield(ln, "k"), ifield(ln, "s"), ifield(ln, "p"));
    else
      parse_fail(ln, "unknown pool mode " + mode);
  } else if (ln.kind == "repmlp_train" || ln.kind == "repmlp_infer") {
    RepMLPConfig b;
    b.in_channels = ifield(ln, "C");
    b.out_channels = ifield(ln, "O");
    b.height = ifield(ln, "H");
    b.width = ifield(ln, "W");
    b.part_h = ifield(ln, "h");
    b.part_w = ifield(ln, "w");
    b.groups = ifield(ln, "g");
    b.gp_internal_dim = ifield(ln, "gp");
    const std::string ks = field(ln, "K");
    if (ks != "none") {
      std::istringstream is(ks);
      std::string tok;
      while (std::getline(is, tok, ',')) {
        try {
          b.branch_kernels.push_back(std::stoll(tok));
        } catch (const std::exception&) {
          parse_fail(ln, "bad kernel list " + ks);
        }
      }
    }
    const std::string act = field(ln, "act");
    if (act != "relu" && act != "identity") parse_fail(ln, "unknown activation " + act);
    b.gp_activation = act == "relu" ? Activation::relu : Activation::identity;
    try {
      b.eps = std::stod(field(ln, "eps"));
    } catch (const std::exception&) {
      parse_fail(ln, "bad eps");
    }
    l = repmlp_layer(l.name, b);
    if (ln.kind == "repmlp_infer") l.kind = LayerKind::repmlp_infer;
  } else {
    parse_fail(ln, "unknown layer kind '" + ln.kind + "'");
  }
  return l;
}

std::vector<LayerSpec> parse_seq(const std::vector<Line>& lines, size_t& i) {
  std::vector<LayerSpec> seq;
  while (i < lines.size() && lines[i].kind != "branch" && lines[i].kind != "end") {
    const Line& ln = lines[i++];
    if (ln.kind == "add") {
      LayerSpec node;
      node.kind = LayerKind::add;
      node.name = field(ln, "name");
      while (i < lines.size() && lines[i].kind == "branch") {
        ++i;
        node.branches.push_back(parse_seq(lines, i));
      }
      if (i >= lines.size() || lines[i].kind != "end") parse_fail(ln, "add without matching end");
      ++i;
      seq.push_back(std::move(node));
    } else {
      seq.push_back(parse_layer(ln));
    }
  }
  return seq;
}

}  // namespace

std::string to_text(const ModelGraph& g) {
  std::ostringstream os;
  os.precision(17);
  os << "model name=" << g.name << " input=" << dims_str(g.input) << "\n";
  emit_seq(os, g.layers, 0);
  return os.str();
}

ModelGraph graph_from_text(const std::string& text) {
  std::vector<Line> lines;
  std::istringstream is(text);
  std::string raw;
  int number = 0;
  while (std::getline(is, raw)) {
    ++number;
    std::istringstream ls(raw);
    Line ln{number, "", {}};
    if (!(ls >> ln.kind) || ln.kind[0] == '#') continue;
    std::string tok;
    while (ls >> tok) {
      const size_t eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) parse_fail(ln, "expected key=value, got " + tok);
      if (!ln.kv.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second) parse_fail(ln, "repeated key in " + tok);
    }
    lines.push_back(std::move(ln));
  }
  if (lines.empty() || lines[0].kind != "model") throw std::invalid_argument("graph text: missing model header");
  ModelGraph g;
  g.name = field(lines[0], "name");
  const std::string in = field(lines[0], "input");
  if (std::sscanf(in.c_str(), "%ldx%ldx%ld", &g.input.c, &g.input.h, &g.input.w) != 3)
    parse_fail(lines[0], "bad input dims " + in);
  size_t i = 1;
  g.layers = parse_seq(lines, i);
  if (i != lines.size()) parse_fail(lines[i], "unexpected '" + lines[i].kind + "'");
  g.validate();
  return g;
}

#define REPMLP_INSTANTIATE_MODEL(T)                                                             \
  template ModelWeights<T> random_model_weights(const ModelGraph&, std::mt19937_64&);          \
  template ModelWeights<T> convert_weights(const ModelGraph&, const ModelWeights<T>&);         \
  template Tensor4<T> forward(const ModelGraph&, const ModelWeights<T>&, const Tensor4<T>&);

REPMLP_INSTANTIATE_MODEL(float)
REPMLP_INSTANTIATE_MODEL(double)

}  // namespace repmlp

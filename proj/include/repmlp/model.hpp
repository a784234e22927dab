#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "repmlp/block.hpp"
#include "repmlp/reparam.hpp"

namespace repmlp {

enum class LayerKind { conv, fc, repmlp_train, repmlp_infer, bn, pool, add, relu, flatten };
enum class PoolMode { max, avg_global };

const char* kind_name(LayerKind k);

/// One node of a model graph. Only the fields of the node's kind are used.
/// An `add` node sums the outputs of its branches, each applied to the node's
/// input; an empty branch is the identity shortcut.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;

  // conv, fc (fc uses in/out only), bn (out only)
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t pad = 0;
  int64_t groups = 1;
  bool bias = false;

  RepMLPConfig block;  // repmlp_*

  PoolMode pool = PoolMode::max;  // max uses kernel/stride/pad

  std::vector<std::vector<LayerSpec>> branches;  // add
};

struct FeatureDims {
  int64_t c = 0, h = 0, w = 0;
  bool operator==(const FeatureDims&) const = default;
};

struct ModelGraph {
  std::string name;
  FeatureDims input;
  std::vector<LayerSpec> layers;

  // Shape inference over the whole graph; throws ShapeError naming the layer.
  FeatureDims validate() const;
};

// Layer constructors used by the builders.
LayerSpec conv_layer(std::string name, int64_t in, int64_t out, int64_t k, int64_t stride = 1,
                     int64_t groups = 1, bool bias = false);
LayerSpec fc_layer(std::string name, int64_t in, int64_t out, bool bias = true);
LayerSpec bn_layer(std::string name, int64_t channels);
LayerSpec relu_layer(std::string name);
LayerSpec repmlp_layer(std::string name, const RepMLPConfig& cfg);
LayerSpec max_pool_layer(std::string name, int64_t k, int64_t stride, int64_t pad = 0);
LayerSpec avg_pool_layer(std::string name);
LayerSpec flatten_layer(std::string name);

enum class BottleneckVariant { original, repmlp_bottleneck, repmlp_light };

struct BottleneckConfig {
  int64_t in_channels = 0;
  int64_t planes = 0;  // output is 4 * planes
  int64_t stride = 1;
  int64_t height = 0;  // input resolution
  int64_t width = 0;
  BottleneckVariant variant = BottleneckVariant::original;
  // RepMLP variants only
  int64_t r = 4;  // 3x3 convs shrink planes by r; the light block uses 4*planes/r
  int64_t groups = 1;
  int64_t part = 7;
  std::vector<int64_t> branch_kernels;

  void validate() const;
};

// Bottleneck as a single residual add node followed by ReLU.
std::vector<LayerSpec> bottleneck(const std::string& name, const BottleneckConfig& cfg);

struct CifarOptions {
  std::vector<int64_t> widths;  // empty selects the default widths
  int64_t resolution = 32;
  int64_t classes = 10;
};

struct StageReplace {
  int64_t r = 4;
  int64_t groups = 8;
};

struct ResNetOptions {
  int64_t resolution = 224;
  int64_t classes = 1000;
  std::map<std::string, StageReplace> replace;  // keys "c2".."c5"
  BottleneckVariant variant = BottleneckVariant::repmlp_bottleneck;
};

ModelGraph build_pure_mlp_cifar(const CifarOptions& opt = {});
ModelGraph build_wide_convnet(const CifarOptions& opt = {});
ModelGraph build_resnet50(int64_t resolution = 224);
ModelGraph build_repmlp_resnet50(const ResNetOptions& opt);
// c3 and c4 replaced with light blocks (out/8 channels, g = 8).
ModelGraph build_repmlp_light_resnet50(int64_t resolution = 224);

// Named models known to the CLI: resnet50, repmlp-res50, repmlp-res50-c4-r4,
// repmlp-res50-c4-r8, repmlp-light-res50, pure-mlp-cifar, wide-convnet.
std::vector<std::string> model_names();
ModelGraph build_named_model(const std::string& name, int64_t resolution);

int64_t count_params(const ModelGraph& g);
// MACs per sample of conv, FC and RepMLP matmuls.
int64_t count_flops(const ModelGraph& g);

/// Deploy form of a graph: conv directly followed by a BN over its outputs
/// becomes one conv with bias; RepMLP blocks switch to the three-FC form.
ModelGraph convert_graph(const ModelGraph& g);

std::string to_text(const ModelGraph& g);
ModelGraph graph_from_text(const std::string& text);

template <typename T>
using LayerWeights =
    std::variant<ConvSpec<T>, FcSpec<T>, BnParams<T>, RepMLPTrainWeights<T>, RepMLPInferWeights<T>>;

template <typename T>
using ModelWeights = std::map<std::string, LayerWeights<T>>;

template <typename T>
ModelWeights<T> random_model_weights(const ModelGraph& g, std::mt19937_64& rng);

template <typename T>
ModelWeights<T> convert_weights(const ModelGraph& g, const ModelWeights<T>& w);

/// Runs small graphs. Convs must be stride 1; max pools non-overlapping.
template <typename T>
Tensor4<T> forward(const ModelGraph& g, const ModelWeights<T>& w, const Tensor4<T>& input);

}  // namespace repmlp

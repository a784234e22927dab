#include "repmlp/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <set>

namespace repmlp {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'P', 'M', 'L', 'P', 'C', 'K'};

class Writer {
 public:
  template <typename U>
  void le(U v) {
    for (size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i64(int64_t v) { le(static_cast<uint64_t>(v)); }
  void f32(float v) { le(std::bit_cast<uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<uint64_t>(v)); }
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& in) : in_(in) {}
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_++]) << (8 * i));
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(le<uint64_t>()); }
  float f32() { return std::bit_cast<float>(le<uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<uint64_t>()); }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(size_t n) {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<uint8_t>& in_;
  size_t pos_ = 0;
};

std::string dims_str(const std::vector<int64_t>& d) {
  std::string s = "(";
  for (size_t i = 0; i < d.size(); ++i) s += (i ? ", " : "") + std::to_string(d[i]);
  return s + ")";
}

struct TensorSink {
  std::vector<NamedTensor>& out;
  void put(std::string name, std::vector<int64_t> dims, const std::vector<float>& data) {
    out.push_back({std::move(name), std::move(dims), data});
  }
  void bn(const std::string& p, const BnParams<float>& b) {
    const int64_t n = b.size();
    put(p + ".mean", {n}, b.mean);
    put(p + ".var", {n}, b.var);
    put(p + ".gamma", {n}, b.gamma);
    put(p + ".beta", {n}, b.beta);
  }
  void fc(const std::string& p, const FcSpec<float>& f) {
    put(p + ".weight", {f.out_dim, f.in_per_group()}, f.kernel);
    if (f.bias) put(p + ".bias", {f.out_dim}, *f.bias);
  }
};

std::vector<float> take(const Checkpoint& ck, const std::string& name, const std::vector<int64_t>& dims) {
  const NamedTensor* t = ck.find(name);
  if (!t) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
  if (t->dims != dims)
    throw CheckpointError("tensor '" + name + "' has shape " + dims_str(t->dims) + ", expected " + dims_str(dims));
  return t->data;
}

BnParams<float> take_bn(const Checkpoint& ck, const std::string& p, int64_t n) {
  BnParams<float> b;
  b.mean = take(ck, p + ".mean", {n});
  b.var = take(ck, p + ".var", {n});
  b.gamma = take(ck, p + ".gamma", {n});
  b.beta = take(ck, p + ".beta", {n});
  b.eps = static_cast<float>(ck.config.eps);
  return b;
}

FcSpec<float> take_fc(const Checkpoint& ck, const std::string& p, int64_t in, int64_t out, int64_t groups,
                      bool bias) {
  FcSpec<float> f;
  f.in_dim = in;
  f.out_dim = out;
  f.groups = groups;
  f.kernel = take(ck, p + ".weight", {out, in / groups});
  if (bias) f.bias = take(ck, p + ".bias", {out});
  return f;
}

std::string branch_name(int64_t k) { return "branch" + std::to_string(k); }

void check_kind(const Checkpoint& ck, CheckpointKind want) {
  if (ck.kind != want)
    throw CheckpointError(std::string("expected a ") + (want == CheckpointKind::train ? "training" : "converted") +
                          " checkpoint");
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Checkpoint make_checkpoint(const RepMLPConfig& cfg, const RepMLPTrainWeights<float>& w) {
  w.validate(cfg);
  Checkpoint ck;
  ck.kind = CheckpointKind::train;
  ck.config = cfg;
  TensorSink sink{ck.tensors};
  if (cfg.has_global()) {
    sink.bn("gp_bn", w.gp_bn);
    sink.fc("fc1", w.fc1);
    sink.fc("fc2", w.fc2);
  }
  for (size_t i = 0; i < w.branches.size(); ++i) {
    const std::string p = branch_name(cfg.branch_kernels[i]);
    const Shape4 s = w.branches[i].conv.kernel.shape();
    sink.put(p + ".conv.weight", {s.n, s.c, s.h, s.w}, w.branches[i].conv.kernel.vec());
    sink.bn(p + ".bn", w.branches[i].bn);
  }
  sink.fc("fc3", w.fc3);
  sink.bn("fc3_bn", w.fc3_bn);
  return ck;
}

Checkpoint make_checkpoint(const RepMLPConfig& cfg, const RepMLPInferWeights<float>& w) {
  w.validate(cfg);
  Checkpoint ck;
  ck.kind = CheckpointKind::infer;
  ck.config = cfg;
  TensorSink sink{ck.tensors};
  if (cfg.has_global()) {
    sink.fc("fc1", w.fc1);
    sink.fc("fc2", w.fc2);
  }
  sink.fc("fc3", w.fc3);
  return ck;
}

RepMLPTrainWeights<float> train_weights(const Checkpoint& ck) {
  check_kind(ck, CheckpointKind::train);
  const RepMLPConfig& cfg = ck.config;
  cfg.validate();
  RepMLPTrainWeights<float> w;
  if (cfg.has_global()) {
    w.gp_bn = take_bn(ck, "gp_bn", cfg.in_channels);
    w.fc1 = take_fc(ck, "fc1", cfg.gp_in_dim(), cfg.gp_hidden(), 1, true);
    w.fc2 = take_fc(ck, "fc2", cfg.gp_hidden(), cfg.gp_in_dim(), 1, true);
  }
  for (int64_t k : cfg.branch_kernels) {
    const std::string p = branch_name(k);
    Tensor4<float> kernel({cfg.out_channels, cfg.in_channels / cfg.groups, k, k},
                          take(ck, p + ".conv.weight", {cfg.out_channels, cfg.in_channels / cfg.groups, k, k}));
    w.branches.push_back({ConvSpec<float>::same(std::move(kernel), cfg.groups), take_bn(ck, p + ".bn", cfg.out_channels)});
  }
  w.fc3 = take_fc(ck, "fc3", cfg.fc3_in(), cfg.fc3_out(), cfg.groups, false);
  w.fc3_bn = take_bn(ck, "fc3_bn", cfg.fc3_out());
  w.validate(cfg);
  return w;
}

RepMLPInferWeights<float> infer_weights(const Checkpoint& ck) {
  check_kind(ck, CheckpointKind::infer);
  const RepMLPConfig& cfg = ck.config;
  cfg.validate();
  RepMLPInferWeights<float> w;
  if (cfg.has_global()) {
    w.fc1 = take_fc(ck, "fc1", cfg.gp_in_dim(), cfg.gp_hidden(), 1, true);
    w.fc2 = take_fc(ck, "fc2", cfg.gp_hidden(), cfg.gp_in_dim(), 1, true);
  }
  w.fc3 = take_fc(ck, "fc3", cfg.fc3_in(), cfg.fc3_out(), cfg.groups, true);
  w.validate(cfg);
  return w;
}

Checkpoint convert_checkpoint(const Checkpoint& ck) {
  if (ck.kind == CheckpointKind::infer) throw CheckpointError("checkpoint is already converted");
  return make_checkpoint(ck.config, convert_block(ck.config, train_weights(ck)));
}

std::vector<uint8_t> serialize(const Checkpoint& ck) {
  const RepMLPConfig& c = ck.config;
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.le(Checkpoint::version);
  w.le(static_cast<uint8_t>(ck.kind));
  for (int64_t v : {c.in_channels, c.out_channels, c.height, c.width, c.part_h, c.part_w, c.groups,
                    c.gp_internal_dim})
    w.i64(v);
  w.le(static_cast<uint8_t>(c.gp_activation == Activation::relu ? 0 : 1));
  w.f64(c.eps);
  if (c.branch_kernels.size() > 255) throw CheckpointError("too many branches");
  w.le(static_cast<uint8_t>(c.branch_kernels.size()));
  for (int64_t k : c.branch_kernels) w.i64(k);

  std::set<std::string> seen;
  w.le(static_cast<uint32_t>(ck.tensors.size()));
  for (const NamedTensor& t : ck.tensors) {
    if (!seen.insert(t.name).second) throw CheckpointError("duplicate tensor '" + t.name + "'");
    if (t.name.size() > 0xffff || t.dims.size() > 255) throw CheckpointError("tensor '" + t.name + "' too large");
    int64_t n = 1;
    for (int64_t d : t.dims) n *= d;
    if (n != static_cast<int64_t>(t.data.size()))
      throw CheckpointError("tensor '" + t.name + "' payload does not match " + dims_str(t.dims));
    w.le(static_cast<uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le(static_cast<uint8_t>(t.dims.size()));
    for (int64_t d : t.dims) w.le(static_cast<uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

Checkpoint deserialize(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw CheckpointError("not a RepMLP checkpoint");
  const auto version = r.le<uint8_t>();
  if (version != Checkpoint::version)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto kind = r.le<uint8_t>();
  if (kind > 1) throw CheckpointError("unknown checkpoint kind " + std::to_string(kind));
  ck.kind = static_cast<CheckpointKind>(kind);
  RepMLPConfig& c = ck.config;
  for (int64_t* f : {&c.in_channels, &c.out_channels, &c.height, &c.width, &c.part_h, &c.part_w, &c.groups,
                     &c.gp_internal_dim})
    *f = r.i64();
  const auto act = r.le<uint8_t>();
  if (act > 1) throw CheckpointError("unknown activation " + std::to_string(act));
  c.gp_activation = act == 0 ? Activation::relu : Activation::identity;
  c.eps = r.f64();
  const auto nk = r.le<uint8_t>();
  for (int i = 0; i < nk; ++i) c.branch_kernels.push_back(r.i64());
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid config record: ") + e.what());
  }

  std::set<std::string> seen;
  const auto count = r.le<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.le<uint16_t>());
    if (!seen.insert(t.name).second) throw CheckpointError("duplicate tensor '" + t.name + "'");
    const auto rank = r.le<uint8_t>();
    int64_t n = 1;
    for (int d = 0; d < rank; ++d) {
      t.dims.push_back(r.le<uint32_t>());
      n *= t.dims.back();
    }
    if (n > static_cast<int64_t>(bytes.size())) throw CheckpointError("tensor '" + t.name + "' exceeds the file");
    t.data.resize(static_cast<size_t>(n));
    for (float& v : t.data) v = r.f32();
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after tensor table");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::vector<uint8_t> bytes = serialize(ck);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace repmlp

// repmlp: equivalence checks, model size tables, benchmarks and checkpoint tools.
//
// Exit status: 0 pass, 1 property violation, 2 usage or I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include "repmlp/checkpoint.hpp"
#include "repmlp/harness.hpp"
#include "repmlp/init.hpp"
#include "repmlp/kernels.hpp"
#include "repmlp/model.hpp"

using namespace repmlp;

namespace {

constexpr int kPass = 0;
constexpr int kViolation = 1;
constexpr int kUsage = 2;

struct Common {
  uint64_t seed = 0;
  std::string precision = "f32";
  double tolerance = -1.0;
  std::string grid = "default";
  int64_t batch = 0;  // 0: command default
  int64_t repeats = 5;
  std::string out;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path);
}

void emit(const Common& c, const std::string& text) {
  std::cout << text;
  if (!c.out.empty()) write_text(c.out, text);
}

int cmd_verify(const Common& c) {
  VerifyOptions opt;
  opt.seed = c.seed;
  opt.precision = parse_precision(c.precision);
  opt.tolerance = c.tolerance;
  opt.grid = c.grid;
  if (c.batch) opt.batch = c.batch;
  const VerifyReport rep = run_verify(opt);
  emit(c, rep.text());
  return rep.failures() ? kViolation : kPass;
}

std::string mega(int64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3fM", static_cast<double>(v) / 1e6);
  return buf;
}

int cmd_count(const Common& c, const std::string& model, int64_t res) {
  if (res <= 0) res = model == "pure-mlp-cifar" || model == "wide-convnet" ? 32 : 224;
  const ModelGraph train = build_named_model(model, res);
  const ModelGraph deploy = convert_graph(train);
  std::cout << "model=" << model << " res=" << res << " params=" << mega(count_params(deploy))
            << " flops=" << mega(count_flops(deploy)) << " train_params=" << mega(count_params(train))
            << " train_flops=" << mega(count_flops(train)) << "\n";
  if (!c.out.empty()) write_text(c.out, to_text(deploy));
  return kPass;
}

int cmd_bench(const Common& c, const std::string& config) {
  BenchOptions opt;
  opt.cfg = parse_config_name(config);
  opt.batch = c.batch ? c.batch : 8;
  opt.repeats = c.repeats;
  opt.seed = c.seed;
  opt.precision = parse_precision(c.precision);
  const BenchReport rep = run_bench(opt);
  emit(c, rep.text());
  return rep.direction_ok() ? kPass : kViolation;
}

int cmd_init(const Common& c, const std::string& config) {
  const RepMLPConfig cfg = parse_config_name(config);
  std::mt19937_64 rng(c.seed);
  save_checkpoint(c.out, make_checkpoint(cfg, random_train_weights<float>(cfg, rng)));
  std::cout << "wrote training checkpoint " << cfg.name() << " to " << c.out << "\n";
  return kPass;
}

int cmd_convert(const Common& c, const std::string& in) {
  const Checkpoint ck = convert_checkpoint(load_checkpoint(in));
  save_checkpoint(c.out, ck);
  std::cout << "wrote converted checkpoint " << ck.config.name() << " to " << c.out << "\n";
  return kPass;
}

int cmd_export(const Common& c, const std::string& in, int64_t o, int64_t i, int64_t j, int64_t ch) {
  const Checkpoint ck = load_checkpoint(in);
  const FcSpec<float> fc3 =
      ck.kind == CheckpointKind::infer ? infer_weights(ck).fc3 : train_weights(ck).fc3;
  emit(c, grid_to_csv(export_fc3(ck.config, fc3, o, i, j, ch)));
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RepMLP re-parameterization toolkit"};
  app.require_subcommand(1);
  Common c;

  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", c.seed, "random seed")->capture_default_str(); };
  auto add_precision = [&](CLI::App* s) {
    s->add_option("--precision", c.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
  };
  auto add_out = [&](CLI::App* s, const char* what) { return s->add_option("--out", c.out, what); };

  auto* verify = app.add_subcommand("verify", "train vs converted forward over the config grid");
  add_seed(verify);
  add_precision(verify);
  verify->add_option("--tolerance", c.tolerance, "max abs diff allowed (default 1e-4 f32, 1e-9 f64)");
  verify->add_option("--grid", c.grid, "full, default, quick or a cell name")->capture_default_str();
  verify->add_option("--batch", c.batch, "samples per cell (default 2)")->check(CLI::PositiveNumber);
  add_out(verify, "also write the report here");

  std::string model;
  int64_t res = 0;
  auto* count = app.add_subcommand("count", "parameters and FLOPs of a named model");
  count->add_option("model", model, "resnet50, repmlp-res50, repmlp-res50-c4-r4, repmlp-res50-c4-r8, "
                                    "repmlp-light-res50, pure-mlp-cifar, wide-convnet")
      ->required();
  count->add_option("res", res, "input resolution (default 224, or 32 for the CIFAR models)");
  add_out(count, "write the converted graph as text");

  std::string config = "C16_O16_H16W16_h8w8_g2_K1-3-5-7";
  auto* bench = app.add_subcommand("bench", "time the training and converted forms of one block");
  bench->add_option("config", config, "block config name")->capture_default_str();
  bench->add_option("--batch", c.batch, "batch size (default 8)")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", c.repeats, "timed runs per form")->check(CLI::PositiveNumber)->capture_default_str();
  add_seed(bench);
  add_precision(bench);
  add_out(bench, "also write the report here");

  auto* init = app.add_subcommand("init", "write a random training checkpoint");
  init->add_option("config", config, "block config name, e.g. C4_O8_H12W14_h6w7_g2_K1-3")->required();
  add_seed(init);
  add_out(init, "checkpoint path")->required();

  std::string in;
  auto* convert = app.add_subcommand("convert", "convert a training checkpoint to the three-FC form");
  convert->add_option("checkpoint", in, "training checkpoint")->required()->check(CLI::ExistingFile);
  add_out(convert, "converted checkpoint path")->required();

  int64_t eo = 0, ei = 0, ej = 0, ec = 0;
  auto* exp = app.add_subcommand("export-fc3", "dump ln(|W|/min|W|) of one FC3 slice as CSV");
  exp->add_option("checkpoint", in, "checkpoint (training or converted)")->required()->check(CLI::ExistingFile);
  exp->add_option("o", eo, "output channel")->required();
  exp->add_option("i", ei, "output pixel row")->required();
  exp->add_option("j", ej, "output pixel column")->required();
  exp->add_option("c", ec, "input channel within the group")->required();
  add_out(exp, "also write the CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kUsage;
  }

  if (!kernels::apply_thread_cap_from_env()) {
    std::cerr << "error: REPMLP_THREADS must be a positive integer\n";
    return kUsage;
  }

  try {
    if (*verify) return cmd_verify(c);
    if (*count) return cmd_count(c, model, res);
    if (*bench) return cmd_bench(c, config);
    if (*init) return cmd_init(c, config);
    if (*convert) return cmd_convert(c, in);
    if (*exp) return cmd_export(c, in, eo, ei, ej, ec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

// Serial reference vs OpenMP kernels, and training vs converted block forward.
// Thread count follows REPMLP_THREADS when set.

#include <benchmark/benchmark.h>

#include <random>

#include "repmlp/block.hpp"
#include "repmlp/init.hpp"
#include "repmlp/kernels.hpp"
#include "repmlp/ops.hpp"
#include "repmlp/reparam.hpp"

using namespace repmlp;

namespace {

// args: channels, spatial size, kernel, groups
template <Exec E>
void BM_conv2d(benchmark::State& st) {
  const int64_t c = st.range(0), s = st.range(1), k = st.range(2), g = st.range(3);
  std::mt19937_64 rng(1);
  const auto x = random_tensor<float>({8, c, s, s}, rng);
  const auto conv = ConvSpec<float>::same(random_tensor<float>({c, c / g, k, k}, rng), g);
  for (auto _ : st) benchmark::DoNotOptimize(conv2d(x, conv, E));
  st.SetItemsProcessed(st.iterations() * 8 * c * s * s * (c / g) * k * k);
}

// args: input dim, output dim, groups
template <Exec E>
void BM_grouped_fc(benchmark::State& st) {
  const int64_t p = st.range(0), q = st.range(1), g = st.range(2);
  std::mt19937_64 rng(2);
  const auto x = random_tensor<float>({32, p, 1, 1}, rng);
  const auto fc = random_fc<float>(p, q, g, true, rng);
  for (auto _ : st) benchmark::DoNotOptimize(grouped_fc(x, fc, E));
  st.SetItemsProcessed(st.iterations() * 32 * q * (p / g));
}

RepMLPConfig bench_block() {
  RepMLPConfig cfg;
  cfg.in_channels = cfg.out_channels = 32;
  cfg.height = cfg.width = 28;
  cfg.part_h = cfg.part_w = 7;
  cfg.groups = 4;
  cfg.branch_kernels = {1, 3, 5, 7};
  return cfg;
}

void BM_block_train(benchmark::State& st) {
  const RepMLPConfig cfg = bench_block();
  std::mt19937_64 rng(3);
  const auto w = random_train_weights<float>(cfg, rng);
  const auto x = random_tensor<float>({8, cfg.in_channels, cfg.height, cfg.width}, rng);
  for (auto _ : st) benchmark::DoNotOptimize(repmlp_forward_train(x, cfg, w));
}

void BM_block_infer(benchmark::State& st) {
  const RepMLPConfig cfg = bench_block();
  std::mt19937_64 rng(3);
  const auto w = convert_block(cfg, random_train_weights<float>(cfg, rng));
  const auto x = random_tensor<float>({8, cfg.in_channels, cfg.height, cfg.width}, rng);
  for (auto _ : st) benchmark::DoNotOptimize(repmlp_forward_infer(x, cfg, w));
}

}  // namespace

BENCHMARK(BM_conv2d<Exec::serial>)->Args({16, 28, 3, 1})->Args({64, 14, 3, 4})->Args({32, 14, 7, 8});
BENCHMARK(BM_conv2d<Exec::parallel>)->Args({16, 28, 3, 1})->Args({64, 14, 3, 4})->Args({32, 14, 7, 8})->UseRealTime();
BENCHMARK(BM_grouped_fc<Exec::serial>)->Args({1568, 1568, 4})->Args({4096, 1024, 1});
BENCHMARK(BM_grouped_fc<Exec::parallel>)->Args({1568, 1568, 4})->Args({4096, 1024, 1})->UseRealTime();
BENCHMARK(BM_block_train)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_block_infer)->Unit(benchmark::kMillisecond)->UseRealTime();

int main(int argc, char** argv) {
  if (!kernels::apply_thread_cap_from_env()) return 2;
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 2;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "repmlp/block.hpp"
#include "repmlp/init.hpp"

using namespace repmlp;

namespace {
RepMLPConfig make_cfg(int64_t c, int64_t o, int64_t hh, int64_t ww, int64_t h, int64_t w, int64_t g,
                      std::vector<int64_t> ks) {
  RepMLPConfig cfg;
  cfg.in_channels = c;
  cfg.out_channels = o;
  cfg.height = hh;
  cfg.width = ww;
  cfg.part_h = h;
  cfg.part_w = w;
  cfg.groups = g;
  cfg.branch_kernels = std::move(ks);
  return cfg;
}

template <typename T>
FcSpec<T> identity_fc(int64_t n) {
  FcSpec<T> fc = FcSpec<T>::zeros(n, n, 1, true);
  for (int64_t i = 0; i < n; ++i) fc.weight(i, i) = T(1);
  return fc;
}
}  // namespace

TEST_CASE("RepMLPConfig validation") {
  CHECK_NOTHROW(make_cfg(4, 8, 12, 14, 6, 7, 2, {1, 3, 5}).validate());
  CHECK_THROWS_AS(make_cfg(4, 8, 12, 14, 6, 7, 3, {1}).validate(), ShapeError);     // groups
  CHECK_THROWS_AS(make_cfg(4, 8, 12, 14, 5, 7, 2, {1}).validate(), ShapeError);     // H % h
  CHECK_THROWS_AS(make_cfg(4, 8, 12, 14, 6, 7, 2, {2}).validate(), ShapeError);     // even K
  CHECK_THROWS_AS(make_cfg(4, 8, 12, 14, 6, 7, 2, {7}).validate(), ShapeError);     // K > h
  auto cfg = make_cfg(4, 8, 12, 14, 6, 7, 2, {1, 3});
  CHECK(cfg.name() == "C4_O8_H12W14_h6w7_g2_K1-3");
  CHECK(cfg.num_parts() == 4);
  CHECK(cfg.gp_in_dim() == 16);
  CHECK(cfg.gp_hidden() == 16);
  cfg.gp_internal_dim = 4;
  CHECK(cfg.gp_hidden() == 4);
}

TEST_CASE("global_perceptron") {
  std::mt19937_64 rng(21);
  SUBCASE("zero FC2 leaves the partition map unchanged") {
    auto cfg = make_cfg(3, 3, 8, 6, 4, 3, 1, {});
    auto wts = random_train_weights<double>(cfg, rng);
    wts.fc2 = FcSpec<double>::zeros(cfg.gp_hidden(), cfg.gp_in_dim(), 1, true);
    Tensor4<double> x = random_tensor<double>({2, 3, 8, 6}, rng);
    CHECK(global_perceptron(x, cfg, wts).vec() == partition(x, 4, 3).vec());
  }
  SUBCASE("scalar path: each partition gets its own pooled value") {
    auto cfg = make_cfg(1, 1, 2, 2, 1, 1, 1, {});
    auto wts = zero_train_weights<float>(cfg);
    wts.fc1 = identity_fc<float>(4);
    wts.fc2 = identity_fc<float>(4);
    Tensor4<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor4<float> y = global_perceptron(x, cfg, wts);
    CHECK(y.shape() == Shape4{4, 1, 1, 1});
    const std::vector<float> expected{2, 4, 6, 8};
    for (int i = 0; i < 4; ++i) CHECK(y.vec()[i] == doctest::Approx(expected[i]).epsilon(1e-6));
  }
  SUBCASE("pooled values reach other partitions through FC1/FC2") {
    // swap the two partitions' pooled values: partition 0 receives partition 1's mean
    auto cfg = make_cfg(1, 1, 1, 2, 1, 1, 1, {});
    auto wts = zero_train_weights<double>(cfg);
    wts.fc1 = FcSpec<double>::zeros(2, 2, 1, true);
    wts.fc1.kernel = {0, 1, 1, 0};
    wts.fc2 = identity_fc<double>(2);
    Tensor4<double> x({1, 1, 1, 2}, {1.0, 5.0});
    Tensor4<double> y = global_perceptron(x, cfg, wts);
    CHECK(y.vec()[0] == doctest::Approx(6.0));
    CHECK(y.vec()[1] == doctest::Approx(6.0));
  }
  SUBCASE("no Global Perceptron when the partition covers the map") {
    auto cfg = make_cfg(2, 2, 4, 4, 4, 4, 1, {1});
    auto a = random_train_weights<double>(cfg, rng);
    auto b = a;
    b.gp_bn = random_bn<double>(2, rng);
    b.fc1 = random_fc<double>(2, 2, 1, true, rng);
    b.fc2 = random_fc<double>(2, 2, 1, true, rng);
    Tensor4<double> x = random_tensor<double>({2, 2, 4, 4}, rng);
    CHECK(global_perceptron(x, cfg, a).vec() == x.vec());
    CHECK(repmlp_forward_train(x, cfg, a).vec() == repmlp_forward_train(x, cfg, b).vec());
  }
  SUBCASE("shape mismatch") {
    auto cfg = make_cfg(2, 2, 4, 4, 2, 2, 1, {});
    auto wts = random_train_weights<float>(cfg, rng);
    CHECK_THROWS_AS(global_perceptron(Tensor4<float>({1, 3, 4, 4}), cfg, wts), ShapeError);
    wts.fc1 = random_fc<float>(8, 7, 1, true, rng);
    CHECK_THROWS_AS(repmlp_forward_train(Tensor4<float>({1, 2, 4, 4}), cfg, wts), ShapeError);
  }
}

TEST_CASE("local_perceptron") {
  std::mt19937_64 rng(22);
  SUBCASE("no branches gives zeros") {
    auto cfg = make_cfg(2, 3, 4, 4, 4, 4, 1, {});
    auto wts = random_train_weights<float>(cfg, rng);
    Tensor4<float> y = local_perceptron(random_tensor<float>({2, 2, 4, 4}, rng), cfg, wts);
    CHECK(y.shape() == Shape4{2, 3, 4, 4});
    CHECK(y.vec() == std::vector<float>(y.numel(), 0.0f));
  }
  SUBCASE("identity 1x1 branch with identity BN") {
    auto cfg = make_cfg(3, 3, 5, 5, 5, 5, 1, {1});
    auto wts = zero_train_weights<double>(cfg);
    for (int64_t c = 0; c < 3; ++c) wts.branches[0].conv.kernel.at(c, c, 0, 0) = 1.0;
    Tensor4<double> p = random_tensor<double>({2, 3, 5, 5}, rng);
    CHECK(max_abs_diff(local_perceptron(p, cfg, wts), p) < 1e-12);
  }
  SUBCASE("two branches equal the sum of per-branch oracles") {
    auto cfg = make_cfg(4, 2, 6, 6, 6, 6, 2, {1, 3});
    auto wts = random_train_weights<double>(cfg, rng);
    Tensor4<double> p = random_tensor<double>({3, 4, 6, 6}, rng);
    Tensor4<double> expect({3, 2, 6, 6});
    for (const auto& br : wts.branches) {
      Tensor4<double> c = oracle::group_split_conv(p, br.conv);
      for (int64_t n = 0; n < 3; ++n)
        for (int64_t o = 0; o < 2; ++o)
          for (int64_t y = 0; y < 6; ++y)
            for (int64_t x = 0; x < 6; ++x)
              expect.at(n, o, y, x) += oracle::bn_scalar(c.at(n, o, y, x), br.bn.mean[o],
                                                         br.bn.var[o], br.bn.gamma[o],
                                                         br.bn.beta[o], br.bn.eps);
    }
    CHECK(max_abs_diff(local_perceptron(p, cfg, wts), expect) < 1e-12);
  }
  SUBCASE("kernel larger than the partition") {
    auto cfg = make_cfg(2, 2, 6, 6, 6, 6, 1, {5});
    auto wts = random_train_weights<float>(cfg, rng);
    cfg.part_h = cfg.part_w = 3;
    cfg.height = cfg.width = 3;
    CHECK_THROWS_AS(local_perceptron(Tensor4<float>({1, 2, 3, 3}), cfg, wts), ShapeError);
  }
}

TEST_CASE("partition_perceptron") {
  std::mt19937_64 rng(23);
  SUBCASE("identity FC3 and BN") {
    auto cfg = make_cfg(2, 2, 3, 3, 3, 3, 1, {});
    auto wts = zero_train_weights<double>(cfg);
    for (int64_t i = 0; i < 18; ++i) wts.fc3.weight(i, i) = 1.0;
    Tensor4<double> p = random_tensor<double>({2, 2, 3, 3}, rng);
    CHECK(max_abs_diff(partition_perceptron(p, cfg, wts), p) < 1e-12);
  }
  SUBCASE("g=2 matches the block-diagonal oracle") {
    auto cfg = make_cfg(4, 6, 4, 4, 2, 2, 2, {});
    auto wts = random_train_weights<double>(cfg, rng);
    Tensor4<double> p = random_tensor<double>({5, 4, 2, 2}, rng);
    auto lin = oracle::dense_apply(oracle::block_diagonal(wts.fc3), p.vec(), 5);
    Tensor4<double> y = partition_perceptron(p, cfg, wts);
    CHECK(y.shape() == Shape4{5, 6, 2, 2});
    for (int64_t n = 0; n < 5; ++n)
      for (int64_t f = 0; f < 24; ++f) {
        const auto& bn = wts.fc3_bn;
        CHECK(y.vec()[n * 24 + f] ==
              doctest::Approx(oracle::bn_scalar(lin[n * 24 + f], bn.mean[f], bn.var[f],
                                                bn.gamma[f], bn.beta[f], bn.eps))
                  .epsilon(1e-12));
      }
  }
  SUBCASE("zero FC3 gives the BN shift") {
    auto cfg = make_cfg(2, 2, 2, 2, 2, 2, 2, {});
    auto wts = zero_train_weights<float>(cfg);
    for (int64_t f = 0; f < 8; ++f) wts.fc3_bn.beta[f] = 0.5f * static_cast<float>(f);
    Tensor4<float> y = partition_perceptron(random_tensor<float>({3, 2, 2, 2}, rng), cfg, wts);
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t f = 0; f < 8; ++f) CHECK(y.vec()[n * 8 + f] == 0.5f * static_cast<float>(f));
  }
}

TEST_CASE("repmlp_forward_train") {
  std::mt19937_64 rng(24);
  SUBCASE("zero weights give zero output") {
    auto cfg = make_cfg(4, 2, 8, 8, 4, 4, 2, {1, 3});
    auto wts = zero_train_weights<float>(cfg);
    Tensor4<float> y = repmlp_forward_train(random_tensor<float>({2, 4, 8, 8}, rng), cfg, wts);
    CHECK(y.shape() == Shape4{2, 2, 8, 8});
    CHECK(y.vec() == std::vector<float>(y.numel(), 0.0f));
  }
  SUBCASE("scalar walkthrough, C=O=1, 2x2, one 1x1 branch") {
    auto cfg = make_cfg(1, 1, 2, 2, 2, 2, 1, {1});
    const double eps = 1e-5;
    auto wts = zero_train_weights<double>(cfg);
    wts.branches[0].conv.kernel.data()[0] = 2.0;
    wts.branches[0].bn = BnParams<double>{{0.5}, {1.0 - eps}, {3.0}, {-1.0}, eps};
    std::fill(wts.fc3.kernel.begin(), wts.fc3.kernel.end(), 0.25);
    wts.fc3_bn.gamma = {1, 2, 3, 4};
    Tensor4<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    // branch: 3 * (2x - 0.5) - 1 = [3.5, 9.5, 15.5, 21.5]; fc3: mean 2.5 scaled by [1,2,3,4]
    const std::vector<double> expected{6.0, 14.5, 23.0, 31.5};
    Tensor4<double> y = repmlp_forward_train(x, cfg, wts);
    for (int i = 0; i < 4; ++i) CHECK(y.vec()[i] == doctest::Approx(expected[i]).epsilon(1e-9));
  }
  SUBCASE("without Local Perceptron equals Global + Partition Perceptron alone") {
    auto cfg = make_cfg(4, 4, 12, 8, 6, 4, 2, {});
    auto wts = random_train_weights<double>(cfg, rng);
    Tensor4<double> x = random_tensor<double>({2, 4, 12, 8}, rng);
    Tensor4<double> composed = inverse_partition(
        partition_perceptron(global_perceptron(x, cfg, wts), cfg, wts), 2, 12, 8);
    CHECK(repmlp_forward_train(x, cfg, wts).vec() == composed.vec());
  }
  SUBCASE("linear in FC3 and branch kernels under identity BNs") {
    auto cfg = make_cfg(2, 4, 6, 6, 3, 3, 2, {1, 3});
    auto base = random_train_weights<double>(cfg, rng);
    base.fc3_bn = BnParams<double>::identity(cfg.fc3_out());
    for (auto& br : base.branches) br.bn = BnParams<double>::identity(cfg.out_channels);
    Tensor4<double> x = random_tensor<double>({2, 2, 6, 6}, rng);

    auto with = [&](auto mutate) {
      auto w = base;
      mutate(w);
      return repmlp_forward_train(x, cfg, w);
    };
    auto zero = with([](auto& w) {
      std::fill(w.fc3.kernel.begin(), w.fc3.kernel.end(), 0.0);
      for (auto& br : w.branches)
        std::fill(br.conv.kernel.data().begin(), br.conv.kernel.data().end(), 0.0);
    });
    auto other = random_train_weights<double>(cfg, rng);
    auto a_only = with([&](auto& w) {
      for (auto& br : w.branches)
        std::fill(br.conv.kernel.data().begin(), br.conv.kernel.data().end(), 0.0);
    });
    auto b_only = with([&](auto& w) {
      std::fill(w.fc3.kernel.begin(), w.fc3.kernel.end(), 0.0);
      for (size_t i = 0; i < w.branches.size(); ++i) w.branches[i].conv = other.branches[i].conv;
    });
    auto both = with([&](auto& w) {
      for (size_t i = 0; i < w.branches.size(); ++i) w.branches[i].conv = other.branches[i].conv;
    });
    for (int64_t i = 0; i < both.numel(); ++i)
      CHECK(both.vec()[i] - zero.vec()[i] ==
            doctest::Approx((a_only.vec()[i] - zero.vec()[i]) + (b_only.vec()[i] - zero.vec()[i])));
  }
  SUBCASE("output dims across configs") {
    for (auto cfg : {make_cfg(2, 4, 8, 12, 4, 6, 2, {1, 3}), make_cfg(4, 2, 7, 7, 7, 7, 1, {1, 7}),
                     make_cfg(8, 8, 12, 12, 4, 4, 4, {3})}) {
      auto w = random_train_weights<float>(cfg, rng);
      Tensor4<float> y = repmlp_forward_train(
          random_tensor<float>({3, cfg.in_channels, cfg.height, cfg.width}, rng), cfg, w);
      CHECK(y.shape() == Shape4{3, cfg.out_channels, cfg.height, cfg.width});
    }
  }
}

TEST_CASE("parameter accounting agrees with the weight objects") {
  std::mt19937_64 rng(25);
  for (auto cfg : {make_cfg(2, 4, 8, 12, 4, 6, 2, {1, 3}), make_cfg(4, 4, 7, 7, 7, 7, 1, {1, 3, 5, 7}),
                   make_cfg(8, 8, 12, 12, 4, 4, 4, {})}) {
    auto w = random_train_weights<float>(cfg, rng);
    CHECK(w.param_count() == block_params(cfg, Form::train));
  }
}

#include <doctest.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "repmlp/init.hpp"
#include "repmlp/kernels.hpp"
#include "repmlp/ops.hpp"

using namespace repmlp;

namespace {
template <typename T>
Tensor4<T> iota_tensor(Shape4 s) {
  std::vector<T> v(s.numel());
  std::iota(v.begin(), v.end(), T(0));
  return Tensor4<T>(s, std::move(v));
}
}  // namespace

TEST_CASE("Tensor4 construction checks data length") {
  CHECK_THROWS_AS(Tensor4<float>({1, 2, 2, 2}, std::vector<float>(7)), ShapeError);
  Tensor4<double> t({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.reshaped({6, 20, 1, 1}).vec() == t.vec());
  CHECK_THROWS_AS(t.reshaped({6, 21, 1, 1}), ShapeError);
}

TEST_CASE("conv2d: all-ones 3x3 on a 3x3 map") {
  Tensor4<float> x = Tensor4<float>::filled({1, 1, 3, 3}, 1.0f);
  auto spec = ConvSpec<float>::same(Tensor4<float>::filled({1, 1, 3, 3}, 1.0f), 1);
  Tensor4<float> y = conv2d(x, spec);
  const std::vector<float> expected{4, 6, 4, 6, 9, 6, 4, 6, 4};
  CHECK(y.vec() == expected);
  CHECK(oracle::dense_conv(x, spec.kernel, 1, 1).vec() == expected);
}

TEST_CASE("conv2d: per-channel identity 1x1 kernel with g = C") {
  std::mt19937_64 rng(7);
  Tensor4<double> x = random_tensor<double>({2, 4, 5, 3}, rng);
  auto spec = ConvSpec<double>::same(Tensor4<double>::filled({4, 1, 1, 1}, 1.0), 4);
  CHECK(conv2d(x, spec).vec() == x.vec());
}

TEST_CASE("conv2d: grouped equals group-split dense convs") {
  std::mt19937_64 rng(11);
  SUBCASE("2x4x6x6, g=2, K=3") {
    Tensor4<double> x = random_tensor<double>({2, 4, 6, 6}, rng);
    auto spec = ConvSpec<double>::same(random_tensor<double>({6, 2, 3, 3}, rng), 2);
    CHECK(max_abs_diff(conv2d(x, spec), oracle::group_split_conv(x, spec)) < 1e-12);
  }
  SUBCASE("random shapes, float, relative 1e-5") {
    for (int trial = 0; trial < 20; ++trial) {
      const int64_t g = std::vector<int64_t>{1, 2, 4}[trial % 3];
      const int64_t k = 2 * (trial % 3) + 1;
      Tensor4<float> x = random_tensor<float>({2, 2 * g, 5 + trial % 3, 6}, rng);
      auto spec = ConvSpec<float>::same(random_tensor<float>({3 * g, 2, k, k}, rng), g);
      spec.bias = std::vector<float>(3 * g, 0.25f);
      CHECK(max_abs_diff(conv2d(x, spec), oracle::group_split_conv(x, spec)) < 1e-5);
    }
  }
}

TEST_CASE("conv2d: errors") {
  auto spec = ConvSpec<float>::same(Tensor4<float>({4, 2, 3, 3}), 2);
  CHECK_THROWS_AS(conv2d(Tensor4<float>({1, 3, 4, 4}), spec), ShapeError);  // not divisible
  CHECK_THROWS_AS(conv2d(Tensor4<float>({1, 2, 4, 4}), spec), ShapeError);  // 2 != 4 channels
  ConvSpec<float> big;
  big.kernel = Tensor4<float>({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(Tensor4<float>({1, 1, 2, 2}), big), ShapeError);  // no padding
}

TEST_CASE("conv2d is linear in input and kernel") {
  std::mt19937_64 rng(3);
  Tensor4<double> x = random_tensor<double>({1, 4, 7, 7}, rng);
  Tensor4<double> z = random_tensor<double>({1, 4, 7, 7}, rng);
  auto f1 = ConvSpec<double>::same(random_tensor<double>({4, 2, 5, 5}, rng), 2);
  auto f2 = ConvSpec<double>::same(random_tensor<double>({4, 2, 5, 5}, rng), 2);
  const double a = 0.7, b = -1.3;
  Tensor4<double> mix(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) mix.data()[i] = a * x.data()[i] + b * z.data()[i];
  Tensor4<double> lhs = conv2d(mix, f1);
  Tensor4<double> cx = conv2d(x, f1), cz = conv2d(z, f1);
  Tensor4<double> rhs(lhs.shape());
  for (int64_t i = 0; i < lhs.numel(); ++i) rhs.data()[i] = a * cx.data()[i] + b * cz.data()[i];
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);

  auto fmix = f1;
  for (int64_t i = 0; i < fmix.kernel.numel(); ++i)
    fmix.kernel.data()[i] = a * f1.kernel.data()[i] + b * f2.kernel.data()[i];
  Tensor4<double> k1 = conv2d(x, f1), k2 = conv2d(x, f2), km = conv2d(x, fmix);
  for (int64_t i = 0; i < km.numel(); ++i) rhs.data()[i] = a * k1.data()[i] + b * k2.data()[i];
  CHECK(max_abs_diff(km, rhs) < 1e-12);
}

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
  std::mt19937_64 rng(5);
  kernels::set_max_threads(4);
  for (int trial = 0; trial < 6; ++trial) {
    Tensor4<float> x = random_tensor<float>({3 + trial, 4, 6, 5}, rng);
    auto spec = ConvSpec<float>::same(random_tensor<float>({8, 2, 3, 3}, rng), 2);
    spec.bias = std::vector<float>(8, 0.1f);
    CHECK(conv2d(x, spec, Exec::parallel).vec() == conv2d(x, spec, Exec::serial).vec());

    auto fc = random_fc<float>(120, 60, 4, true, rng);
    CHECK(grouped_fc(x, fc, Exec::parallel).vec() == grouped_fc(x, fc, Exec::serial).vec());
  }
  kernels::set_max_threads(0);
}

TEST_CASE("grouped_fc") {
  SUBCASE("identity kernel, g=1") {
    FcSpec<float> fc = FcSpec<float>::zeros(5, 5, 1, false);
    for (int i = 0; i < 5; ++i) fc.weight(i, i) = 1.0f;
    std::mt19937_64 rng(1);
    Tensor4<float> x = random_tensor<float>({3, 5, 1, 1}, rng);
    CHECK(grouped_fc(x, fc).vec() == x.vec());
  }
  SUBCASE("block-diagonal worked example") {
    FcSpec<float> fc = FcSpec<float>::zeros(4, 2, 2, false);
    fc.kernel = {1, 2, 3, 4};
    Tensor4<float> x = Tensor4<float>::filled({1, 4, 1, 1}, 1.0f);
    CHECK(grouped_fc(x, fc).vec() == std::vector<float>{3, 7});
  }
  SUBCASE("matches explicit block-diagonal matrix") {
    std::mt19937_64 rng(2);
    for (int64_t g : {1, 2, 3, 6}) {
      auto fc = random_fc<double>(12, 18, g, true, rng);
      Tensor4<double> x = random_tensor<double>({4, 3, 2, 2}, rng);
      auto expect = oracle::dense_apply(oracle::block_diagonal(fc), x.vec(), 4, &*fc.bias);
      Tensor4<double> y = grouped_fc(x, fc);
      for (size_t i = 0; i < expect.size(); ++i) CHECK(y.vec()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
  SUBCASE("g=1 equals the dense product to machine precision") {
    std::mt19937_64 rng(9);
    auto fc = random_fc<double>(16, 8, 1, false, rng);
    Tensor4<double> x = random_tensor<double>({3, 16, 1, 1}, rng);
    Tensor4<double> y = grouped_fc(x, fc);
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t q = 0; q < 8; ++q) {
        double acc = 0;
        for (int64_t p = 0; p < 16; ++p) acc += x.vec()[n * 16 + p] * fc.weight(q, p);
        CHECK(std::abs(y.vec()[n * 8 + q] - acc) < 1e-14);
      }
  }
  SUBCASE("errors") {
    FcSpec<float> bad = FcSpec<float>::zeros(4, 4, 1, false);
    bad.groups = 3;
    CHECK_THROWS_AS(grouped_fc(Tensor4<float>({1, 4, 1, 1}), bad), ShapeError);
    CHECK_THROWS_AS(grouped_fc(Tensor4<float>({1, 5, 1, 1}), FcSpec<float>::zeros(4, 4, 1, false)),
                    ShapeError);
  }
}

TEST_CASE("batchnorm_inference") {
  const float eps = 1e-5f;
  SUBCASE("identity") {
    std::mt19937_64 rng(4);
    Tensor4<double> x = random_tensor<double>({2, 3, 4, 4}, rng);
    CHECK(max_abs_diff(batchnorm_inference(x, BnParams<double>::identity(3)), x) < 1e-15);
  }
  SUBCASE("scalar worked example") {
    BnParams<float> bn{{1.0f}, {4.0f - eps}, {2.0f}, {3.0f}, eps};
    Tensor4<float> y = batchnorm_inference(Tensor4<float>::filled({1, 1, 1, 1}, 5.0f), bn);
    CHECK(y.vec()[0] == doctest::Approx(7.0f).epsilon(1e-6));
    CHECK(oracle::bn_scalar(5.0f, 1.0f, 4.0f - eps, 2.0f, 3.0f, eps) == doctest::Approx(7.0f));
  }
  SUBCASE("gamma zero gives constant beta") {
    BnParams<float> bn{{0.3f, -0.2f}, {1.0f, 2.0f}, {0.0f, 0.0f}, {1.5f, -0.5f}, eps};
    std::mt19937_64 rng(8);
    Tensor4<float> y = batchnorm_inference(random_tensor<float>({2, 2, 3, 3}, rng), bn);
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t i = 0; i < 9; ++i) {
        CHECK(y.vec()[(n * 2 + 0) * 9 + i] == 1.5f);
        CHECK(y.vec()[(n * 2 + 1) * 9 + i] == -0.5f);
      }
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(batchnorm_inference(Tensor4<float>({1, 3, 2, 2}), BnParams<float>::identity(2)),
                    ShapeError);
  }
}

TEST_CASE("avg_pool_global") {
  CHECK(avg_pool_global(Tensor4<double>::filled({2, 3, 4, 5}, 1.25)).vec() ==
        std::vector<double>(6, 1.25));
  Tensor4<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(avg_pool_global(x).vec()[0] == 2.5f);
  std::mt19937_64 rng(6);
  Tensor4<float> p = random_tensor<float>({3, 4, 1, 1}, rng);
  CHECK(avg_pool_global(p).vec() == p.vec());
  CHECK_THROWS_AS(avg_pool_global(Tensor4<float>({1, 1, 0, 3})), ShapeError);
}

TEST_CASE("partition / inverse_partition") {
  SUBCASE("whole map is one partition") {
    std::mt19937_64 rng(12);
    Tensor4<float> x = random_tensor<float>({2, 3, 4, 6}, rng);
    Tensor4<float> p = partition(x, 4, 6);
    CHECK(p.shape() == x.shape());
    CHECK(p.vec() == x.vec());
  }
  SUBCASE("0..15 in 2x2 tiles") {
    Tensor4<float> x = iota_tensor<float>({1, 1, 4, 4});
    Tensor4<float> p = partition(x, 2, 2);
    CHECK(p.shape() == Shape4{4, 1, 2, 2});
    CHECK(p.vec() == std::vector<float>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15});
    CHECK(inverse_partition(p, 1, 4, 4).vec() == x.vec());
  }
  SUBCASE("matches index-formula oracle and is a bijection") {
    for (auto [n, c, h, w, ph, pw] : std::vector<std::array<int64_t, 6>>{
             {1, 1, 6, 6, 2, 3}, {2, 3, 12, 8, 4, 4}, {3, 2, 9, 14, 3, 7}, {1, 5, 7, 7, 7, 7}}) {
      Tensor4<double> x = iota_tensor<double>({n, c, h, w});
      Tensor4<double> p = partition(x, ph, pw);
      CHECK(p.vec() == oracle::partition_by_index(x, ph, pw).vec());
      std::vector<double> sorted = p.vec();
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == x.vec());
      CHECK(inverse_partition(p, n, h, w).vec() == x.vec());
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(partition(Tensor4<float>({1, 1, 5, 4}), 2, 2), ShapeError);
    CHECK_THROWS_AS(inverse_partition(Tensor4<float>({3, 1, 2, 2}), 1, 4, 4), ShapeError);
    CHECK_THROWS_AS(inverse_partition(Tensor4<float>({4, 1, 2, 2}), 1, 5, 4), ShapeError);
  }
}

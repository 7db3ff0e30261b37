#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ssd/numerics.hpp"

using namespace ssd;

TEST_CASE("softplus matches log1p(exp) and passes large inputs through") {
  CHECK(softplus(-1.5) == doctest::Approx(std::log1p(std::exp(-1.5))).epsilon(1e-15));
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(25.0) == 25.0);
  CHECK(softplus(20.0f) == doctest::Approx(20.0f));
}

TEST_CASE("silu") {
  CHECK(silu(-1.0) == doctest::Approx(-0.2689414213699951).epsilon(1e-14));
  CHECK(silu(0.0) == 0.0);
}

namespace {
// Independent oracle: snap the significand to 8 bits via frexp/nearbyint
// (default rounding mode is to-nearest-even).
float bf16_oracle(float x) {
  int e = 0;
  const double m = std::frexp(static_cast<double>(x), &e);  // m in [0.5, 1)
  const double q = std::nearbyint(std::ldexp(m, 8));
  return static_cast<float>(std::ldexp(q, e - 8));
}
}  // namespace

TEST_CASE("bf16_round: ties go to even") {
  CHECK(bf16_round(1.00390625f) == 1.0f);       // halfway, even below
  CHECK(bf16_round(1.01171875f) == 1.015625f);  // halfway, even above
  CHECK(bf16_round(1.0f) == 1.0f);
  CHECK(std::isnan(bf16_round(std::nanf(""))));
  CHECK(std::isinf(bf16_round(INFINITY)));
}

TEST_CASE("bf16_round agrees with the frexp oracle and is idempotent") {
  CounterRng rng(7);
  for (int i = 0; i < 20000; ++i) {
    const float x = static_cast<float>(rng.normal(0.0, 1.0) * std::exp(rng.uniform(-20.0, 20.0)));
    const float r = bf16_round(x);
    CHECK(r == bf16_oracle(x));
    CHECK(bf16_round(r) == r);
  }
}

TEST_CASE("cumsum_last and segsum against brute force") {
  const Tensor<double> x = test::randn<double>({3, 7}, 1);
  const Tensor<double> cs = cumsum_last(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double acc = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      acc += x(r, i);
      CHECK(cs(r, i) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  for (MaskStrategy m : {MaskStrategy::Static, MaskStrategy::Rowwise}) {
    const Tensor<double> s = segsum(x, m);
    REQUIRE(s.shape() == Shape{3, 7, 7});
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 7; ++j) {
          if (j > i) {
            CHECK(s(r, i, j) == -INFINITY);
            continue;
          }
          double acc = 0;
          for (std::size_t k = j + 1; k <= i; ++k) acc += x(r, k);
          CHECK(s(r, i, j) == doctest::Approx(acc).epsilon(1e-12).scale(1.0));
        }
  }
}

TEST_CASE("segsum diagonal is exactly zero") {
  const Tensor<float> s = segsum(test::randn<float>({5}, 3));
  for (std::size_t i = 0; i < 5; ++i) CHECK(s(i, i) == 0.0f);
}

TEST_CASE("tril masks are bitwise identical") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor<float> m = test::randn<float>({2, 9, 9}, seed);
    CHECK(tril_mask_static(m, -INFINITY).bitwise_equal(tril_mask_rowwise(m, -INFINITY)));
  }
}

TEST_CASE("depthwise conv against a loop oracle") {
  const std::size_t B = 2, T = 6, C = 3, k = 4;
  const Tensor<double> x = test::randn<double>({B, T, C}, 11);
  const Tensor<double> w = test::randn<double>({C, k}, 12);
  const Tensor<double> bias = test::randn<double>({C}, 13);
  const Tensor<double> y = depthwise_causal_conv(x, w, bias);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = bias[c];
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(t) - static_cast<long>(k - 1) + static_cast<long>(j);
          if (src >= 0) acc += w(c, j) * x(b, static_cast<std::size_t>(src), c);
        }
        CHECK(y(b, t, c) == doctest::Approx(acc / (1 + std::exp(-acc))).epsilon(1e-14));
      }
}

TEST_CASE("depthwise conv is causal") {
  Tensor<double> x = test::randn<double>({1, 8, 2}, 21);
  const Tensor<double> w = test::randn<double>({2, 3}, 22);
  const Tensor<double> bias({2});
  const Tensor<double> before = depthwise_causal_conv(x, w, bias);
  x(0, 5, 0) += 10.0;
  const Tensor<double> after = depthwise_causal_conv(x, w, bias);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 2; ++c) CHECK(before(0, t, c) == after(0, t, c));
  CHECK(before(0, 5, 0) != after(0, 5, 0));
}

TEST_CASE("rmsnorm and gated rmsnorm against f64 oracle") {
  const Tensor<double> y = test::randn<double>({4, 10}, 31);
  const Tensor<double> z = test::randn<double>({4, 10}, 32);
  const Tensor<double> w = test::randn<double>({10}, 33);
  const double eps = 1e-5;
  const Tensor<double> plain = rmsnorm(y, w, eps);
  const Tensor<double> gated = rmsnorm_gated(y, z, w, eps);
  for (std::size_t r = 0; r < 4; ++r) {
    double ss = 0, ssg = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      ss += y(r, i) * y(r, i);
      const double u = y(r, i) * silu(z(r, i));
      ssg += u * u;
    }
    const double inv = 1.0 / std::sqrt(ss / 10 + eps), invg = 1.0 / std::sqrt(ssg / 10 + eps);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(plain(r, i) == doctest::Approx(y(r, i) * inv * w[i]).epsilon(1e-13));
      CHECK(gated(r, i) == doctest::Approx(y(r, i) * silu(z(r, i)) * invg * w[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("linear against a triple loop") {
  const Tensor<double> x = test::randn<double>({2, 3, 5}, 41);
  const Tensor<double> w = test::randn<double>({5, 4}, 42);
  const Tensor<double> y = linear(x, w);
  REQUIRE(y.shape() == Shape{2, 3, 4});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t n = 0; n < 4; ++n) {
      double acc = 0;
      for (std::size_t k = 0; k < 5; ++k) acc += x[r * 5 + k] * w(k, n);
      CHECK(y[r * 4 + n] == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK_THROWS_AS(linear(x, Tensor<double>({4, 4})), ShapeError);
}

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.nbytes() == 24);
  t(1, 2) = 4.0f;
  CHECK(t[5] == 4.0f);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK(t.cast<double>().cast<float>().bitwise_equal(t));
}

TEST_CASE("element policy") {
  ElemPolicy p;
  CHECK(residual_accumulator(p) == ElemType::F32);
  p.compute = ElemType::F64;
  CHECK(residual_accumulator(p) == ElemType::F64);
}

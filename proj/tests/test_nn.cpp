/* Copyright 2026 The vitreg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vitreg/nn.hpp"

using namespace vitreg;
using Td = Tensor<double>;

TEST_CASE("conv3d identity kernel") {
  std::mt19937_64 rng(1);
  Td x = oracle::random_tensor({1, 1, 4, 4, 4}, rng);
  ConvKernel<double> k{Td(Shape{1, 1, 1, 1, 1}, {1.0}), Td(Shape{1}, {0.0})};
  CHECK(oracle::bit_equal(conv3d(x, k).data(), x.data()));
}

TEST_CASE("conv3d all-ones kernel counts neighbours") {
  ConvKernel<double> k{Td::full({1, 1, 3, 3, 3}, 1.0), Td::zeros({1})};
  k.padding = {1, 1, 1};
  auto y = conv3d(Td::full({1, 1, 5, 5, 5}, 1.0), k);
  REQUIRE(y.shape() == Shape{1, 1, 5, 5, 5});
  CHECK(y.data()[(2 * 5 + 2) * 5 + 2] == 27.0);
  CHECK(y.data()[0] == 8.0);
}

TEST_CASE("conv3d equals the naive loop oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Td x = oracle::random_tensor({1, 2, 5, 5, 5}, rng);
    ConvKernel<double> k{oracle::random_tensor({3, 2, 3, 3, 3}, rng), oracle::random_tensor({3}, rng)};
    CHECK(oracle::bit_equal(conv3d(x, k).data(), oracle::conv3d(x, k.weight, &k.bias, k.stride, k.padding)));
    k.padding = {1, 1, 1};
    k.stride = {2, 2, 2};
    CHECK(oracle::bit_equal(conv3d(x, k).data(), oracle::conv3d(x, k.weight, &k.bias, k.stride, k.padding)));
  }
}

TEST_CASE("conv3d errors") {
  ConvKernel<double> k{Td::zeros({1, 2, 3, 3, 3}), Td::zeros({1})};
  CHECK_THROWS_AS(conv3d(Td::zeros({1, 1, 4, 4, 4}), k), ShapeError);
  k.weight = Td::zeros({1, 1, 3, 3, 3});
  k.stride = {2, 2, 2};
  CHECK_THROWS_AS(conv3d(Td::zeros({1, 1, 4, 4, 4}), k), ShapeError);
}

TEST_CASE("maxpool3d fixtures") {
  auto c = maxpool3d(Td::full({1, 1, 4, 4, 4}, 2.5));
  CHECK(c.pooled.shape() == Shape{1, 1, 2, 2, 2});
  for (double v : c.pooled.data()) CHECK(v == 2.5);

  Td peak = Td::zeros({1, 1, 4, 4, 4});
  peak.mutable_data()[(1 * 4 + 2) * 4 + 3] = 9.0;
  auto p = maxpool3d(peak);
  int nines = 0;
  for (double v : p.pooled.data()) nines += v == 9.0;
  CHECK(nines == 1);
  CHECK_THROWS_AS(maxpool3d(Td::zeros({1, 1, 5, 4, 4})), ShapeError);
}

TEST_CASE("maxpool3d equals the windowed max oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Td x = oracle::random_tensor({1, 2, 8, 8, 8}, rng);
    CHECK(oracle::bit_equal(maxpool3d(x).pooled.data(), oracle::maxpool2(x)));
  }
}

TEST_CASE("upsample_trilinear constant and ramp") {
  auto c = upsample_trilinear(Td::full({1, 2, 2, 3, 2}, 1.75));
  CHECK(c.shape() == Shape{1, 2, 4, 6, 4});
  for (double v : c.data()) CHECK(v == 1.75);

  const std::size_t n = 4;
  std::vector<double> ramp(2 * 2 * n);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = double(i % n);
  auto u = upsample_trilinear(Td(Shape{1, 1, 2, 2, n}, ramp));
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double src = std::clamp((double(o) + 0.5) / 2.0 - 0.5, 0.0, double(n - 1));
    CHECK(u.data()[o] == doctest::Approx(src).epsilon(1e-15));
  }
}

TEST_CASE("upsample then average-downsample of a constant is the identity") {
  Td x = Td::full({1, 1, 2, 2, 2}, 0.3);
  auto up = upsample_trilinear(x, 3);
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t w = 0; w < 2; ++w) {
        double acc = 0.0;
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 3; ++c) acc += up.data()[((3 * z + a) * 6 + 3 * y + b) * 6 + 3 * w + c];
        CHECK(acc / 27.0 == doctest::Approx(0.3).epsilon(1e-15));
      }
  CHECK_THROWS(upsample_trilinear(x, 1));
}

TEST_CASE("linear identity, bias-only and matmul oracle") {
  std::mt19937_64 rng(2);
  Td x = oracle::random_tensor({2, 3, 4}, rng);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  CHECK(oracle::bit_equal(linear(x, Td(Shape{4, 4}, eye), Td::zeros({4})).data(), x.data()));

  Td b = oracle::random_tensor({5}, rng);
  auto rows = linear(x, Td::zeros({4, 5}), b);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 5; ++j) CHECK(rows.data()[r * 5 + j] == b.data()[j]);

  Td w = oracle::random_tensor({4, 5}, rng);
  auto y = linear(x, w, b);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += x.data()[r * 4 + k] * w.data()[k * 5 + j];
      CHECK(y.data()[r * 5 + j] == doctest::Approx(acc + b.data()[j]).epsilon(1e-14));
    }
  CHECK_THROWS_AS(linear(x, Td::zeros({3, 5}), b), ShapeError);
}

LayerNormParams<double> unit_ln(std::size_t d) { return {Td::full({d}, 1.0), Td::zeros({d})}; }

TEST_CASE("layer_norm fixtures") {
  auto z = layer_norm(Td::full({1, 6}, 4.2), unit_ln(6));
  for (double v : z.data()) CHECK(std::abs(v) < 1e-12);

  std::mt19937_64 rng(3);
  Td x = oracle::random_tensor({5, 16}, rng, -3, 3);
  auto y = layer_norm(x, unit_ln(16));
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 16; ++i) m += y.data()[r * 16 + i] / 16.0;
    for (std::size_t i = 0; i < 16; ++i) v += (y.data()[r * 16 + i] - m) * (y.data()[r * 16 + i] - m) / 16.0;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
  CHECK_THROWS_AS(layer_norm(x, unit_ln(8)), ShapeError);
}

TEST_CASE("layer_norm equals the two-pass oracle") {
  std::mt19937_64 rng(4);
  const std::size_t d = 8;
  Td x = oracle::random_tensor({1, d}, rng, -2, 2);
  LayerNormParams<double> p{oracle::random_tensor({d}, rng), oracle::random_tensor({d}, rng)};
  auto y = layer_norm(x, p);
  double m = 0.0, v = 0.0;
  for (double e : x.data()) m += e;
  m /= d;
  for (double e : x.data()) v += (e - m) * (e - m);
  v /= d;
  for (std::size_t i = 0; i < d; ++i) {
    const double ref = (x.data()[i] - m) / std::sqrt(v + p.epsilon) * p.gamma.data()[i] + p.beta.data()[i];
    CHECK(y.data()[i] == doctest::Approx(ref).epsilon(1e-13));
  }
  auto r = grad_check([&](const Td& t) { return sum(layer_norm(t, p)); }, x);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("softmax fixtures") {
  auto u = softmax(Td::full({1, 4}, 3.0));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  std::mt19937_64 rng(5);
  Td x = oracle::random_tensor({3, 7}, rng, -5, 5);
  Td shifted = add(x, Td::full({3, 7}, 123.0));
  auto a = softmax(x), b = softmax(shifted);
  for (std::size_t i = 0; i < 21; ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-6);

  auto big = softmax(Td(Shape{1, 2}, {1000.0, 0.0}));
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] == doctest::Approx(0.0));

  Td huge = oracle::random_tensor({10, 9}, rng, -1e4, 1e4);
  auto h = softmax(huge);
  for (std::size_t r = 0; r < 10; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(h.data()[r * 9 + i] >= 0.0);
      s += h.data()[r * 9 + i];
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout semantics") {
  std::mt19937_64 rng(6);
  Td x = oracle::random_tensor({100}, rng);
  CHECK(oracle::bit_equal(dropout(x, 0.0, true, rng).data(), x.data()));
  CHECK(oracle::bit_equal(dropout(x, 0.5, false, rng).data(), x.data()));
  CHECK_THROWS(dropout(x, 1.0, true, rng));
  CHECK_THROWS(dropout(x, -0.1, true, rng));

  const std::size_t n = 100000;
  const double rate = 0.1;
  auto y = dropout(Td::full({n}, 1.0), rate, true, rng);
  double m = 0.0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / (1.0 - rate))));
    m += v;
  }
  m /= double(n);
  const double se = std::sqrt(rate / (1.0 - rate) / double(n));
  CHECK(std::abs(m - 1.0) < 3.0 * se);
}

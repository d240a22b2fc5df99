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
#include "vitreg/tensor.hpp"

using namespace vitreg;
using Td = Tensor<double>;

TEST_CASE("construction validates shape against buffer") {
  CHECK_THROWS_AS(Td(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(Td(Shape{2, 0}, std::vector<double>{}), ShapeError);
  Td t(Shape{2, 3}, std::vector<double>(6, 1.0));
  CHECK(t.numel() == 6);
  CHECK(numel(t.shape()) == t.data().size());
}

TEST_CASE("add of two vectors") {
  Td a(Shape{2}, {1, 2}), b(Shape{2}, {3, 4});
  auto c = add(a, b);
  CHECK(c.data()[0] == 4);
  CHECK(c.data()[1] == 6);
  CHECK_FALSE(c.requires_grad());
}

TEST_CASE("binary ops reject shape mismatch and name both shapes") {
  Td a = Td::zeros({2, 3}), b = Td::zeros({3, 2});
  try {
    (void)mul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("mul by zeros annihilates value and gradient") {
  std::mt19937_64 rng(1);
  Td x = oracle::random_tensor({5}, rng, -1, 1, true);
  Td z = Td::zeros({5});
  auto y = mul(x, z);
  for (double v : y.data()) CHECK(v == 0.0);
  backward(sum(y));
  for (double g : x.grad()) CHECK(g == 0.0);
  CHECK_FALSE(z.has_grad());
}

TEST_CASE("gelu matches the exact erf formula") {
  std::mt19937_64 rng(7);
  Td x = oracle::random_tensor({10}, rng, -4, 4);
  auto y = gelu(x);
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(y.data()[i] - oracle::gelu(x.data()[i])) < 1e-6);
}

TEST_CASE("remaining elementwise ops") {
  Td a(Shape{4}, {-2, -0.5, 0.5, 3});
  auto r = relu(a);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[3] == 3.0);
  CHECK(square(a).data()[0] == 4.0);
  CHECK(scale(a, 2.0).data()[1] == -1.0);
  CHECK(sub(a, a).data()[2] == 0.0);
}

TEST_CASE("matmul identity and triple loop oracle") {
  std::mt19937_64 rng(3);
  Td a = oracle::random_tensor({4, 4}, rng);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  CHECK(oracle::bit_equal(matmul(a, Td(Shape{4, 4}, eye)).data(), a.data()));

  Td p = oracle::random_tensor({3, 2}, rng), q = oracle::random_tensor({2, 3}, rng);
  auto c = matmul(p, q);
  REQUIRE(c.shape() == Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 2; ++k) acc += p.data()[i * 2 + k] * q.data()[k * 3 + j];
      CHECK(c.data()[i * 3 + j] == acc);
    }
  CHECK_THROWS_AS(matmul(p, p), ShapeError);
}

TEST_CASE("gradient of sum(A B) w.r.t. A is the broadcast row sums of B") {
  std::mt19937_64 rng(4);
  Td a = oracle::random_tensor({3, 4}, rng, -1, 1, true), b = oracle::random_tensor({4, 5}, rng);
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double rs = 0.0;
      for (std::size_t j = 0; j < 5; ++j) rs += b.data()[k * 5 + j];
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(rs).epsilon(1e-12));
    }
  auto r = grad_check([&](const Td& x) { return sum(matmul(x, b)); }, a.detach());
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("reductions") {
  CHECK(sum(Td::full({2, 3}, 1.0)).item() == 6.0);
  CHECK(mean(Td::full({4, 5}, 2.5)).item() == doctest::Approx(2.5));
  auto rows = reduce(ReduceOp::sum, Td(Shape{2, 3}, {1, 2, 3, 4, 5, 6}), {1});
  CHECK(rows.shape() == Shape{2});
  CHECK(rows.data()[1] == 15.0);
  auto kept = reduce(ReduceOp::sum, Td(Shape{2, 3}, {1, 2, 3, 4, 5, 6}), {1}, true);
  CHECK(kept.shape() == Shape{2, 1});
  CHECK_THROWS(reduce(ReduceOp::sum, Td::zeros({2, 3}), {2}));
}

TEST_CASE("max backward routes to the lowest arg-max index") {
  Td x(Shape{5}, {1, 7, 3, 7, 2}, true);
  backward(reduce(ReduceOp::max, x));
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[3] == 0.0);
  std::mt19937_64 rng(5);
  Td y = oracle::random_tensor({6}, rng);
  auto r = grad_check([](const Td& t) { return reduce(ReduceOp::max, t); }, y);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("mean backward distributes one over count") {
  Td x = Td::zeros({2, 4}, true);
  backward(mean(x));
  for (double g : x.grad()) CHECK(g == 0.125);
}

TEST_CASE("backward on trivial losses") {
  Td x = Td::scalar(3.0, true);
  backward(x);
  CHECK(x.grad()[0] == 1.0);

  std::mt19937_64 rng(6);
  Td a = oracle::random_tensor({4}, rng, -1, 1, true), b = oracle::random_tensor({4}, rng, -1, 1, true);
  backward(sum(mul(a, b)));
  CHECK(oracle::bit_equal(a.grad(), b.data()));
  CHECK(oracle::bit_equal(b.grad(), a.data()));
}

TEST_CASE("backward rejects non-scalar losses") {
  Td x = Td::zeros({3}, true);
  CHECK_THROWS(backward(scale(x, 2.0)));
}

TEST_CASE("fan-out accumulates gradients") {
  Td x(Shape{2}, {1.5, -2}, true);
  backward(sum(add(mul(x, x), x)));
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == -3.0);
}

TEST_CASE("tensors without requires_grad never receive a gradient") {
  Td c(Shape{2}, {1, 2});
  Td x(Shape{2}, {3, 4}, true);
  backward(sum(mul(c, x)));
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("grad_check reference cases") {
  std::mt19937_64 rng(8);
  Td x = oracle::random_tensor({7}, rng);
  CHECK(grad_check([](const Td& t) { return sum(square(t)); }, x).max_rel_error < 1e-9);
  CHECK_THROWS(grad_check([](const Td& t) { return square(t); }, x));
  CHECK(grad_rel_error(0.0, 0.0) == 0.0);
}

TEST_CASE("grad_check smoothness guard skips kinks but not wrong gradients") {
  Td x(Shape{3}, {2e-6, 0.5, -0.7}, false);
  auto f = [](const Td& t) { return sum(relu(t)); };
  GradCheckOptions o;
  o.eps = 1e-5;
  const auto plain = grad_check(f, x, o);
  CHECK(plain.max_rel_error > 0.1);
  CHECK(plain.worst_index == 0);
  o.smoothness_tolerance = 1e-6;
  const auto guarded = grad_check(f, x, o);
  CHECK(guarded.skipped == 1);
  CHECK(guarded.checked == 2);
  CHECK(guarded.max_rel_error < 1e-9);

  auto wrong = [](const Td& t) { return sum(mul(t, t.detach())); };
  const auto w = grad_check(wrong, Td(Shape{2}, {0.3, -0.8}, false), o);
  CHECK(w.skipped == 0);
  CHECK(w.max_rel_error > 0.3);
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(9);
  Td x0 = oracle::random_tensor({6}, rng);
  auto f = [](const Td& t) { return sum(gelu(t)); };
  auto g = [](const Td& t) { return reduce(ReduceOp::mean, square(t)); };
  auto grad_of = [&](auto&& loss) {
    Td x = x0.detach(true);
    backward(loss(x));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const double a = 0.7, b = -1.3;
  auto gf = grad_of(f), gg = grad_of(g);
  auto gc = grad_of([&](const Td& t) { return add(scale(f(t), a), scale(g(t), b)); });
  for (std::size_t i = 0; i < 6; ++i) CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("reshape, permute, concat and expand round trip") {
  std::mt19937_64 rng(10);
  Td x = oracle::random_tensor({2, 3, 4}, rng);
  auto p = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  CHECK(oracle::bit_equal(p.data(), x.data()));
  CHECK(reshape(x, {6, 4}).shape() == Shape{6, 4});
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
  auto c = concat<double>({x, x}, 1);
  CHECK(c.shape() == Shape{2, 6, 4});
  Td row(Shape{4}, {1, 2, 3, 4}, true);
  auto e = expand(row, {3, 4});
  CHECK(e.data()[9] == 2.0);
  backward(sum(e));
  CHECK(row.grad()[0] == 3.0);
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(11);
    Td a = oracle::random_tensor({8, 8}, rng, -1, 1, true), b = oracle::random_tensor({8, 8}, rng);
    auto y = sum(gelu(matmul(a, b)));
    backward(y);
    return std::make_pair(y.item(), std::vector<double>(a.grad().begin(), a.grad().end()));
  };
  auto r1 = run(), r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

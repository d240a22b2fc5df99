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

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "vitreg/losses.hpp"
#include "vitreg/metrics.hpp"
#include "vitreg/phantom.hpp"
#include "vitreg/rng.hpp"
#include "vitreg/spatial.hpp"

using namespace vitreg;

namespace {

double max_norm(const Tensor<float>& u) {
  const std::size_t vox = u.numel() / 3;
  double m = 0.0;
  for (std::size_t i = 0; i < vox; ++i) {
    const double a = u.data()[i], b = u.data()[vox + i], c = u.data()[2 * vox + i];
    m = std::max(m, std::sqrt(a * a + b * b + c * c));
  }
  return m;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("phantoms are seed deterministic") {
  auto r1 = make_rng(3, SeedPurpose::data, 0), r2 = make_rng(3, SeedPurpose::data, 0);
  auto a = generate_phantom(r1, {16, 20, 24}), b = generate_phantom(r2, {16, 20, 24});
  CHECK(same_bits(a.image, b.image));
  CHECK(a.labels == b.labels);
  CHECK(a.image.shape() == Shape{16, 20, 24});
}

TEST_CASE("phantom structures and intensity range over seeds 0..9") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto rng = make_rng(seed, SeedPurpose::data, 0);
    auto p = generate_phantom(rng, {32, 32, 32});
    const auto [lo, hi] = std::minmax_element(p.image.data().begin(), p.image.data().end());
    CHECK(*lo >= 0.0f);
    CHECK(*hi <= 1.0f);
    std::size_t counts[6] = {};
    for (auto l : p.labels.labels) {
      REQUIRE(l < 6);
      ++counts[l];
    }
    int present = 0;
    for (int l = 1; l <= 5; ++l) present += double(counts[l]) >= 0.01 * 32768.0;
    CHECK(present >= 4);
  }
}

TEST_CASE("smooth field scaling and validity") {
  auto rng = make_rng(0, SeedPurpose::data, 1);
  auto zero = generate_smooth_field(rng, {16, 16, 16}, 0.0, 8);
  CHECK(max_norm(zero) == 0.0);
  for (double amp : {0.5, 2.0, 3.0}) {
    auto u = generate_smooth_field(rng, {16, 24, 32}, amp, 8);
    CHECK(u.shape() == Shape{3, 16, 24, 32});
    CHECK(std::abs(max_norm(u) - amp) < 1e-5);
  }
  CHECK_THROWS(generate_smooth_field(rng, {16, 16, 16}, -1.0, 8));
  CHECK_THROWS(generate_smooth_field(rng, {16, 16, 16}, 1.0, 1));
  CHECK_THROWS(generate_smooth_field(rng, {16, 16, 12}, 1.0, 8));
}

TEST_CASE("amplitude-2 fields never fold on 32^3") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto rng = make_rng(seed, SeedPurpose::data, 0);
    auto u = generate_smooth_field(rng, {32, 32, 32}, 2.0, 8);
    CHECK(jacobian_folding(u).folded_fraction == 0.0);
  }
}

TEST_CASE("registration pairs") {
  auto rng = make_rng(0, SeedPurpose::data, 2);
  auto p = generate_phantom(rng, {16, 16, 16});
  auto id = make_pair(p.image, p.labels, Tensor<float>::zeros({3, 16, 16, 16}));
  CHECK(same_bits(id.moving, id.fixed));
  CHECK(id.moving_labels == id.fixed_labels);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto r = make_rng(seed, SeedPurpose::data, 0);
    auto ph = generate_phantom(r, {32, 32, 32});
    auto pair = make_pair(ph.image, ph.labels, generate_smooth_field(r, {32, 32, 32}, 1.0, 8));
    CHECK(same_bits(pair.fixed, ph.image));
    CHECK(mse_loss(pair.fixed, pair.moving).item() > 0.0f);
    double worst = 1.0;
    for (std::uint16_t l = 1; l <= 5; ++l) worst = std::min(worst, dice(pair.fixed_labels, pair.moving_labels, l).value);
    CHECK(worst < 1.0);
  }
  CHECK_THROWS(make_pair(p.image, p.labels, Tensor<float>::zeros({3, 16, 16, 8})));
}

TEST_CASE("flips are consistent involutions") {
  auto rng = make_rng(1, SeedPurpose::data, 0);
  auto ph = generate_phantom(rng, {16, 16, 16});
  auto pair = make_pair(ph.image, ph.labels, generate_smooth_field(rng, {16, 16, 16}, 2.0, 8));

  auto none = apply_flips(pair, {false, false, false});
  CHECK(same_bits(none.fixed, pair.fixed));
  CHECK(same_bits(none.moving, pair.moving));
  CHECK(none.moving_labels == pair.moving_labels);

  for (int mask = 1; mask < 8; ++mask) {
    const FlipAxes axes{bool(mask & 1), bool(mask & 2), bool(mask & 4)};
    auto once = apply_flips(pair, axes);
    auto twice = apply_flips(once, axes);
    CHECK(same_bits(twice.fixed, pair.fixed));
    CHECK(same_bits(twice.moving, pair.moving));
    CHECK(same_bits(twice.field, pair.field));
    CHECK(twice.fixed_labels == pair.fixed_labels);
    CHECK(twice.moving_labels == pair.moving_labels);
    for (std::uint16_t l = 1; l <= 5; ++l)
      CHECK(dice(once.fixed_labels, once.moving_labels, l).value == dice(pair.fixed_labels, pair.moving_labels, l).value);
    // The flipped field still generates the flipped moving image.
    auto regen = warp(once.fixed, once.field);
    float worst = 0.0f;
    for (std::size_t i = 0; i < regen.numel(); ++i) worst = std::max(worst, std::abs(regen.data()[i] - once.moving.data()[i]));
    CHECK(worst < 1e-5f);
  }

  auto r1 = make_rng(9, SeedPurpose::augment, 0), r2 = make_rng(9, SeedPurpose::augment, 0);
  auto a = random_flip(pair, r1);
  auto b = apply_flips(pair, draw_flips(r2));
  CHECK(same_bits(a.moving, b.moving));
}

TEST_CASE("field inversion recovers the fixed image") {
  auto rng = make_rng(2, SeedPurpose::data, 0);
  auto ph = generate_phantom(rng, {32, 32, 32});
  auto g = generate_smooth_field(rng, {32, 32, 32}, 3.0, 8);
  auto pair = make_pair(ph.image, ph.labels, g);
  auto v = invert_field(g);
  const double before = mse_loss(pair.fixed, pair.moving).item();
  const double after = mse_loss(pair.fixed, warp(pair.moving, v)).item();
  CHECK(after < 0.1 * before);
  double oracle_gain = 0.0, baseline = 0.0;
  auto warped = warp_nearest(pair.moving_labels, v);
  for (std::uint16_t l = 1; l <= 5; ++l) {
    oracle_gain += dice(pair.fixed_labels, warped, l).value;
    baseline += dice(pair.fixed_labels, pair.moving_labels, l).value;
  }
  CHECK(oracle_gain > baseline);
}

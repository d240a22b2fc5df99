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

#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "vitreg/tensor.hpp"
#include "vitreg/volume.hpp"

namespace vitreg {

// Phantom labels.
inline constexpr std::uint16_t kOuterShell = 1;
inline constexpr std::uint16_t kInnerShell = 2;
inline constexpr std::uint16_t kCore = 3;
inline constexpr std::uint16_t kBlobA = 4;
inline constexpr std::uint16_t kBlobB = 5;

struct Phantom {
  Tensor<float> image;  // [D,H,W], values in [0,1]
  LabelMap labels;
};

/// Nested ellipsoidal shells with a core and two off-centre blobs, soft
/// edges and low-amplitude smooth noise.
Phantom generate_phantom(std::mt19937_64& rng, const Extents& extents);

/// White noise on a grid coarse_factor times coarser than `extents`,
/// trilinearly upsampled and scaled so that max_p |u(p)| = amplitude
/// (Euclidean norm of the displacement vector). Returns [3,D,H,W].
Tensor<float> generate_smooth_field(std::mt19937_64& rng, const Extents& extents, double amplitude,
                                    std::size_t coarse_factor);

struct RegistrationPair {
  Tensor<float> fixed;   // [D,H,W]
  Tensor<float> moving;  // fixed warped by field
  LabelMap fixed_labels;
  LabelMap moving_labels;
  Tensor<float> field;   // generating field [3,D,H,W]
};

RegistrationPair make_pair(const Tensor<float>& phantom, const LabelMap& labels, const Tensor<float>& field);

using FlipAxes = std::array<bool, 3>;

FlipAxes draw_flips(std::mt19937_64& rng);

/// Flips all four grids of the pair along the selected axes. The generating
/// field, when present, is flipped and its flipped components negated so it
/// still generates the flipped moving image.
RegistrationPair apply_flips(const RegistrationPair& pair, const FlipAxes& axes);

RegistrationPair random_flip(const RegistrationPair& pair, std::mt19937_64& rng);

/// Approximate inverse v of a displacement field g, v(p) = -g(p + v(p)),
/// by fixed-point iteration.
Tensor<float> invert_field(const Tensor<float>& g, std::size_t iterations = 30);

}  // namespace vitreg

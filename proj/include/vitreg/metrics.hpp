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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vitreg/tensor.hpp"
#include "vitreg/volume.hpp"

namespace vitreg {

struct DiceValue {
  double value = 1.0;
  bool empty = false;  // label absent from both maps; value is 1 by convention
};

/// 2|A n B| / (|A| + |B|) for the voxels carrying `label`.
DiceValue dice(const LabelMap& a, const LabelMap& b, std::uint16_t label);

struct LabelDice {
  std::string case_id;
  std::uint16_t label = 0;
  double dice = 0.0;
  bool empty = false;
};

struct DiceResult {
  std::vector<LabelDice> entries;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Per-label Dice for every nonzero label of the vocabulary.
std::vector<LabelDice> case_dice(const std::string& case_id, const LabelMap& fixed, const LabelMap& warped,
                                 std::span<const std::uint16_t> vocabulary);

/// Mean and population standard deviation over all (case, label) entries.
DiceResult summarize(std::vector<LabelDice> entries);

/// Relabels the second label of each pair to the first (left/right merge).
LabelMap merge_labels(const LabelMap& labels, std::span<const std::pair<std::uint16_t, std::uint16_t>> pairs);

struct FoldingResult {
  Extents det_extents{};     // (D-1, H-1, W-1)
  std::vector<double> det;   // |J_phi| at every interior voxel
  std::size_t folded = 0;    // voxels with det <= 0
  double folded_fraction = 0.0;
};

/// Jacobian determinant of phi = Id + u with forward differences. Interior
/// voxels are the ones whose forward neighbour exists along every axis.
template <typename T>
FoldingResult jacobian_folding(const Tensor<T>& u);

/// Regularized incomplete beta I_x(a, b) via a Lentz continued fraction.
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability P(|T| >= |t|) for Student's t with dof degrees.
double student_t_two_sided(double t, double dof);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t dof = 0;
  bool degenerate = false;  // differences have zero variance; p undefined
};

TTestResult paired_t_test(std::span<const double> x, std::span<const double> y);

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

/// One slice of u, each channel clamped to [-10, 10] and mapped onto
/// [0, 255]; channel c becomes colour c.
template <typename T>
RgbImage displacement_to_rgb(const Tensor<T>& u, std::size_t slice_axis, std::size_t slice_index);

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

void write_dice_csv(const std::filesystem::path& path, std::span<const LabelDice> entries);

}  // namespace vitreg

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
#include <cstddef>
#include <cstdint>
#include <set>
#include <vector>

#include "vitreg/tensor.hpp"

namespace vitreg {

// Spatial extents (depth, height, width). Axis 0 is the slowest.
using Extents = std::array<std::size_t, 3>;

inline std::size_t voxel_count(const Extents& e) { return e[0] * e[1] * e[2]; }

// Intensity volumes are Tensor<T> of shape [D, H, W] (or [B, 1, D, H, W] inside
// the network). Displacement fields are [3, D, H, W] (or [B, 3, D, H, W]) in
// voxel units with channel c displacing along spatial axis c.

struct LabelMap {
  Extents extents{};
  std::vector<std::uint16_t> labels;

  LabelMap() = default;
  explicit LabelMap(const Extents& e) : extents(e), labels(voxel_count(e), 0) {}

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * extents[1] + y) * extents[2] + x;
  }
  std::uint16_t at(std::size_t z, std::size_t y, std::size_t x) const { return labels[index(z, y, x)]; }
  std::uint16_t& at(std::size_t z, std::size_t y, std::size_t x) { return labels[index(z, y, x)]; }

  std::set<std::uint16_t> label_set() const { return {labels.begin(), labels.end()}; }
  bool operator==(const LabelMap&) const = default;
};

Extents spatial_extents(const Shape& shape);

}  // namespace vitreg

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

// Spatial transformer: resamples an image at phi(p) = p + u(p).
//
// Sample coordinates are in voxels. Coordinates outside [0, extent - 1] are
// clamped per axis (border replication); the clamped axis then carries no
// gradient with respect to u.

#pragma once

#include "vitreg/tensor.hpp"
#include "vitreg/volume.hpp"

namespace vitreg {

/// [3, D, H, W] with channel c holding the lattice coordinate along axis c.
template <typename T>
Tensor<T> identity_grid(const Extents& extents);

/// Trilinear m o (Id + u). image is [D,H,W] with u [3,D,H,W], or
/// [B,C,D,H,W] with u [B,3,D,H,W]. Differentiable in both arguments.
template <typename T>
Tensor<T> warp(const Tensor<T>& image, const Tensor<T>& u);

/// Nearest-neighbour resampling of a label map; u is [3,D,H,W].
template <typename T>
LabelMap warp_nearest(const LabelMap& labels, const Tensor<T>& u);

}  // namespace vitreg

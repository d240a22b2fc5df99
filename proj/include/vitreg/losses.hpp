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

#include "vitreg/tensor.hpp"

namespace vitreg {

/// Mean over all voxels (and batch items) of (f - warped)^2.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& fixed, const Tensor<T>& warped);

/// Sum of squared forward differences of u along every spatial axis, divided
/// by the voxel count (and batch size). u is [3,D,H,W] or [B,3,D,H,W]. The
/// trailing slice of each axis contributes nothing for that axis.
template <typename T>
Tensor<T> diffusion_reg(const Tensor<T>& u);

template <typename T>
struct LossReport {
  Tensor<T> total;
  Tensor<T> similarity;
  Tensor<T> regularizer;
  Tensor<T> warped;
  double lambda = 0.0;
};

/// mse(f, m o (Id + u)) + lambda * diffusion(u).
template <typename T>
LossReport<T> total_loss(const Tensor<T>& fixed, const Tensor<T>& moving, const Tensor<T>& u, double lambda);

}  // namespace vitreg

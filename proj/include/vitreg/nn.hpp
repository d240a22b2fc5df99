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
#include <random>
#include <vector>

#include "vitreg/tensor.hpp"

namespace vitreg {

using Triple = std::array<std::size_t, 3>;

// weight [out, in, kd, kh, kw]; bias [out] or undefined.
template <typename T>
struct ConvKernel {
  Tensor<T> weight;
  Tensor<T> bias;
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  T epsilon = T(1e-5);
};

/// 3D cross-correlation over x [B, C, D, H, W] plus bias.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvKernel<T>& kernel);

template <typename T>
struct PoolResult {
  Tensor<T> pooled;
  // Linear input index that won each output voxel.
  std::vector<std::size_t> argmax;
};

/// Max pooling over the three spatial axes. Ties go to the first voxel in
/// window scan order.
template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& x, std::size_t window = 2, std::size_t stride = 2);

/// Trilinear upsampling of [B, C, D, H, W] with the half-pixel
/// (align_corners = false) sample convention.
template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, std::size_t factor = 2);

/// x [..., in] * W [in, out] + b [out]. b may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& params);

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Inverted dropout. Identity when not training or when rate is zero.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace vitreg

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

// Transformer branch: patch extraction, patch + position embedding and the
// pre-norm MSA/MLP encoder blocks.
//
// Patch order: the patch grid is scanned depth-major (last grid axis
// fastest). Inside a patch the vector runs over channel first, then the
// patch voxels depth-major, i.e. element c*P^3 + (dz*P + dy)*P + dx.

#pragma once

#include <cstddef>
#include <random>
#include <span>

#include "vitreg/nn.hpp"
#include "vitreg/tensor.hpp"
#include "vitreg/volume.hpp"

namespace vitreg {

struct ViTConfig {
  std::size_t patch = 2;      // P
  std::size_t dim = 48;       // D
  std::size_t blocks = 4;
  std::size_t heads = 6;
  std::size_t mlp_dim = 96;
  double dropout = 0.1;

  // Full-size transformer: 8^3 patches, width 252, twelve blocks and heads.
  static ViTConfig full_size() { return {8, 252, 12, 12, 3072, 0.1}; }

  void validate() const;
};

// Dropout switches threaded through a forward pass.
struct DropoutMode {
  bool training = false;
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

/// [B, C, D, H, W] -> [B, N, P^3 * C] with N = DHW / P^3.
template <typename T>
Tensor<T> patchify(const Tensor<T>& features, std::size_t patch);

/// Exact inverse of patchify for the given channel count and spatial extents.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t channels, const Extents& extents, std::size_t patch);

template <typename T>
struct PatchEmbedParams {
  Tensor<T> projection;  // E, [P^3 C, D]
  Tensor<T> position;    // E_pos, [N, D]
};

/// z0[i] = x_p^i E + E_pos[i] for every batch item.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& patches, const PatchEmbedParams<T>& params);

template <typename T>
struct AttentionWeights {
  Tensor<T> q_weight, q_bias;
  Tensor<T> k_weight, k_bias;
  Tensor<T> v_weight, v_bias;
  Tensor<T> o_weight, o_bias;
};

template <typename T>
struct MsaResult {
  Tensor<T> out;        // [B, N, D]
  Tensor<T> attention;  // [B, heads, N, N], row-stochastic
};

/// Multi-head self-attention (pre-residual). Dropout, when active, follows
/// the output projection.
template <typename T>
MsaResult<T> msa(const Tensor<T>& z, const AttentionWeights<T>& w, std::size_t heads, const DropoutMode& mode = {});

template <typename T>
struct EncoderBlockWeights {
  LayerNormParams<T> ln1;
  AttentionWeights<T> attn;
  LayerNormParams<T> ln2;
  Tensor<T> fc1_weight, fc1_bias;
  Tensor<T> fc2_weight, fc2_bias;
};

/// z' = MSA(LN(z)) + z;  z_next = MLP(LN(z')) + z'.
template <typename T>
Tensor<T> encoder_block(const Tensor<T>& z, const EncoderBlockWeights<T>& w, std::size_t heads,
                        const DropoutMode& mode = {});

template <typename T>
Tensor<T> run_encoder(const Tensor<T>& z0, std::span<const EncoderBlockWeights<T>> blocks, std::size_t heads,
                      const DropoutMode& mode = {});

}  // namespace vitreg

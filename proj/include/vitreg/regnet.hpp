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

// ViT-V-Net: convolutional encoder -> ViT over the coarsest features ->
// trilinear-upsampling decoder with long skip connections -> 3-channel
// displacement head.
//
// With k = enc_widths.size() - 1 pooling stages:
//   enc0 .. enc{k}     3^3 conv + ReLU, 2x max-pool between stages
//   vit.*              patchify, E, E_pos, blocks, projection D -> P^3 C_vit
//   dec0 .. dec{k-1}   2x upsample, concat encoder skip, 3^3 conv + ReLU
//   head               3^3 conv to (d_z, d_y, d_x), no activation

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vitreg/nn.hpp"
#include "vitreg/tensor.hpp"
#include "vitreg/vit.hpp"
#include "vitreg/volume.hpp"

namespace vitreg {

struct RegNetConfig {
  Extents input{16, 16, 16};
  std::vector<std::size_t> enc_widths{16, 32, 32};
  std::vector<std::size_t> dec_widths{32, 16};
  std::size_t vit_channels = 32;  // C_out of the token projection
  ViTConfig vit{};
  double head_init_scale = 1e-3;
  std::uint64_t seed = 0;

  std::size_t pool_stages() const { return enc_widths.size() - 1; }
  Extents vit_grid() const;        // feature extents entering the ViT
  std::size_t num_patches() const;  // N = HWL / P^3 on the ViT grid

  void validate() const;
};

template <typename T>
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grad();

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>(true));
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
ModelParams<T> build(const RegNetConfig& config);

template <typename T>
std::size_t count_params(const ModelParams<T>& params);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout stream, required when training
  bool zero_skips = false;         // replaces skip features with zeros
};

/// u = g(f, m). fixed and moving are [B,1,D,H,W] (or [D,H,W]); the result is
/// [B,3,D,H,W] (or [3,D,H,W]) in voxels.
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const RegNetConfig& config, const Tensor<T>& fixed,
                  const Tensor<T>& moving, const ForwardOptions& options = {});

}  // namespace vitreg

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

#include "vitreg/vit.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace vitreg {

void ViTConfig::validate() const {
  if (patch == 0) throw std::invalid_argument("vit.patch must be >= 1");
  if (blocks == 0) throw std::invalid_argument("vit.blocks must be >= 1");
  if (dim == 0 || heads == 0 || dim % heads != 0)
    throw std::invalid_argument("vit.dim (" + std::to_string(dim) + ") must be divisible by vit.heads (" +
                                std::to_string(heads) + ")");
  if (mlp_dim == 0) throw std::invalid_argument("vit.mlp_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("vit.dropout must be in [0,1)");
}

namespace {

// patch-vector slot -> feature index, for one batch item.
std::shared_ptr<std::vector<std::size_t>> patch_index(std::size_t batch, std::size_t channels, const Extents& e,
                                                      std::size_t p) {
  for (int a = 0; a < 3; ++a)
    if (e[a] % p != 0)
      throw ShapeError("patchify: extent " + std::to_string(e[a]) + " on axis " + std::to_string(a) +
                       " is not divisible by patch size " + std::to_string(p));
  const Extents grid{e[0] / p, e[1] / p, e[2] / p};
  const std::size_t vox = voxel_count(e);
  const std::size_t len = p * p * p * channels;
  const std::size_t n = voxel_count(grid);
  auto idx = std::make_shared<std::vector<std::size_t>>(batch * n * len);
  std::size_t j = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t gz = 0; gz < grid[0]; ++gz)
      for (std::size_t gy = 0; gy < grid[1]; ++gy)
        for (std::size_t gx = 0; gx < grid[2]; ++gx)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t dz = 0; dz < p; ++dz)
              for (std::size_t dy = 0; dy < p; ++dy)
                for (std::size_t dx = 0; dx < p; ++dx) {
                  const std::size_t z = gz * p + dz, y = gy * p + dy, x = gx * p + dx;
                  (*idx)[j++] = (b * channels + c) * vox + (z * e[1] + y) * e[2] + x;
                }
  return idx;
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& features, std::size_t patch) {
  if (features.rank() != 5) throw ShapeError("patchify: expected [B,C,D,H,W], got " + to_string(features.shape()));
  if (patch == 0) throw ShapeError("patchify: patch size must be >= 1");
  const std::size_t batch = features.extent(0), channels = features.extent(1);
  const Extents e = spatial_extents(features.shape());
  auto idx = patch_index(batch, channels, e, patch);
  const std::size_t len = patch * patch * patch * channels;
  const std::size_t n = voxel_count(e) / (patch * patch * patch);
  return detail::gather<T>(features, Shape{batch, n, len}, std::move(idx), "patchify");
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t channels, const Extents& e, std::size_t patch) {
  if (tokens.rank() != 3) throw ShapeError("unpatchify: expected [B,N,P^3 C], got " + to_string(tokens.shape()));
  if (patch == 0) throw ShapeError("unpatchify: patch size must be >= 1");
  const std::size_t batch = tokens.extent(0);
  auto fwd = patch_index(batch, channels, e, patch);
  if (fwd->size() != tokens.numel())
    throw ShapeError("unpatchify: tokens " + to_string(tokens.shape()) + " do not tile " + std::to_string(channels) +
                     " channels of the requested extents");
  auto inv = std::make_shared<std::vector<std::size_t>>(fwd->size());
  for (std::size_t j = 0; j < fwd->size(); ++j) (*inv)[(*fwd)[j]] = j;
  return detail::gather<T>(tokens, Shape{batch, channels, e[0], e[1], e[2]}, std::move(inv), "unpatchify");
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& patches, const PatchEmbedParams<T>& params) {
  if (patches.rank() != 3) throw ShapeError("patch_embed: expected [B,N,L], got " + to_string(patches.shape()));
  const auto& E = params.projection;
  const auto& pos = params.position;
  if (E.rank() != 2 || E.extent(0) != patches.extent(2))
    throw ShapeError("patch_embed: projection " + to_string(E.shape()) + " for patch length " +
                     std::to_string(patches.extent(2)));
  if (pos.shape() != Shape{patches.extent(1), E.extent(1)})
    throw ShapeError("patch_embed: position table " + to_string(pos.shape()) + " for " +
                     std::to_string(patches.extent(1)) + " patches of width " + std::to_string(E.extent(1)));
  Tensor<T> projected = matmul(patches, E);
  return add(projected, expand(pos, projected.shape()));
}

template <typename T>
MsaResult<T> msa(const Tensor<T>& z, const AttentionWeights<T>& w, std::size_t heads, const DropoutMode& mode) {
  if (z.rank() != 3) throw ShapeError("msa: expected [B,N,D], got " + to_string(z.shape()));
  const std::size_t B = z.extent(0), N = z.extent(1), D = z.extent(2);
  if (heads == 0 || D % heads != 0)
    throw ShapeError("msa: width " + std::to_string(D) + " is not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dk = D / heads;
  auto split = [&](const Tensor<T>& t) { return reshape(t, Shape{B, N, heads, dk}); };
  Tensor<T> q = permute(split(linear(z, w.q_weight, w.q_bias)), {0, 2, 1, 3});
  Tensor<T> kt = permute(split(linear(z, w.k_weight, w.k_bias)), {0, 2, 3, 1});
  Tensor<T> v = permute(split(linear(z, w.v_weight, w.v_bias)), {0, 2, 1, 3});
  Tensor<T> scores = scale(matmul(q, kt), T(1) / std::sqrt(T(dk)));
  MsaResult<T> r;
  r.attention = softmax(scores);
  Tensor<T> context = reshape(permute(matmul(r.attention, v), {0, 2, 1, 3}), Shape{B, N, D});
  r.out = linear(context, w.o_weight, w.o_bias);
  if (mode.training && mode.rate > 0.0) r.out = dropout(r.out, mode.rate, true, *mode.rng);
  return r;
}

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& z, const EncoderBlockWeights<T>& w, std::size_t heads,
                        const DropoutMode& mode) {
  const bool drop = mode.training && mode.rate > 0.0;
  Tensor<T> z_mid = add(z, msa(layer_norm(z, w.ln1), w.attn, heads, mode).out);
  Tensor<T> h = gelu(linear(layer_norm(z_mid, w.ln2), w.fc1_weight, w.fc1_bias));
  if (drop) h = dropout(h, mode.rate, true, *mode.rng);
  h = linear(h, w.fc2_weight, w.fc2_bias);
  if (drop) h = dropout(h, mode.rate, true, *mode.rng);
  return add(z_mid, h);
}

template <typename T>
Tensor<T> run_encoder(const Tensor<T>& z0, std::span<const EncoderBlockWeights<T>> blocks, std::size_t heads,
                      const DropoutMode& mode) {
  Tensor<T> z = z0;
  for (const auto& b : blocks) z = encoder_block(z, b, heads, mode);
  return z;
}

#define VITREG_INSTANTIATE(T)                                                                                   \
  template Tensor<T> patchify<T>(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> unpatchify<T>(const Tensor<T>&, std::size_t, const Extents&, std::size_t);                 \
  template Tensor<T> patch_embed<T>(const Tensor<T>&, const PatchEmbedParams<T>&);                              \
  template MsaResult<T> msa<T>(const Tensor<T>&, const AttentionWeights<T>&, std::size_t, const DropoutMode&);  \
  template Tensor<T> encoder_block<T>(const Tensor<T>&, const EncoderBlockWeights<T>&, std::size_t,             \
                                      const DropoutMode&);                                                      \
  template Tensor<T> run_encoder<T>(const Tensor<T>&, std::span<const EncoderBlockWeights<T>>, std::size_t,     \
                                    const DropoutMode&);

VITREG_INSTANTIATE(float)
VITREG_INSTANTIATE(double)

}  // namespace vitreg

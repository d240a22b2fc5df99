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

#include "vitreg/regnet.hpp"

#include <cmath>
#include <stdexcept>

#include "vitreg/rng.hpp"

namespace vitreg {

Extents RegNetConfig::vit_grid() const {
  const std::size_t f = std::size_t{1} << pool_stages();
  return {input[0] / f, input[1] / f, input[2] / f};
}

std::size_t RegNetConfig::num_patches() const {
  const std::size_t p = vit.patch;
  return voxel_count(vit_grid()) / (p * p * p);
}

void RegNetConfig::validate() const {
  vit.validate();
  if (enc_widths.empty()) throw std::invalid_argument("model.enc_widths must not be empty");
  for (auto w : enc_widths)
    if (w == 0) throw std::invalid_argument("model.enc_widths entries must be >= 1");
  for (auto w : dec_widths)
    if (w == 0) throw std::invalid_argument("model.dec_widths entries must be >= 1");
  if (dec_widths.size() != pool_stages())
    throw std::invalid_argument("model.dec_widths needs one entry per pooling stage (" +
                                std::to_string(pool_stages()) + "), got " + std::to_string(dec_widths.size()));
  if (vit_channels == 0) throw std::invalid_argument("model.vit_channels must be >= 1");
  const std::size_t f = std::size_t{1} << pool_stages();
  static const char* axis[3] = {"depth", "height", "width"};
  for (int a = 0; a < 3; ++a) {
    if (input[a] == 0 || input[a] % f != 0)
      throw std::invalid_argument(std::string("model.input ") + axis[a] + " extent " + std::to_string(input[a]) +
                                  " is not divisible by 2^" + std::to_string(pool_stages()));
    if ((input[a] / f) % vit.patch != 0)
      throw std::invalid_argument(std::string("post-encoder ") + axis[a] + " extent " + std::to_string(input[a] / f) +
                                  " is not divisible by vit.patch " + std::to_string(vit.patch));
  }
}

template <typename T>
void ModelParams<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].second;
}

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].second;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename T>
std::size_t count_params(const ModelParams<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params.entries()) n += t.numel();
  return n;
}

template <typename T>
ModelParams<T> build(const RegNetConfig& config) {
  config.validate();
  std::mt19937_64 rng = make_rng(config.seed, SeedPurpose::init);
  ModelParams<T> p;
  auto uniform = [&](Shape shape, std::size_t fan_in, double gain = 1.0) {
    const double bound = gain / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = T(dist(rng));
    return Tensor<T>(std::move(shape), std::move(v), true);
  };
  auto zeros = [](Shape shape) { return Tensor<T>::zeros(std::move(shape), true); };
  auto ones = [](Shape shape) { return Tensor<T>::full(std::move(shape), T(1), true); };
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, double gain = 1.0) {
    p.add(name + ".weight", uniform({out, in, 3, 3, 3}, in * 27, gain));
    p.add(name + ".bias", zeros({out}));
  };
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", uniform({in, out}, in));
    p.add(name + ".bias", zeros({out}));
  };

  const std::size_t k = config.pool_stages();
  std::size_t in = 2;
  for (std::size_t i = 0; i <= k; ++i) {
    conv("enc" + std::to_string(i), config.enc_widths[i], in);
    in = config.enc_widths[i];
  }

  const auto& v = config.vit;
  const std::size_t cube = v.patch * v.patch * v.patch;
  p.add("vit.embed.weight", uniform({cube * config.enc_widths.back(), v.dim}, cube * config.enc_widths.back()));
  p.add("vit.pos", zeros({config.num_patches(), v.dim}));
  for (std::size_t b = 0; b < v.blocks; ++b) {
    const std::string pre = "vit.block" + std::to_string(b);
    p.add(pre + ".ln1.gamma", ones({v.dim}));
    p.add(pre + ".ln1.beta", zeros({v.dim}));
    for (const char* proj : {"q", "k", "v", "o"}) dense(pre + ".attn." + proj, v.dim, v.dim);
    p.add(pre + ".ln2.gamma", ones({v.dim}));
    p.add(pre + ".ln2.beta", zeros({v.dim}));
    dense(pre + ".mlp.fc1", v.dim, v.mlp_dim);
    dense(pre + ".mlp.fc2", v.mlp_dim, v.dim);
  }
  dense("vit.proj", v.dim, cube * config.vit_channels);

  in = config.vit_channels;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t skip = config.enc_widths[k - 1 - j];
    conv("dec" + std::to_string(j), config.dec_widths[j], in + skip);
    in = config.dec_widths[j];
  }
  conv("head", 3, in, config.head_init_scale);
  return p;
}

template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const RegNetConfig& config, const Tensor<T>& fixed,
                  const Tensor<T>& moving, const ForwardOptions& options) {
  if (fixed.shape() != moving.shape())
    throw ShapeError("forward: fixed " + to_string(fixed.shape()) + " and moving " + to_string(moving.shape()) +
                     " differ");
  if (fixed.rank() == 3) {
    const Extents e = spatial_extents(fixed.shape());
    const Shape s{1, 1, e[0], e[1], e[2]};
    Tensor<T> u = forward(params, config, reshape(fixed, s), reshape(moving, s), options);
    return reshape(u, Shape{3, e[0], e[1], e[2]});
  }
  if (fixed.rank() != 5 || fixed.extent(1) != 1) throw ShapeError("forward: expected [B,1,D,H,W] volumes");
  const Extents e = spatial_extents(fixed.shape());
  if (e != config.input)
    throw ShapeError("forward: volume extents " + to_string(fixed.shape()) + " do not match the configured input");
  if (options.training && config.vit.dropout > 0.0 && options.rng == nullptr)
    throw std::invalid_argument("forward: training with dropout needs an rng");

  auto conv = [&](const std::string& name) {
    ConvKernel<T> k;
    k.weight = params.at(name + ".weight");
    k.bias = params.at(name + ".bias");
    k.padding = {1, 1, 1};
    return k;
  };

  const std::size_t k = config.pool_stages();
  std::vector<Tensor<T>> skips;
  Tensor<T> x = concat<T>({fixed, moving}, 1);
  for (std::size_t i = 0; i <= k; ++i) {
    x = relu(conv3d(x, conv("enc" + std::to_string(i))));
    if (i < k) {
      skips.push_back(x);
      x = maxpool3d(x, 2, 2).pooled;
    }
  }

  const auto& v = config.vit;
  DropoutMode mode{options.training, v.dropout, options.rng};
  PatchEmbedParams<T> embed{params.at("vit.embed.weight"), params.at("vit.pos")};
  Tensor<T> z = patch_embed(patchify(x, v.patch), embed);
  if (mode.training && mode.rate > 0.0) z = dropout(z, mode.rate, true, *mode.rng);
  std::vector<EncoderBlockWeights<T>> blocks(v.blocks);
  for (std::size_t b = 0; b < v.blocks; ++b) {
    const std::string pre = "vit.block" + std::to_string(b);
    auto& w = blocks[b];
    w.ln1 = {params.at(pre + ".ln1.gamma"), params.at(pre + ".ln1.beta")};
    w.ln2 = {params.at(pre + ".ln2.gamma"), params.at(pre + ".ln2.beta")};
    auto& a = w.attn;
    a.q_weight = params.at(pre + ".attn.q.weight");
    a.q_bias = params.at(pre + ".attn.q.bias");
    a.k_weight = params.at(pre + ".attn.k.weight");
    a.k_bias = params.at(pre + ".attn.k.bias");
    a.v_weight = params.at(pre + ".attn.v.weight");
    a.v_bias = params.at(pre + ".attn.v.bias");
    a.o_weight = params.at(pre + ".attn.o.weight");
    a.o_bias = params.at(pre + ".attn.o.bias");
    w.fc1_weight = params.at(pre + ".mlp.fc1.weight");
    w.fc1_bias = params.at(pre + ".mlp.fc1.bias");
    w.fc2_weight = params.at(pre + ".mlp.fc2.weight");
    w.fc2_bias = params.at(pre + ".mlp.fc2.bias");
  }
  z = run_encoder<T>(z, blocks, v.heads, mode);
  z = linear(z, params.at("vit.proj.weight"), params.at("vit.proj.bias"));
  Tensor<T> y = unpatchify(z, config.vit_channels, config.vit_grid(), v.patch);

  for (std::size_t j = 0; j < k; ++j) {
    y = upsample_trilinear(y, 2);
    Tensor<T> skip = skips[k - 1 - j];
    if (options.zero_skips) skip = Tensor<T>::zeros(skip.shape());
    y = relu(conv3d(concat<T>({y, skip}, 1), conv("dec" + std::to_string(j))));
  }
  return conv3d(y, conv("head"));
}

#define VITREG_INSTANTIATE(T)                                                                                  \
  template class ModelParams<T>;                                                                               \
  template ModelParams<T> build<T>(const RegNetConfig&);                                                       \
  template std::size_t count_params<T>(const ModelParams<T>&);                                                 \
  template Tensor<T> forward<T>(const ModelParams<T>&, const RegNetConfig&, const Tensor<T>&, const Tensor<T>&, \
                                const ForwardOptions&);

VITREG_INSTANTIATE(float)
VITREG_INSTANTIATE(double)

}  // namespace vitreg

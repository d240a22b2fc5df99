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

#include "vitreg/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "vitreg/spatial.hpp"

namespace vitreg {

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& fixed, const Tensor<T>& warped) {
  if (fixed.shape() != warped.shape())
    throw ShapeError("mse_loss: " + to_string(fixed.shape()) + " vs " + to_string(warped.shape()));
  const auto fd = fixed.data(), wd = warped.data();
  long double acc = 0.0L;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const long double d = (long double)fd[i] - (long double)wd[i];
    acc += d * d;
  }
  const double n = double(fd.size());
  return detail::record<T>(Shape{1}, {T(acc / n)}, "mse_loss", {fixed, warped}, [n](detail::Node<T>& self) {
    auto& f = *self.inputs[0];
    auto& w = *self.inputs[1];
    const T k = T(2.0 / n) * self.grad[0];
    T* gf = f.requires_grad ? f.grad_data() : nullptr;
    T* gw = w.requires_grad ? w.grad_data() : nullptr;
    for (std::size_t i = 0; i < f.value.size(); ++i) {
      const T d = f.value[i] - w.value[i];
      if (gf) gf[i] += k * d;
      if (gw) gw[i] -= k * d;
    }
  });
}

template <typename T>
Tensor<T> diffusion_reg(const Tensor<T>& u) {
  Shape s = u.shape();
  if (s.size() == 4) s.insert(s.begin(), 1);
  if (s.size() != 5 || s[1] != 3) throw ShapeError("diffusion_reg: expected [B,3,D,H,W], got " + to_string(u.shape()));
  for (T v : u.data())
    if (!std::isfinite(v)) throw std::invalid_argument("diffusion_reg: displacement field contains non-finite values");
  const std::size_t batch = s[0], D = s[2], H = s[3], W = s[4];
  const std::size_t vox = D * H * W;
  const std::size_t stride[3] = {H * W, W, 1};
  const std::size_t ext[3] = {D, H, W};

  // Visits each (voxel, axis) pair whose forward neighbour exists.
  auto for_each_diff = [=](auto&& fn) {
    for (std::size_t bc = 0; bc < batch * 3; ++bc) {
      const std::size_t base = bc * vox;
      for (std::size_t z = 0; z < D; ++z)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t p = base + (z * H + y) * W + x;
            const std::size_t idx[3] = {z, y, x};
            for (int a = 0; a < 3; ++a)
              if (idx[a] + 1 < ext[a]) fn(p, p + stride[a]);
          }
    }
  };
  const T* ud = u.data().data();
  long double acc = 0.0L;
  for_each_diff([&](std::size_t p, std::size_t q) {
    const long double d = (long double)ud[q] - (long double)ud[p];
    acc += d * d;
  });
  const double n = double(batch * vox);
  return detail::record<T>(Shape{1}, {T(acc / n)}, "diffusion_reg", {u}, [for_each_diff, n](detail::Node<T>& self) {
    auto& un = *self.inputs[0];
    T* g = un.grad_data();
    const T k = T(2.0 / n) * self.grad[0];
    const T* v = un.value.data();
    for_each_diff([&](std::size_t p, std::size_t q) {
      const T d = k * (v[q] - v[p]);
      g[q] += d;
      g[p] -= d;
    });
  });
}

template <typename T>
LossReport<T> total_loss(const Tensor<T>& fixed, const Tensor<T>& moving, const Tensor<T>& u, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
  LossReport<T> r;
  r.lambda = lambda;
  r.warped = warp(moving, u);
  r.similarity = mse_loss(fixed, r.warped);
  r.regularizer = diffusion_reg(u);
  r.total = add(r.similarity, scale(r.regularizer, T(lambda)));
  return r;
}

#define VITREG_INSTANTIATE(T)                                                                       \
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> diffusion_reg<T>(const Tensor<T>&);                                            \
  template LossReport<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);

VITREG_INSTANTIATE(float)
VITREG_INSTANTIATE(double)

}  // namespace vitreg

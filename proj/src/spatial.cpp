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

#include "vitreg/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vitreg {

Extents spatial_extents(const Shape& shape) {
  if (shape.size() < 3) throw ShapeError("expected at least 3 spatial axes, got " + to_string(shape));
  const std::size_t n = shape.size();
  return {shape[n - 3], shape[n - 2], shape[n - 1]};
}

template <typename T>
Tensor<T> identity_grid(const Extents& e) {
  const std::size_t vox = voxel_count(e);
  std::vector<T> g(3 * vox);
  for (std::size_t z = 0; z < e[0]; ++z)
    for (std::size_t y = 0; y < e[1]; ++y)
      for (std::size_t x = 0; x < e[2]; ++x) {
        const std::size_t i = (z * e[1] + y) * e[2] + x;
        g[i] = T(z);
        g[vox + i] = T(y);
        g[2 * vox + i] = T(x);
      }
  return Tensor<T>(Shape{3, e[0], e[1], e[2]}, std::move(g));
}

namespace {

template <typename T>
struct AxisSample {
  std::size_t lo, hi;
  T t;
  bool clamped;
};

template <typename T>
AxisSample<T> sample_axis(T coord, std::size_t n) {
  AxisSample<T> s{0, 0, T(0), false};
  const T top = T(n - 1);
  if (coord < T(0)) {
    coord = T(0);
    s.clamped = true;
  } else if (coord > top) {
    coord = top;
    s.clamped = true;
  }
  if (n == 1) return s;
  auto i0 = static_cast<std::size_t>(std::floor(coord));
  if (i0 > n - 2) i0 = n - 2;
  s.lo = i0;
  s.hi = i0 + 1;
  s.t = coord - T(i0);
  return s;
}

template <typename T>
void check_finite(const Tensor<T>& u) {
  for (T v : u.data())
    if (!std::isfinite(v)) throw std::invalid_argument("displacement field contains non-finite values");
}

}  // namespace

template <typename T>
Tensor<T> warp(const Tensor<T>& image, const Tensor<T>& u) {
  if (image.rank() == 3) {
    const Extents e = spatial_extents(image.shape());
    if (u.shape() != Shape{3, e[0], e[1], e[2]})
      throw ShapeError("warp: field " + to_string(u.shape()) + " does not match image " + to_string(image.shape()));
    auto out = warp(reshape(image, Shape{1, 1, e[0], e[1], e[2]}), reshape(u, Shape{1, 3, e[0], e[1], e[2]}));
    return reshape(out, image.shape());
  }
  if (image.rank() != 5 || u.rank() != 5 || u.extent(0) != image.extent(0) || u.extent(1) != 3 ||
      !std::equal(image.shape().begin() + 2, image.shape().end(), u.shape().begin() + 2))
    throw ShapeError("warp: field " + to_string(u.shape()) + " does not match image " + to_string(image.shape()));
  check_finite(u);

  const std::size_t batch = image.extent(0), chans = image.extent(1);
  const Extents e = spatial_extents(image.shape());
  const std::size_t vox = voxel_count(e);
  const T* md = image.data().data();
  const T* ud = u.data().data();
  std::vector<T> out(image.numel());

  // Visits every output voxel with its per-axis samples.
  auto for_each_voxel = [batch, e, vox](const T* ufield, auto&& fn) {
    for (std::size_t b = 0; b < batch; ++b) {
      const T* ub = ufield + b * 3 * vox;
      for (std::size_t z = 0; z < e[0]; ++z)
        for (std::size_t y = 0; y < e[1]; ++y)
          for (std::size_t x = 0; x < e[2]; ++x) {
            const std::size_t p = (z * e[1] + y) * e[2] + x;
            const AxisSample<T> s[3] = {sample_axis(T(z) + ub[p], e[0]), sample_axis(T(y) + ub[vox + p], e[1]),
                                        sample_axis(T(x) + ub[2 * vox + p], e[2])};
            fn(b, p, s);
          }
    }
  };

  for_each_voxel(ud, [&](std::size_t b, std::size_t p, const AxisSample<T>* s) {
    const std::size_t zi[2] = {s[0].lo, s[0].hi}, yi[2] = {s[1].lo, s[1].hi}, xi[2] = {s[2].lo, s[2].hi};
    const T zw[2] = {T(1) - s[0].t, s[0].t}, yw[2] = {T(1) - s[1].t, s[1].t}, xw[2] = {T(1) - s[2].t, s[2].t};
    for (std::size_t c = 0; c < chans; ++c) {
      const T* mc = md + (b * chans + c) * vox;
      T v = T(0);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          for (int k = 0; k < 2; ++k) v += zw[i] * yw[j] * xw[k] * mc[(zi[i] * e[1] + yi[j]) * e[2] + xi[k]];
      out[(b * chans + c) * vox + p] = v;
    }
  });

  return detail::record<T>(image.shape(), std::move(out), "warp", {image, u},
                           [for_each_voxel, chans, e, vox](detail::Node<T>& self) {
    auto& mn = *self.inputs[0];
    auto& un = *self.inputs[1];
    T* gm = mn.requires_grad ? mn.grad_data() : nullptr;
    T* gu = un.requires_grad ? un.grad_data() : nullptr;
    const T* g = self.grad.data();
    for_each_voxel(un.value.data(), [&](std::size_t b, std::size_t p, const AxisSample<T>* s) {
      const std::size_t zi[2] = {s[0].lo, s[0].hi}, yi[2] = {s[1].lo, s[1].hi}, xi[2] = {s[2].lo, s[2].hi};
      const T zw[2] = {T(1) - s[0].t, s[0].t}, yw[2] = {T(1) - s[1].t, s[1].t}, xw[2] = {T(1) - s[2].t, s[2].t};
      const T dw[2] = {T(-1), T(1)};
      T dz = T(0), dy = T(0), dx = T(0);
      for (std::size_t c = 0; c < chans; ++c) {
        const T go = g[(b * chans + c) * vox + p];
        if (go == T(0)) continue;
        const std::size_t base = (b * chans + c) * vox;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) {
              const std::size_t q = base + (zi[i] * e[1] + yi[j]) * e[2] + xi[k];
              if (gm) gm[q] += zw[i] * yw[j] * xw[k] * go;
              if (gu) {
                const T mv = mn.value[q] * go;
                dz += dw[i] * yw[j] * xw[k] * mv;
                dy += zw[i] * dw[j] * xw[k] * mv;
                dx += zw[i] * yw[j] * dw[k] * mv;
              }
            }
      }
      if (gu) {
        T* gub = gu + b * 3 * vox;
        if (!s[0].clamped && e[0] > 1) gub[p] += dz;
        if (!s[1].clamped && e[1] > 1) gub[vox + p] += dy;
        if (!s[2].clamped && e[2] > 1) gub[2 * vox + p] += dx;
      }
    });
  });
}

template <typename T>
LabelMap warp_nearest(const LabelMap& labels, const Tensor<T>& u) {
  const Extents& e = labels.extents;
  if (u.shape() != Shape{3, e[0], e[1], e[2]})
    throw ShapeError("warp_nearest: field " + to_string(u.shape()) + " does not match labels [" +
                     std::to_string(e[0]) + "," + std::to_string(e[1]) + "," + std::to_string(e[2]) + "]");
  check_finite(u);
  const std::size_t vox = voxel_count(e);
  const T* ud = u.data().data();
  auto nearest = [](T coord, std::size_t n) {
    const long r = std::lround(static_cast<double>(coord));
    return static_cast<std::size_t>(std::clamp<long>(r, 0, long(n) - 1));
  };
  LabelMap out(e);
  for (std::size_t z = 0; z < e[0]; ++z)
    for (std::size_t y = 0; y < e[1]; ++y)
      for (std::size_t x = 0; x < e[2]; ++x) {
        const std::size_t p = labels.index(z, y, x);
        out.labels[p] = labels.at(nearest(T(z) + ud[p], e[0]), nearest(T(y) + ud[vox + p], e[1]),
                                  nearest(T(x) + ud[2 * vox + p], e[2]));
      }
  return out;
}

#define VITREG_INSTANTIATE(T)                                            \
  template Tensor<T> identity_grid<T>(const Extents&);                   \
  template Tensor<T> warp<T>(const Tensor<T>&, const Tensor<T>&);        \
  template LabelMap warp_nearest<T>(const LabelMap&, const Tensor<T>&);

VITREG_INSTANTIATE(float)
VITREG_INSTANTIATE(double)

}  // namespace vitreg

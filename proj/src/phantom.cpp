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

#include "vitreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vitreg/nn.hpp"
#include "vitreg/spatial.hpp"

namespace vitreg {

namespace {

using Vec3 = std::array<double, 3>;

double ellipsoid_radius(const Vec3& p, const Vec3& c, const Vec3& r) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[a] - c[a]) / r[a];
    s += d * d;
  }
  return std::sqrt(s);
}

// Smooth step from 1 inside to 0 outside, about one voxel wide.
double soft_inside(double rho, double scale) {
  constexpr double kEdgeWidth = 0.6;
  return 1.0 / (1.0 + std::exp(-(1.0 - rho) * scale / kEdgeWidth));
}

Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 d{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (len > 1e-6) return {d[0] / len, d[1] / len, d[2] / len};
  }
}

struct Sphere {
  Vec3 centre;
  double radius;
  double intensity;
  std::uint16_t label;
};

}  // namespace

Phantom generate_phantom(std::mt19937_64& rng, const Extents& extents) {
  for (auto n : extents)
    if (n < 4) throw std::invalid_argument("generate_phantom: extents must be at least 4 per axis");
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  Vec3 centre, r1, r2, r3;
  for (int a = 0; a < 3; ++a) {
    const double n = double(extents[a]);
    centre[a] = (n - 1.0) / 2.0 + 0.04 * n * u(rng);
    r1[a] = n * (0.40 + 0.03 * u(rng));
  }
  const double inner = 0.72 + 0.03 * u(rng), core = 0.45 + 0.03 * u(rng);
  for (int a = 0; a < 3; ++a) {
    r2[a] = r1[a] * inner;
    r3[a] = r1[a] * core;
  }

  const double min_extent = double(*std::min_element(extents.begin(), extents.end()));
  const Vec3 dir_a = random_direction(rng);
  Vec3 dir_b;
  do {
    dir_b = random_direction(rng);
  } while (dir_a[0] * dir_b[0] + dir_a[1] * dir_b[1] + dir_a[2] * dir_b[2] > -0.2);
  std::array<Sphere, 2> blobs;
  const std::array<Vec3, 2> dirs{dir_a, dir_b};
  const std::array<double, 2> levels{0.1, 0.6};
  const std::array<std::uint16_t, 2> blob_labels{kBlobA, kBlobB};
  for (int b = 0; b < 2; ++b) {
    const double dist = 0.68 + 0.04 * u(rng);
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = centre[a] + dist * r1[a] * dirs[b][a];
    blobs[b] = {c, 0.15 * min_extent * (1.0 + 0.05 * u(rng)), levels[b], blob_labels[b]};
  }

  struct Wave {
    Vec3 k;
    double phase;
  };
  std::array<Wave, 3> waves;
  for (auto& w : waves) {
    for (int a = 0; a < 3; ++a) w.k[a] = u(rng) * 2.0 * std::numbers::pi * 2.0 / double(extents[a]);
    w.phase = std::numbers::pi * u(rng);
  }

  const double s1 = (r1[0] + r1[1] + r1[2]) / 3.0;
  const double s2 = s1 * inner, s3 = s1 * core;
  const std::size_t vox = voxel_count(extents);
  std::vector<double> image(vox);
  LabelMap labels(extents);
  for (std::size_t z = 0; z < extents[0]; ++z)
    for (std::size_t y = 0; y < extents[1]; ++y)
      for (std::size_t x = 0; x < extents[2]; ++x) {
        const Vec3 p{double(z), double(y), double(x)};
        const std::size_t i = labels.index(z, y, x);
        const double rho1 = ellipsoid_radius(p, centre, r1);
        const double rho2 = ellipsoid_radius(p, centre, r2);
        const double rho3 = ellipsoid_radius(p, centre, r3);
        double v = 0.9 * soft_inside(rho1, s1) - 0.6 * soft_inside(rho2, s2) + 0.5 * soft_inside(rho3, s3);
        std::uint16_t l = rho3 < 1.0 ? kCore : rho2 < 1.0 ? kInnerShell : rho1 < 1.0 ? kOuterShell : 0;
        for (const auto& b : blobs) {
          const double rho = ellipsoid_radius(p, b.centre, {b.radius, b.radius, b.radius});
          const double s = soft_inside(rho, b.radius);
          v = v * (1.0 - s) + b.intensity * s;
          if (rho < 1.0) l = b.label;
        }
        for (const auto& w : waves) v += 0.02 * std::sin(w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase);
        image[i] = v;
        labels.labels[i] = l;
      }

  const auto [lo, hi] = std::minmax_element(image.begin(), image.end());
  const double vmin = *lo, range = *hi - *lo;
  std::vector<float> values(vox);
  for (std::size_t i = 0; i < vox; ++i) values[i] = range > 0.0 ? float((image[i] - vmin) / range) : 0.0f;
  return {Tensor<float>({extents[0], extents[1], extents[2]}, std::move(values)), std::move(labels)};
}

Tensor<float> generate_smooth_field(std::mt19937_64& rng, const Extents& extents, double amplitude,
                                    std::size_t coarse_factor) {
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
    throw std::invalid_argument("generate_smooth_field: amplitude must be finite and non-negative");
  if (coarse_factor < 2) throw std::invalid_argument("generate_smooth_field: coarse_factor must be >= 2");
  Shape coarse{1, 3};
  for (auto n : extents) {
    if (n % coarse_factor != 0)
      throw std::invalid_argument("generate_smooth_field: extent " + std::to_string(n) + " is not a multiple of " +
                                  std::to_string(coarse_factor));
    coarse.push_back(n / coarse_factor);
  }
  const Shape field_shape{3, extents[0], extents[1], extents[2]};
  if (amplitude == 0.0) return Tensor<float>::zeros(field_shape);

  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> values(numel(coarse));
  for (auto& v : values) v = noise(rng);
  const Tensor<double> fine = upsample_trilinear(Tensor<double>(coarse, std::move(values)), coarse_factor);

  const auto d = fine.data();
  const std::size_t vox = voxel_count(extents);
  double max_norm = 0.0;
  for (std::size_t p = 0; p < vox; ++p)
    max_norm = std::max(max_norm, std::sqrt(d[p] * d[p] + d[vox + p] * d[vox + p] + d[2 * vox + p] * d[2 * vox + p]));
  std::vector<float> out(3 * vox, 0.0f);
  if (max_norm > 0.0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(d[i] * (amplitude / max_norm));
  return Tensor<float>(field_shape, std::move(out));
}

RegistrationPair make_pair(const Tensor<float>& phantom, const LabelMap& labels, const Tensor<float>& field) {
  if (phantom.rank() != 3) throw ShapeError("make_pair: phantom must be [D,H,W], got " + to_string(phantom.shape()));
  if (spatial_extents(phantom.shape()) != labels.extents) throw ShapeError("make_pair: labels and phantom differ in extents");
  RegistrationPair pair;
  pair.fixed = phantom.detach();
  pair.moving = warp(pair.fixed, field.detach());
  pair.fixed_labels = labels;
  pair.moving_labels = warp_nearest(labels, field);
  pair.field = field.detach();
  return pair;
}

FlipAxes draw_flips(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  FlipAxes f{};
  for (auto& a : f) a = coin(rng);
  return f;
}

namespace {

// Reverses the selected spatial axes of `planes` consecutive [D,H,W] grids.
template <typename V>
std::vector<V> flip_grid(std::span<const V> src, const Extents& e, std::size_t planes, const FlipAxes& axes) {
  std::vector<V> out(src.size());
  const std::size_t vox = voxel_count(e);
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t z = 0; z < e[0]; ++z) {
      const std::size_t sz = axes[0] ? e[0] - 1 - z : z;
      for (std::size_t y = 0; y < e[1]; ++y) {
        const std::size_t sy = axes[1] ? e[1] - 1 - y : y;
        for (std::size_t x = 0; x < e[2]; ++x) {
          const std::size_t sx = axes[2] ? e[2] - 1 - x : x;
          out[pl * vox + (z * e[1] + y) * e[2] + x] = src[pl * vox + (sz * e[1] + sy) * e[2] + sx];
        }
      }
    }
  return out;
}

Tensor<float> flip_volume(const Tensor<float>& v, const FlipAxes& axes) {
  return Tensor<float>(v.shape(), flip_grid<float>(v.data(), spatial_extents(v.shape()), 1, axes));
}

LabelMap flip_labels(const LabelMap& l, const FlipAxes& axes) {
  LabelMap out(l.extents);
  out.labels = flip_grid<std::uint16_t>(l.labels, l.extents, 1, axes);
  return out;
}

}  // namespace

RegistrationPair apply_flips(const RegistrationPair& pair, const FlipAxes& axes) {
  if (!axes[0] && !axes[1] && !axes[2]) return pair;
  RegistrationPair out;
  out.fixed = flip_volume(pair.fixed, axes);
  out.moving = flip_volume(pair.moving, axes);
  out.fixed_labels = flip_labels(pair.fixed_labels, axes);
  out.moving_labels = flip_labels(pair.moving_labels, axes);
  if (pair.field.defined()) {
    const Extents e = spatial_extents(pair.field.shape());
    auto values = flip_grid<float>(pair.field.data(), e, 3, axes);
    const std::size_t vox = voxel_count(e);
    for (std::size_t c = 0; c < 3; ++c)
      if (axes[c])
        for (std::size_t p = 0; p < vox; ++p) values[c * vox + p] = -values[c * vox + p];
    out.field = Tensor<float>(pair.field.shape(), std::move(values));
  }
  return out;
}

RegistrationPair random_flip(const RegistrationPair& pair, std::mt19937_64& rng) {
  return apply_flips(pair, draw_flips(rng));
}

Tensor<float> invert_field(const Tensor<float>& g, std::size_t iterations) {
  if (g.rank() != 4 || g.extent(0) != 3) throw ShapeError("invert_field: expected [3,D,H,W], got " + to_string(g.shape()));
  Shape batched = g.shape();
  batched.insert(batched.begin(), 1);
  const Tensor<double> gd = reshape(g.cast<double>(false), batched);
  Tensor<double> v = Tensor<double>::zeros(batched);
  for (std::size_t k = 0; k < iterations; ++k) v = scale(warp(gd, v), -1.0);
  return reshape(v, g.shape()).cast<float>(false);
}

}  // namespace vitreg

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

#include "vitreg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace vitreg {

namespace {

struct ConvGeometry {
  std::size_t batch, in_c, out_c;
  Triple in, out, k, stride, pad;
  std::size_t rows() const { return in_c * k[0] * k[1] * k[2]; }
  std::size_t in_vox() const { return in[0] * in[1] * in[2]; }
  std::size_t out_vox() const { return out[0] * out[1] * out[2]; }
  std::size_t out_plane() const { return out[1] * out[2]; }
};

// Output depth slices per im2col chunk; bounds the column buffer.
std::size_t chunk_slices(const ConvGeometry& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 22;
  const std::size_t per_slice = g.rows() * g.out_plane();
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_slice, 1), 1, g.out[0]);
}

// col[r][p] for output slices [z0, z1) of one batch item.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t z0, std::size_t z1, T* col) {
  const std::size_t npix = (z1 - z0) * g.out_plane();
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t a = 0; a < g.k[0]; ++a)
      for (std::size_t b = 0; b < g.k[1]; ++b)
        for (std::size_t e = 0; e < g.k[2]; ++e, ++r) {
          T* dst = col + r * npix;
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const long iz = long(oz * g.stride[0] + a) - long(g.pad[0]);
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const long iy = long(oy * g.stride[1] + b) - long(g.pad[1]);
              T* row = dst + ((oz - z0) * g.out[1] + oy) * g.out[2];
              if (iz < 0 || iz >= long(g.in[0]) || iy < 0 || iy >= long(g.in[1])) {
                std::fill(row, row + g.out[2], T(0));
                continue;
              }
              const T* src = x + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
              for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
                const long ix = long(ox * g.stride[2] + e) - long(g.pad[2]);
                row[ox] = (ix < 0 || ix >= long(g.in[2])) ? T(0) : src[ix];
              }
            }
          }
        }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, std::size_t z0, std::size_t z1, T* dx) {
  const std::size_t npix = (z1 - z0) * g.out_plane();
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t a = 0; a < g.k[0]; ++a)
      for (std::size_t b = 0; b < g.k[1]; ++b)
        for (std::size_t e = 0; e < g.k[2]; ++e, ++r) {
          const T* srcrow = col + r * npix;
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const long iz = long(oz * g.stride[0] + a) - long(g.pad[0]);
            if (iz < 0 || iz >= long(g.in[0])) continue;
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const long iy = long(oy * g.stride[1] + b) - long(g.pad[1]);
              if (iy < 0 || iy >= long(g.in[1])) continue;
              const T* row = srcrow + ((oz - z0) * g.out[1] + oy) * g.out[2];
              T* dst = dx + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
              for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
                const long ix = long(ox * g.stride[2] + e) - long(g.pad[2]);
                if (ix >= 0 && ix < long(g.in[2])) dst[ix] += row[ox];
              }
            }
          }
        }
}

template <typename T>
void require_rank5(const char* op, const Tensor<T>& x) {
  if (x.rank() != 5) throw ShapeError(std::string(op) + ": expected [B,C,D,H,W], got " + to_string(x.shape()));
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvKernel<T>& kernel) {
  require_rank5("conv3d", x);
  const Tensor<T>& w = kernel.weight;
  if (!w.defined() || w.rank() != 5) throw ShapeError("conv3d: weight must be [out,in,kd,kh,kw]");
  ConvGeometry g{};
  g.batch = x.extent(0);
  g.in_c = x.extent(1);
  g.out_c = w.extent(0);
  if (w.extent(1) != g.in_c)
    throw ShapeError("conv3d: input has " + std::to_string(g.in_c) + " channels, kernel expects " +
                     std::to_string(w.extent(1)));
  const bool has_bias = kernel.bias.defined();
  if (has_bias && kernel.bias.shape() != Shape{g.out_c})
    throw ShapeError("conv3d: bias shape " + to_string(kernel.bias.shape()) + " for " + std::to_string(g.out_c) +
                     " output channels");
  for (int a = 0; a < 3; ++a) {
    g.in[a] = x.extent(2 + a);
    g.k[a] = w.extent(2 + a);
    g.stride[a] = kernel.stride[a];
    g.pad[a] = kernel.padding[a];
    if (g.stride[a] == 0) throw ShapeError("conv3d: stride must be positive");
    const std::size_t span = g.in[a] + 2 * g.pad[a];
    if (span < g.k[a] || (span - g.k[a]) % g.stride[a] != 0)
      throw ShapeError("conv3d: non-integral output extent on axis " + std::to_string(a) + " (extent " +
                       std::to_string(g.in[a]) + ", kernel " + std::to_string(g.k[a]) + ", pad " +
                       std::to_string(g.pad[a]) + ", stride " + std::to_string(g.stride[a]) + ")");
    g.out[a] = (span - g.k[a]) / g.stride[a] + 1;
  }

  const std::size_t rows = g.rows();
  const std::size_t out_vox = g.out_vox();
  const std::size_t zc = chunk_slices(g);
  std::vector<T> out(g.batch * g.out_c * out_vox);
  std::vector<T> col(rows * zc * g.out_plane());
  std::vector<T> tmp(g.out_c * zc * g.out_plane());
  const T* wd = w.data().data();
  const T* bd = has_bias ? kernel.bias.data().data() : nullptr;
  for (std::size_t bi = 0; bi < g.batch; ++bi) {
    const T* xb = x.data().data() + bi * g.in_c * g.in_vox();
    T* ob = out.data() + bi * g.out_c * out_vox;
    for (std::size_t z0 = 0; z0 < g.out[0]; z0 += zc) {
      const std::size_t z1 = std::min(g.out[0], z0 + zc);
      const std::size_t npix = (z1 - z0) * g.out_plane();
      im2col(g, xb, z0, z1, col.data());
      for (std::size_t o = 0; o < g.out_c; ++o)
        std::fill(tmp.begin() + o * npix, tmp.begin() + (o + 1) * npix, bd ? bd[o] : T(0));
      detail::gemm<T>(false, false, g.out_c, npix, rows, wd, col.data(), tmp.data(), true);
      for (std::size_t o = 0; o < g.out_c; ++o)
        std::copy(tmp.begin() + o * npix, tmp.begin() + (o + 1) * npix, ob + o * out_vox + z0 * g.out_plane());
    }
  }

  Shape out_shape{g.batch, g.out_c, g.out[0], g.out[1], g.out[2]};
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(kernel.bias);
  return detail::record<T>(std::move(out_shape), std::move(out), "conv3d", inputs,
                           [g, has_bias](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    const std::size_t rows = g.rows();
    const std::size_t out_vox = g.out_vox();
    const std::size_t zc = chunk_slices(g);
    std::vector<T> col(rows * zc * g.out_plane());
    std::vector<T> gtmp(g.out_c * zc * g.out_plane());
    T* gw = wn.requires_grad ? wn.grad_data() : nullptr;
    T* gx = xn.requires_grad ? xn.grad_data() : nullptr;
    T* gb = (has_bias && self.inputs[2]->requires_grad) ? self.inputs[2]->grad_data() : nullptr;
    for (std::size_t bi = 0; bi < g.batch; ++bi) {
      const T* xb = xn.value.data() + bi * g.in_c * g.in_vox();
      const T* gb_out = self.grad.data() + bi * g.out_c * out_vox;
      for (std::size_t z0 = 0; z0 < g.out[0]; z0 += zc) {
        const std::size_t z1 = std::min(g.out[0], z0 + zc);
        const std::size_t npix = (z1 - z0) * g.out_plane();
        for (std::size_t o = 0; o < g.out_c; ++o) {
          const T* src = gb_out + o * out_vox + z0 * g.out_plane();
          std::copy(src, src + npix, gtmp.begin() + o * npix);
          if (gb) {
            T s = T(0);
            for (std::size_t p = 0; p < npix; ++p) s += src[p];
            gb[o] += s;
          }
        }
        if (gw) {
          im2col(g, xb, z0, z1, col.data());
          detail::gemm<T>(false, true, g.out_c, rows, npix, gtmp.data(), col.data(), gw, true);
        }
        if (gx) {
          detail::gemm<T>(true, false, rows, npix, g.out_c, wn.value.data(), gtmp.data(), col.data(), false);
          col2im(g, col.data(), z0, z1, gx + bi * g.in_c * g.in_vox());
        }
      }
    }
  });
}

template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& x, std::size_t window, std::size_t stride) {
  require_rank5("maxpool3d", x);
  if (window == 0 || stride == 0) throw ShapeError("maxpool3d: window and stride must be positive");
  Triple in{x.extent(2), x.extent(3), x.extent(4)}, out{};
  for (int a = 0; a < 3; ++a) {
    if (in[a] < window || (in[a] - window) % stride != 0 || in[a] % stride != 0)
      throw ShapeError("maxpool3d: extent " + std::to_string(in[a]) + " on axis " + std::to_string(a) +
                       " is not divisible by stride " + std::to_string(stride));
    out[a] = (in[a] - window) / stride + 1;
  }
  const std::size_t planes = x.extent(0) * x.extent(1);
  const std::size_t in_vox = in[0] * in[1] * in[2];
  const std::size_t out_vox = out[0] * out[1] * out[2];
  std::vector<T> pooled(planes * out_vox);
  auto argmax = std::make_shared<std::vector<std::size_t>>(planes * out_vox);
  const T* xd = x.data().data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t oz = 0; oz < out[0]; ++oz)
      for (std::size_t oy = 0; oy < out[1]; ++oy)
        for (std::size_t ox = 0; ox < out[2]; ++ox) {
          std::size_t best = SIZE_MAX;
          for (std::size_t a = 0; a < window; ++a)
            for (std::size_t b = 0; b < window; ++b)
              for (std::size_t c = 0; c < window; ++c) {
                const std::size_t idx =
                    pl * in_vox + ((oz * stride + a) * in[1] + oy * stride + b) * in[2] + ox * stride + c;
                if (best == SIZE_MAX || xd[idx] > xd[best]) best = idx;
              }
          const std::size_t o = pl * out_vox + (oz * out[1] + oy) * out[2] + ox;
          pooled[o] = xd[best];
          (*argmax)[o] = best;
        }
  Shape out_shape{x.extent(0), x.extent(1), out[0], out[1], out[2]};
  PoolResult<T> result;
  result.argmax = *argmax;
  result.pooled = detail::record<T>(std::move(out_shape), std::move(pooled), "maxpool3d", {x},
                                    [argmax](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
  });
  return result;
}

namespace {

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> t;
};

AxisTaps half_pixel_taps(std::size_t n, std::size_t factor) {
  AxisTaps taps;
  const std::size_t m = n * factor;
  taps.lo.resize(m);
  taps.hi.resize(m);
  taps.t.resize(m);
  for (std::size_t o = 0; o < m; ++o) {
    double src = (double(o) + 0.5) / double(factor) - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    taps.lo[o] = i0;
    taps.hi[o] = std::min(i0 + 1, n - 1);
    taps.t[o] = src - double(i0);
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, std::size_t factor) {
  require_rank5("upsample_trilinear", x);
  if (factor < 2) throw ShapeError("upsample_trilinear: factor must be >= 2, got " + std::to_string(factor));
  Triple in{x.extent(2), x.extent(3), x.extent(4)};
  Triple out{in[0] * factor, in[1] * factor, in[2] * factor};
  auto taps = std::make_shared<std::array<AxisTaps, 3>>();
  for (int a = 0; a < 3; ++a) (*taps)[a] = half_pixel_taps(in[a], factor);
  const std::size_t planes = x.extent(0) * x.extent(1);
  const std::size_t in_vox = in[0] * in[1] * in[2];
  const std::size_t out_vox = out[0] * out[1] * out[2];

  // Visits the 8 weighted taps of every output voxel.
  auto for_each_tap = [taps, in, out, planes, in_vox, out_vox](auto&& fn) {
    const auto& [tz, ty, tx] = *taps;
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t z = 0; z < out[0]; ++z) {
        const std::size_t zi[2] = {tz.lo[z], tz.hi[z]};
        const T zw[2] = {T(1 - tz.t[z]), T(tz.t[z])};
        for (std::size_t y = 0; y < out[1]; ++y) {
          const std::size_t yi[2] = {ty.lo[y], ty.hi[y]};
          const T yw[2] = {T(1 - ty.t[y]), T(ty.t[y])};
          for (std::size_t xo = 0; xo < out[2]; ++xo) {
            const std::size_t xi[2] = {tx.lo[xo], tx.hi[xo]};
            const T xw[2] = {T(1 - tx.t[xo]), T(tx.t[xo])};
            const std::size_t o = pl * out_vox + (z * out[1] + y) * out[2] + xo;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 2; ++c)
                  fn(o, pl * in_vox + (zi[a] * in[1] + yi[b]) * in[2] + xi[c], zw[a] * yw[b] * xw[c]);
          }
        }
      }
  };

  std::vector<T> result(planes * out_vox, T(0));
  const T* xd = x.data().data();
  for_each_tap([&](std::size_t o, std::size_t i, T w) { result[o] += w * xd[i]; });
  Shape out_shape{x.extent(0), x.extent(1), out[0], out[1], out[2]};
  return detail::record<T>(std::move(out_shape), std::move(result), "upsample_trilinear", {x},
                           [for_each_tap](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    const T* go = self.grad.data();
    for_each_tap([&](std::size_t o, std::size_t i, T w) { g[i] += w * go[o]; });
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [in,out], got " + to_string(weight.shape()));
  const std::size_t in = weight.extent(0), out_f = weight.extent(1);
  if (x.rank() < 1 || x.shape().back() != in)
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not end in " + std::to_string(in));
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{out_f})
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " for width " + std::to_string(out_f));
  const std::size_t rows = x.numel() / in;
  std::vector<T> out(rows * out_f, T(0));
  if (has_bias)
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * out_f);
  detail::gemm<T>(false, false, rows, out_f, in, x.data().data(), weight.data().data(), out.data(), true);
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::record<T>(std::move(out_shape), std::move(out), "linear", inputs,
                           [rows, in, out_f, has_bias](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    const T* g = self.grad.data();
    if (xn.requires_grad) detail::gemm<T>(false, true, rows, in, out_f, g, wn.value.data(), xn.grad_data(), true);
    if (wn.requires_grad) detail::gemm<T>(true, false, in, out_f, rows, xn.value.data(), g, wn.grad_data(), true);
    if (has_bias && self.inputs[2]->requires_grad) {
      T* gb = self.inputs[2]->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (p.gamma.shape() != Shape{d} || p.beta.shape() != Shape{d})
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " + to_string(p.gamma.shape()) +
                     " and " + to_string(p.beta.shape()));
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  const T* gm = p.gamma.data().data();
  const T* bt = p.beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + p.epsilon);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gm[j] + bt[j];
    }
  }
  return detail::record<T>(x.shape(), std::move(out), "layer_norm", {x, p.gamma, p.beta},
                           [xhat, rstd, rows, d](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& gn = *self.inputs[1];
    auto& bn = *self.inputs[2];
    const T* g = self.grad.data();
    const T* h = xhat->data();
    if (gn.requires_grad) {
      T* gg = gn.grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * h[r * d + j];
    }
    if (bn.requires_grad) {
      T* gb = bn.grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
    if (xn.requires_grad) {
      T* gx = xn.grad_data();
      const T* gamma = gn.value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh = T(0), mean_dh_h = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = g[r * d + j] * gamma[j];
          mean_dh += dh;
          mean_dh_h += dh * h[r * d + j];
        }
        mean_dh /= T(d);
        mean_dh_h /= T(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = g[r * d + j] * gamma[j];
          gx[r * d + j] += (*rstd)[r] * (dh - mean_dh - h[r * d + j] * mean_dh_h);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("softmax: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return detail::record<T>(x.shape(), std::move(out), "softmax", {x}, [rows, n](detail::Node<T>& self) {
    T* gx = self.inputs[0]->grad_data();
    const T* g = self.grad.data();
    const T* y = self.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  for (auto& m : *mask) m = keep(rng) ? keep_scale : T(0);
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * (*mask)[i];
  return detail::record<T>(x.shape(), std::move(out), "dropout", {x}, [mask](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

#define VITREG_INSTANTIATE(T)                                                          \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const ConvKernel<T>&);                \
  template PoolResult<T> maxpool3d<T>(const Tensor<T>&, std::size_t, std::size_t);     \
  template Tensor<T> upsample_trilinear<T>(const Tensor<T>&, std::size_t);             \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const LayerNormParams<T>&);       \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                     \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, std::mt19937_64&);

VITREG_INSTANTIATE(float)
VITREG_INSTANTIATE(double)

}  // namespace vitreg

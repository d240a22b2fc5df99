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

#include "vitreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace vitreg {

DiceValue dice(const LabelMap& a, const LabelMap& b, std::uint16_t label) {
  if (a.extents != b.extents) throw ShapeError("dice: label maps have different extents");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool in_a = a.labels[i] == label, in_b = b.labels[i] == label;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return {1.0, true};
  return {2.0 * double(both) / double(na + nb), false};
}

std::vector<LabelDice> case_dice(const std::string& case_id, const LabelMap& fixed, const LabelMap& warped,
                                 std::span<const std::uint16_t> vocabulary) {
  std::vector<LabelDice> out;
  for (auto label : vocabulary) {
    if (label == 0) continue;
    const DiceValue d = dice(fixed, warped, label);
    out.push_back({case_id, label, d.value, d.empty});
  }
  return out;
}

DiceResult summarize(std::vector<LabelDice> entries) {
  DiceResult r;
  r.entries = std::move(entries);
  if (r.entries.empty()) return r;
  double s = 0.0;
  for (const auto& e : r.entries) s += e.dice;
  r.mean = s / double(r.entries.size());
  double v = 0.0;
  for (const auto& e : r.entries) v += (e.dice - r.mean) * (e.dice - r.mean);
  r.stddev = std::sqrt(v / double(r.entries.size()));
  return r;
}

LabelMap merge_labels(const LabelMap& labels, std::span<const std::pair<std::uint16_t, std::uint16_t>> pairs) {
  std::map<std::uint16_t, std::uint16_t> remap;
  for (const auto& [keep, fold] : pairs) remap[fold] = keep;
  LabelMap out = labels;
  for (auto& l : out.labels) {
    auto it = remap.find(l);
    if (it != remap.end()) l = it->second;
  }
  return out;
}

template <typename T>
FoldingResult jacobian_folding(const Tensor<T>& u) {
  if (u.rank() != 4 || u.extent(0) != 3) throw ShapeError("jacobian_folding: expected [3,D,H,W], got " + to_string(u.shape()));
  const Extents e = spatial_extents(u.shape());
  for (auto n : e)
    if (n < 2) throw ShapeError("jacobian_folding: every extent must be >= 2, got " + to_string(u.shape()));
  const std::size_t vox = voxel_count(e);
  const std::size_t step[3] = {e[1] * e[2], e[2], 1};
  const T* ud = u.data().data();
  FoldingResult r;
  r.det_extents = {e[0] - 1, e[1] - 1, e[2] - 1};
  r.det.reserve(voxel_count(r.det_extents));
  for (std::size_t z = 0; z + 1 < e[0]; ++z)
    for (std::size_t y = 0; y + 1 < e[1]; ++y)
      for (std::size_t x = 0; x + 1 < e[2]; ++x) {
        const std::size_t p = (z * e[1] + y) * e[2] + x;
        double j[3][3];
        for (int c = 0; c < 3; ++c)
          for (int a = 0; a < 3; ++a)
            j[c][a] = (c == a ? 1.0 : 0.0) + (double(ud[c * vox + p + step[a]]) - double(ud[c * vox + p]));
        const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                           j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                           j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        r.det.push_back(det);
        if (det <= 0.0) ++r.folded;
      }
  r.folded_fraction = double(r.folded) / double(r.det.size());
  return r;
}

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete_beta: x must lie in [0,1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0.0)) throw std::invalid_argument("student_t_two_sided: dof must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

TTestResult paired_t_test(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("paired_t_test: samples differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i] - y[i];
  mean /= double(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i] - mean;
    ss += d * d;
  }
  TTestResult r;
  r.dof = n - 1;
  const double var = ss / double(n - 1);
  if (var == 0.0) {
    r.degenerate = true;
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.t = mean / std::sqrt(var / double(n));
  r.p = student_t_two_sided(r.t, double(r.dof));
  return r;
}

template <typename T>
RgbImage displacement_to_rgb(const Tensor<T>& u, std::size_t slice_axis, std::size_t slice_index) {
  if (u.rank() != 4 || u.extent(0) != 3) throw ShapeError("displacement_to_rgb: expected [3,D,H,W], got " + to_string(u.shape()));
  if (slice_axis > 2) throw std::out_of_range("displacement_to_rgb: slice axis must be 0, 1 or 2");
  const Extents e = spatial_extents(u.shape());
  if (slice_index >= e[slice_axis])
    throw std::out_of_range("displacement_to_rgb: slice " + std::to_string(slice_index) + " outside extent " +
                            std::to_string(e[slice_axis]));
  std::size_t row_axis = slice_axis == 0 ? 1 : 0;
  std::size_t col_axis = slice_axis == 2 ? 1 : 2;
  RgbImage img;
  img.height = e[row_axis];
  img.width = e[col_axis];
  img.pixels.resize(img.width * img.height * 3);
  const std::size_t vox = voxel_count(e);
  const T* ud = u.data().data();
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      std::size_t idx[3];
      idx[slice_axis] = slice_index;
      idx[row_axis] = r;
      idx[col_axis] = c;
      const std::size_t p = (idx[0] * e[1] + idx[1]) * e[2] + idx[2];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(double(ud[ch * vox + p]), -10.0, 10.0);
        img.pixels[(r * img.width + c) * 3 + ch] = static_cast<std::uint8_t>(std::lround((v + 10.0) / 20.0 * 255.0));
      }
    }
  return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), std::streamsize(image.pixels.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

void write_dice_csv(const std::filesystem::path& path, std::span<const LabelDice> entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "case_id,label,dice\n";
  os.precision(17);
  for (const auto& e : entries) os << e.case_id << ',' << e.label << ',' << e.dice << '\n';
}

#define VITREG_INSTANTIATE(T)                                                                 \
  template FoldingResult jacobian_folding<T>(const Tensor<T>&);                               \
  template RgbImage displacement_to_rgb<T>(const Tensor<T>&, std::size_t, std::size_t);

VITREG_INSTANTIATE(float)
VITREG_INSTANTIATE(double)

}  // namespace vitreg

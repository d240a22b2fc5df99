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

#include <cstdint>
#include <vector>

#include "vitreg/regnet.hpp"

namespace vitreg {

/// Moments are kept in parameter order.
template <typename T>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  std::uint64_t step = 0;
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;

  bool initialized() const { return !first.empty(); }
};

/// Bias-corrected Adam update of every parameter from its gradient. Throws
/// if some parameter received no gradient.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, double lr);

/// lr0 * (1 - epoch / max_epochs)^power.
double poly_lr(double lr0, std::size_t epoch, std::size_t max_epochs, double power = 0.9);

}  // namespace vitreg

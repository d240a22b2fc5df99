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

#include "vitreg/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vitreg {

template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, double lr) {
  auto& entries = params.entries();
  for (const auto& [name, t] : entries)
    if (!t.has_grad()) throw std::logic_error("adam_step: parameter " + name + " has no gradient");
  if (!state.initialized()) {
    for (const auto& [name, t] : entries) {
      state.first.emplace_back(t.numel(), T(0));
      state.second.emplace_back(t.numel(), T(0));
    }
  }
  if (state.first.size() != entries.size()) throw std::logic_error("adam_step: optimizer state does not match parameters");

  ++state.step;
  const T b1 = T(AdamState<T>::beta1), b2 = T(AdamState<T>::beta2), eps = T(AdamState<T>::epsilon);
  const T c1 = T(1) - T(std::pow(AdamState<T>::beta1, double(state.step)));
  const T c2 = T(1) - T(std::pow(AdamState<T>::beta2, double(state.step)));
  const T rate = T(lr);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& t = entries[k].second;
    auto value = t.mutable_data();
    const auto grad = t.grad();
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (m.size() != value.size()) throw std::logic_error("adam_step: moment shape differs for " + entries[k].first);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      value[i] -= rate * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

double poly_lr(double lr0, std::size_t epoch, std::size_t max_epochs, double power) {
  if (max_epochs == 0) throw std::invalid_argument("poly_lr: max_epochs must be positive");
  if (epoch > max_epochs)
    throw std::out_of_range("poly_lr: epoch " + std::to_string(epoch) + " exceeds " + std::to_string(max_epochs));
  return lr0 * std::pow(1.0 - double(epoch) / double(max_epochs), power);
}

template void adam_step<float>(ModelParams<float>&, AdamState<float>&, double);
template void adam_step<double>(ModelParams<double>&, AdamState<double>&, double);

}  // namespace vitreg

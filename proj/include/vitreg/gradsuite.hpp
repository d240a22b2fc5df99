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
#include <string>
#include <vector>

namespace vitreg {

struct GradSuiteOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double tolerance = 1e-4;
  bool include_network = true;
  std::size_t network_coords_per_tensor = 3;
};

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;  // worst over seeds
  std::size_t checked = 0;     // coordinates compared
  bool passed = false;
  std::size_t skipped = 0;     // coordinates rejected by the smoothness guard
};

/// Finite-difference check, in double precision, of every differentiable
/// operation on small random inputs plus the full network at the desk
/// configuration (dropout off).
std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& options = {});

}  // namespace vitreg

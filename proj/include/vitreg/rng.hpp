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
#include <random>

namespace vitreg {

// Every random stream is derived from one root seed, split by purpose and an
// index (epoch, case number, ...). Streams never share state, so a run can be
// resumed at any epoch boundary.
enum class SeedPurpose : std::uint64_t { init = 1, shuffle = 2, dropout = 3, augment = 4, data = 5, check = 6 };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, SeedPurpose purpose, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(root) ^ static_cast<std::uint64_t>(purpose)) ^ index);
}

inline std::mt19937_64 make_rng(std::uint64_t root, SeedPurpose purpose, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(root, purpose, index));
}

}  // namespace vitreg

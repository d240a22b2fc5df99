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

// File formats.
//
// Volume file (.vvol), all integers little-endian:
//   0   char[4]  "VVOL"
//   4   u16      version = 1
//   6   u16      dtype (1 = f32, 2 = u16)
//   8   u16      ndim
//   10  u16      reserved = 0
//   12  u32[ndim] extents, slowest axis first
//   ..  payload, row-major, little-endian
//
// Checkpoint (.vckp):
//   char[4] "VCKP", u16 version = 1, u16 reserved, u64 epoch, u64 adam step,
//   u32 entry count, then per entry: u32 name length, name bytes, u16 ndim,
//   u32[ndim] extents, u8 has_moments, f32 values[n], and when has_moments
//   f32 first[n], f32 second[n].

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "vitreg/adam.hpp"
#include "vitreg/regnet.hpp"
#include "vitreg/tensor.hpp"
#include "vitreg/volume.hpp"

namespace vitreg {

class IoError : public std::runtime_error {
 public:
  enum class Kind { open_failed, bad_magic, bad_version, dtype_mismatch, truncated_payload, bad_header, shape_mismatch };

  IoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class DType : std::uint16_t { f32 = 1, u16 = 2 };

struct VolumeHeader {
  DType dtype = DType::f32;
  Shape extents;
};

void save_volume(const std::filesystem::path& path, const Tensor<float>& volume);
void save_labels(const std::filesystem::path& path, const LabelMap& labels);

VolumeHeader read_volume_header(const std::filesystem::path& path);
Tensor<float> load_volume(const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);
std::variant<Tensor<float>, LabelMap> load_volume_file(const std::filesystem::path& path);

// Dataset manifest (JSON). Paths are relative to the manifest's directory.
struct ManifestCase {
  std::string id;
  std::string split;  // train | val | test
  std::string fixed, moving;
  std::string fixed_labels, moving_labels;
  std::string field;  // optional ground-truth generating field
};

struct Manifest {
  std::filesystem::path root;
  Extents extents{};
  std::vector<std::uint16_t> labels;
  std::vector<std::pair<std::uint16_t, std::uint16_t>> merge_pairs;
  std::vector<ManifestCase> cases;

  std::vector<const ManifestCase*> split(const std::string& name) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct Checkpoint {
  ModelParams<float> params;
  AdamState<float> adam;
  std::uint64_t epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params, const AdamState<float>& adam,
                     std::uint64_t epoch);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads a checkpoint and checks it against parameters built from the active
/// configuration; every missing, extra or mis-shaped entry is reported.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelParams<float>& expected);

}  // namespace vitreg

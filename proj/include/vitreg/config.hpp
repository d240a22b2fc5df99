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
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitreg/regnet.hpp"
#include "vitreg/trainer.hpp"

namespace vitreg {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct DataConfig {
  std::size_t train_pairs = 64;
  std::size_t val_pairs = 8;
  std::size_t test_pairs = 8;
  double amplitude = 3.0;
  std::size_t coarse_factor = 8;
  std::size_t max_field_attempts = 20;  // redraws of a folding generating field
};

struct RunConfig {
  std::uint64_t seed = 0;
  RegNetConfig model;
  TrainConfig train;
  DataConfig data;

  /// 32^3 phantoms with the desk network; the experiment configuration.
  static RunConfig desk();

  /// Propagates the root seed and the dropout rate into the sub-configs.
  void propagate();
  void validate() const;
};

/// Parses a JSON document (text) into a RunConfig. Keys missing from the
/// document keep their desk defaults; unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides = {});

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Canonical JSON form (every key present).
std::string to_json(const RunConfig& config);

/// Phantom pairs for the train, val and test splits in that order. Case k
/// (counted across splits) draws from the data stream k of the root seed;
/// a generating field that folds is redrawn from the same stream.
Dataset synthesize_dataset(const RunConfig& config);

}  // namespace vitreg

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
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vitreg/adam.hpp"
#include "vitreg/io.hpp"
#include "vitreg/metrics.hpp"
#include "vitreg/phantom.hpp"
#include "vitreg/regnet.hpp"

namespace vitreg {

struct TrainConfig {
  double lambda = 0.02;
  double lr0 = 1e-4;
  double decay_power = 0.9;
  std::size_t epochs = 50;
  std::size_t batch = 2;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  std::size_t validate_every = 0;    // 0 disables validation
  std::size_t checkpoint_every = 0;  // 0 keeps only the final checkpoint
  bool augment = true;               // random flips

  void validate() const;
};

struct Case {
  std::string id;
  RegistrationPair pair;
};

struct Dataset {
  std::vector<Case> train, val, test;
  std::vector<std::uint16_t> labels;
  std::vector<std::pair<std::uint16_t, std::uint16_t>> merge_pairs;
  Extents extents{};
};

/// Reads every case of the manifest into memory.
Dataset load_dataset(const Manifest& manifest);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double total = 0.0;
  double mse = 0.0;
  double diffusion = 0.0;
  double val_dice_mean;   // NaN when not validated this epoch
  double val_folding;     // mean folded fraction, NaN when not validated
};

struct TrainState {
  ModelParams<float> params;
  AdamState<float> adam;
  std::size_t epoch = 0;  // completed epochs
};

struct TrainHooks {
  std::filesystem::path checkpoint_dir;  // empty disables checkpoints
  std::filesystem::path log_csv;         // empty disables the CSV log
  std::function<void(const EpochLog&)> on_epoch;
};

/// Runs epochs state.epoch .. config.epochs - 1 and returns their log rows.
std::vector<EpochLog> train(const RegNetConfig& model, const TrainConfig& config, const Dataset& data,
                            TrainState& state, const TrainHooks& hooks = {});

struct CaseReport {
  std::string id;
  std::vector<LabelDice> dice;
  std::vector<LabelDice> baseline;  // unwarped moving labels
  double folded_fraction = 0.0;
  double seconds = 0.0;             // forward pass wall clock
};

struct ValidationReport {
  std::vector<CaseReport> cases;
  DiceResult dice;
  DiceResult baseline;
  double folding_mean = 0.0;
  double folding_std = 0.0;
};

/// Dropout-free evaluation: Dice of warped moving labels against fixed labels
/// and Jacobian folding of each predicted field.
ValidationReport validate(const ModelParams<float>& params, const RegNetConfig& model, std::span<const Case> cases,
                          std::span<const std::uint16_t> labels,
                          std::span<const std::pair<std::uint16_t, std::uint16_t>> merge_pairs = {});

/// Evaluates given fields (one per case) instead of a network.
ValidationReport evaluate_fields(std::span<const Case> cases, std::span<const Tensor<float>> fields,
                                 std::span<const std::uint16_t> labels,
                                 std::span<const std::pair<std::uint16_t, std::uint16_t>> merge_pairs = {});

void write_log_csv(const std::filesystem::path& path, std::span<const EpochLog> rows, bool append);

}  // namespace vitreg

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

#include "vitreg/config.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vitreg/metrics.hpp"
#include "vitreg/phantom.hpp"
#include "vitreg/rng.hpp"

namespace vitreg {

using nlohmann::json;

RunConfig RunConfig::desk() {
  RunConfig c;
  c.model.input = {32, 32, 32};
  c.train.lr0 = 5e-4;
  c.train.validate_every = 5;
  c.data.coarse_factor = 16;
  c.train.checkpoint_every = 10;
  c.propagate();
  return c;
}

void RunConfig::propagate() {
  model.seed = seed;
  train.seed = seed;
  model.vit.dropout = train.dropout;
}

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train", e.what());
  }
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model", e.what());
  }
  if (!(data.amplitude >= 0.0) || !std::isfinite(data.amplitude))
    throw ConfigError("data.amplitude", "must be finite and >= 0");
  if (data.coarse_factor < 2) throw ConfigError("data.coarse_factor", "must be >= 2");
  for (auto n : model.input)
    if (n % data.coarse_factor != 0)
      throw ConfigError("data.coarse_factor", "must divide every input extent (got " + std::to_string(n) + ")");
  if (data.train_pairs + data.val_pairs + data.test_pairs == 0) throw ConfigError("data", "no pairs requested");
  if (data.max_field_attempts == 0) throw ConfigError("data.max_field_attempts", "must be >= 1");
}

namespace {

json to_tree(const RunConfig& c) {
  const auto& v = c.model.vit;
  return {
      {"seed", c.seed},
      {"model",
       {{"input", std::vector<std::size_t>(c.model.input.begin(), c.model.input.end())},
        {"enc_widths", c.model.enc_widths},
        {"dec_widths", c.model.dec_widths},
        {"vit_channels", c.model.vit_channels},
        {"head_init_scale", c.model.head_init_scale},
        {"vit", {{"patch", v.patch}, {"dim", v.dim}, {"blocks", v.blocks}, {"heads", v.heads}, {"mlp_dim", v.mlp_dim}}}}},
      {"train",
       {{"lambda", c.train.lambda},
        {"lr0", c.train.lr0},
        {"decay_power", c.train.decay_power},
        {"epochs", c.train.epochs},
        {"batch", c.train.batch},
        {"dropout", c.train.dropout},
        {"validate_every", c.train.validate_every},
        {"checkpoint_every", c.train.checkpoint_every},
        {"augment", c.train.augment}}},
      {"data",
       {{"train_pairs", c.data.train_pairs},
        {"val_pairs", c.data.val_pairs},
        {"test_pairs", c.data.test_pairs},
        {"amplitude", c.data.amplitude},
        {"coarse_factor", c.data.coarse_factor},
        {"max_field_attempts", c.data.max_field_attempts}}},
  };
}

bool same_kind(const json& want, const json& got) {
  if (want.is_number_unsigned()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<long long>() >= 0);
  if (want.is_number()) return got.is_number();
  if (want.is_array()) {
    if (!got.is_array()) return false;
    for (const auto& e : got)
      if (!(e.is_number_unsigned() || (e.is_number_integer() && e.get<long long>() >= 0))) return false;
    return true;
  }
  return want.type() == got.type();
}

std::string kind_name(const json& want) {
  if (want.is_number_unsigned()) return "a non-negative integer";
  if (want.is_number()) return "a number";
  if (want.is_array()) return "an array of non-negative integers";
  if (want.is_boolean()) return "a boolean";
  return want.type_name();
}

void merge(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [k, v] : patch.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw ConfigError(key, "unknown key");
    json& slot = base[k];
    if (slot.is_object()) {
      merge(slot, v, key);
    } else {
      if (!same_kind(slot, v)) throw ConfigError(key, "expected " + kind_name(slot));
      slot = v;
    }
  }
}

void apply_override(json& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  // Rebuild the dotted path as a nested patch so merge() does the checking.
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge(base, patch, "");
}

RunConfig from_tree(const json& j) {
  RunConfig c;
  c.seed = j["seed"].get<std::uint64_t>();
  const auto& m = j["model"];
  const auto input = m["input"].get<std::vector<std::size_t>>();
  if (input.size() != 3) throw ConfigError("model.input", "must have three extents");
  c.model.input = {input[0], input[1], input[2]};
  c.model.enc_widths = m["enc_widths"].get<std::vector<std::size_t>>();
  c.model.dec_widths = m["dec_widths"].get<std::vector<std::size_t>>();
  c.model.vit_channels = m["vit_channels"].get<std::size_t>();
  c.model.head_init_scale = m["head_init_scale"].get<double>();
  const auto& v = m["vit"];
  c.model.vit.patch = v["patch"].get<std::size_t>();
  c.model.vit.dim = v["dim"].get<std::size_t>();
  c.model.vit.blocks = v["blocks"].get<std::size_t>();
  c.model.vit.heads = v["heads"].get<std::size_t>();
  c.model.vit.mlp_dim = v["mlp_dim"].get<std::size_t>();
  const auto& t = j["train"];
  c.train.lambda = t["lambda"].get<double>();
  c.train.lr0 = t["lr0"].get<double>();
  c.train.decay_power = t["decay_power"].get<double>();
  c.train.epochs = t["epochs"].get<std::size_t>();
  c.train.batch = t["batch"].get<std::size_t>();
  c.train.dropout = t["dropout"].get<double>();
  c.train.validate_every = t["validate_every"].get<std::size_t>();
  c.train.checkpoint_every = t["checkpoint_every"].get<std::size_t>();
  c.train.augment = t["augment"].get<bool>();
  const auto& d = j["data"];
  c.data.train_pairs = d["train_pairs"].get<std::size_t>();
  c.data.val_pairs = d["val_pairs"].get<std::size_t>();
  c.data.test_pairs = d["test_pairs"].get<std::size_t>();
  c.data.amplitude = d["amplitude"].get<double>();
  c.data.coarse_factor = d["coarse_factor"].get<std::size_t>();
  c.data.max_field_attempts = d["max_field_attempts"].get<std::size_t>();
  c.propagate();
  return c;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json tree = to_tree(RunConfig::desk());
  if (!json_text.empty()) {
    json doc;
    try {
      doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
    }
    merge(tree, doc, "");
  }
  for (const auto& o : overrides) apply_override(tree, o);
  RunConfig c = from_tree(tree);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("--config", "cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

std::string to_json(const RunConfig& config) { return to_tree(config).dump(2); }

Dataset synthesize_dataset(const RunConfig& config) {
  config.validate();
  Dataset d;
  d.extents = config.model.input;
  d.labels = {kOuterShell, kInnerShell, kCore, kBlobA, kBlobB};
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", config.data.train_pairs}, {"val", config.data.val_pairs}, {"test", config.data.test_pairs}};
  std::vector<Case>* targets[] = {&d.train, &d.val, &d.test};
  std::size_t index = 0;
  for (int s = 0; s < 3; ++s) {
    const auto& [split, count] = splits[s];
    for (std::size_t k = 0; k < count; ++k, ++index) {
      auto rng = make_rng(config.seed, SeedPurpose::data, index);
      const Phantom ph = generate_phantom(rng, config.model.input);
      Tensor<float> field;
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt == config.data.max_field_attempts)
          throw std::runtime_error("could not draw a fold-free field for case " + std::to_string(index));
        field = generate_smooth_field(rng, config.model.input, config.data.amplitude, config.data.coarse_factor);
        if (jacobian_folding(field).folded == 0) break;
      }
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%03zu", split, k);
      targets[s]->push_back({id, make_pair(ph.image, ph.labels, field)});
    }
  }
  return d;
}

}  // namespace vitreg

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

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"
#include "vitreg/config.hpp"
#include "vitreg/gradsuite.hpp"
#include "vitreg/io.hpp"
#include "vitreg/metrics.hpp"
#include "vitreg/phantom.hpp"
#include "vitreg/rng.hpp"
#include "vitreg/spatial.hpp"
#include "vitreg/trainer.hpp"

namespace fs = std::filesystem;
using namespace vitreg;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

// Raised for problems with the user's request rather than with the data.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;

  RunConfig load() const {
    std::vector<std::string> o = overrides;
    if (seed) o.push_back("seed=" + std::to_string(*seed));
    return config_path.empty() ? parse_run_config("", o) : load_run_config(config_path, o);
  }
};

void add_common(CLI::App* app, Common& c, bool out_required) {
  app->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "root seed (overrides the config)");
  app->add_option("--set", c.overrides, "dotted-key override, e.g. train.lr0=1e-4")->take_all();
  auto* out = app->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text << '\n';
}

void require_extents(const RunConfig& cfg, const Extents& e, const std::string& what) {
  if (cfg.model.input != e)
    throw UsageError(what + " has extents " + to_string(Shape(e.begin(), e.end())) + " but model.input is " +
                     to_string(Shape(cfg.model.input.begin(), cfg.model.input.end())));
}

ModelParams<float> model_params(const RunConfig& cfg, const std::string& checkpoint) {
  ModelParams<float> params = build<float>(cfg.model);
  if (checkpoint.empty()) return params;
  return load_checkpoint(checkpoint, params).params;
}

// ---------------------------------------------------------------- gen-data

int gen_data(const Common& common) {
  const RunConfig cfg = common.load();
  const Dataset data = synthesize_dataset(cfg);
  const fs::path root = common.out;
  fs::create_directories(root / "cases");
  Manifest manifest;
  manifest.root = root;
  manifest.extents = data.extents;
  manifest.labels = data.labels;
  const std::pair<const char*, const std::vector<Case>*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (const auto& [split, cases] : splits) {
    for (const Case& c : *cases) {
      ManifestCase mc;
      mc.id = c.id;
      mc.split = split;
      const std::string base = "cases/" + c.id;
      mc.fixed = base + "_fixed.vvol";
      mc.moving = base + "_moving.vvol";
      mc.fixed_labels = base + "_fixed_labels.vvol";
      mc.moving_labels = base + "_moving_labels.vvol";
      mc.field = base + "_field.vvol";
      save_volume(root / mc.fixed, c.pair.fixed);
      save_volume(root / mc.moving, c.pair.moving);
      save_labels(root / mc.fixed_labels, c.pair.fixed_labels);
      save_labels(root / mc.moving_labels, c.pair.moving_labels);
      save_volume(root / mc.field, c.pair.field);
      manifest.cases.push_back(std::move(mc));
    }
  }
  save_manifest(root / "manifest.json", manifest);
  write_text(root / "config.json", to_json(cfg));
  std::cout << "wrote " << manifest.cases.size() << " cases to " << (root / "manifest.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

int train_cmd(const Common& common, const std::string& manifest_path, const std::string& resume) {
  const RunConfig cfg = common.load();
  const Manifest manifest = load_manifest(manifest_path);
  require_extents(cfg, manifest.extents, "manifest " + manifest_path);
  const Dataset data = load_dataset(manifest);
  const fs::path out = common.out;
  fs::create_directories(out);
  write_text(out / "config.json", to_json(cfg));

  TrainState state;
  state.params = build<float>(cfg.model);
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume, state.params);
    state.params = std::move(ck.params);
    state.adam = std::move(ck.adam);
    state.epoch = ck.epoch;
  }
  TrainHooks hooks;
  hooks.checkpoint_dir = out / "checkpoints";
  hooks.log_csv = out / "log.csv";
  hooks.on_epoch = [&](const EpochLog& r) {
    std::printf("epoch %zu/%zu lr %.4e total %.6e mse %.6e diffusion %.6e", r.epoch, cfg.train.epochs, r.lr, r.total,
                r.mse, r.diffusion);
    if (!std::isnan(r.val_dice_mean)) std::printf(" val_dice %.4f val_folding %.5f", r.val_dice_mean, r.val_folding);
    std::printf("\n");
    std::fflush(stdout);
  };
  train(cfg.model, cfg.train, data, state, hooks);
  return 0;
}

// ---------------------------------------------------------------- register

int register_cmd(const Common& common, const std::string& checkpoint, const std::string& fixed_path,
                 const std::string& moving_path, const std::string& moving_labels_path) {
  const RunConfig cfg = common.load();
  const Tensor<float> fixed = load_volume(fixed_path);
  const Tensor<float> moving = load_volume(moving_path);
  if (fixed.rank() != 3 || fixed.shape() != moving.shape())
    throw UsageError("fixed and moving volumes must be 3-D with equal extents");
  require_extents(cfg, spatial_extents(fixed.shape()), fixed_path);
  const ModelParams<float> params = model_params(cfg, checkpoint);
  const Tensor<float> u = forward(params, cfg.model, fixed, moving).detach();
  const fs::path out = common.out;
  fs::create_directories(out);
  save_volume(out / "field.vvol", u);
  save_volume(out / "warped.vvol", warp(moving, u).detach());
  if (!moving_labels_path.empty()) save_labels(out / "warped_labels.vvol", warp_nearest(load_labels(moving_labels_path), u));
  const FoldingResult fold = jacobian_folding(u);
  std::printf("folded_fraction %.6f\n", fold.folded_fraction);
  return 0;
}

// ---------------------------------------------------------------- eval

int eval_cmd(const Common& common, const std::string& manifest_path, const std::string& split,
             const std::string& checkpoint, bool zero_field, bool oracle_field) {
  if (int(zero_field) + int(oracle_field) + int(!checkpoint.empty()) > 1)
    throw UsageError("choose at most one of --checkpoint, --zero-field, --oracle-field");
  const RunConfig cfg = common.load();
  const Manifest manifest = load_manifest(manifest_path);
  const Dataset data = load_dataset(manifest);
  const std::vector<Case>& cases = split == "train" ? data.train : split == "val" ? data.val : data.test;
  if (cases.empty()) throw UsageError("split '" + split + "' has no cases");

  ValidationReport report;
  std::string mode;
  if (zero_field || oracle_field) {
    mode = zero_field ? "zero-field" : "oracle-field";
    std::vector<Tensor<float>> fields;
    for (const auto& c : cases) {
      const Shape s{3, c.pair.fixed.extent(0), c.pair.fixed.extent(1), c.pair.fixed.extent(2)};
      if (zero_field) {
        fields.push_back(Tensor<float>::zeros(s));
      } else {
        if (!c.pair.field.defined()) throw UsageError("case " + c.id + " has no generating field");
        fields.push_back(invert_field(c.pair.field));
      }
    }
    report = evaluate_fields(cases, fields, data.labels, data.merge_pairs);
  } else {
    mode = checkpoint.empty() ? "untrained" : "checkpoint";
    require_extents(cfg, manifest.extents, "manifest " + manifest_path);
    report = validate(model_params(cfg, checkpoint), cfg.model, cases, data.labels, data.merge_pairs);
  }

  const fs::path out = common.out;
  fs::create_directories(out);
  std::vector<LabelDice> entries;
  for (const auto& c : report.cases) entries.insert(entries.end(), c.dice.begin(), c.dice.end());
  write_dice_csv(out / "dice.csv", entries);
  {
    std::ofstream os(out / "cases.csv");
    os.precision(17);
    os << "case_id,dice_mean,baseline_dice_mean,folded_fraction,seconds\n";
    for (const auto& c : report.cases) {
      double d = 0.0, b = 0.0;
      for (const auto& e : c.dice) d += e.dice;
      for (const auto& e : c.baseline) b += e.dice;
      os << c.id << ',' << d / double(c.dice.size()) << ',' << b / double(c.baseline.size()) << ','
         << c.folded_fraction << ',' << c.seconds << '\n';
    }
  }
  double seconds = 0.0;
  for (const auto& c : report.cases) seconds += c.seconds;
  nlohmann::json summary = {
      {"mode", mode},
      {"split", split},
      {"cases", report.cases.size()},
      {"dice_mean", report.dice.mean},
      {"dice_std", report.dice.stddev},
      {"baseline_dice_mean", report.baseline.mean},
      {"baseline_dice_std", report.baseline.stddev},
      {"folding_mean", report.folding_mean},
      {"folding_std", report.folding_std},
      {"seconds_per_case", seconds / double(report.cases.size())},
  };
  write_text(out / "summary.json", summary.dump(2));
  std::printf("dice %.4f +- %.4f (baseline %.4f) folding %.6f +- %.6f\n", report.dice.mean, report.dice.stddev,
              report.baseline.mean, report.folding_mean, report.folding_std);
  return 0;
}

// ---------------------------------------------------------------- export-rgb

int export_rgb(const std::string& field_path, std::size_t axis, std::optional<std::size_t> slice,
               const std::string& out) {
  const Tensor<float> u = load_volume(field_path);
  if (u.rank() != 4 || u.extent(0) != 3) throw UsageError(field_path + " is not a displacement field [3,D,H,W]");
  if (axis > 2) throw UsageError("--axis must be 0, 1 or 2");
  const std::size_t index = slice.value_or(u.extent(1 + axis) / 2);
  write_ppm(out, displacement_to_rgb(u, axis, index));
  return 0;
}

// ---------------------------------------------------------------- grad-check

int grad_check_cmd(std::optional<std::uint64_t> seed, bool skip_network) {
  GradSuiteOptions opts;
  if (seed) opts.seeds = {*seed};
  opts.include_network = !skip_network;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t failed = 0;
  for (const auto& e : run_grad_suite(opts)) {
    std::printf("%-26s max_rel_error %.3e checked %7zu skipped %4zu %s\n", e.name.c_str(), e.max_rel_error, e.checked,
                e.skipped, e.passed ? "PASS" : "FAIL");
    failed += !e.passed;
  }
  std::printf("elapsed %.1fs\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  if (failed) throw std::runtime_error("gradient check failed for " + std::to_string(failed) + " entries");
  return 0;
}

void apply_thread_cap() {
  const char* env = std::getenv("VITREG_THREADS");
  if (!env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) throw UsageError(std::string("VITREG_THREADS must be a positive integer, got '") + env + "'");
  Eigen::setNbThreads(int(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vitreg: transformer-based deformable registration of 3-D volumes"};
  app.require_subcommand(1);

  Common gen, tr, reg, ev;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic phantom pairs and a manifest");
  add_common(gen_cmd, gen, true);

  std::string manifest, resume;
  auto* train_sc = app.add_subcommand("train", "train the network on a manifest");
  add_common(train_sc, tr, true);
  train_sc->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  train_sc->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  std::string checkpoint, fixed, moving, moving_labels;
  auto* reg_sc = app.add_subcommand("register", "register one moving volume to a fixed volume");
  add_common(reg_sc, reg, true);
  reg_sc->add_option("--checkpoint", checkpoint, "trained checkpoint (untrained model when omitted)")
      ->check(CLI::ExistingFile);
  reg_sc->add_option("--fixed", fixed, "fixed volume")->required()->check(CLI::ExistingFile);
  reg_sc->add_option("--moving", moving, "moving volume")->required()->check(CLI::ExistingFile);
  reg_sc->add_option("--moving-labels", moving_labels, "moving label map to warp")->check(CLI::ExistingFile);

  std::string eval_manifest, eval_checkpoint, split = "val";
  bool zero_field = false, oracle_field = false;
  auto* eval_sc = app.add_subcommand("eval", "Dice, folding and timing over a manifest split");
  add_common(eval_sc, ev, true);
  eval_sc->add_option("--manifest", eval_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  eval_sc->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_sc->add_option("--checkpoint", eval_checkpoint, "trained checkpoint")->check(CLI::ExistingFile);
  eval_sc->add_flag("--zero-field", zero_field, "evaluate the identity transform");
  eval_sc->add_flag("--oracle-field", oracle_field, "evaluate the inverted generating field");

  std::string field_path, ppm_out;
  std::size_t axis = 0;
  std::optional<std::size_t> slice;
  auto* rgb_sc = app.add_subcommand("export-rgb", "write one slice of a displacement field as a PPM image");
  rgb_sc->add_option("--field", field_path, "displacement field volume")->required()->check(CLI::ExistingFile);
  rgb_sc->add_option("--axis", axis, "slice axis (0 depth, 1 height, 2 width)");
  rgb_sc->add_option("--slice", slice, "slice index (middle when omitted)");
  rgb_sc->add_option("--out", ppm_out, "output .ppm path")->required();

  std::optional<std::uint64_t> gc_seed;
  bool skip_network = false;
  auto* gc_sc = app.add_subcommand("grad-check", "run the finite-difference gradient suite");
  gc_sc->add_option("--seed", gc_seed, "single seed instead of 0,1,2");
  gc_sc->add_flag("--skip-network", skip_network, "only check the individual operations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << one_line(e.what()) << '\n';
    return kConfigError;
  }

  try {
    apply_thread_cap();
    if (*gen_cmd) return gen_data(gen);
    if (*train_sc) return train_cmd(tr, manifest, resume);
    if (*reg_sc) return register_cmd(reg, checkpoint, fixed, moving, moving_labels);
    if (*eval_sc) return eval_cmd(ev, eval_manifest, split, eval_checkpoint, zero_field, oracle_field);
    if (*rgb_sc) return export_rgb(field_path, axis, slice, ppm_out);
    if (*gc_sc) return grad_check_cmd(gc_seed, skip_network);
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << one_line(e.what()) << '\n';
    return kConfigError;
  } catch (const UsageError& e) {
    std::cerr << "error: config: " << one_line(e.what()) << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << one_line(e.what()) << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}

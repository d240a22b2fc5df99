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

#include "vitreg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "vitreg/losses.hpp"
#include "vitreg/rng.hpp"
#include "vitreg/spatial.hpp"

namespace vitreg {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("train.lambda must be >= 0");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw std::invalid_argument("train.lr0 must be > 0");
  if (!(decay_power >= 0.0)) throw std::invalid_argument("train.decay_power must be >= 0");
  if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("train.dropout must lie in [0, 1)");
}

Dataset load_dataset(const Manifest& manifest) {
  Dataset d;
  d.labels = manifest.labels;
  d.merge_pairs = manifest.merge_pairs;
  d.extents = manifest.extents;
  for (const auto& mc : manifest.cases) {
    Case c;
    c.id = mc.id;
    c.pair.fixed = load_volume(manifest.root / mc.fixed);
    c.pair.moving = load_volume(manifest.root / mc.moving);
    if (!mc.fixed_labels.empty()) c.pair.fixed_labels = load_labels(manifest.root / mc.fixed_labels);
    if (!mc.moving_labels.empty()) c.pair.moving_labels = load_labels(manifest.root / mc.moving_labels);
    if (!mc.field.empty()) c.pair.field = load_volume(manifest.root / mc.field);
    auto& split = mc.split == "train" ? d.train : mc.split == "val" ? d.val : d.test;
    split.push_back(std::move(c));
  }
  return d;
}

namespace {

Tensor<float> stack(const std::vector<const Tensor<float>*>& vols) {
  const Shape& s = vols.front()->shape();
  std::vector<float> values;
  values.reserve(vols.size() * numel(s));
  for (const auto* v : vols) values.insert(values.end(), v->data().begin(), v->data().end());
  return Tensor<float>({vols.size(), 1, s[0], s[1], s[2]}, std::move(values));
}

void check_case(const Case& c, const Extents& want) {
  const Shape s{want[0], want[1], want[2]};
  if (c.pair.fixed.shape() != s || c.pair.moving.shape() != s)
    throw ShapeError("case " + c.id + ": volumes are " + to_string(c.pair.fixed.shape()) + " / " +
                     to_string(c.pair.moving.shape()) + ", model expects " + to_string(s));
}

const double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::vector<EpochLog> train(const RegNetConfig& model, const TrainConfig& config, const Dataset& data,
                            TrainState& state, const TrainHooks& hooks) {
  config.validate();
  RegNetConfig cfg = model;
  cfg.vit.dropout = config.dropout;
  cfg.validate();
  if (state.epoch > config.epochs)
    throw std::invalid_argument("train: state is at epoch " + std::to_string(state.epoch) + " beyond " +
                                std::to_string(config.epochs));
  std::vector<EpochLog> log;
  if (state.epoch == config.epochs) return log;
  if (data.train.empty()) throw std::invalid_argument("train: the dataset has no training cases");
  for (const auto& c : data.train) check_case(c, cfg.input);
  for (const auto& c : data.val) check_case(c, cfg.input);
  if (!hooks.checkpoint_dir.empty()) fs::create_directories(hooks.checkpoint_dir);
  if (!hooks.log_csv.empty() && state.epoch == 0) write_log_csv(hooks.log_csv, {}, false);

  const std::size_t n = data.train.size();
  for (std::size_t e = state.epoch; e < config.epochs; ++e) {
    const double lr = poly_lr(config.lr0, e, config.epochs, config.decay_power);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = make_rng(config.seed, SeedPurpose::shuffle, e);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto augment_rng = make_rng(config.seed, SeedPurpose::augment, e);
    auto dropout_rng = make_rng(config.seed, SeedPurpose::dropout, e);

    double total = 0.0, mse = 0.0, diffusion = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch) {
      const std::size_t stop = std::min(n, start + config.batch);
      std::vector<RegistrationPair> pairs;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& pair = data.train[order[i]].pair;
        pairs.push_back(config.augment ? random_flip(pair, augment_rng) : pair);
      }
      std::vector<const Tensor<float>*> fs_, ms_;
      for (const auto& p : pairs) {
        fs_.push_back(&p.fixed);
        ms_.push_back(&p.moving);
      }
      const Tensor<float> f = stack(fs_), m = stack(ms_);
      state.params.zero_grad();
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &dropout_rng;
      const Tensor<float> u = forward(state.params, cfg, f, m, opts);
      const LossReport<float> rep = total_loss(f, m, u, config.lambda);
      backward(rep.total);
      adam_step(state.params, state.adam, lr);
      const double w = double(stop - start);
      total += w * rep.total.item();
      mse += w * rep.similarity.item();
      diffusion += w * rep.regularizer.item();
    }

    EpochLog row{e + 1, lr, total / double(n), mse / double(n), diffusion / double(n), kNaN, kNaN};
    const bool last = e + 1 == config.epochs;
    if (config.validate_every > 0 && !data.val.empty() && ((e + 1) % config.validate_every == 0 || last)) {
      const ValidationReport v = validate(state.params, cfg, data.val, data.labels, data.merge_pairs);
      row.val_dice_mean = v.dice.mean;
      row.val_folding = v.folding_mean;
    }
    state.epoch = e + 1;
    state.params.zero_grad();

    if (!hooks.checkpoint_dir.empty()) {
      if (config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04zu.vckp", state.epoch);
        save_checkpoint(hooks.checkpoint_dir / name, state.params, state.adam, state.epoch);
      }
      if (last) save_checkpoint(hooks.checkpoint_dir / "final.vckp", state.params, state.adam, state.epoch);
    }
    if (!hooks.log_csv.empty()) write_log_csv(hooks.log_csv, std::span<const EpochLog>(&row, 1), true);
    log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
  }
  return log;
}

namespace {

std::vector<std::uint16_t> merged_vocabulary(std::span<const std::uint16_t> labels,
                                            std::span<const std::pair<std::uint16_t, std::uint16_t>> merge_pairs) {
  std::set<std::uint16_t> folded;
  for (const auto& [keep, fold] : merge_pairs) folded.insert(fold);
  std::vector<std::uint16_t> out;
  for (auto l : labels)
    if (l != 0 && !folded.count(l)) out.push_back(l);
  return out;
}

double population_std(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / double(v.size()));
}

ValidationReport evaluate(std::span<const Case> cases, std::span<const std::uint16_t> labels,
                          std::span<const std::pair<std::uint16_t, std::uint16_t>> merge_pairs,
                          const std::function<Tensor<float>(const Case&, double&)>& field_of) {
  const auto vocab = merged_vocabulary(labels, merge_pairs);
  ValidationReport r;
  std::vector<LabelDice> all, all_base;
  std::vector<double> folding;
  for (const auto& c : cases) {
    if (c.pair.fixed_labels.labels.empty() || c.pair.moving_labels.labels.empty())
      throw std::invalid_argument("case " + c.id + " has no label maps");
    CaseReport cr;
    cr.id = c.id;
    const Tensor<float> u = field_of(c, cr.seconds);
    const LabelMap fixed = merge_labels(c.pair.fixed_labels, merge_pairs);
    const LabelMap moving = merge_labels(c.pair.moving_labels, merge_pairs);
    const LabelMap warped = warp_nearest(moving, u);
    cr.dice = case_dice(c.id, fixed, warped, vocab);
    cr.baseline = case_dice(c.id, fixed, moving, vocab);
    cr.folded_fraction = jacobian_folding(u).folded_fraction;
    all.insert(all.end(), cr.dice.begin(), cr.dice.end());
    all_base.insert(all_base.end(), cr.baseline.begin(), cr.baseline.end());
    folding.push_back(cr.folded_fraction);
    r.cases.push_back(std::move(cr));
  }
  r.dice = summarize(std::move(all));
  r.baseline = summarize(std::move(all_base));
  if (!folding.empty()) {
    r.folding_mean = std::accumulate(folding.begin(), folding.end(), 0.0) / double(folding.size());
    r.folding_std = population_std(folding, r.folding_mean);
  }
  return r;
}

}  // namespace

ValidationReport validate(const ModelParams<float>& params, const RegNetConfig& model, std::span<const Case> cases,
                          std::span<const std::uint16_t> labels,
                          std::span<const std::pair<std::uint16_t, std::uint16_t>> merge_pairs) {
  return evaluate(cases, labels, merge_pairs, [&](const Case& c, double& seconds) {
    check_case(c, model.input);
    const auto t0 = std::chrono::steady_clock::now();
    Tensor<float> u = forward(params, model, c.pair.fixed, c.pair.moving).detach();
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return u;
  });
}

ValidationReport evaluate_fields(std::span<const Case> cases, std::span<const Tensor<float>> fields,
                                 std::span<const std::uint16_t> labels,
                                 std::span<const std::pair<std::uint16_t, std::uint16_t>> merge_pairs) {
  if (fields.size() != cases.size()) throw std::invalid_argument("evaluate_fields: one field per case required");
  std::size_t k = 0;
  return evaluate(cases, labels, merge_pairs, [&](const Case&, double& seconds) {
    seconds = 0.0;
    return fields[k++];
  });
}

void write_log_csv(const fs::path& path, std::span<const EpochLog> rows, bool append) {
  const bool header = !append || !fs::exists(path);
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (header) os << "epoch,lr,total,mse,diffusion,val_dice_mean,val_folding\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.epoch << ',' << r.lr << ',' << r.total << ',' << r.mse << ',' << r.diffusion << ',' << r.val_dice_mean
       << ',' << r.val_folding << '\n';
}

}  // namespace vitreg

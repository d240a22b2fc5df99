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

// Acceptance run: one PASS/FAIL line per criterion. Training logs are written
// to ./acceptance_out.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vitreg/config.hpp"
#include "vitreg/gradsuite.hpp"
#include "vitreg/io.hpp"
#include "vitreg/losses.hpp"
#include "vitreg/metrics.hpp"
#include "vitreg/nn.hpp"
#include "vitreg/spatial.hpp"
#include "vitreg/trainer.hpp"
#include "vitreg/vit.hpp"

using namespace vitreg;
namespace fs = std::filesystem;
using Td = Tensor<double>;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 300.0;
constexpr double kSpatialSeconds = 1.0;
constexpr double kTTestTolerance = 1e-6;
constexpr double kRowSumTolerance = 1e-6;
constexpr double kLossRatio = 0.5;
constexpr double kDiceGain = 0.05;
constexpr double kFoldingLimit = 0.02;
constexpr double kTrainMinutes = 60.0;
constexpr double kResumeTolerance = 1e-6;

const fs::path kOut = "acceptance_out";

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

void report(int id, const std::string& name, const Verdict& v) {
  std::printf("CRITERION %d %s: %s -- %s\n", id, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
  std::fflush(stdout);
}

// ------------------------------------------------------------------ 1

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  GradSuiteOptions opts;
  opts.tolerance = kGradTolerance;
  const auto entries = run_grad_suite(opts);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const auto& e : entries) {
    std::printf("  grad %-26s %.3e checked %zu skipped %zu %s\n", e.name.c_str(), e.max_rel_error, e.checked,
                e.skipped, e.passed ? "ok" : "FAIL");
    v.require(e.passed, e.name);
    checked += e.checked;
    if (e.max_rel_error > worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  const auto net = std::find_if(entries.begin(), entries.end(), [](const auto& e) { return e.name == "network_desk"; });
  v.require(net != entries.end() && net->checked >= 200, "desk network check covers >= 200 parameters");
  if (net != entries.end()) v.note("desk network: " + std::to_string(net->checked) + " checked, " +
                                   std::to_string(net->skipped) + " skipped at kinks");
  v.require(secs < kGradSeconds, "runtime < 300 s");
  v.note(std::to_string(entries.size()) + " entries, " + std::to_string(checked) + " coordinates, worst " +
         fmt("%.2e", worst) + " (" + worst_name + "), " + fmt("%.1f s", secs));
  return v;
}

// ------------------------------------------------------------------ 2

Verdict oracle_equivalence() {
  Verdict v;
  std::size_t comparisons = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_int_distribution<std::size_t> ext(3, 8);
    const std::size_t d = ext(rng), h = ext(rng), w = ext(rng);
    const std::string tag = " seed " + std::to_string(seed);

    const std::size_t cin = 1 + seed % 3, cout = 1 + (seed + 1) % 3;
    for (std::size_t stride : {1, 2}) {
      // A stride-2 window tiles odd extents exactly.
      auto odd = [&](std::size_t n) { return stride == 1 ? n : n - (n + 1) % 2; };
      Td x = oracle::random_tensor({2, cin, odd(d), odd(h), odd(w)}, rng);
      ConvKernel<double> k{oracle::random_tensor({cout, cin, 3, 3, 3}, rng), oracle::random_tensor({cout}, rng),
                           {stride, stride, stride}, {1, 1, 1}};
      v.require(oracle::bit_equal(conv3d(x, k).data(), oracle::conv3d(x, k.weight, &k.bias, k.stride, k.padding)),
                "conv3d" + tag);
      ++comparisons;
    }

    const std::size_t e2 = 2 * (1 + seed % 4);
    Td p = oracle::random_tensor({1, 2, e2, 8, e2}, rng);
    v.require(oracle::bit_equal(maxpool3d(p).pooled.data(), oracle::maxpool2(p)), "maxpool3d" + tag);

    Td m = oracle::random_tensor({d, h, w}, rng);
    Td u = oracle::random_tensor({3, d, h, w}, rng, -2.5, 2.5);
    v.require(oracle::bit_equal(warp(m, u).data(), oracle::warp(m, u)), "warp" + tag);

    Td f = oracle::random_tensor({d, h, w}, rng);
    v.require(mse_loss(f, m).item() == oracle::mse(f, m), "mse_loss" + tag);
    v.require(diffusion_reg(u).item() == oracle::diffusion(u), "diffusion_reg" + tag);
    v.require(jacobian_folding(u).det == oracle::jacobian_det(u), "jacobian" + tag);
    comparisons += 5;
  }
  v.note(std::to_string(comparisons) + " exact comparisons over 10 seeds");
  return v;
}

// ------------------------------------------------------------------ 3

Verdict spatial_invariants() {
  Verdict v;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(2000 + seed);
    const std::size_t n = 8;
    Td m = oracle::random_tensor({n, n, n}, rng, -3.0, 5.0);
    v.require(oracle::bit_equal(warp(m, Td::zeros({3, n, n, n})).data(), m.data()), "warp(m, 0) == m");

    std::uniform_int_distribution<long> sh(-3, 3);
    const long s[3] = {sh(rng), sh(rng), sh(rng)};
    std::vector<double> uv(3 * n * n * n);
    for (int c = 0; c < 3; ++c) std::fill(uv.begin() + c * n * n * n, uv.begin() + (c + 1) * n * n * n, double(s[c]));
    const Td shifted = warp(m, Td(Shape{3, n, n, n}, uv));
    bool exact = true;
    for (long z = 0; z < long(n); ++z)
      for (long y = 0; y < long(n); ++y)
        for (long x = 0; x < long(n); ++x) {
          const long a = z + s[0], b = y + s[1], c = x + s[2];
          if (a < 0 || b < 0 || c < 0 || a >= long(n) || b >= long(n) || c >= long(n)) continue;
          exact &= shifted.data()[(z * n + y) * n + x] == m.data()[(a * n + b) * n + c];
        }
    v.require(exact, "integer shift exactness");

    Td u = oracle::random_tensor({3, n, n, n}, rng, -9.0, 9.0);
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    bool bounded = true;
    for (double val : warp(m, u).data()) bounded &= val >= *lo && val <= *hi;
    v.require(bounded, "convex-combination bounds");
  }
  const double secs = seconds_since(t0);
  v.require(secs < kSpatialSeconds, "runtime < 1 s");
  v.note("10 seeds, " + fmt("%.3f s", secs));
  return v;
}

// ------------------------------------------------------------------ 4

LabelMap strip(std::vector<std::uint16_t> l) {
  LabelMap m({1, 1, l.size()});
  m.labels = std::move(l);
  return m;
}

Verdict metric_fixtures() {
  Verdict v;
  const auto a = strip({1, 1, 1, 1, 0, 0, 0, 0});
  v.require(dice(a, a, 1).value == 1.0, "dice identical == 1");
  v.require(dice(a, strip({0, 0, 0, 0, 1, 1, 1, 1}), 1).value == 0.0, "dice disjoint == 0");
  v.require(dice(a, strip({0, 0, 1, 1, 1, 1, 0, 0}), 1).value == 0.5, "dice half overlap == 0.5");

  const std::size_t n = 6;
  std::vector<double> uv(3 * n * n * n);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t z = 0; z < n; ++z)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const std::size_t p[3] = {z, y, x};
          uv[((c * n + z) * n + y) * n + x] = 0.5 * double(p[c]);
        }
  const auto fold = jacobian_folding(Td(Shape{3, n, n, n}, uv));
  v.require(!fold.det.empty() && std::all_of(fold.det.begin(), fold.det.end(), [](double d) { return d == 3.375; }),
            "det == 3.375 for u = 0.5 p");

  const double x[10] = {0.712, 0.695, 0.741, 0.688, 0.730, 0.702, 0.719, 0.685, 0.748, 0.709};
  const double y[10] = {0.690, 0.701, 0.715, 0.670, 0.722, 0.689, 0.700, 0.679, 0.731, 0.699};
  const auto t = paired_t_test(x, y);
  const double ref = oracle::student_t_two_sided_series(t.t, int(t.dof));
  const double diff = std::abs(t.p - ref);
  v.require(diff < kTTestTolerance, "t-test p within 1e-6 of the series oracle");
  v.note("t " + fmt("%.6f", t.t) + " p " + fmt("%.9f", t.p) + " |p - oracle| " + fmt("%.1e", diff));
  return v;
}

// ------------------------------------------------------------------ 5

Verdict vit_structure() {
  Verdict v;
  const RunConfig desk = RunConfig::desk();
  const RegNetConfig& cfg = desk.model;
  const Extents g = cfg.vit_grid();
  const std::size_t P = cfg.vit.patch;
  v.require(cfg.num_patches() * P * P * P == voxel_count(g), "N = HWL / P^3");
  const auto params = build<float>(cfg);
  v.require(params.at("vit.pos").shape() == Shape{cfg.num_patches(), cfg.vit.dim}, "position table is [N, D]");

  std::mt19937_64 rng(5);
  Td feat = oracle::random_tensor({2, cfg.enc_widths.back(), g[0], g[1], g[2]}, rng);
  Td tokens = patchify(feat, P);
  v.require(tokens.shape() == Shape{2, cfg.num_patches(), P * P * P * cfg.enc_widths.back()}, "patchify shape");
  v.require(oracle::bit_equal(unpatchify(tokens, cfg.enc_widths.back(), g, P).data(), feat.data()),
            "unpatchify(patchify(x)) == x");

  const std::size_t D = cfg.vit.dim;
  auto rnd = [&](Shape s) { return oracle::random_tensor(std::move(s), rng); };
  AttentionWeights<double> w{rnd({D, D}), rnd({D}), rnd({D, D}), rnd({D}), rnd({D, D}), rnd({D}), rnd({D, D}), rnd({D})};
  Td z = oracle::random_tensor({2, cfg.num_patches(), D}, rng, -2.0, 2.0);
  const auto att = msa(z, w, cfg.vit.heads).attention;
  const std::size_t N = cfg.num_patches();
  double worst = 0.0;
  for (std::size_t r = 0; r < att.numel() / N; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < N; ++c) s += att.data()[r * N + c];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  v.require(worst < kRowSumTolerance, "attention rows sum to 1");

  EncoderBlockWeights<double> b;
  b.ln1 = {rnd({D}), rnd({D})};
  b.ln2 = {rnd({D}), rnd({D})};
  b.attn = w;
  b.attn.o_weight = Td::zeros({D, D});
  b.attn.o_bias = Td::zeros({D});
  b.fc1_weight = rnd({D, cfg.vit.mlp_dim});
  b.fc1_bias = rnd({cfg.vit.mlp_dim});
  b.fc2_weight = Td::zeros({cfg.vit.mlp_dim, D});
  b.fc2_bias = Td::zeros({D});
  v.require(oracle::bit_equal(encoder_block(z, b, cfg.vit.heads).data(), z.data()),
            "zero-branch encoder block is the identity");
  v.note("N " + std::to_string(N) + ", P " + std::to_string(P) + ", max |row sum - 1| " + fmt("%.1e", worst));
  return v;
}

// ------------------------------------------------------------------ 6, 7

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<EpochLog> log;
  ValidationReport val;
  double minutes = 0.0;
};

double mean_total(const std::vector<EpochLog>& log, std::size_t first, std::size_t last) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : log)
    if (r.epoch >= first && r.epoch <= last) {
      s += r.total;
      ++n;
    }
  return n ? s / double(n) : NAN;
}

SeedRun desk_run(std::uint64_t seed) {
  RunConfig r = RunConfig::desk();
  r.seed = seed;
  r.data.test_pairs = 0;
  r.propagate();
  SeedRun out;
  out.seed = seed;
  const auto t0 = Clock::now();
  const Dataset data = synthesize_dataset(r);
  TrainState st;
  st.params = build<float>(r.model);
  TrainHooks hooks;
  hooks.log_csv = kOut / ("seed" + std::to_string(seed) + "_log.csv");
  hooks.on_epoch = [&](const EpochLog& e) {
    std::printf("  seed %llu epoch %2zu loss %.6e", (unsigned long long)seed, e.epoch, e.total);
    if (!std::isnan(e.val_dice_mean)) std::printf(" val dice %.4f folding %.5f", e.val_dice_mean, e.val_folding);
    std::printf(" (%.1f min)\n", seconds_since(t0) / 60.0);
    std::fflush(stdout);
  };
  out.log = train(r.model, r.train, data, st, hooks);
  out.val = validate(st.params, r.model, data.val, data.labels);
  out.minutes = seconds_since(t0) / 60.0;
  return out;
}

// ------------------------------------------------------------------ 8

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Verdict reproducibility() {
  Verdict v;
  RunConfig r = RunConfig::desk();
  r.seed = 11;
  r.train.epochs = 4;
  r.train.checkpoint_every = 2;
  r.train.validate_every = 0;
  r.data.train_pairs = 16;
  r.data.val_pairs = 0;
  r.data.test_pairs = 0;
  r.propagate();
  const Dataset data = synthesize_dataset(r);

  auto run = [&](const std::string& name, TrainState st) {
    TrainHooks h;
    h.checkpoint_dir = kOut / name;
    fs::remove_all(h.checkpoint_dir);
    return train(r.model, r.train, data, st, h);
  };
  TrainState fresh;
  fresh.params = build<float>(r.model);
  const auto a = run("repro_a", fresh);
  fresh.params = build<float>(r.model);
  const auto b = run("repro_b", fresh);

  bool same_curve = a.size() == b.size();
  for (std::size_t i = 0; same_curve && i < a.size(); ++i)
    same_curve = a[i].total == b[i].total && a[i].mse == b[i].mse && a[i].diffusion == b[i].diffusion;
  v.require(same_curve, "identical loss curves");
  const std::string ca = file_bytes(kOut / "repro_a" / "final.vckp");
  v.require(!ca.empty() && ca == file_bytes(kOut / "repro_b" / "final.vckp"), "bit-identical final checkpoints");

  Checkpoint ck = load_checkpoint(kOut / "repro_a" / "epoch_0002.vckp", build<float>(r.model));
  const auto c = run("repro_resume", TrainState{std::move(ck.params), std::move(ck.adam), ck.epoch});
  double worst = c.size() == 2 ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < c.size() && i + 2 < a.size(); ++i) worst = std::max(worst, std::abs(c[i].total - a[i + 2].total));
  v.require(worst < kResumeTolerance, "resume within 1e-6 loss");
  v.require(file_bytes(kOut / "repro_resume" / "final.vckp") == ca, "resumed checkpoint equals straight-through");
  v.note("4 epochs x 16 pairs at 32^3, resume from epoch 2, max loss difference " + fmt("%.1e", worst));
  return v;
}

}  // namespace

// Optional arguments select criteria by number; all run by default.
int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  fs::create_directories(kOut);
  int failed = 0, ran = 0;
  auto tally = [&](int id, const std::string& name, const Verdict& v) {
    report(id, name, v);
    failed += !v.pass;
    ++ran;
  };

  if (wanted(1)) tally(1, "gradient suite", gradient_suite());
  if (wanted(2)) tally(2, "oracle equivalence", oracle_equivalence());
  if (wanted(3)) tally(3, "spatial-transformer invariants", spatial_invariants());
  if (wanted(4)) tally(4, "metric fixtures", metric_fixtures());
  if (wanted(5)) tally(5, "transformer structure", vit_structure());

  if (wanted(6) || wanted(7)) {
    std::vector<SeedRun> runs;
    for (std::uint64_t seed = 0; seed < 3; ++seed) runs.push_back(desk_run(seed));
    Verdict recovery, curve;
    for (const auto& s : runs) {
      const std::string tag = "seed " + std::to_string(s.seed);
      const double first = s.log.empty() ? NAN : s.log.front().total, last = s.log.empty() ? NAN : s.log.back().total;
      const double gain = s.val.dice.mean - s.val.baseline.mean;
      Verdict one;
      one.require(last < kLossRatio * first, tag + " final loss < 0.5 x epoch 1");
      one.require(gain >= kDiceGain, tag + " Dice gain >= 0.05");
      one.require(s.val.folding_mean < kFoldingLimit, tag + " folding < 2%");
      one.require(s.minutes < kTrainMinutes, tag + " wall clock < 60 min");
      recovery.require(one.pass, tag);
      recovery.note(tag + ": loss " + fmt("%.3e", first) + " -> " + fmt("%.3e", last) + ", Dice " +
                    fmt("%.4f", s.val.baseline.mean) + " -> " + fmt("%.4f", s.val.dice.mean) + " (gain " +
                    fmt("%+.4f", gain) + "), folding " + fmt("%.4f%%", 100.0 * s.val.folding_mean) + ", " +
                    fmt("%.1f min", s.minutes));

      if (one.pass) {
        const double early = mean_total(s.log, 1, 10), late = mean_total(s.log, 40, 50);
        curve.require(late < early, tag + " epochs 40-50 mean below epochs 1-10 mean");
        curve.note(tag + ": " + fmt("%.3e", early) + " -> " + fmt("%.3e", late));
      }
    }
    if (wanted(6)) tally(6, "end-to-end recovery (32^3, 64/8 pairs, 50 epochs, seeds 0-2)", recovery);
    if (curve.detail.empty()) curve.require(false, "no seed passed criterion 6");
    if (wanted(7)) tally(7, "training curve", curve);
  }
  if (wanted(8)) tally(8, "reproducibility and resume", reproducibility());

  std::printf("ACCEPTANCE %s: %d of %d criteria failed\n", failed ? "FAIL" : "PASS", failed, ran);
  return failed ? 1 : 0;
}

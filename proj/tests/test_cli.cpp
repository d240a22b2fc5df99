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

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "vitreg/io.hpp"

using namespace vitreg;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "vitreg_cli_test";

const char* kSmallConfig = R"({
  "model": {"input": [16, 16, 16], "enc_widths": [4, 8], "dec_widths": [4], "vit_channels": 4,
            "vit": {"patch": 2, "dim": 8, "blocks": 1, "heads": 2, "mlp_dim": 16}},
  "train": {"epochs": 1, "validate_every": 1},
  "data": {"train_pairs": 2, "val_pairs": 2, "test_pairs": 1, "amplitude": 2.0,
           "coarse_factor": 8}
})";

int run(const std::string& args) {
  const std::string cmd = std::string(VITREG_CLI_PATH) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

std::string config() {
  const fs::path p = kRoot / "small.json";
  if (!fs::exists(p)) std::ofstream(p) << kSmallConfig;
  return "--config " + p.string();
}

fs::path data_dir() {
  const fs::path d = kRoot / "data";
  if (!fs::exists(d / "manifest.json")) {
    const int rc = run("gen-data " + config() + " --seed 0 --out " + d.string());
    REQUIRE(rc == 0);
  }
  return d;
}

nlohmann::json summary(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "summary.json")); }

struct Scratch {
  Scratch() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

const Scratch scratch_once;

}  // namespace

TEST_CASE("gen-data is byte reproducible") {
  const fs::path a = data_dir(), b = kRoot / "data_again", c = kRoot / "data_seed1";
  REQUIRE(run("gen-data " + config() + " --seed 0 --out " + b.string()) == 0);
  REQUIRE(run("gen-data " + config() + " --seed 1 --out " + c.string()) == 0);
  const auto ta = tree(a), tb = tree(b), tc = tree(c);
  CHECK(ta.size() == 2 + 5 * 5);
  CHECK(ta == tb);
  CHECK(ta.at("cases/train_000_fixed.vvol") != tc.at("cases/train_000_fixed.vvol"));
  const Manifest m = load_manifest(a / "manifest.json");
  CHECK(m.split("train").size() == 2);
  CHECK(m.split("val").size() == 2);
  CHECK(m.split("test").size() == 1);
}

TEST_CASE("configuration problems exit with 1") {
  const std::string out = " --out " + (kRoot / "unused").string();
  CHECK(run("gen-data --set train.learning_rate=1" + out) == 1);
  CHECK(run("gen-data --set model.vit.heads=5" + out) == 1);
  CHECK(run("gen-data --config " + (kRoot / "missing.json").string() + out) == 1);
  CHECK(run("no-such-command") == 1);
  CHECK(run("") == 1);
  CHECK(slurp(kRoot / "last.log").find("error: config:") != std::string::npos);
}

TEST_CASE("runtime problems exit with 2") {
  const fs::path bad = kRoot / "bad.vvol";
  std::ofstream(bad) << "VVOL garbage";
  const std::string args = "register " + config() + " --fixed " + bad.string() + " --moving " + bad.string() +
                           " --out " + (kRoot / "unused").string();
  CHECK(run(args) == 2);
  CHECK(slurp(kRoot / "last.log").find("error: runtime:") != std::string::npos);
}

TEST_CASE("eval of the identity on identical volumes is perfect") {
  const fs::path d = data_dir();
  Manifest m = load_manifest(d / "manifest.json");
  for (auto& c : m.cases) {
    c.moving = c.fixed;
    c.moving_labels = c.fixed_labels;
  }
  save_manifest(d / "identity.json", m);
  const fs::path out = kRoot / "eval_identity";
  REQUIRE(run("eval " + config() + " --manifest " + (d / "identity.json").string() + " --zero-field --out " +
              out.string()) == 0);
  const auto s = summary(out);
  CHECK(s["dice_mean"].get<double>() == 1.0);
  CHECK(s["folding_mean"].get<double>() == 0.0);
  CHECK(s["cases"].get<int>() == 2);
  CHECK(fs::exists(out / "dice.csv"));
  CHECK(fs::exists(out / "cases.csv"));
}

TEST_CASE("eval with the zero field reproduces the baseline and the oracle beats it") {
  const fs::path d = data_dir();
  const fs::path zero = kRoot / "eval_zero", oracle = kRoot / "eval_oracle";
  REQUIRE(run("eval " + config() + " --manifest " + (d / "manifest.json").string() + " --zero-field --out " +
              zero.string()) == 0);
  REQUIRE(run("eval " + config() + " --manifest " + (d / "manifest.json").string() + " --oracle-field --out " +
              oracle.string()) == 0);
  const auto z = summary(zero), o = summary(oracle);
  CHECK(z["dice_mean"].get<double>() == doctest::Approx(z["baseline_dice_mean"].get<double>()));
  CHECK(o["dice_mean"].get<double>() > z["dice_mean"].get<double>());
  CHECK(run("eval " + config() + " --manifest " + (d / "manifest.json").string() +
            " --zero-field --oracle-field --out " + zero.string()) == 1);
}

TEST_CASE("register with the untrained model gives a near-zero field") {
  const fs::path d = data_dir();
  const fs::path out = kRoot / "register";
  REQUIRE(run("register " + config() + " --fixed " + (d / "cases/val_000_fixed.vvol").string() + " --moving " +
              (d / "cases/val_000_moving.vvol").string() + " --moving-labels " +
              (d / "cases/val_000_moving_labels.vvol").string() + " --out " + out.string()) == 0);
  const Tensor<float> u = load_volume(out / "field.vvol");
  CHECK(u.shape() == Shape{3, 16, 16, 16});
  float m = 0.0f;
  for (float v : u.data()) m = std::max(m, std::abs(v));
  CHECK(m < 0.05f);
  CHECK(load_volume(out / "warped.vvol").shape() == Shape{16, 16, 16});
  CHECK(load_labels(out / "warped_labels.vvol").extents == Extents{16, 16, 16});

  const fs::path ppm = kRoot / "slice.ppm";
  REQUIRE(run("export-rgb --field " + (out / "field.vvol").string() + " --axis 1 --out " + ppm.string()) == 0);
  const std::string img = slurp(ppm);
  CHECK(img.rfind("P6\n16 16\n255\n", 0) == 0);
  CHECK(img.size() == std::string("P6\n16 16\n255\n").size() + 16 * 16 * 3);
  CHECK(run("export-rgb --field " + (out / "field.vvol").string() + " --axis 3 --out " + ppm.string()) == 1);
}

TEST_CASE("train writes a log and checkpoints that eval and resume accept") {
  const fs::path d = data_dir();
  const fs::path out = kRoot / "train";
  REQUIRE(run("train " + config() + " --manifest " + (d / "manifest.json").string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "checkpoints/final.vckp"));
  CHECK(fs::exists(out / "config.json"));
  const std::string log = slurp(out / "log.csv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);

  const fs::path ev = kRoot / "eval_trained";
  REQUIRE(run("eval " + config() + " --manifest " + (d / "manifest.json").string() + " --checkpoint " +
              (out / "checkpoints/final.vckp").string() + " --split test --out " + ev.string()) == 0);
  CHECK(summary(ev)["cases"].get<int>() == 1);
  CHECK(summary(ev)["mode"].get<std::string>() == "checkpoint");

  REQUIRE(run("train " + config() + " --set train.epochs=2 --manifest " + (d / "manifest.json").string() +
              " --resume " + (out / "checkpoints/final.vckp").string() + " --out " + out.string()) == 0);
  const std::string resumed = slurp(out / "log.csv");
  CHECK(std::count(resumed.begin(), resumed.end(), '\n') == 3);

  CHECK(run("train " + config() + " --set model.enc_widths=[4,6] --manifest " + (d / "manifest.json").string() +
            " --resume " + (out / "checkpoints/final.vckp").string() + " --out " + (kRoot / "t2").string()) == 2);
}

TEST_CASE("grad-check on the operations passes") {
  CHECK(run("grad-check --seed 0 --skip-network") == 0);
  CHECK(slurp(kRoot / "last.log").find("FAIL") == std::string::npos);
}

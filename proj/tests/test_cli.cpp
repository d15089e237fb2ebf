// Copyright 2026 The Prefinf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* p = std::getenv("PREFINF_BIN");
  REQUIRE(p != nullptr);
  return p;
}

std::string config_dir() {
  const char* p = std::getenv("PREFINF_CONFIG_DIR");
  REQUIRE(p != nullptr);
  return p;
}

int run(const std::string& cmdline) {
  const int rc = std::system((cmdline + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("prefinf_test_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("full smoke pipeline produces a detector report") {
  TempDir tmp("smoke");
  const std::string cfg = config_dir() + "/smoke.json";
  const std::string base = bin() + " ";
  const std::string tail = " --config " + cfg + " --out " + tmp.path.string();

  REQUIRE(run(base + "gen" + tail) == 0);
  CHECK(fs::exists(tmp.path / "train.jsonl"));
  CHECK(fs::exists(tmp.path / "train_clean.jsonl"));
  CHECK(fs::exists(tmp.path / "val_targeted.jsonl"));
  CHECK(fs::exists(tmp.path / "gen.manifest.json"));

  REQUIRE(run(base + "train" + tail) == 0);
  CHECK(fs::exists(tmp.path / "model.json"));

  REQUIRE(run(base + "sketch" + tail) == 0);
  CHECK(fs::exists(tmp.path / "store.bin"));

  REQUIRE(run(base + "influence" + tail) == 0);
  CHECK(fs::exists(tmp.path / "scores.csv"));
  CHECK(fs::exists(tmp.path / "scores.meta.json"));

  REQUIRE(run(base + "detect" + tail) == 0);
  CHECK(fs::exists(tmp.path / "summary.csv"));
  CHECK(fs::exists(tmp.path / "roc_influence.csv"));
  CHECK(fs::exists(tmp.path / "summary_influence.json"));

  REQUIRE(run(base + "retrain" + tail) == 0);
  CHECK(fs::exists(tmp.path / "retrain.csv"));

  SUBCASE("rerunning detect reproduces the report byte for byte") {
    const std::string before = slurp(tmp.path / "summary.csv");
    const std::string roc_before = slurp(tmp.path / "roc_influence.csv");
    REQUIRE(run(base + "detect" + tail) == 0);
    CHECK(slurp(tmp.path / "summary.csv") == before);
    CHECK(slurp(tmp.path / "roc_influence.csv") == roc_before);
  }

  SUBCASE("the full pipeline is deterministic across directories") {
    TempDir tmp2("smoke_rerun");
    const std::string tail2 = " --config " + cfg + " --out " + tmp2.path.string();
    REQUIRE(run(base + "gen" + tail2) == 0);
    REQUIRE(run(base + "train" + tail2) == 0);
    REQUIRE(run(base + "sketch" + tail2) == 0);
    REQUIRE(run(base + "influence" + tail2) == 0);
    REQUIRE(run(base + "detect" + tail2) == 0);
    CHECK(slurp(tmp2.path / "scores.csv") == slurp(tmp.path / "scores.csv"));
    CHECK(slurp(tmp2.path / "summary.csv") == slurp(tmp.path / "summary.csv"));
    CHECK(slurp(tmp2.path / "train.jsonl") == slurp(tmp.path / "train.jsonl"));
  }
}

TEST_CASE("influence without a store names the producing command") {
  TempDir tmp("nostore");
  const std::string cfg = config_dir() + "/smoke.json";
  const std::string tail = " --config " + cfg + " --out " + tmp.path.string();
  REQUIRE(run(bin() + " gen" + tail) == 0);
  // skip train/sketch: influence must point at sketch
  CHECK(run(bin() + " influence" + tail) == 2);
}

TEST_CASE("config validation failures exit with status 1") {
  TempDir tmp("badcfg");
  const fs::path bad = tmp.path / "bad.json";
  std::ofstream f(bad);
  f << R"({"seed": 1, "dataset": {"n": 0, "d": -2, "noise": 7}, )"
    << R"("model": {"arch": "perceptron", "l2_reg": -1}})";
  f.close();
  CHECK(run(bin() + " gen --config " + bad.string() + " --out " + tmp.path.string()) == 1);
}

TEST_CASE("missing seed is a validation error") {
  TempDir tmp("noseed");
  const fs::path cfg = tmp.path / "noseed.json";
  std::ofstream f(cfg);
  f << R"({"dataset": {"n": 10, "d": 4, "val_n": 5}, "model": {"arch": "linear"}})";
  f.close();
  CHECK(run(bin() + " gen --config " + cfg.string() + " --out " + tmp.path.string()) == 1);
  // a --seed flag fixes it
  CHECK(run(bin() + " gen --config " + cfg.string() + " --out " + tmp.path.string() +
            " --seed 3") == 0);
}

TEST_CASE("oversight command emits scenario results") {
  TempDir tmp("oversight");
  const fs::path cfg = tmp.path / "oversight_small.json";
  std::ofstream f(cfg);
  f << R"({
    "seed": 11,
    "dataset": {"n": 400, "d": 12, "m": 4, "name": "ov", "val_n": 150},
    "model": {"arch": "mlp1", "hidden_dim": 8, "l2_reg": 0.01,
              "train": {"max_epochs": 250, "step_size": 0.5, "tolerance": 1e-9}},
    "oversight": {"bob_count": 2, "band": [0.70, 0.78], "C": 1.0, "rm_acc": false}
  })";
  f.close();
  REQUIRE(run(bin() + " oversight --config " + cfg.string() + " --out " +
              tmp.path.string()) == 0);
  CHECK(fs::exists(tmp.path / "oversight.csv"));
  CHECK(fs::exists(tmp.path / "oversight_0.json"));
  CHECK(fs::exists(tmp.path / "oversight_1.json"));
  const std::string csv = slurp(tmp.path / "oversight.csv");
  CHECK(csv.find("influence") != std::string::npos);
  CHECK(csv.find("mahalanobis") != std::string::npos);
  CHECK(csv.find("knn") != std::string::npos);
}

TEST_CASE("gen refuses to overwrite artifacts from a different seed") {
  TempDir tmp("overwrite");
  const std::string cfg = config_dir() + "/smoke.json";
  const std::string tail = " --config " + cfg + " --out " + tmp.path.string();
  REQUIRE(run(bin() + " gen" + tail) == 0);
  REQUIRE(run(bin() + " gen" + tail) == 0);  // identical rerun is fine
  CHECK(run(bin() + " gen" + tail + " --seed 999") == 2);
  CHECK(run(bin() + " gen" + tail + " --seed 999 --force") == 0);
}

TEST_CASE("output root can come from the environment") {
  TempDir tmp("envroot");
  const std::string cfg = config_dir() + "/smoke.json";
  const std::string line = "PREFINF_OUT_ROOT=" + tmp.path.string() + " " + bin() +
                           " gen --config " + cfg;
  REQUIRE(run(line) == 0);
  CHECK(fs::exists(tmp.path / "smoke" / "train.jsonl"));
}

TEST_CASE("pre-featurized datasets enter through paths") {
  TempDir tmp("paths");
  // build a small dataset via gen, then treat its files as external inputs
  const std::string cfg = config_dir() + "/smoke.json";
  const fs::path srcdir = tmp.path / "source";
  fs::create_directories(srcdir);
  REQUIRE(run(bin() + " gen --config " + cfg + " --out " + srcdir.string()) == 0);

  const fs::path pathcfg = tmp.path / "from_paths.json";
  {
    std::ofstream f(pathcfg);
    f << R"({
      "seed": 5,
      "dataset": {"train_path": ")" << (srcdir / "train_clean.jsonl").string() << R"(",
                  "val_path": ")" << (srcdir / "val_full.jsonl").string() << R"(",
                  "attribute": "length"},
      "bias": {"kind": "flip_toward_attribute", "attribute": "length",
               "candidate_fraction": 0.3},
      "validation_rule": "attribute_chosen_lower",
      "model": {"arch": "linear", "l2_reg": 0.05,
                "train": {"max_epochs": 500, "step_size": 1.0, "tolerance": 1e-8}},
      "detect": {"methods": ["influence", "confidence"]}
    })";
  }
  const fs::path outdir = tmp.path / "run";
  const std::string tail =
      " --config " + pathcfg.string() + " --out " + outdir.string();
  REQUIRE(run(bin() + " gen" + tail) == 0);
  REQUIRE(run(bin() + " train" + tail) == 0);
  REQUIRE(run(bin() + " sketch" + tail) == 0);
  REQUIRE(run(bin() + " influence" + tail) == 0);
  REQUIRE(run(bin() + " detect" + tail) == 0);
  CHECK(fs::exists(outdir / "summary_influence.json"));
}

TEST_CASE("oversight accepts pre-labeled datasets through paths") {
  TempDir tmp("ovpaths");
  // produce sub-scored data with one run, then feed it back as files
  const fs::path gencfg = tmp.path / "gen.json";
  {
    std::ofstream f(gencfg);
    f << R"({
      "seed": 31,
      "dataset": {"n": 300, "d": 12, "m": 4, "name": "ovsrc", "val_n": 120},
      "model": {"arch": "linear", "l2_reg": 0.05,
                "train": {"max_epochs": 300, "step_size": 1.0, "tolerance": 1e-8}}
    })";
  }
  const fs::path srcdir = tmp.path / "source";
  REQUIRE(run(bin() + " gen --config " + gencfg.string() + " --out " +
              srcdir.string()) == 0);

  const fs::path ovcfg = tmp.path / "ov.json";
  {
    std::ofstream f(ovcfg);
    f << R"({
      "seed": 12,
      "dataset": {"train_path": ")" << (srcdir / "train.jsonl").string() << R"(",
                  "val_path": ")" << (srcdir / "val_full.jsonl").string() << R"("},
      "model": {"arch": "mlp1", "hidden_dim": 6, "l2_reg": 0.01,
                "train": {"max_epochs": 150, "step_size": 0.5, "tolerance": 1e-8}},
      "oversight": {"bob_count": 1, "band": [0.70, 0.78], "C": 1.0, "rm_acc": false,
                    "w_alice": [1.04, 0.46, 0.47, -0.33]}
    })";
  }
  const fs::path outdir = tmp.path / "run";
  REQUIRE(run(bin() + " oversight --config " + ovcfg.string() + " --out " +
              outdir.string()) == 0);
  CHECK(fs::exists(outdir / "oversight.csv"));
  CHECK(fs::exists(outdir / "oversight_0.json"));
}

TEST_CASE("bench emits a timing table") {
  TempDir tmp("bench");
  const std::string cfg = config_dir() + "/smoke.json";
  REQUIRE(run(bin() + " bench --config " + cfg + " --out " + tmp.path.string() +
              " --sizes 50 --sizes 100") == 0);
  const std::string csv = slurp(tmp.path / "bench.csv");
  CHECK(csv.find("n,sketch_store_s,influence_sketched_s,two_pass_s") == 0);
  CHECK(csv.find("\n50,") != std::string::npos);
  CHECK(csv.find("\n100,") != std::string::npos);
}

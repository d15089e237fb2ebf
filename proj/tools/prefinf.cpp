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

// prefinf: preference-data influence toolkit.
//
// Subcommands form two pipelines over a shared output directory:
//   bias detection:  gen -> train -> sketch -> influence -> detect [-> retrain]
//   strategy oversight: oversight (self-contained)
// plus bench for runtime measurements. Every artifact gets a manifest JSON
// with the config hash and input fingerprints; commands refuse to overwrite
// artifacts produced from different inputs unless --force is given.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prefinf/baselines.hpp"
#include "prefinf/biasdetect.hpp"
#include "prefinf/influence.hpp"
#include "prefinf/oporp.hpp"
#include "prefinf/oversight.hpp"
#include "prefinf/prefdata.hpp"
#include "prefinf/reward.hpp"
#include "prefinf/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefinf;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// run configuration

struct RunConfig {
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out;

  GenerationConfig dataset;
  int val_n = 0;
  // Pre-featurized inputs; when set, gen loads these instead of generating.
  std::string train_path;
  std::string val_path;
  std::optional<BiasSpec> bias;
  ValidationRule validation_rule = ValidationRule::kAttributeChosenLower;

  RewardModelConfig model;
  std::optional<CompressionConfig> compression;

  double lambda_scale = 1.0;
  ValAggregation aggregation = ValAggregation::kSum;

  std::vector<std::string> detect_methods{"influence", "mahalanobis", "knn",
                                          "confidence", "entropy"};
  int knn_k = 0;  // 0 = select by AUC

  int bob_count = 5;
  double band_lo = 0.70;
  double band_hi = 0.78;
  double svm_c = 1.0;
  bool rm_acc = true;
  int oversight_knn_k = 10;
  std::vector<double> w_alice;              // expert override, optional
  std::vector<std::vector<double>> w_bobs;  // explicit strategies, optional

  std::vector<double> retrain_alphas{1.0};

  std::vector<std::string> ablation_rules;
  std::vector<int> ablation_sizes;
  std::vector<double> ablation_lambda_scales;
  std::vector<int> ablation_knn_ks;
  int ablation_subsamples = 20;
  std::vector<int> oversight_val_sizes;

  json raw;  // canonical config document for hashing
};

ValidationRule rule_from_string(const std::string& s) {
  if (s == "attribute_chosen_lower") return ValidationRule::kAttributeChosenLower;
  if (s == "attribute_chosen_higher") return ValidationRule::kAttributeChosenHigher;
  if (s == "all") return ValidationRule::kAll;
  throw ValidationError("unknown validation rule: " + s);
}

RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config parse error in " + path + ": " + e.what());
  }

  RunConfig c;
  c.raw = j;
  std::vector<std::string> problems;

  if (j.contains("seed")) {
    c.seed = j["seed"].get<uint64_t>();
    c.seed_set = true;
  }
  c.out = j.value("out", "");

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    c.train_path = d.value("train_path", "");
    c.val_path = d.value("val_path", "");
    c.dataset.n = d.value("n", 0);
    c.dataset.d = d.value("d", 0);
    c.dataset.m = d.value("m", 0);
    c.dataset.noise = d.value("noise", 0.0);
    c.dataset.name = d.value("name", "synthetic");
    c.dataset.attribute = d.value("attribute", "length");
    c.val_n = d.value("val_n", 0);
    if (c.train_path.empty()) {
      if (c.dataset.n < 1) problems.push_back("dataset.n must be >= 1");
      if (c.dataset.d < 1) problems.push_back("dataset.d must be >= 1");
      if (c.dataset.m < 0 || c.dataset.m > c.dataset.d)
        problems.push_back("dataset.m must be in [0, dataset.d]");
      if (c.dataset.noise < 0.0 || c.dataset.noise > 1.0)
        problems.push_back("dataset.noise must be in [0, 1]");
    }
  } else {
    problems.push_back("dataset section is required");
  }

  if (j.contains("bias")) {
    const json& b = j["bias"];
    BiasSpec spec;
    const std::string kind = b.value("kind", "flip_toward_attribute");
    if (kind == "flip_toward_attribute") spec.kind = BiasKind::kFlipTowardAttribute;
    else if (kind == "flip_random") spec.kind = BiasKind::kFlipRandom;
    else problems.push_back("bias.kind must be flip_toward_attribute or flip_random");
    spec.attribute = b.value("attribute", c.dataset.attribute);
    spec.candidate_fraction = b.value("candidate_fraction", 0.0);
    if (spec.candidate_fraction < 0.0 || spec.candidate_fraction > 1.0)
      problems.push_back("bias.candidate_fraction must be in [0, 1]");
    c.bias = spec;
  }

  if (j.contains("validation_rule")) {
    try {
      c.validation_rule = rule_from_string(j["validation_rule"].get<std::string>());
    } catch (const ValidationError& e) {
      problems.push_back(e.what());
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    const std::string arch = m.value("arch", "linear");
    if (arch == "linear") c.model.arch = Arch::kLinear;
    else if (arch == "mlp1") c.model.arch = Arch::kMlp1;
    else problems.push_back("model.arch must be linear or mlp1");
    c.model.feature_dim = c.dataset.d;
    c.model.hidden_dim = m.value("hidden_dim", 0);
    if (c.model.arch == Arch::kMlp1 && c.model.hidden_dim < 1)
      problems.push_back("model.hidden_dim must be >= 1 for mlp1");
    c.model.l2_reg = m.value("l2_reg", 1e-4);
    if (c.model.l2_reg < 0.0) problems.push_back("model.l2_reg must be >= 0");
    if (m.contains("train")) {
      const json& t = m["train"];
      c.model.train.max_epochs = t.value("max_epochs", 500);
      c.model.train.step_size = t.value("step_size", 0.5);
      c.model.train.tolerance = t.value("tolerance", 1e-8);
      if (c.model.train.max_epochs < 0)
        problems.push_back("model.train.max_epochs must be >= 0");
      if (c.model.train.step_size <= 0.0)
        problems.push_back("model.train.step_size must be > 0");
      if (c.model.train.tolerance < 0.0)
        problems.push_back("model.train.tolerance must be >= 0");
    }
  } else {
    problems.push_back("model section is required");
  }

  if (j.contains("compression")) {
    const json& cc = j["compression"];
    CompressionConfig cfg;
    cfg.bins = cc.value("bins", 1 << 12);
    cfg.chunk_size = cc.value("chunk_size", 4096);
    cfg.per_block = cc.value("per_block", true);
    if (cfg.bins < 1) problems.push_back("compression.bins must be >= 1");
    if (cfg.chunk_size < 1) problems.push_back("compression.chunk_size must be >= 1");
    c.compression = cfg;
  }

  if (j.contains("influence")) {
    const json& i = j["influence"];
    c.lambda_scale = i.value("lambda_scale", 1.0);
    if (c.lambda_scale <= 0.0) problems.push_back("influence.lambda_scale must be > 0");
    const std::string agg = i.value("aggregation", "sum");
    if (agg == "sum") c.aggregation = ValAggregation::kSum;
    else if (agg == "mean") c.aggregation = ValAggregation::kMean;
    else problems.push_back("influence.aggregation must be sum or mean");
  }

  if (j.contains("detect")) {
    const json& d = j["detect"];
    if (d.contains("methods"))
      c.detect_methods = d["methods"].get<std::vector<std::string>>();
    c.knn_k = d.value("knn_k", 0);
    if (c.knn_k < 0) problems.push_back("detect.knn_k must be >= 0");
    for (const auto& m : c.detect_methods)
      if (m != "influence" && m != "mahalanobis" && m != "knn" && m != "confidence" &&
          m != "entropy")
        problems.push_back("unknown detect method: " + m);
  }

  if (j.contains("oversight")) {
    const json& o = j["oversight"];
    c.bob_count = o.value("bob_count", 5);
    if (o.contains("band")) {
      const auto band = o["band"].get<std::vector<double>>();
      if (band.size() != 2) problems.push_back("oversight.band must have two entries");
      else {
        c.band_lo = band[0];
        c.band_hi = band[1];
        if (!(0.5 < c.band_lo && c.band_lo < c.band_hi && c.band_hi < 1.0))
          problems.push_back("oversight.band must satisfy 0.5 < lo < hi < 1");
      }
    }
    c.svm_c = o.value("C", 1.0);
    if (c.svm_c <= 0.0) problems.push_back("oversight.C must be > 0");
    c.rm_acc = o.value("rm_acc", true);
    c.oversight_knn_k = o.value("knn_k", 10);
    if (o.contains("val_sizes"))
      c.oversight_val_sizes = o["val_sizes"].get<std::vector<int>>();
    if (o.contains("w_alice")) c.w_alice = o["w_alice"].get<std::vector<double>>();
    if (o.contains("w_bobs"))
      c.w_bobs = o["w_bobs"].get<std::vector<std::vector<double>>>();
    if (c.bob_count < 1 && c.w_bobs.empty())
      problems.push_back("oversight.bob_count must be >= 1");
  }

  if (j.contains("retrain")) {
    const json& r = j["retrain"];
    if (r.contains("alphas")) c.retrain_alphas = r["alphas"].get<std::vector<double>>();
    else if (r.contains("alpha")) c.retrain_alphas = {r["alpha"].get<double>()};
    for (double a : c.retrain_alphas)
      if (a < 0.0) problems.push_back("retrain alphas must be >= 0");
  }

  if (j.contains("ablation")) {
    const json& a = j["ablation"];
    if (a.contains("val_rules"))
      c.ablation_rules = a["val_rules"].get<std::vector<std::string>>();
    if (a.contains("val_sizes"))
      c.ablation_sizes = a["val_sizes"].get<std::vector<int>>();
    if (a.contains("lambda_scales"))
      c.ablation_lambda_scales = a["lambda_scales"].get<std::vector<double>>();
    if (a.contains("knn_ks")) c.ablation_knn_ks = a["knn_ks"].get<std::vector<int>>();
    c.ablation_subsamples = a.value("subsamples", 20);
    for (const auto& r : c.ablation_rules) {
      try {
        rule_from_string(r);
      } catch (const ValidationError& e) {
        problems.push_back(e.what());
      }
    }
  }

  if (!problems.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
  return c;
}

// resolves the output directory: flag > config "out" > $PREFINF_OUT_ROOT/<stem>
std::string resolve_out(const std::string& flag_out, const RunConfig& cfg,
                        const std::string& config_path) {
  if (!flag_out.empty()) return flag_out;
  if (!cfg.out.empty()) return cfg.out;
  if (const char* root = std::getenv("PREFINF_OUT_ROOT")) {
    const std::string stem = fs::path(config_path).stem().string();
    return (fs::path(root) / stem).string();
  }
  throw ValidationError("no output directory: pass --out, set \"out\" in the config, "
                        "or export PREFINF_OUT_ROOT");
}

// ---------------------------------------------------------------------------
// manifests and fingerprint chaining

uint64_t file_fingerprint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return fnv1a64(ss.str());
}

std::string hex64(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(cfg.raw.dump()); }

class Manifest {
 public:
  Manifest(const std::string& command, const RunConfig& cfg, uint64_t seed)
      : start_(std::chrono::steady_clock::now()) {
    j_["command"] = command;
    j_["version"] = kVersion;
    j_["config_hash"] = hex64(config_hash(cfg));
    j_["seed"] = seed;
    j_["inputs"] = json::object();
    j_["outputs"] = json::array();
  }

  void input(const std::string& path) {
    j_["inputs"][fs::path(path).filename().string()] = hex64(file_fingerprint(path));
  }
  void output(const std::string& path) { j_["outputs"].push_back(fs::path(path).filename()); }

  void write(const fs::path& dir, const std::string& command) {
    const auto elapsed = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start_)
                             .count();
    j_["wall_clock_s"] = elapsed;
    std::ofstream f(dir / (command + ".manifest.json"), std::ios::binary);
    f << j_.dump(2) << "\n";
  }

  const json& inputs() const { return j_.at("inputs"); }
  const json& header() const { return j_; }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

// Refuses to regenerate an artifact whose previous manifest was built from a
// different config, seed, or input set, unless --force.
void check_overwrite(const fs::path& dir, const std::string& command,
                     const Manifest& manifest, bool force) {
  const fs::path prev_path = dir / (command + ".manifest.json");
  if (force || !fs::exists(prev_path)) return;
  std::ifstream f(prev_path);
  json prev;
  try {
    f >> prev;
  } catch (...) {
    return;  // unreadable manifest: treat as absent
  }
  const json& cur = manifest.header();
  const bool same = prev.value("inputs", json::object()) == cur.at("inputs") &&
                    prev.value("config_hash", "") == cur.at("config_hash") &&
                    prev.value("seed", uint64_t{0}) == cur.at("seed");
  if (!same)
    throw std::runtime_error(command + ": existing artifacts in " + dir.string() +
                             " were built from different inputs; use --force");
}

void require_artifact(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw std::runtime_error("missing " + p.string() + "; run " + producer + " first");
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + p.string());
  f << text;
}

std::vector<std::string> dataset_ids(const PreferenceDataset& ds) {
  std::vector<std::string> ids;
  ids.reserve(ds.size());
  for (const auto& ex : ds.examples) ids.push_back(ex.id);
  return ids;
}

std::vector<bool> flipped_truth(const PreferenceDataset& ds) {
  std::vector<bool> t(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    const auto& f = ds.examples[i].flipped;
    t[i] = f && *f;
  }
  return t;
}

// ---------------------------------------------------------------------------
// subcommands

struct CommonArgs {
  std::string config_path;
  std::string out;
  uint64_t seed_override = 0;
  bool seed_overridden = false;
  bool force = false;
  int jobs = 1;
};

struct Ctx {
  RunConfig cfg;
  fs::path dir;
  uint64_t seed;
  bool force;
  int jobs;
};

Ctx make_ctx(const CommonArgs& args) {
  RunConfig cfg = parse_config(args.config_path);
  if (args.seed_overridden) {
    cfg.seed = args.seed_override;
    cfg.seed_set = true;
  }
  if (!cfg.seed_set) throw ValidationError("seed is mandatory: set it in the config or pass --seed");
  const std::string out = resolve_out(args.out, cfg, args.config_path);
  Ctx ctx{std::move(cfg), out, 0, args.force, args.jobs};
  ctx.seed = ctx.cfg.seed;
  fs::create_directories(ctx.dir);
  return ctx;
}

RewardModelConfig model_config(const Ctx& ctx, int feature_dim = 0) {
  RewardModelConfig m = ctx.cfg.model;
  if (feature_dim > 0) m.feature_dim = feature_dim;
  m.train.seed = sub_seed(ctx.seed, "init");
  return m;
}

std::optional<CompressionConfig> compression_config(const Ctx& ctx) {
  auto cc = ctx.cfg.compression;
  if (cc) cc->seed = sub_seed(ctx.seed, "sketch");
  return cc;
}

int cmd_gen(const CommonArgs& args) {
  Ctx ctx = make_ctx(args);
  Manifest manifest("gen", ctx.cfg, ctx.seed);

  const bool from_paths = !ctx.cfg.train_path.empty();
  if (from_paths) {
    require_artifact(ctx.cfg.train_path, "an external featurizer");
    manifest.input(ctx.cfg.train_path);
    if (!ctx.cfg.val_path.empty()) manifest.input(ctx.cfg.val_path);
  }
  check_overwrite(ctx.dir, "gen", manifest, ctx.force);

  GenerationConfig gen = ctx.cfg.dataset;
  gen.seed = sub_seed(ctx.seed, "dataset");
  gen.split = "train";
  const PreferenceDataset clean =
      from_paths ? load(ctx.cfg.train_path) : generate_synthetic(gen);

  PreferenceDataset train_set = clean;
  if (ctx.cfg.bias) {
    BiasSpec spec = *ctx.cfg.bias;
    spec.seed = sub_seed(ctx.seed, "bias");
    const InjectResult injected = inject_bias(clean, spec);
    train_set = injected.dataset;
    std::cerr << "gen: flipped " << injected.flip_count << " of " << clean.size()
              << " labels (" << 100.0 * injected.flip_fraction << "%)\n";
    save(clean, (ctx.dir / "train_clean.jsonl").string());
    manifest.output("train_clean.jsonl");
  }
  save(train_set, (ctx.dir / "train.jsonl").string());
  manifest.output("train.jsonl");

  PreferenceDataset val_full;
  bool have_val = false;
  if (from_paths && !ctx.cfg.val_path.empty()) {
    val_full = load(ctx.cfg.val_path);
    have_val = true;
  } else if (!from_paths && ctx.cfg.val_n > 0) {
    // same seed, different split: a fresh draw labeled by the same utility
    GenerationConfig vg = gen;
    vg.n = ctx.cfg.val_n;
    vg.noise = 0.0;
    vg.split = "val";
    vg.name = gen.name + ".val";
    val_full = generate_synthetic(vg);
    have_val = true;
  }

  if (have_val) {
    save(val_full, (ctx.dir / "val_full.jsonl").string());
    manifest.output("val_full.jsonl");

    const auto targeted =
        build_targeted_validation(val_full, ctx.cfg.validation_rule, gen.attribute);
    if (targeted.empty_warning)
      std::cerr << "gen: warning: targeted validation subset is empty\n";
    save(targeted.dataset, (ctx.dir / "val_targeted.jsonl").string());
    manifest.output("val_targeted.jsonl");

    const auto anti_rule =
        ctx.cfg.validation_rule == ValidationRule::kAttributeChosenLower
            ? ValidationRule::kAttributeChosenHigher
            : ValidationRule::kAttributeChosenLower;
    const auto anti = build_targeted_validation(val_full, anti_rule, gen.attribute);
    save(anti.dataset, (ctx.dir / "val_anti.jsonl").string());
    manifest.output("val_anti.jsonl");
  }

  manifest.write(ctx.dir, "gen");
  return 0;
}

int cmd_train(const CommonArgs& args) {
  Ctx ctx = make_ctx(args);
  const fs::path train_path = ctx.dir / "train.jsonl";
  require_artifact(train_path, "gen");

  Manifest manifest("train", ctx.cfg, ctx.seed);
  manifest.input(train_path.string());
  check_overwrite(ctx.dir, "train", manifest, ctx.force);

  const PreferenceDataset ds = load(train_path.string());
  const TrainResult r = train(ds, model_config(ctx, ds.feature_dim));
  save_model(r.model, (ctx.dir / "model.json").string());
  manifest.output("model.json");

  json metrics;
  metrics["final_loss"] = r.final_loss;
  metrics["final_grad_norm"] = r.final_grad_norm;
  metrics["epochs_run"] = r.epochs_run;
  metrics["train_accuracy"] = eval_accuracy(r.model, ds);
  write_text(ctx.dir / "train_metrics.json", metrics.dump(2) + "\n");
  manifest.output("train_metrics.json");

  manifest.write(ctx.dir, "train");
  std::cerr << "train: loss " << r.final_loss << ", grad norm " << r.final_grad_norm
            << ", epochs " << r.epochs_run << "\n";
  return 0;
}

int cmd_sketch(const CommonArgs& args) {
  Ctx ctx = make_ctx(args);
  const fs::path train_path = ctx.dir / "train.jsonl";
  const fs::path val_path = ctx.dir / "val_targeted.jsonl";
  const fs::path model_path = ctx.dir / "model.json";
  require_artifact(train_path, "gen");
  require_artifact(val_path, "gen");
  require_artifact(model_path, "train");

  Manifest manifest("sketch", ctx.cfg, ctx.seed);
  manifest.input(train_path.string());
  manifest.input(val_path.string());
  manifest.input(model_path.string());
  check_overwrite(ctx.dir, "sketch", manifest, ctx.force);

  const PreferenceDataset tr = load(train_path.string());
  const PreferenceDataset val = load(val_path.string());
  if (val.empty()) throw ValidationError("targeted validation set is empty");
  const RewardModel model = load_model(model_path.string());

  const GradientStore store = build_store(model, tr, val, compression_config(ctx),
                                          ctx.cfg.aggregation, ctx.jobs);
  save_store_checked(store, (ctx.dir / "store.bin").string(), ctx.force);
  manifest.output("store.bin");
  manifest.write(ctx.dir, "sketch");
  std::cerr << "sketch: " << store.n << " records, " << store.record_bytes()
            << " bytes/record" << (store.sketched ? " (compressed)" : " (raw)") << "\n";
  return 0;
}

int cmd_influence(const CommonArgs& args) {
  Ctx ctx = make_ctx(args);
  const fs::path store_path = ctx.dir / "store.bin";
  const fs::path train_path = ctx.dir / "train.jsonl";
  require_artifact(store_path, "sketch");
  require_artifact(train_path, "gen");

  Manifest manifest("influence", ctx.cfg, ctx.seed);
  manifest.input(store_path.string());
  manifest.input(train_path.string());
  check_overwrite(ctx.dir, "influence", manifest, ctx.force);

  const GradientStore store = GradientStore::load(store_path.string());
  const PreferenceDataset tr = load(train_path.string());
  if (store.dataset_fingerprint != fingerprint(tr))
    throw std::runtime_error("store/dataset fingerprint mismatch: regenerate the store");

  DataInfOptions opts;
  opts.lambda_scale = ctx.cfg.lambda_scale;
  const InfluenceScores scores = datainf_scores(store, opts);

  save_scores_csv(scores, dataset_ids(tr), (ctx.dir / "scores.csv").string());
  write_text(ctx.dir / "scores.meta.json",
             scores_metadata_json(scores, store.dataset_fingerprint,
                                  store.model_fingerprint,
                                  file_fingerprint(store_path.string())) +
                 "\n");
  manifest.output("scores.csv");
  manifest.output("scores.meta.json");
  manifest.write(ctx.dir, "influence");
  return 0;
}

std::vector<double> scores_from_csv(const fs::path& path, const PreferenceDataset& ds) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  std::getline(f, line);  // header
  std::map<std::string, double> by_id;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    by_id[line.substr(0, c1)] = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
  }
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    auto it = by_id.find(ex.id);
    if (it == by_id.end())
      throw std::runtime_error("scores.csv is missing example " + ex.id);
    out.push_back(it->second);
  }
  return out;
}

// in-memory influence scores against an arbitrary validation set
std::vector<double> influence_against(const RewardModel& model,
                                      const PreferenceDataset& tr,
                                      const PreferenceDataset& val, const Ctx& ctx,
                                      double lambda_scale) {
  const GradientStore store =
      build_store(model, tr, val, compression_config(ctx), ctx.cfg.aggregation, ctx.jobs);
  DataInfOptions opts;
  opts.lambda_scale = lambda_scale;
  return datainf_scores(store, opts).scores;
}

int cmd_detect(const CommonArgs& args, bool gnuplot) {
  Ctx ctx = make_ctx(args);
  const fs::path train_path = ctx.dir / "train.jsonl";
  const fs::path model_path = ctx.dir / "model.json";
  const fs::path val_path = ctx.dir / "val_targeted.jsonl";
  require_artifact(train_path, "gen");
  require_artifact(model_path, "train");
  require_artifact(val_path, "gen");

  Manifest manifest("detect", ctx.cfg, ctx.seed);
  manifest.input(train_path.string());
  manifest.input(model_path.string());
  manifest.input(val_path.string());
  const bool wants_influence =
      std::find(ctx.cfg.detect_methods.begin(), ctx.cfg.detect_methods.end(),
                "influence") != ctx.cfg.detect_methods.end();
  const fs::path scores_path = ctx.dir / "scores.csv";
  if (wants_influence) {
    require_artifact(scores_path, "influence");
    manifest.input(scores_path.string());
  }
  check_overwrite(ctx.dir, "detect", manifest, ctx.force);

  const PreferenceDataset tr = load(train_path.string());
  const PreferenceDataset val = load(val_path.string());
  const RewardModel model = load_model(model_path.string());
  const std::vector<bool> truth = flipped_truth(tr);
  const int positives = static_cast<int>(std::count(truth.begin(), truth.end(), true));
  if (positives == 0 || positives == static_cast<int>(truth.size()))
    throw ValidationError("ground truth needs both flipped and unflipped examples; "
                          "configure a bias section and rerun gen");

  std::optional<Eigen::MatrixXd> tr_acts, val_acts;
  auto acts = [&]() -> std::pair<const Eigen::MatrixXd&, const Eigen::MatrixXd&> {
    if (!tr_acts) {
      tr_acts = activation_matrix(model, tr);
      val_acts = activation_matrix(model, val);
    }
    return {*tr_acts, *val_acts};
  };

  std::ostringstream summary_csv;
  summary_csv << "method,auc,ap,tnr80,n,positives\n";
  for (const auto& method : ctx.cfg.detect_methods) {
    std::vector<double> scores;
    if (method == "influence") {
      scores = scores_from_csv(scores_path, tr);
    } else if (method == "confidence") {
      scores = confidence_scores(model, tr);
    } else if (method == "entropy") {
      scores = entropy_scores(model, tr);
    } else if (method == "mahalanobis") {
      auto [ta, va] = acts();
      scores = mahalanobis_scores(ta, va);
    } else if (method == "knn") {
      auto [ta, va] = acts();
      const int k = ctx.cfg.knn_k > 0 ? ctx.cfg.knn_k : knn_auto_k(ta, va, truth);
      scores = knn_scores(ta, va, k);
    }
    const DetectorReport rep = roc_metrics(scores, truth, method);
    save_roc_csv(rep, (ctx.dir / ("roc_" + method + ".csv")).string());
    save_pr_csv(rep, (ctx.dir / ("pr_" + method + ".csv")).string());
    write_text(ctx.dir / ("summary_" + method + ".json"),
               report_summary_json(rep) + "\n");
    if (gnuplot) save_roc_gnuplot(rep, (ctx.dir / ("roc_" + method + ".dat")).string());
    manifest.output("roc_" + method + ".csv");
    manifest.output("pr_" + method + ".csv");
    manifest.output("summary_" + method + ".json");
    char row[160];
    std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f,%d,%d\n", method.c_str(), rep.auc,
                  rep.ap, rep.tnr80, rep.n, rep.positives);
    summary_csv << row;
    std::cerr << "detect: " << method << " auc=" << rep.auc << " ap=" << rep.ap
              << " tnr80=" << rep.tnr80 << "\n";
  }
  write_text(ctx.dir / "summary.csv", summary_csv.str());
  manifest.output("summary.csv");

  // validation-set ablations, all against the influence method
  if (!ctx.cfg.ablation_rules.empty() || !ctx.cfg.ablation_sizes.empty() ||
      !ctx.cfg.ablation_lambda_scales.empty()) {
    const fs::path val_full_path = ctx.dir / "val_full.jsonl";
    require_artifact(val_full_path, "gen");
    const PreferenceDataset val_full = load(val_full_path.string());

    if (!ctx.cfg.ablation_rules.empty()) {
      std::ostringstream csv;
      csv << "rule,val_size,auc\n";
      for (const auto& rule_name : ctx.cfg.ablation_rules) {
        const auto subset = build_targeted_validation(
            val_full, rule_from_string(rule_name), ctx.cfg.dataset.attribute);
        if (subset.dataset.empty()) {
          std::cerr << "detect: ablation rule " << rule_name << " gives an empty set\n";
          continue;
        }
        const auto scores =
            influence_against(model, tr, subset.dataset, ctx, ctx.cfg.lambda_scale);
        csv << rule_name << ',' << subset.dataset.size() << ','
            << roc_metrics(scores, truth).auc << "\n";
      }
      write_text(ctx.dir / "ablation_rules.csv", csv.str());
      manifest.output("ablation_rules.csv");
    }

    if (!ctx.cfg.ablation_sizes.empty()) {
      const auto targeted = load(val_path.string());
      Rng rng(sub_seed(ctx.seed, "val_subsample"));
      std::ostringstream csv;
      csv << "size,mean_auc,sd_auc,subsamples\n";
      for (int size : ctx.cfg.ablation_sizes) {
        if (size < 1 || static_cast<size_t>(size) > targeted.size()) continue;
        double sum = 0.0, sumsq = 0.0;
        for (int rep = 0; rep < ctx.cfg.ablation_subsamples; ++rep) {
          std::vector<size_t> idx(targeted.size());
          std::iota(idx.begin(), idx.end(), size_t{0});
          rng.shuffle(idx);
          PreferenceDataset sub;
          sub.name = targeted.name + ".sub";
          sub.feature_dim = targeted.feature_dim;
          sub.sub_dim = targeted.sub_dim;
          for (int i = 0; i < size; ++i) sub.examples.push_back(targeted.examples[idx[i]]);
          const auto scores = influence_against(model, tr, sub, ctx, ctx.cfg.lambda_scale);
          const double auc = roc_metrics(scores, truth).auc;
          sum += auc;
          sumsq += auc * auc;
        }
        const double mean = sum / ctx.cfg.ablation_subsamples;
        const double var = sumsq / ctx.cfg.ablation_subsamples - mean * mean;
        csv << size << ',' << mean << ',' << std::sqrt(std::max(var, 0.0)) << ','
            << ctx.cfg.ablation_subsamples << "\n";
      }
      write_text(ctx.dir / "ablation_sizes.csv", csv.str());
      manifest.output("ablation_sizes.csv");
    }

    if (!ctx.cfg.ablation_lambda_scales.empty()) {
      std::ostringstream csv;
      csv << "lambda_scale,auc\n";
      for (double scale : ctx.cfg.ablation_lambda_scales) {
        const auto scores = influence_against(model, tr, val, ctx, scale);
        csv << scale << ',' << roc_metrics(scores, truth).auc << "\n";
      }
      write_text(ctx.dir / "ablation_lambda.csv", csv.str());
      manifest.output("ablation_lambda.csv");
    }

    if (!ctx.cfg.ablation_knn_ks.empty()) {
      auto [ta, va] = acts();
      std::ostringstream csv;
      csv << "k,auc\n";
      for (int k : ctx.cfg.ablation_knn_ks) {
        if (k < 1 || k > va.rows()) continue;
        csv << k << ',' << roc_metrics(knn_scores(ta, va, k), truth).auc << "\n";
      }
      write_text(ctx.dir / "ablation_knn.csv", csv.str());
      manifest.output("ablation_knn.csv");
    }
  }

  manifest.write(ctx.dir, "detect");
  return 0;
}

int cmd_retrain(const CommonArgs& args) {
  Ctx ctx = make_ctx(args);
  const fs::path train_path = ctx.dir / "train.jsonl";
  const fs::path scores_path = ctx.dir / "scores.csv";
  require_artifact(train_path, "gen");
  require_artifact(scores_path, "influence");

  Manifest manifest("retrain", ctx.cfg, ctx.seed);
  manifest.input(train_path.string());
  manifest.input(scores_path.string());
  check_overwrite(ctx.dir, "retrain", manifest, ctx.force);

  const PreferenceDataset tr = load(train_path.string());
  const std::vector<double> scores = scores_from_csv(scores_path, tr);

  std::vector<std::pair<std::string, PreferenceDataset>> vals;
  for (const char* name : {"val_targeted.jsonl", "val_anti.jsonl", "val_full.jsonl"}) {
    const fs::path p = ctx.dir / name;
    if (fs::exists(p)) {
      auto ds = load(p.string());
      if (!ds.empty()) vals.emplace_back(name, std::move(ds));
    }
  }
  if (vals.empty()) throw ValidationError("no validation sets found; run gen first");

  std::ostringstream csv;
  csv << "alpha,flips,val_set,acc_before,acc_after\n";
  for (double alpha : ctx.cfg.retrain_alphas) {
    std::vector<std::pair<std::string, const PreferenceDataset*>> val_ptrs;
    for (const auto& [name, ds] : vals) val_ptrs.emplace_back(name, &ds);
    const RetrainResult r =
        flip_and_retrain(tr, scores, alpha, model_config(ctx, tr.feature_dim), val_ptrs);
    for (const auto& row : r.rows) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%g,%d,%s,%.6f,%.6f\n", alpha, r.flip_count,
                    row.val_set.c_str(), row.acc_before, row.acc_after);
      csv << buf;
      std::cerr << "retrain: alpha=" << alpha << " " << row.val_set << " "
                << row.acc_before << " -> " << row.acc_after << "\n";
    }
  }
  write_text(ctx.dir / "retrain.csv", csv.str());
  manifest.output("retrain.csv");
  manifest.write(ctx.dir, "retrain");
  return 0;
}

int cmd_oversight(const CommonArgs& args) {
  Ctx ctx = make_ctx(args);
  const bool from_paths = !ctx.cfg.train_path.empty();
  if (from_paths && ctx.cfg.val_path.empty())
    throw ValidationError("oversight with dataset.train_path also needs dataset.val_path");
  if (from_paths && ctx.cfg.w_alice.empty())
    throw ValidationError("oversight with dataset paths needs oversight.w_alice");
  if (!from_paths && ctx.cfg.dataset.m < 1)
    throw ValidationError("oversight requires dataset.m >= 1 (sub-objective scores)");
  if (!from_paths && ctx.cfg.val_n < 2)
    throw ValidationError("oversight requires dataset.val_n >= 2");

  Manifest manifest("oversight", ctx.cfg, ctx.seed);
  if (from_paths) {
    require_artifact(ctx.cfg.train_path, "an external featurizer");
    require_artifact(ctx.cfg.val_path, "an external featurizer");
    manifest.input(ctx.cfg.train_path);
    manifest.input(ctx.cfg.val_path);
  }
  check_overwrite(ctx.dir, "oversight", manifest, ctx.force);

  GenerationConfig gen = ctx.cfg.dataset;
  gen.seed = sub_seed(ctx.seed, "dataset");
  gen.split = "train";
  const PreferenceDataset db_clean =
      from_paths ? load(ctx.cfg.train_path) : generate_synthetic(gen);
  if (db_clean.sub_dim < 1)
    throw ValidationError("oversight training data carries no sub-objective scores");

  LabelerStrategy alice;
  if (!ctx.cfg.w_alice.empty()) {
    if (static_cast<int>(ctx.cfg.w_alice.size()) != db_clean.sub_dim)
      throw ValidationError("oversight.w_alice length must equal the sub-score dimension");
    alice.w = ctx.cfg.w_alice;
  } else {
    const auto utility = generator_utility(gen);
    alice.w.assign(utility.begin(), utility.begin() + gen.m);
  }

  PreferenceDataset da_raw;
  if (from_paths) {
    da_raw = load(ctx.cfg.val_path);
  } else {
    GenerationConfig vg = gen;
    vg.n = ctx.cfg.val_n;
    vg.noise = 0.0;
    vg.split = "val";
    vg.name = gen.name + ".expert";
    da_raw = generate_synthetic(vg);
  }
  const PreferenceDataset da = simulate_labels(da_raw, alice);

  std::vector<LabelerStrategy> bobs;
  if (!ctx.cfg.w_bobs.empty()) {
    for (const auto& w : ctx.cfg.w_bobs) bobs.push_back({w});
  } else {
    bobs = make_bob_strategies(db_clean, alice, ctx.cfg.bob_count, ctx.cfg.band_lo,
                               ctx.cfg.band_hi, sub_seed(ctx.seed, "bobs"));
  }

  const RewardModelConfig mcfg = model_config(ctx, db_clean.feature_dim);
  std::ostringstream csv;
  csv << "scenario,method,label_acc_before,label_acc_after,cos_sim_before,cos_sim_after,"
         "rm_acc_before,rm_acc_after\n";
  auto csv_row = [&](int idx, const std::string& method, const OversightResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f,%.6f,%s,%s\n", idx,
                  method.c_str(), r.label_acc_before, r.label_acc_after, r.cos_sim_before,
                  r.cos_sim_after,
                  r.rm_acc_before ? std::to_string(*r.rm_acc_before).c_str() : "",
                  r.rm_acc_after ? std::to_string(*r.rm_acc_after).c_str() : "");
    csv << buf;
  };

  for (size_t b = 0; b < bobs.size(); ++b) {
    const PreferenceDataset db = simulate_labels(db_clean, bobs[b]);
    const TrainResult tr_res = train(db, mcfg);
    const std::vector<double> scores =
        influence_against(tr_res.model, db, da, ctx, ctx.cfg.lambda_scale);

    OversightContext octx;
    octx.expert_val = &da;
    octx.model_config = &mcfg;
    octx.trained_model = &tr_res.model;
    octx.compute_rm_acc = ctx.cfg.rm_acc;

    const OversightResult inf =
        algorithm1_update(db, bobs[b], alice, scores, ctx.cfg.svm_c, octx);
    const Eigen::MatrixXd val_acts = activation_matrix(tr_res.model, da);
    const OversightResult mah =
        baseline_update(db, bobs[b], alice, BaselineMethod::kMahalanobis, tr_res.model,
                        val_acts, ctx.cfg.svm_c, ctx.cfg.oversight_knn_k, octx);
    const OversightResult knn =
        baseline_update(db, bobs[b], alice, BaselineMethod::kKnn, tr_res.model, val_acts,
                        ctx.cfg.svm_c, ctx.cfg.oversight_knn_k, octx);

    json scenario;
    scenario["bob"] = bobs[b].w;
    scenario["alice"] = alice.w;
    scenario["influence"] = json::parse(oversight_result_json(inf));
    scenario["mahalanobis"] = json::parse(oversight_result_json(mah));
    scenario["knn"] = json::parse(oversight_result_json(knn));
    const std::string name = "oversight_" + std::to_string(b) + ".json";
    write_text(ctx.dir / name, scenario.dump(2) + "\n");
    manifest.output(name);
    csv_row(static_cast<int>(b), "influence", inf);
    csv_row(static_cast<int>(b), "mahalanobis", mah);
    csv_row(static_cast<int>(b), "knn", knn);
    std::cerr << "oversight[" << b << "]: label acc " << inf.label_acc_before << " -> "
              << inf.label_acc_after << " (influence)\n";
  }
  write_text(ctx.dir / "oversight.csv", csv.str());
  manifest.output("oversight.csv");

  // expert-set size ablation on the first scenario
  if (!ctx.cfg.oversight_val_sizes.empty()) {
    const PreferenceDataset db = simulate_labels(db_clean, bobs[0]);
    const TrainResult tr_res = train(db, mcfg);
    Rng rng(sub_seed(ctx.seed, "oversight_subsample"));
    std::ostringstream ab;
    ab << "val_size,mean_label_acc_after,mean_cos_sim_after,subsamples\n";
    const int reps = 20;
    for (int size : ctx.cfg.oversight_val_sizes) {
      if (size < 2 || static_cast<size_t>(size) > da.size()) continue;
      double acc = 0.0, cos = 0.0;
      for (int rep = 0; rep < reps; ++rep) {
        std::vector<size_t> idx(da.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        rng.shuffle(idx);
        PreferenceDataset sub;
        sub.name = da.name + ".sub";
        sub.feature_dim = da.feature_dim;
        sub.sub_dim = da.sub_dim;
        for (int i = 0; i < size; ++i) sub.examples.push_back(da.examples[idx[i]]);
        const auto scores =
            influence_against(tr_res.model, db, sub, ctx, ctx.cfg.lambda_scale);
        const auto r = update_from_scores(db, bobs[0], alice, scores, ctx.cfg.svm_c);
        acc += r.label_acc_after;
        cos += r.cos_sim_after;
      }
      ab << size << ',' << acc / reps << ',' << cos / reps << ',' << reps << "\n";
    }
    write_text(ctx.dir / "oversight_sizes.csv", ab.str());
    manifest.output("oversight_sizes.csv");
  }

  manifest.write(ctx.dir, "oversight");
  return 0;
}

int cmd_bench(const CommonArgs& args, const std::vector<int>& sizes) {
  Ctx ctx = make_ctx(args);
  Manifest manifest("bench", ctx.cfg, ctx.seed);

  std::vector<int> ns = sizes;
  if (ns.empty()) ns = {500, 1000, 2000, 4000};

  auto now = [] { return std::chrono::steady_clock::now(); };
  auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };

  std::ostringstream csv;
  csv << "n,sketch_store_s,influence_sketched_s,two_pass_s\n";
  for (int n : ns) {
    GenerationConfig g = ctx.cfg.dataset;
    g.n = n;
    g.seed = sub_seed(ctx.seed, "bench" + std::to_string(n));
    const PreferenceDataset tr = generate_synthetic(g);
    GenerationConfig vg = g;
    vg.n = std::max(50, n / 10);
    vg.split = "val";
    const PreferenceDataset val = generate_synthetic(vg);

    RewardModelConfig mcfg = model_config(ctx, g.d);
    mcfg.train.max_epochs = std::min(mcfg.train.max_epochs, 50);
    const RewardModel model = train(tr, mcfg).model;

    auto cc = compression_config(ctx);
    if (!cc) cc = CompressionConfig{sub_seed(ctx.seed, "sketch"), 1 << 12, 4096, true};

    // (a) one pass over the gradients, sketched and persisted
    const auto t0 = now();
    const GradientStore store =
        build_store(model, tr, val, cc, ctx.cfg.aggregation, ctx.jobs);
    store.save((ctx.dir / "bench_store.bin").string());
    const auto t1 = now();

    // (b) influence from the compressed store
    const InfluenceScores scores = datainf_scores(store);
    const auto t2 = now();

    // (c) no-storage emulation: gradients are recomputed on every pass, so
    // the cached-scalar pass and the scoring pass each backpropagate again
    const auto t3 = now();
    {
      ParamBlocks val_sum = ParamBlocks::zeros_like(model.params);
      for (const auto& ex : val.examples) val_sum.axpy(1.0, grad_example(model, ex));
      const Eigen::VectorXd gv = val_sum.flatten();
      const int dim = model.params.total_dim();

      // pass one: cached scalars
      Eigen::VectorXd c(tr.size()), s(tr.size());
      for (size_t j = 0; j < tr.size(); ++j) {
        const Eigen::VectorXd gj = grad_example(model, tr.examples[j]).flatten();
        c[j] = gv.dot(gj);
        s[j] = gj.squaredNorm();
      }
      const double lambda = 0.1 * s.mean() / dim;

      // pass two: aggregated vector, then scores; both recompute gradients
      Eigen::VectorXd agg = Eigen::VectorXd::Zero(dim);
      for (size_t j = 0; j < tr.size(); ++j)
        agg += (c[j] / (lambda + s[j])) * grad_example(model, tr.examples[j]).flatten();
      std::vector<double> out(tr.size());
      for (size_t i = 0; i < tr.size(); ++i) {
        const Eigen::VectorXd gi = grad_example(model, tr.examples[i]).flatten();
        out[i] = -(c[i] - agg.dot(gi) / tr.size()) / lambda;
      }
      (void)out;
    }
    const auto t4 = now();

    char row[160];
    std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f\n", n, secs(t0, t1), secs(t1, t2),
                  secs(t3, t4));
    csv << row;
    std::cerr << "bench: n=" << n << " store=" << secs(t0, t1)
              << "s influence=" << secs(t1, t2) << "s two-pass=" << secs(t3, t4) << "s\n";
    (void)scores;
  }
  fs::remove(ctx.dir / "bench_store.bin");
  write_text(ctx.dir / "bench.csv", csv.str());
  manifest.output("bench.csv");
  manifest.write(ctx.dir, "bench");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prefinf: influence analysis for preference-based reward models"};
  app.require_subcommand(1);

  CommonArgs common;
  std::vector<int> bench_sizes;
  bool gnuplot = false;

  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    auto* opt = sub->add_option("--config", common.config_path, "run configuration JSON");
    if (needs_config) opt->required();
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed_override, "override the config seed")
        ->each([&](const std::string&) { common.seed_overridden = true; });
    sub->add_flag("--force", common.force, "overwrite mismatched artifacts");
    sub->add_option("--jobs", common.jobs, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen", "generate synthetic preference data");
  add_common(gen);
  auto* train = app.add_subcommand("train", "train the reward model");
  add_common(train);
  auto* sketch = app.add_subcommand("sketch", "build the (compressed) gradient store");
  add_common(sketch);
  auto* influence = app.add_subcommand("influence", "score training examples");
  add_common(influence);
  auto* detect = app.add_subcommand("detect", "bias detection metrics and baselines");
  add_common(detect);
  detect->add_flag("--gnuplot", gnuplot, "also write two-column ROC data");
  auto* retrain = app.add_subcommand("retrain", "flip top-scored labels and retrain");
  add_common(retrain);
  auto* oversight = app.add_subcommand("oversight", "labeler strategy oversight");
  add_common(oversight);
  auto* bench = app.add_subcommand("bench", "runtime measurements");
  add_common(bench);
  bench->add_option("--sizes", bench_sizes, "training-set sizes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(common);
    if (train->parsed()) return cmd_train(common);
    if (sketch->parsed()) return cmd_sketch(common);
    if (influence->parsed()) return cmd_influence(common);
    if (detect->parsed()) return cmd_detect(common, gnuplot);
    if (retrain->parsed()) return cmd_retrain(common);
    if (oversight->parsed()) return cmd_oversight(common);
    if (bench->parsed()) return cmd_bench(common, bench_sizes);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "prefinf/influence.hpp"
#include "prefinf/prefdata.hpp"
#include "prefinf/reward.hpp"

using namespace prefinf;

namespace {

RewardModelConfig linear_config(int d, double l2 = 1e-4, int epochs = 4000,
                                double step = 0.5, double tol = 1e-10) {
  RewardModelConfig cfg;
  cfg.arch = Arch::kLinear;
  cfg.feature_dim = d;
  cfg.l2_reg = l2;
  cfg.train.max_epochs = epochs;
  cfg.train.step_size = step;
  cfg.train.tolerance = tol;
  return cfg;
}

PreferenceExample pair_example(const std::string& id, const std::vector<double>& f0,
                               const std::vector<double>& f1, int z) {
  PreferenceExample ex;
  ex.id = id;
  ex.feat0 = f0;
  ex.feat1 = f1;
  ex.z = z;
  return ex;
}

// Validation pair whose gradients cancel exactly at zero parameters (both
// labels see a zero margin there): the same response pair labeled both ways.
PreferenceDataset cancelling_val(int d) {
  PreferenceDataset val;
  val.name = "cancel";
  val.feature_dim = d;
  std::vector<double> f0(d, 0.0), f1(d, 0.0);
  f0[0] = 1.0;
  f1[d - 1] = 1.0;
  val.examples.push_back(pair_example("v0", f0, f1, 0));
  val.examples.push_back(pair_example("v1", f0, f1, 1));
  return val;
}

RewardModel zero_model(int d, double l2 = 1e-4) {
  RewardModel m;
  m.config = linear_config(d, l2);
  m.params.blocks.push_back({"theta", d, 1, Eigen::VectorXd::Zero(d)});
  return m;
}

}  // namespace

TEST_CASE("build_store keeps one record per training example") {
  GenerationConfig g;
  g.n = 23;
  g.d = 6;
  g.seed = 40;
  const auto tr = generate_synthetic(g);
  g.n = 9;
  g.seed = 41;
  const auto val = generate_synthetic(g);
  const auto model = train(tr, linear_config(6, 1e-3, 300)).model;

  const auto raw = build_store(model, tr, val, std::nullopt);
  CHECK(raw.n == 23);
  CHECK_FALSE(raw.sketched);
  CHECK(raw.records[0].rows() == 23);
  CHECK(raw.record_bytes() == 6 * 8);

  CompressionConfig cc;
  cc.bins = 4;
  cc.seed = 10;
  const auto sk = build_store(model, tr, val, cc);
  CHECK(sk.sketched);
  CHECK(sk.record_bytes() == 4 * 8);
}

TEST_CASE("store validation gradient equals the training record for a shared singleton") {
  PreferenceDataset one;
  one.name = "one";
  one.feature_dim = 3;
  one.examples.push_back(pair_example("a", {1.0, 0.5, -0.2}, {0.1, -0.3, 0.4}, 0));
  const auto model = train(one, linear_config(3, 1e-2, 2000, 1.0)).model;
  const auto store = build_store(model, one, one, std::nullopt);
  CHECK((store.records[0].row(0).transpose() - store.val_grad[0]).norm() == 0.0);
}

TEST_CASE("sketched record size is independent of the feature dimension") {
  CompressionConfig cc;
  cc.bins = 8;
  cc.seed = 3;
  size_t bytes16 = 0, bytes256 = 0;
  for (int d : {16, 256}) {
    GenerationConfig g;
    g.n = 12;
    g.d = d;
    g.seed = 50 + d;
    const auto tr = generate_synthetic(g);
    const auto model = train(tr, linear_config(d, 1e-3, 50)).model;
    const auto store = build_store(model, tr, tr, cc);
    (d == 16 ? bytes16 : bytes256) = store.record_bytes();
  }
  CHECK(bytes16 == bytes256);
}

TEST_CASE("build_store output is independent of the job count") {
  GenerationConfig g;
  g.n = 37;
  g.d = 9;
  g.seed = 44;
  g.split = "train";
  const auto tr = generate_synthetic(g);
  GenerationConfig gv = g;
  gv.n = 11;
  gv.split = "val";
  const auto val = generate_synthetic(gv);
  const auto model = train(tr, linear_config(9, 1e-2, 200)).model;

  CompressionConfig cc;
  cc.bins = 4;
  cc.seed = 6;
  for (const auto& compression :
       std::vector<std::optional<CompressionConfig>>{std::nullopt, cc}) {
    const auto one = build_store(model, tr, val, compression, ValAggregation::kSum, 1);
    const auto many = build_store(model, tr, val, compression, ValAggregation::kSum, 3);
    for (size_t b = 0; b < one.records.size(); ++b) {
      CHECK((one.records[b] - many.records[b]).cwiseAbs().maxCoeff() == 0.0);
      CHECK((one.val_grad[b] - many.val_grad[b]).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("mean aggregation rescales scores without reordering") {
  GenerationConfig g;
  g.n = 25;
  g.d = 5;
  g.seed = 46;
  g.split = "train";
  const auto tr = generate_synthetic(g);
  GenerationConfig gv = g;
  gv.n = 10;
  gv.split = "val";
  const auto val = generate_synthetic(gv);
  const auto model = train(tr, linear_config(5, 1e-2, 300)).model;

  const auto sum_scores =
      datainf_scores(build_store(model, tr, val, std::nullopt, ValAggregation::kSum));
  const auto mean_scores =
      datainf_scores(build_store(model, tr, val, std::nullopt, ValAggregation::kMean));
  for (size_t i = 0; i < tr.size(); ++i)
    CHECK(mean_scores.scores[i] ==
          doctest::Approx(sum_scores.scores[i] / val.size()).epsilon(1e-12));
  CHECK(compare_scores(mean_scores.scores, sum_scores.scores).spearman ==
        doctest::Approx(1.0));
}

TEST_CASE("store files round trip and guard fingerprints") {
  GenerationConfig g;
  g.n = 11;
  g.d = 4;
  g.seed = 60;
  const auto tr = generate_synthetic(g);
  const auto model = train(tr, linear_config(4, 1e-3, 200)).model;
  const auto store = build_store(model, tr, tr, std::nullopt);

  const std::string path = "store_roundtrip.bin";
  save_store_checked(store, path);
  const auto back = GradientStore::load(path);
  CHECK(back.n == store.n);
  CHECK(back.dataset_fingerprint == store.dataset_fingerprint);
  CHECK(back.model_fingerprint == store.model_fingerprint);
  CHECK((back.records[0] - store.records[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.val_grad[0] - store.val_grad[0]).cwiseAbs().maxCoeff() == 0.0);

  // same fingerprints: overwrite is fine
  CHECK_NOTHROW(save_store_checked(store, path));

  // different model: refuse without force
  auto other_model = model;
  other_model.params.blocks[0].values[0] += 1.0;
  const auto clash = build_store(other_model, tr, tr, std::nullopt);
  CHECK_THROWS_WITH_AS(save_store_checked(clash, path),
                       doctest::Contains("fingerprint"), std::runtime_error);
  CHECK_NOTHROW(save_store_checked(clash, path, /*force=*/true));
  std::filesystem::remove(path);
}

TEST_CASE("datainf scores vanish when the validation gradient is zero") {
  GenerationConfig g;
  g.n = 15;
  g.d = 5;
  g.seed = 70;
  const auto tr = generate_synthetic(g);
  const auto model = zero_model(5);
  const auto store = build_store(model, tr, cancelling_val(5), std::nullopt);
  CHECK(store.val_grad[0].norm() == 0.0);
  const auto scores = datainf_scores(store);
  for (double s : scores.scores) CHECK(s == 0.0);
}

TEST_CASE("datainf single-example score has the closed form") {
  PreferenceDataset one;
  one.name = "one";
  one.feature_dim = 4;
  one.examples.push_back(pair_example("a", {1.0, 2.0, -0.5, 0.3}, {0.0, 1.0, 0.5, -0.2}, 0));
  auto model = train(one, linear_config(4, 5e-2, 500, 1.0)).model;
  const auto store = build_store(model, one, one, std::nullopt);
  const auto scores = datainf_scores(store);

  const double v2 = store.records[0].row(0).squaredNorm();
  REQUIRE(v2 > 0.0);
  const double lambda = scores.lambdas[0];
  CHECK(lambda == doctest::Approx(0.1 * v2 / 4.0).epsilon(1e-12));
  CHECK(scores.scores[0] == doctest::Approx(-v2 / (lambda + v2)).epsilon(1e-12));
}

TEST_CASE("datainf equals the hand-expanded double-sum formula") {
  GenerationConfig g;
  g.n = 7;
  g.d = 3;
  g.seed = 81;
  const auto tr = generate_synthetic(g);
  g.n = 4;
  g.seed = 82;
  const auto val = generate_synthetic(g);
  const auto model = train(tr, linear_config(3, 1e-3, 400)).model;
  const auto store = build_store(model, tr, val, std::nullopt);
  const auto fast = datainf_scores(store);

  const auto& R = store.records[0];
  const auto& gv = store.val_grad[0];
  const int n = store.n;
  const double lambda = fast.lambdas[0];
  for (int i = 0; i < n; ++i) {
    double cross = 0.0;
    for (int j = 0; j < n; ++j) {
      const double gj = gv.dot(R.row(j));
      const double jj = R.row(j).squaredNorm();
      const double ji = R.row(j).dot(R.row(i));
      cross += gj * ji / (lambda + jj);
    }
    const double expect = -(gv.dot(R.row(i)) - cross / n) / lambda;
    CHECK(fast.scores[i] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("datainf is invariant to training order and linear in the validation gradient") {
  GenerationConfig g;
  g.n = 40;
  g.d = 6;
  g.seed = 90;
  auto tr = generate_synthetic(g);
  g.n = 12;
  g.seed = 91;
  const auto val = generate_synthetic(g);
  const auto model = train(tr, linear_config(6, 1e-3, 500)).model;
  const auto base = datainf_scores(build_store(model, tr, val, std::nullopt));

  SUBCASE("reversed dataset order") {
    auto rev = tr;
    std::reverse(rev.examples.begin(), rev.examples.end());
    const auto flipped = datainf_scores(build_store(model, rev, val, std::nullopt));
    for (size_t i = 0; i < tr.size(); ++i) {
      const double a = base.scores[i];
      const double b = flipped.scores[tr.size() - 1 - i];
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }

  SUBCASE("scaling the validation gradient scales scores exactly") {
    auto store = build_store(model, tr, val, std::nullopt);
    auto scaled = store;
    scaled.val_grad[0] *= 4.0;  // power of two: exact in floating point
    const auto s1 = datainf_scores(store);
    const auto s2 = datainf_scores(scaled);
    for (size_t i = 0; i < tr.size(); ++i) CHECK(s2.scores[i] == 4.0 * s1.scores[i]);
  }
}

TEST_CASE("exact scores: trivial cases and sign of self-influence") {
  SUBCASE("zero validation gradient gives all zeros") {
    GenerationConfig g;
    g.n = 10;
    g.d = 4;
    g.seed = 100;
    const auto tr = generate_synthetic(g);
    const auto s = exact_scores(zero_model(4), tr, cancelling_val(4));
    for (double v : s.scores) CHECK(v == 0.0);
  }

  SUBCASE("one-dimensional single example matches the scalar formula") {
    PreferenceDataset one;
    one.name = "one";
    one.feature_dim = 1;
    one.examples.push_back(pair_example("a", {1.0}, {0.0}, 0));
    RewardModel m;
    m.config = linear_config(1, 0.25);
    m.params.blocks.push_back({"theta", 1, 1, Eigen::VectorXd::Constant(1, 0.5)});

    const double damping = 0.03;
    const auto s = exact_scores(m, one, one, damping);
    const double sig = 1.0 / (1.0 + std::exp(-0.5));
    const double grad = -(1.0 - sig);              // d loss / d theta
    const double hess = sig * (1.0 - sig) + 0.25;  // data term + l2
    const double expect = -grad * grad / (hess + damping);
    CHECK(s.scores[0] == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("an example is positively contributing to itself") {
    for (uint64_t seed : {7ull, 8ull, 9ull}) {
      GenerationConfig g;
      g.n = 30;
      g.d = 5;
      g.seed = seed;
      const auto tr = generate_synthetic(g);
      const auto model = train(tr, linear_config(5, 1e-3, 600)).model;
      PreferenceDataset self;
      self.name = "self";
      self.feature_dim = 5;
      self.examples.push_back(tr.examples[seed % tr.size()]);
      const auto s = exact_scores(model, tr, self);
      CHECK(s.scores[seed % tr.size()] < 0.0);
    }
  }
}

TEST_CASE("datainf tracks the exact oracle on a convex instance") {
  // Moderate margins (strong l2, label noise) are the regime where the
  // gradient-outer-product approximation of the Hessian is most faithful.
  GenerationConfig g;
  g.n = 300;
  g.d = 20;
  g.seed = 11;
  g.noise = 0.1;
  g.split = "train";
  const auto tr = generate_synthetic(g);
  g.n = 80;
  g.split = "val";
  const auto val = generate_synthetic(g);

  const auto model = train(tr, linear_config(20, 0.1, 3000, 1.0)).model;
  const auto approx = datainf_scores(build_store(model, tr, val, std::nullopt));
  const auto oracle = exact_scores(model, tr, val);
  const auto corr = compare_scores(approx.scores, oracle.scores);
  CHECK(corr.pearson >= 0.90);
}

TEST_CASE("sketched datainf preserves the raw ranking") {
  // Bias-detection shaped instance: flipped labels give the scores a strong
  // systematic component for the sketch to preserve.
  GenerationConfig g;
  g.n = 150;
  g.d = 97;
  g.seed = 21;
  g.noise = 0.10;
  g.split = "train";
  const auto biased = inject_bias(generate_synthetic(g), {BiasKind::kFlipTowardAttribute,
                                                          "length", 0.25, 121});
  GenerationConfig gv = g;
  gv.n = 700;
  gv.noise = 0.0;
  gv.split = "val";
  const auto val = build_targeted_validation(generate_synthetic(gv),
                                             ValidationRule::kAttributeChosenLower)
                       .dataset;

  RewardModelConfig cfg;
  cfg.arch = Arch::kMlp1;
  cfg.feature_dim = 97;
  cfg.hidden_dim = 250;  // ~24k gradient dimensions, 6x compression at 2^12 bins
  cfg.l2_reg = 1e-2;
  cfg.train.max_epochs = 600;
  cfg.train.step_size = 0.5;
  cfg.train.tolerance = 1e-7;
  cfg.train.seed = 31;
  const auto model = train(biased.dataset, cfg).model;

  const auto raw = datainf_scores(build_store(model, biased.dataset, val, std::nullopt));

  CompressionConfig cc;
  cc.bins = 1 << 12;
  cc.seed = 1;

  SUBCASE("whole-vector sketch holds the ranking") {
    CompressionConfig whole = cc;
    whole.per_block = false;
    const auto wv = datainf_scores(build_store(model, biased.dataset, val, whole));
    CHECK(wv.method == InfluenceMethod::kDataInfSketched);
    CHECK(compare_scores(wv.scores, raw.scores).spearman >= 0.95);
  }

  SUBCASE("per-block sketch correlates but is noisier at this compression") {
    // The per-layer damping divides by the block dimension, which amplifies
    // sketch noise on wide blocks; the whole-vector mode is the configuration
    // for high-ratio compression.
    const auto sk = datainf_scores(build_store(model, biased.dataset, val, cc));
    CHECK(compare_scores(sk.scores, raw.scores).spearman >= 0.6);
  }

  SUBCASE("per-block sketches are exact when every block fits its bins") {
    RewardModelConfig small = cfg;
    small.hidden_dim = 40;  // all block dims <= 2^12: signed permutations only
    small.train.max_epochs = 300;
    const auto sm = train(biased.dataset, small).model;
    const auto raw_s = datainf_scores(build_store(sm, biased.dataset, val, std::nullopt));
    const auto sk_s = datainf_scores(build_store(sm, biased.dataset, val, cc));
    for (size_t i = 0; i < raw_s.scores.size(); ++i)
      CHECK(sk_s.scores[i] ==
            doctest::Approx(raw_s.scores[i]).epsilon(1e-10));
  }
}

TEST_CASE("leave-one-out oracle") {
  SUBCASE("a zero-gradient example changes nothing") {
    // l2_reg = 0 here: with regularization, dropping even an inert example
    // rescales the data term against the penalty and shifts the optimum.
    GenerationConfig g;
    g.n = 60;
    g.d = 4;
    g.seed = 33;
    g.noise = 0.15;  // keeps the unregularized optimum finite
    auto tr = generate_synthetic(g);
    PreferenceExample inert;
    inert.id = "inert";
    inert.feat0 = {0.4, -0.1, 0.2, 0.9};
    inert.feat1 = inert.feat0;  // identical responses: gradient is zero everywhere
    inert.z = 0;
    tr.examples.push_back(inert);
    g.n = 20;
    g.split = "val";
    const auto val = generate_synthetic(g);
    const auto cfg = linear_config(4, 0.0, 20000, 1.0, 1e-12);
    const auto deltas = loo_oracle(cfg, tr, val, {"inert"});
    CHECK(std::abs(deltas.at("inert")) < 1e-6);
  }

  SUBCASE("removing one duplicate has half the effect of removing both") {
    GenerationConfig g;
    g.n = 80;
    g.d = 4;
    g.seed = 35;
    auto tr = generate_synthetic(g);
    auto dup = tr.examples[5];
    dup.id = "dup";
    tr.examples.push_back(dup);
    g.n = 20;
    g.split = "val";
    const auto val = generate_synthetic(g);
    const auto cfg = linear_config(4, 1e-3, 20000, 1.0, 1e-12);

    const auto one = loo_oracle(cfg, tr, val, {"dup"});

    auto both_removed = tr;
    both_removed.examples.erase(both_removed.examples.begin() + 5);
    both_removed.examples.pop_back();
    const auto full = train(tr, cfg);
    const auto none = train(both_removed, cfg);
    const double both_delta = validation_loss(none.model, val, ValAggregation::kSum) -
                              validation_loss(full.model, val, ValAggregation::kSum);
    CHECK(one.at("dup") ==
          doctest::Approx(0.5 * both_delta).epsilon(0.25));
  }

  SUBCASE("negated deltas track exact influence ranks") {
    GenerationConfig g;
    g.n = 200;
    g.d = 10;
    g.seed = 37;
    g.noise = 0.1;
    g.split = "train";
    const auto tr = generate_synthetic(g);
    g.n = 50;
    g.split = "val";
    const auto val = generate_synthetic(g);
    const auto cfg = linear_config(10, 1e-3, 8000, 1.0, 1e-11);

    std::vector<std::string> ids;
    for (const auto& ex : tr.examples) ids.push_back(ex.id);
    const auto deltas = loo_oracle(cfg, tr, val, ids, ValAggregation::kSum, 2);

    const auto model = train(tr, cfg).model;
    const auto oracle = exact_scores(model, tr, val);
    std::vector<double> neg_deltas;
    for (const auto& ex : tr.examples) neg_deltas.push_back(-deltas.at(ex.id));
    CHECK(compare_scores(oracle.scores, neg_deltas).spearman >= 0.80);

    SUBCASE("sign agreement with the influence convention") {
      int agree = 0;
      for (size_t i = 0; i < tr.size(); ++i)
        if ((oracle.scores[i] > 0) == (neg_deltas[i] > 0)) ++agree;
      CHECK(agree >= static_cast<int>(0.8 * tr.size()));
    }
  }

  SUBCASE("guards") {
    GenerationConfig g;
    g.n = 5;
    g.d = 2;
    g.seed = 39;
    const auto tr = generate_synthetic(g);
    RewardModelConfig cfg;
    cfg.arch = Arch::kMlp1;
    cfg.feature_dim = 2;
    cfg.hidden_dim = 2;
    CHECK_THROWS_AS(loo_oracle(cfg, tr, tr, {"ex000000"}), std::invalid_argument);
  }
}

TEST_CASE("compare_scores computes textbook correlations") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK(compare_scores(a, a).pearson == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> neg = a;
  for (auto& x : neg) x = -x;
  CHECK(compare_scores(a, neg).pearson == doctest::Approx(-1.0).epsilon(1e-15));

  const std::vector<double> b{2.0, 1.0, 4.0, 3.0, 7.0};
  const auto c = compare_scores(a, b);
  CHECK(c.pearson == doctest::Approx(0.82416338369213409).epsilon(1e-12));
  CHECK(c.spearman == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_AS(compare_scores({1.0, 1.0}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(compare_scores({1.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(compare_scores({1.0, 2.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("scores export as ranked CSV") {
  InfluenceScores s;
  s.scores = {0.5, -1.0, 2.0};
  s.method = InfluenceMethod::kDataInfRaw;
  s.validation_set_name = "v";
  s.lambdas = {0.1};
  const std::string path = "scores_test.csv";
  save_scores_csv(s, {"a", "b", "c"}, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "id,score,rank");
  std::getline(f, line);
  CHECK(line == "a,0.5,2");
  std::getline(f, line);
  CHECK(line == "b,-1,3");
  std::getline(f, line);
  CHECK(line == "c,2,1");
  f.close();
  std::filesystem::remove(path);
}

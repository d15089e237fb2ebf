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

#include "prefinf/oversight.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "prefinf/baselines.hpp"
#include "prefinf/rng.hpp"
#include <nlohmann/json.hpp>

namespace prefinf {

namespace {

void require_sub_scores(const PreferenceDataset& ds, const LabelerStrategy& w) {
  if (ds.sub_dim < 1) throw std::invalid_argument("dataset has no sub-objective scores");
  if (static_cast<int>(w.w.size()) != ds.sub_dim)
    throw std::invalid_argument("strategy length does not match sub_dim");
}

int indicator_label(const LabelerStrategy& w, const PreferenceExample& ex) {
  double s0 = 0.0, s1 = 0.0;
  for (size_t i = 0; i < w.w.size(); ++i) {
    s0 += w.w[i] * (*ex.sub0)[i];
    s1 += w.w[i] * (*ex.sub1)[i];
  }
  return s0 < s1 ? 1 : 0;
}

}  // namespace

PreferenceDataset simulate_labels(const PreferenceDataset& ds, const LabelerStrategy& w) {
  require_sub_scores(ds, w);
  PreferenceDataset out = ds;
  for (auto& ex : out.examples) ex.z = indicator_label(w, ex);
  return out;
}

double label_accuracy(const LabelerStrategy& a, const LabelerStrategy& b,
                      const PreferenceDataset& ds) {
  require_sub_scores(ds, a);
  require_sub_scores(ds, b);
  if (ds.empty()) throw std::invalid_argument("empty dataset");
  int agree = 0;
  for (const auto& ex : ds.examples)
    if (indicator_label(a, ex) == indicator_label(b, ex)) ++agree;
  return static_cast<double>(agree) / ds.size();
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw std::invalid_argument("zero vector");
  return ab / std::sqrt(aa * bb);
}

Eigen::VectorXd svm_train(const Eigen::MatrixXd& points, const std::vector<int>& labels,
                          double C, uint64_t seed, double tol, int max_passes) {
  const Eigen::Index n = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw std::invalid_argument("points and labels length mismatch");
  if (C <= 0.0) throw std::invalid_argument("C must be > 0");
  bool has_pos = false, has_neg = false;
  for (int t : labels) {
    if (t != 0 && t != 1) throw std::invalid_argument("labels must be 0 or 1");
    (t == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw std::invalid_argument("both classes required");

  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[i] == 1 ? 1.0 : -1.0;
  const Eigen::VectorXd qii = points.rowwise().squaredNorm();

  // Dual coordinate descent on
  //   max sum a_i - 1/2 ||sum a_i y_i x_i||^2,  0 <= a_i <= C.
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(points.cols());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(sub_seed(seed, "svm"));

  for (int pass = 0; pass < max_passes; ++pass) {
    rng.shuffle(order);
    double max_pg = 0.0;
    for (Eigen::Index i : order) {
      if (qii[i] == 0.0) continue;
      const double g = y[i] * w.dot(points.row(i)) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] >= C) pg = std::max(g, 0.0);
      max_pg = std::max(max_pg, std::abs(pg));
      if (pg == 0.0) continue;
      const double next = std::clamp(alpha[i] - g / qii[i], 0.0, C);
      if (next != alpha[i]) {
        w += (next - alpha[i]) * y[i] * points.row(i).transpose();
        alpha[i] = next;
      }
    }
    if (max_pg < tol) break;
  }
  return w;
}

OversightResult update_from_scores(const PreferenceDataset& ds_b,
                                   const LabelerStrategy& w_bob,
                                   const LabelerStrategy& w_alice,
                                   const std::vector<double>& scores, double C,
                                   const OversightContext& ctx) {
  require_sub_scores(ds_b, w_bob);
  require_sub_scores(ds_b, w_alice);
  if (scores.size() != ds_b.size())
    throw std::invalid_argument("scores not aligned with dataset");

  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  if (*mn == *mx)
    throw std::invalid_argument("all scores equal; median split impossible");

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2]
                                   : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  const int m = ds_b.sub_dim;
  Eigen::MatrixXd diffs(n, m);
  std::vector<int> t(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& ex = ds_b.examples[i];
    const auto& win = ex.z == 1 ? *ex.sub1 : *ex.sub0;
    const auto& lose = ex.z == 1 ? *ex.sub0 : *ex.sub1;
    for (int j = 0; j < m; ++j) diffs(i, j) = win[j] - lose[j];
    t[i] = scores[i] <= median ? 1 : 0;  // high influence treated as mislabeled
  }

  const Eigen::VectorXd w_svm = svm_train(diffs, t, C);

  OversightResult r;
  r.w_before = w_bob;
  r.w_after.w.assign(w_svm.data(), w_svm.data() + w_svm.size());
  r.label_acc_before = label_accuracy(w_alice, w_bob, ds_b);
  r.label_acc_after = label_accuracy(w_alice, r.w_after, ds_b);
  r.cos_sim_before = cosine_similarity(w_alice.w, w_bob.w);
  r.cos_sim_after = cosine_similarity(w_alice.w, r.w_after.w);

  if (ctx.compute_rm_acc) {
    if (!ctx.expert_val || !ctx.model_config)
      throw std::invalid_argument("rm_acc requires expert_val and model_config");
    if (ctx.trained_model) {
      r.rm_acc_before = eval_accuracy(*ctx.trained_model, *ctx.expert_val);
    } else {
      const TrainResult before = train(ds_b, *ctx.model_config);
      r.rm_acc_before = eval_accuracy(before.model, *ctx.expert_val);
    }
    const PreferenceDataset relabeled = simulate_labels(ds_b, r.w_after);
    const TrainResult after = train(relabeled, *ctx.model_config);
    r.rm_acc_after = eval_accuracy(after.model, *ctx.expert_val);
  }
  return r;
}

OversightResult algorithm1_update(const PreferenceDataset& ds_b,
                                  const LabelerStrategy& w_bob,
                                  const LabelerStrategy& w_alice,
                                  const std::vector<double>& influence_scores, double C,
                                  const OversightContext& ctx) {
  return update_from_scores(ds_b, w_bob, w_alice, influence_scores, C, ctx);
}

OversightResult baseline_update(const PreferenceDataset& ds_b,
                                const LabelerStrategy& w_bob,
                                const LabelerStrategy& w_alice, BaselineMethod method,
                                const RewardModel& model, const Eigen::MatrixXd& val_acts,
                                double C, int knn_k, const OversightContext& ctx) {
  const Eigen::MatrixXd train_acts = activation_matrix(model, ds_b);
  const std::vector<double> scores =
      method == BaselineMethod::kMahalanobis
          ? mahalanobis_scores(train_acts, val_acts)
          : knn_scores(train_acts, val_acts, knn_k);
  return update_from_scores(ds_b, w_bob, w_alice, scores, C, ctx);
}

std::vector<LabelerStrategy> make_bob_strategies(const PreferenceDataset& ds,
                                                 const LabelerStrategy& w_alice, int count,
                                                 double band_lo, double band_hi,
                                                 uint64_t seed) {
  require_sub_scores(ds, w_alice);
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  if (!(band_lo < band_hi) || band_lo <= 0.5 || band_hi >= 1.0)
    throw std::invalid_argument("band must satisfy 0.5 < lo < hi < 1");

  const int m = ds.sub_dim;
  std::vector<LabelerStrategy> bobs;
  Rng rng(sub_seed(seed, "bobs"));

  while (static_cast<int>(bobs.size()) < count) {
    std::vector<double> dir(m);
    for (auto& x : dir) x = rng.normal();

    // Agreement is ~1 at gamma=0 and decays as the perturbation grows;
    // bisect gamma until the agreement lands inside the band.
    auto agreement = [&](double gamma) {
      LabelerStrategy cand;
      cand.w.resize(m);
      for (int j = 0; j < m; ++j) cand.w[j] = w_alice.w[j] + gamma * dir[j];
      return label_accuracy(w_alice, cand, ds);
    };

    double lo = 0.0, hi = 1.0;
    int expand = 0;
    while (agreement(hi) > band_hi && expand < 40) {
      hi *= 2.0;
      ++expand;
    }
    if (agreement(hi) > band_hi) continue;  // direction too aligned; redraw

    bool found = false;
    double gamma = hi;
    for (int it = 0; it < 60; ++it) {
      const double acc = agreement(gamma);
      if (acc >= band_lo && acc <= band_hi) {
        found = true;
        break;
      }
      if (acc > band_hi) lo = gamma;
      else hi = gamma;
      gamma = 0.5 * (lo + hi);
    }
    if (!found) continue;

    LabelerStrategy bob;
    bob.w.resize(m);
    for (int j = 0; j < m; ++j) bob.w[j] = w_alice.w[j] + gamma * dir[j];
    bobs.push_back(std::move(bob));
  }
  return bobs;
}

std::string oversight_result_json(const OversightResult& r) {
  nlohmann::json j;
  j["w_before"] = r.w_before.w;
  j["w_after"] = r.w_after.w;
  j["label_acc_before"] = r.label_acc_before;
  j["label_acc_after"] = r.label_acc_after;
  j["cos_sim_before"] = r.cos_sim_before;
  j["cos_sim_after"] = r.cos_sim_after;
  if (r.rm_acc_before) j["rm_acc_before"] = *r.rm_acc_before;
  if (r.rm_acc_after) j["rm_acc_after"] = *r.rm_acc_after;
  return j.dump(2);
}

}  // namespace prefinf

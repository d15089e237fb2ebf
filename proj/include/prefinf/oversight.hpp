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

#ifndef PREFINF_OVERSIGHT_HPP_
#define PREFINF_OVERSIGHT_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prefinf/prefdata.hpp"
#include "prefinf/reward.hpp"

namespace prefinf {

// A labeler's strategy: a weight vector over sub-objective scores. The
// preference rule is z = 1 iff w.r0 < w.r1 (strict; ties label 0).
struct LabelerStrategy {
  std::vector<double> w;
};

// Relabels every example with the strategy's indicator rule. Sub-objective
// scores must be present.
PreferenceDataset simulate_labels(const PreferenceDataset& ds, const LabelerStrategy& w);

// Fraction of examples on which the two strategies' indicator labels agree.
double label_accuracy(const LabelerStrategy& a, const LabelerStrategy& b,
                      const PreferenceDataset& ds);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Linear hinge-loss SVM through the origin (no intercept):
//   minimize ||w||^2/2 + C * sum max(0, 1 - y_i w.x_i),  y = 2t - 1.
// Solved by deterministic dual coordinate descent with a seeded pass order.
Eigen::VectorXd svm_train(const Eigen::MatrixXd& points, const std::vector<int>& labels,
                          double C, uint64_t seed = 0, double tol = 1e-10,
                          int max_passes = 2000);

struct OversightResult {
  LabelerStrategy w_before;
  LabelerStrategy w_after;
  double label_acc_before = 0.0;
  double label_acc_after = 0.0;
  double cos_sim_before = 0.0;
  double cos_sim_after = 0.0;
  std::optional<double> rm_acc_before;
  std::optional<double> rm_acc_after;
};

// Optional reward-model accuracy evaluation: relabel/retrain on ds_B and
// evaluate on the expert's validation set. trained_model, when given, is
// reused as the before-update model instead of retraining.
struct OversightContext {
  const PreferenceDataset* expert_val = nullptr;
  const RewardModelConfig* model_config = nullptr;
  const RewardModel* trained_model = nullptr;
  bool compute_rm_acc = false;
};

// Strategy update from per-example scores: median split (t=1 iff score <=
// median), winning-minus-losing sub-score differences, SVM weights become the
// new strategy. The expert strategy is used only to evaluate the result.
OversightResult update_from_scores(const PreferenceDataset& ds_b,
                                   const LabelerStrategy& w_bob,
                                   const LabelerStrategy& w_alice,
                                   const std::vector<double>& scores, double C,
                                   const OversightContext& ctx = {});

// update_from_scores driven by influence scores.
OversightResult algorithm1_update(const PreferenceDataset& ds_b,
                                  const LabelerStrategy& w_bob,
                                  const LabelerStrategy& w_alice,
                                  const std::vector<double>& influence_scores, double C,
                                  const OversightContext& ctx = {});

enum class BaselineMethod { kMahalanobis, kKnn };

// Same pipeline with distance-baseline scores in place of influence scores.
OversightResult baseline_update(const PreferenceDataset& ds_b,
                                const LabelerStrategy& w_bob,
                                const LabelerStrategy& w_alice, BaselineMethod method,
                                const RewardModel& model,
                                const Eigen::MatrixXd& val_acts, double C, int knn_k = 10,
                                const OversightContext& ctx = {});

// Seeded non-expert strategies whose initial agreement with the expert lands
// in [band_lo, band_hi] on the given dataset.
std::vector<LabelerStrategy> make_bob_strategies(const PreferenceDataset& ds,
                                                 const LabelerStrategy& w_alice, int count,
                                                 double band_lo, double band_hi,
                                                 uint64_t seed);

std::string oversight_result_json(const OversightResult& r);

}  // namespace prefinf

#endif  // PREFINF_OVERSIGHT_HPP_

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

#ifndef PREFINF_BASELINES_HPP_
#define PREFINF_BASELINES_HPP_

#include <Eigen/Dense>
#include <vector>

#include "prefinf/prefdata.hpp"
#include "prefinf/reward.hpp"

namespace prefinf {

// Row per example: [repr(chosen) | repr(rejected)]. The representation is the
// raw feature vector for linear models and the hidden activation for mlp1.
Eigen::MatrixXd activation_matrix(const RewardModel& model, const PreferenceDataset& ds);

// Distance of each training row from the validation distribution under the
// validation mean and population covariance (divisor n). ridge < 0 selects
// 1e-6 * trace(cov) / width; ridge = 0 is honored and errors if the
// covariance is singular.
std::vector<double> mahalanobis_scores(const Eigen::MatrixXd& train_acts,
                                       const Eigen::MatrixXd& val_acts,
                                       double ridge = -1.0);

// L2 distance from each row-normalized training row to its k-th nearest
// row-normalized validation row.
std::vector<double> knn_scores(const Eigen::MatrixXd& train_acts,
                               const Eigen::MatrixXd& val_acts, int k);

// Picks k from {1,3,5,10,20,50,100} (capped at |val|) by highest detection
// AUC against the given ground truth.
int knn_auto_k(const Eigen::MatrixXd& train_acts, const Eigen::MatrixXd& val_acts,
               const std::vector<bool>& truth);

// -sigmoid(margin): higher = less confident in the chosen response.
std::vector<double> confidence_scores(const RewardModel& model,
                                      const PreferenceDataset& ds);

// Binary entropy of the preference probability, natural log.
std::vector<double> entropy_scores(const RewardModel& model, const PreferenceDataset& ds);

}  // namespace prefinf

#endif  // PREFINF_BASELINES_HPP_

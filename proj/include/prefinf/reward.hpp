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

#ifndef PREFINF_REWARD_HPP_
#define PREFINF_REWARD_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "prefinf/prefdata.hpp"

namespace prefinf {

enum class Arch { kLinear, kMlp1 };

struct TrainConfig {
  int max_epochs = 500;
  double step_size = 0.5;
  double tolerance = 1e-8;
  uint64_t seed = 0;
};

struct RewardModelConfig {
  Arch arch = Arch::kLinear;
  int feature_dim = 0;
  int hidden_dim = 0;  // mlp1 only
  double l2_reg = 1e-4;
  TrainConfig train;

  void validate() const;
};

// One named dense parameter tensor, stored column-major.
struct ParamBlock {
  std::string name;
  int rows = 0;
  int cols = 1;
  Eigen::VectorXd values;

  int size() const { return rows * cols; }
};

struct ParamBlocks {
  std::vector<ParamBlock> blocks;

  int total_dim() const;
  void set_zero();
  double squared_norm() const;
  double dot(const ParamBlocks& other) const;
  // this += a * other (matching block structure)
  void axpy(double a, const ParamBlocks& other);
  void scale(double a);
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& v);
  static ParamBlocks zeros_like(const ParamBlocks& shape);
};

struct RewardModel {
  RewardModelConfig config;
  ParamBlocks params;

  double reward(const FeatureVector& feat) const;
};

// Bradley-Terry preference probability machinery. pref_loss is the
// numerically stable -log sigmoid(margin) with margin = r(chosen) - r(rejected).
double sigmoid(double t);
double log_sigmoid_neg(double margin);  // -log sigmoid(margin)
double margin(const RewardModel& model, const PreferenceExample& ex);
double pref_loss(const RewardModel& model, const PreferenceExample& ex);

// Exact analytic gradient of pref_loss at the model's current parameters.
ParamBlocks grad_example(const RewardModel& model, const PreferenceExample& ex);

// Mean preference loss over the dataset plus l2_reg/2 * ||theta||^2.
double training_loss(const RewardModel& model, const PreferenceDataset& ds);
// Gradient of training_loss.
ParamBlocks training_grad(const RewardModel& model, const PreferenceDataset& ds);

struct TrainResult {
  RewardModel model;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  int epochs_run = 0;
  std::vector<double> loss_history;
};

// Full-batch gradient descent with a fixed step size; linear models start at
// zero, mlp1 from a seeded small-random initialization. Stops at max_epochs
// or when the gradient norm drops below tolerance. Throws std::runtime_error
// naming the epoch if the loss becomes non-finite.
TrainResult train(const PreferenceDataset& ds, const RewardModelConfig& config);

// Fraction of examples where the chosen response outscores the rejected one;
// exact ties count 0.5.
double eval_accuracy(const RewardModel& model, const PreferenceDataset& ds);

// Dense Hessian of training_loss at the model parameters. Closed form for
// linear models; central finite differences of the analytic gradient for
// mlp1. Guarded to total parameter dimension <= 2000.
Eigen::MatrixXd exact_hessian(const PreferenceDataset& ds, const RewardModel& model);

std::string serialize_model(const RewardModel& model);
RewardModel deserialize_model(const std::string& text);
void save_model(const RewardModel& model, const std::string& path);
RewardModel load_model(const std::string& path);
uint64_t fingerprint(const RewardModel& model);

const char* to_string(Arch a);
Arch arch_from_string(const std::string& s);

}  // namespace prefinf

#endif  // PREFINF_REWARD_HPP_

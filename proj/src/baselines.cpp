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

#include "prefinf/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "prefinf/biasdetect.hpp"

namespace prefinf {

namespace {

Eigen::VectorXd representation(const RewardModel& model, const FeatureVector& feat) {
  if (model.config.arch == Arch::kLinear)
    return Eigen::Map<const Eigen::VectorXd>(feat.data(), feat.size());
  const auto& w1 = model.params.blocks[0];
  Eigen::Map<const Eigen::MatrixXd> W1(w1.values.data(), w1.rows, w1.cols);
  Eigen::Map<const Eigen::VectorXd> x(feat.data(), feat.size());
  return (W1 * x + model.params.blocks[1].values).array().tanh();
}

}  // namespace

Eigen::MatrixXd activation_matrix(const RewardModel& model, const PreferenceDataset& ds) {
  if (ds.empty()) throw std::invalid_argument("empty dataset");
  const Eigen::VectorXd first = representation(model, ds.examples[0].chosen());
  const int p = static_cast<int>(first.size());
  Eigen::MatrixXd acts(ds.size(), 2 * p);
  for (size_t i = 0; i < ds.size(); ++i) {
    acts.row(i).head(p) = representation(model, ds.examples[i].chosen()).transpose();
    acts.row(i).tail(p) = representation(model, ds.examples[i].rejected()).transpose();
  }
  return acts;
}

std::vector<double> mahalanobis_scores(const Eigen::MatrixXd& train_acts,
                                       const Eigen::MatrixXd& val_acts, double ridge) {
  if (val_acts.rows() < 2)
    throw std::invalid_argument("mahalanobis needs at least 2 validation rows");
  if (train_acts.cols() != val_acts.cols())
    throw std::invalid_argument("activation width mismatch");
  const int p = static_cast<int>(val_acts.cols());
  const double nv = static_cast<double>(val_acts.rows());

  const Eigen::VectorXd mu = val_acts.colwise().mean();
  Eigen::MatrixXd centered = val_acts.rowwise() - mu.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / nv;  // population covariance

  if (ridge < 0.0) ridge = 1e-6 * cov.trace() / static_cast<double>(p);
  cov.diagonal().array() += ridge;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  const Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || dmax <= 0.0 ||
      d.minCoeff() <= 1e-14 * dmax) {
    if (ridge == 0.0)
      throw std::runtime_error(
          "singular validation covariance; provide ridge > 0");
    throw std::runtime_error("ill-conditioned validation covariance");
  }

  std::vector<double> scores(train_acts.rows());
  for (Eigen::Index i = 0; i < train_acts.rows(); ++i) {
    const Eigen::VectorXd diff = train_acts.row(i).transpose() - mu;
    const double q = diff.dot(ldlt.solve(diff));
    scores[i] = std::sqrt(std::max(q, 0.0));
  }
  return scores;
}

std::vector<double> knn_scores(const Eigen::MatrixXd& train_acts,
                               const Eigen::MatrixXd& val_acts, int k) {
  if (k < 1 || k > val_acts.rows())
    throw std::invalid_argument("k out of range [1, |val|]");
  if (train_acts.cols() != val_acts.cols())
    throw std::invalid_argument("activation width mismatch");

  auto normalize_rows = [](const Eigen::MatrixXd& m, int* zero_rows) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double norm = out.row(i).norm();
      if (norm == 0.0) {
        ++*zero_rows;
        continue;  // zero rows stay zero
      }
      out.row(i) /= norm;
    }
    return out;
  };

  int zero_rows = 0;
  const Eigen::MatrixXd train_n = normalize_rows(train_acts, &zero_rows);
  const Eigen::MatrixXd val_n = normalize_rows(val_acts, &zero_rows);
  if (zero_rows > 0)
    std::cerr << "warning: " << zero_rows
              << " zero activation row(s) left unnormalized\n";

  std::vector<double> dists(val_n.rows());
  std::vector<double> scores(train_n.rows());
  for (Eigen::Index i = 0; i < train_n.rows(); ++i) {
    for (Eigen::Index j = 0; j < val_n.rows(); ++j)
      dists[j] = (train_n.row(i) - val_n.row(j)).norm();
    std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
    scores[i] = dists[k - 1];
  }
  return scores;
}

int knn_auto_k(const Eigen::MatrixXd& train_acts, const Eigen::MatrixXd& val_acts,
               const std::vector<bool>& truth) {
  static constexpr int kCandidates[] = {1, 3, 5, 10, 20, 50, 100};
  int best_k = 1;
  double best_auc = -1.0;
  for (int k : kCandidates) {
    if (k > val_acts.rows()) break;
    const auto scores = knn_scores(train_acts, val_acts, k);
    const double auc = roc_metrics(scores, truth).auc;
    if (auc > best_auc) {
      best_auc = auc;
      best_k = k;
    }
  }
  return best_k;
}

std::vector<double> confidence_scores(const RewardModel& model,
                                      const PreferenceDataset& ds) {
  std::vector<double> out(ds.size());
  for (size_t i = 0; i < ds.size(); ++i)
    out[i] = -sigmoid(margin(model, ds.examples[i]));
  return out;
}

std::vector<double> entropy_scores(const RewardModel& model, const PreferenceDataset& ds) {
  std::vector<double> out(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    const double p = sigmoid(margin(model, ds.examples[i]));
    auto plogp = [](double q) { return q > 0.0 ? q * std::log(q) : 0.0; };
    out[i] = -(plogp(p) + plogp(1.0 - p));
  }
  return out;
}

}  // namespace prefinf

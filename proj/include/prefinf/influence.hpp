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

#ifndef PREFINF_INFLUENCE_HPP_
#define PREFINF_INFLUENCE_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prefinf/oporp.hpp"
#include "prefinf/prefdata.hpp"
#include "prefinf/reward.hpp"

namespace prefinf {

enum class ValAggregation { kSum, kMean };

struct StoreBlock {
  std::string name;
  int dim = 0;         // original parameter-block dimension
  int stored_len = 0;  // dim when raw, min(bins, dim) when sketched
  uint64_t sketch_hash = 0;
};

// Per-example training gradients (raw or OPORP-compressed) plus the
// aggregated validation gradient in the same representation. Record size is
// fixed by the layout, independent of the raw gradient dimension when
// sketched.
struct GradientStore {
  bool sketched = false;
  uint64_t compression_hash = 0;  // 0 when raw
  uint64_t compression_seed = 0;
  int compression_bins = 0;
  uint64_t dataset_fingerprint = 0;
  uint64_t model_fingerprint = 0;
  std::string dataset_name;
  std::string val_name;
  ValAggregation aggregation = ValAggregation::kSum;
  int n = 0;
  std::vector<StoreBlock> layout;
  // One matrix per block, n rows of stored_len values each.
  std::vector<Eigen::MatrixXd> records;
  std::vector<Eigen::VectorXd> val_grad;

  size_t record_bytes() const;
  void save(const std::string& path) const;
  static GradientStore load(const std::string& path);
};

// Computes every training gradient exactly once, compressing on the fly when
// compression is set, and aggregates the validation gradient (sum of
// per-example gradients by default).
GradientStore build_store(const RewardModel& model, const PreferenceDataset& ds_tr,
                          const PreferenceDataset& ds_val,
                          const std::optional<CompressionConfig>& compression,
                          ValAggregation aggregation = ValAggregation::kSum,
                          int jobs = 1);

// Writes the store, refusing to overwrite a file whose fingerprints differ
// unless force is set.
void save_store_checked(const GradientStore& store, const std::string& path,
                        bool force = false);

enum class InfluenceMethod { kDataInfRaw, kDataInfSketched, kExact };

// Signed influence of each training example on the validation loss; positive
// means upweighting the example increases validation loss
// (negatively-contributing).
struct InfluenceScores {
  std::vector<double> scores;  // dataset order
  std::string validation_set_name;
  InfluenceMethod method = InfluenceMethod::kDataInfRaw;
  std::vector<double> lambdas;  // damping per block
};

struct DataInfOptions {
  // Damping per block: lambda_l = 0.1 * lambda_scale * mean_j ||v_j^(l)||^2 / d_l,
  // unless lambda_override supplies explicit values.
  double lambda_scale = 1.0;
  std::optional<std::vector<double>> lambda_override;
};

// Closed-form inverse-Hessian approximation over pairwise gradient dot
// products, evaluated per block and summed.
InfluenceScores datainf_scores(const GradientStore& store, const DataInfOptions& opts = {});

// Dense inverse-Hessian oracle: -grad_val^T (H + damping I)^-1 grad_i using
// the exact Hessian of the mean training loss. damping < 0 selects the same
// adaptive rule as datainf_scores (over the whole parameter vector).
InfluenceScores exact_scores(const RewardModel& model, const PreferenceDataset& ds_tr,
                             const PreferenceDataset& ds_val, double damping = -1.0,
                             ValAggregation aggregation = ValAggregation::kSum);

// Leave-one-out retraining deltas L_val(without id) - L_val(full) for the
// given ids. Convex (linear) configs only, n <= 500.
std::map<std::string, double> loo_oracle(const RewardModelConfig& config,
                                         const PreferenceDataset& ds_tr,
                                         const PreferenceDataset& ds_val,
                                         const std::vector<std::string>& ids,
                                         ValAggregation aggregation = ValAggregation::kSum,
                                         int jobs = 1);

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};

Correlation compare_scores(const std::vector<double>& a, const std::vector<double>& b);

double validation_loss(const RewardModel& model, const PreferenceDataset& ds_val,
                       ValAggregation aggregation);

// CSV with columns (id, score, rank) plus a JSON metadata sidecar.
void save_scores_csv(const InfluenceScores& scores, const std::vector<std::string>& ids,
                     const std::string& path);
std::string scores_metadata_json(const InfluenceScores& scores,
                                 uint64_t dataset_fp, uint64_t model_fp,
                                 uint64_t store_fp);

const char* to_string(InfluenceMethod m);

}  // namespace prefinf

#endif  // PREFINF_INFLUENCE_HPP_

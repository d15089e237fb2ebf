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

#ifndef PREFINF_BIASDETECT_HPP_
#define PREFINF_BIASDETECT_HPP_

#include <string>
#include <vector>

#include "prefinf/prefdata.hpp"
#include "prefinf/reward.hpp"

namespace prefinf {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double threshold = 0.0;
};

struct DetectorReport {
  std::vector<RocPoint> roc;  // starts at (0,0), ends at (1,1)
  std::vector<PrPoint> pr;
  double auc = 0.0;
  double ap = 0.0;
  double tnr80 = 0.0;  // TNR at the largest threshold with TPR >= 0.80
  std::string method;
  int positives = 0;
  int n = 0;
};

// Threshold sweep over all distinct score values, classifying biased when
// score >= threshold. AUC by trapezoid, AP by step interpolation (precision
// held to the right). Requires at least one positive and one negative.
DetectorReport roc_metrics(const std::vector<double>& scores,
                           const std::vector<bool>& truth,
                           const std::string& method = "");

// flag <=> score >= threshold
std::vector<bool> detect(const std::vector<double>& scores, double threshold);

// Ids of the k largest scores; ties broken by dataset order.
std::vector<std::string> top_k_ids(const std::vector<double>& scores,
                                   const std::vector<std::string>& ids, int k);

struct RetrainRow {
  std::string val_set;
  double acc_before = 0.0;
  double acc_after = 0.0;
};

struct RetrainResult {
  std::vector<RetrainRow> rows;
  int flip_count = 0;
  PreferenceDataset curated;
};

// Flips the labels of the floor(alpha * injected_flip_count) highest-scored
// examples, retrains from scratch with the same config, and reports accuracy
// on each named validation set before and after.
RetrainResult flip_and_retrain(
    const PreferenceDataset& ds_tr, const std::vector<double>& scores, double alpha,
    const RewardModelConfig& config,
    const std::vector<std::pair<std::string, const PreferenceDataset*>>& val_sets);

void save_roc_csv(const DetectorReport& report, const std::string& path);
void save_pr_csv(const DetectorReport& report, const std::string& path);
std::string report_summary_json(const DetectorReport& report);
// Two-column "fpr tpr" lines, plot-ready.
void save_roc_gnuplot(const DetectorReport& report, const std::string& path);

}  // namespace prefinf

#endif  // PREFINF_BIASDETECT_HPP_

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

#include "prefinf/biasdetect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace prefinf {

DetectorReport roc_metrics(const std::vector<double>& scores,
                           const std::vector<bool>& truth, const std::string& method) {
  if (scores.size() != truth.size())
    throw std::invalid_argument("scores and truth length mismatch");
  const int positives = static_cast<int>(std::count(truth.begin(), truth.end(), true));
  const int negatives = static_cast<int>(truth.size()) - positives;
  if (positives == 0 || negatives == 0)
    throw std::invalid_argument("truth must contain both classes");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  DetectorReport rep;
  rep.method = method;
  rep.positives = positives;
  rep.n = static_cast<int>(scores.size());
  rep.roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});

  // Sweep descending; ties share one operating point.
  int tp = 0, fp = 0;
  size_t i = 0;
  while (i < idx.size()) {
    const double t = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == t) {
      if (truth[idx[i]]) ++tp; else ++fp;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / positives;
    const double fpr = static_cast<double>(fp) / negatives;
    rep.roc.push_back({fpr, tpr, t});
    rep.pr.push_back({tpr, static_cast<double>(tp) / (tp + fp), t});
  }

  for (size_t j = 1; j < rep.roc.size(); ++j)
    rep.auc += (rep.roc[j].fpr - rep.roc[j - 1].fpr) *
               (rep.roc[j].tpr + rep.roc[j - 1].tpr) * 0.5;

  double prev_recall = 0.0;
  for (const auto& p : rep.pr) {
    rep.ap += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }

  for (const auto& p : rep.roc) {
    if (p.tpr >= 0.80) {
      rep.tnr80 = 1.0 - p.fpr;
      break;
    }
  }
  return rep;
}

std::vector<bool> detect(const std::vector<double>& scores, double threshold) {
  if (!std::isfinite(threshold)) throw std::invalid_argument("threshold must be finite");
  std::vector<bool> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold;
  return out;
}

std::vector<std::string> top_k_ids(const std::vector<double>& scores,
                                   const std::vector<std::string>& ids, int k) {
  if (scores.size() != ids.size())
    throw std::invalid_argument("scores and ids length mismatch");
  if (k < 1 || static_cast<size_t>(k) > scores.size())
    throw std::invalid_argument("k out of range [1, n]");
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  std::vector<std::string> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.push_back(ids[idx[i]]);
  return out;
}

RetrainResult flip_and_retrain(
    const PreferenceDataset& ds_tr, const std::vector<double>& scores, double alpha,
    const RewardModelConfig& config,
    const std::vector<std::pair<std::string, const PreferenceDataset*>>& val_sets) {
  if (scores.size() != ds_tr.size())
    throw std::invalid_argument("scores and dataset length mismatch");
  if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");

  int injected = 0;
  for (const auto& ex : ds_tr.examples)
    if (ex.flipped && *ex.flipped) ++injected;
  const int count = static_cast<int>(std::floor(alpha * injected));
  if (static_cast<size_t>(count) > ds_tr.size())
    throw std::invalid_argument("flip count exceeds dataset size");

  RetrainResult out;
  out.flip_count = count;
  out.curated = ds_tr;
  if (count > 0) {
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    for (int i = 0; i < count; ++i) {
      auto& ex = out.curated.examples[idx[i]];
      ex.z = 1 - ex.z;
      ex.flipped = !(ex.flipped && *ex.flipped);
    }
  }

  const TrainResult before = train(ds_tr, config);
  const TrainResult after = train(out.curated, config);
  for (const auto& [name, val] : val_sets) {
    RetrainRow row;
    row.val_set = name;
    row.acc_before = eval_accuracy(before.model, *val);
    row.acc_after = eval_accuracy(after.model, *val);
    out.rows.push_back(std::move(row));
  }
  return out;
}

namespace {

void write_threshold_csv(const std::string& path, const std::string& header,
                         const std::vector<std::array<double, 3>>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << header << "\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", r[0], r[1], r[2]);
    f << buf;
  }
}

}  // namespace

void save_roc_csv(const DetectorReport& report, const std::string& path) {
  std::vector<std::array<double, 3>> rows;
  for (const auto& p : report.roc) rows.push_back({p.fpr, p.tpr, p.threshold});
  write_threshold_csv(path, "fpr,tpr,threshold", rows);
}

void save_pr_csv(const DetectorReport& report, const std::string& path) {
  std::vector<std::array<double, 3>> rows;
  for (const auto& p : report.pr) rows.push_back({p.recall, p.precision, p.threshold});
  write_threshold_csv(path, "recall,precision,threshold", rows);
}

std::string report_summary_json(const DetectorReport& report) {
  nlohmann::json j;
  j["auc"] = report.auc;
  j["ap"] = report.ap;
  j["tnr80"] = report.tnr80;
  j["method"] = report.method;
  j["n"] = report.n;
  j["positives"] = report.positives;
  return j.dump(2);
}

void save_roc_gnuplot(const DetectorReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  char buf[80];
  for (const auto& p : report.roc) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", p.fpr, p.tpr);
    f << buf;
  }
}

}  // namespace prefinf

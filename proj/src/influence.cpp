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

#include "prefinf/influence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "prefinf/parallel.hpp"
#include "prefinf/rng.hpp"
#include <nlohmann/json.hpp>

namespace prefinf {

using nlohmann::json;

namespace {

constexpr char kStoreMagic[8] = {'P', 'F', 'S', 'T', 'O', 'R', 'E', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated store file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint32_t len = read_pod<uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("truncated store file");
  return s;
}

}  // namespace

size_t GradientStore::record_bytes() const {
  size_t b = 0;
  for (const auto& blk : layout) b += static_cast<size_t>(blk.stored_len) * sizeof(double);
  return b;
}

void GradientStore::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kStoreMagic, sizeof(kStoreMagic));
  write_pod<uint8_t>(f, sketched ? 1 : 0);
  write_pod<uint64_t>(f, compression_hash);
  write_pod<uint64_t>(f, compression_seed);
  write_pod<uint32_t>(f, static_cast<uint32_t>(compression_bins));
  write_pod<uint64_t>(f, dataset_fingerprint);
  write_pod<uint64_t>(f, model_fingerprint);
  write_pod<uint8_t>(f, aggregation == ValAggregation::kMean ? 1 : 0);
  write_pod<uint32_t>(f, static_cast<uint32_t>(n));
  write_pod<uint32_t>(f, static_cast<uint32_t>(layout.size()));
  write_string(f, dataset_name);
  write_string(f, val_name);
  for (const auto& blk : layout) {
    write_string(f, blk.name);
    write_pod<uint32_t>(f, static_cast<uint32_t>(blk.dim));
    write_pod<uint32_t>(f, static_cast<uint32_t>(blk.stored_len));
    write_pod<uint64_t>(f, blk.sketch_hash);
  }
  for (size_t b = 0; b < layout.size(); ++b)
    f.write(reinterpret_cast<const char*>(val_grad[b].data()),
            static_cast<std::streamsize>(val_grad[b].size() * sizeof(double)));
  // Fixed-width per-example records in dataset order.
  std::vector<double> row;
  for (int i = 0; i < n; ++i) {
    for (size_t b = 0; b < layout.size(); ++b) {
      row.assign(records[b].row(i).begin(), records[b].row(i).end());
      f.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

GradientStore GradientStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kStoreMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a gradient store file: " + path);
  GradientStore s;
  s.sketched = read_pod<uint8_t>(f) != 0;
  s.compression_hash = read_pod<uint64_t>(f);
  s.compression_seed = read_pod<uint64_t>(f);
  s.compression_bins = static_cast<int>(read_pod<uint32_t>(f));
  s.dataset_fingerprint = read_pod<uint64_t>(f);
  s.model_fingerprint = read_pod<uint64_t>(f);
  s.aggregation = read_pod<uint8_t>(f) ? ValAggregation::kMean : ValAggregation::kSum;
  s.n = static_cast<int>(read_pod<uint32_t>(f));
  const uint32_t nblocks = read_pod<uint32_t>(f);
  s.dataset_name = read_string(f);
  s.val_name = read_string(f);
  for (uint32_t b = 0; b < nblocks; ++b) {
    StoreBlock blk;
    blk.name = read_string(f);
    blk.dim = static_cast<int>(read_pod<uint32_t>(f));
    blk.stored_len = static_cast<int>(read_pod<uint32_t>(f));
    blk.sketch_hash = read_pod<uint64_t>(f);
    s.layout.push_back(std::move(blk));
  }
  for (const auto& blk : s.layout) {
    Eigen::VectorXd g(blk.stored_len);
    f.read(reinterpret_cast<char*>(g.data()),
           static_cast<std::streamsize>(blk.stored_len * sizeof(double)));
    if (!f) throw std::runtime_error("truncated store file");
    s.val_grad.push_back(std::move(g));
  }
  for (const auto& blk : s.layout)
    s.records.emplace_back(s.n, blk.stored_len);
  std::vector<double> row;
  for (int i = 0; i < s.n; ++i) {
    for (size_t b = 0; b < s.layout.size(); ++b) {
      row.resize(s.layout[b].stored_len);
      f.read(reinterpret_cast<char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(double)));
      if (!f) throw std::runtime_error("truncated store file");
      for (size_t c = 0; c < row.size(); ++c) s.records[b](i, c) = row[c];
    }
  }
  return s;
}

GradientStore build_store(const RewardModel& model, const PreferenceDataset& ds_tr,
                          const PreferenceDataset& ds_val,
                          const std::optional<CompressionConfig>& compression,
                          ValAggregation aggregation, int jobs) {
  if (ds_tr.empty() || ds_val.empty())
    throw std::invalid_argument("training and validation sets must be nonempty");

  GradientStore s;
  s.sketched = compression.has_value();
  s.dataset_fingerprint = fingerprint(ds_tr);
  s.model_fingerprint = fingerprint(model);
  s.dataset_name = ds_tr.name;
  s.val_name = ds_val.name;
  s.aggregation = aggregation;
  s.n = static_cast<int>(ds_tr.size());

  const ParamBlocks shape = ParamBlocks::zeros_like(model.params);
  std::vector<Sketcher> sketchers;
  if (compression) {
    compression->validate();
    s.compression_hash = compression_config_hash(*compression);
    s.compression_seed = compression->seed;
    s.compression_bins = compression->bins;
    if (compression->per_block) {
      for (const auto& b : shape.blocks)
        sketchers.emplace_back(sub_seed(compression->seed, b.name),
                               static_cast<size_t>(b.size()), *compression);
    } else {
      sketchers.emplace_back(sub_seed(compression->seed, "full"),
                             static_cast<size_t>(shape.total_dim()), *compression);
    }
  }

  const bool whole_vector = compression && !compression->per_block;
  if (whole_vector) {
    StoreBlock blk;
    blk.name = "full";
    blk.dim = shape.total_dim();
    blk.stored_len = static_cast<int>(sketchers[0].output_dim());
    blk.sketch_hash = sketchers[0].sketch_hash();
    s.layout.push_back(blk);
  } else {
    for (size_t b = 0; b < shape.blocks.size(); ++b) {
      StoreBlock blk;
      blk.name = shape.blocks[b].name;
      blk.dim = shape.blocks[b].size();
      blk.stored_len = s.sketched ? static_cast<int>(sketchers[b].output_dim()) : blk.dim;
      blk.sketch_hash = s.sketched ? sketchers[b].sketch_hash() : 0;
      s.layout.push_back(blk);
    }
  }
  for (const auto& blk : s.layout) s.records.emplace_back(s.n, blk.stored_len);

  // One backpropagation per training example, sketched on the fly.
  parallel_for(ds_tr.size(), jobs, [&](size_t i) {
    const ParamBlocks g = grad_example(model, ds_tr.examples[i]);
    if (whole_vector) {
      s.records[0].row(i) = sketchers[0].compress(g.flatten()).transpose();
    } else {
      for (size_t b = 0; b < g.blocks.size(); ++b) {
        if (s.sketched)
          s.records[b].row(i) = sketchers[b].compress(g.blocks[b].values).transpose();
        else
          s.records[b].row(i) = g.blocks[b].values.transpose();
      }
    }
  });

  ParamBlocks val_sum = ParamBlocks::zeros_like(model.params);
  for (const auto& ex : ds_val.examples) val_sum.axpy(1.0, grad_example(model, ex));
  if (aggregation == ValAggregation::kMean) val_sum.scale(1.0 / ds_val.size());

  if (whole_vector) {
    s.val_grad.push_back(sketchers[0].compress(val_sum.flatten()));
  } else {
    for (size_t b = 0; b < val_sum.blocks.size(); ++b)
      s.val_grad.push_back(s.sketched ? sketchers[b].compress(val_sum.blocks[b].values)
                                      : val_sum.blocks[b].values);
  }
  return s;
}

void save_store_checked(const GradientStore& store, const std::string& path, bool force) {
  if (!force && std::filesystem::exists(path)) {
    GradientStore existing = GradientStore::load(path);
    if (existing.dataset_fingerprint != store.dataset_fingerprint ||
        existing.model_fingerprint != store.model_fingerprint ||
        existing.compression_hash != store.compression_hash)
      throw std::runtime_error("fingerprint clash with existing store at " + path +
                               "; use force to overwrite");
  }
  store.save(path);
}

InfluenceScores datainf_scores(const GradientStore& store, const DataInfOptions& opts) {
  if (store.n < 1) throw std::invalid_argument("store is empty");
  const int n = store.n;
  InfluenceScores out;
  out.method = store.sketched ? InfluenceMethod::kDataInfSketched
                              : InfluenceMethod::kDataInfRaw;
  out.validation_set_name = store.val_name;
  out.scores.assign(n, 0.0);

  if (opts.lambda_override &&
      opts.lambda_override->size() != store.layout.size())
    throw std::invalid_argument("lambda_override must supply one value per block");

  for (size_t b = 0; b < store.layout.size(); ++b) {
    const Eigen::MatrixXd& rows = store.records[b];
    const Eigen::VectorXd& g = store.val_grad[b];

    const Eigen::VectorXd c = rows * g;                       // <g, v_j>
    const Eigen::VectorXd sq = rows.rowwise().squaredNorm();  // <v_j, v_j>

    double lambda;
    if (opts.lambda_override) {
      lambda = (*opts.lambda_override)[b];
    } else {
      lambda = 0.1 * opts.lambda_scale * sq.mean() /
               static_cast<double>(store.layout[b].dim);
    }
    if (!(lambda > 0.0))
      throw std::runtime_error("nonpositive damping for block '" + store.layout[b].name +
                               "' (all-zero gradients?)");
    out.lambdas.push_back(lambda);

    // score_l(i) = -(1/l)[<g,v_i> - (1/n) sum_j <g,v_j><v_j,v_i>/(l+|v_j|^2)]
    // The middle sum collapses to a single aggregated vector.
    const Eigen::VectorXd alpha = c.array() / (lambda + sq.array());
    const Eigen::VectorXd agg = rows.transpose() * alpha;
    const Eigen::VectorXd cross = rows * agg;
    for (int i = 0; i < n; ++i)
      out.scores[i] += -(c[i] - cross[i] / n) / lambda;
  }
  for (double v : out.scores)
    if (!std::isfinite(v)) throw std::runtime_error("non-finite influence score");
  return out;
}

InfluenceScores exact_scores(const RewardModel& model, const PreferenceDataset& ds_tr,
                             const PreferenceDataset& ds_val, double damping,
                             ValAggregation aggregation) {
  if (ds_tr.empty() || ds_val.empty())
    throw std::invalid_argument("training and validation sets must be nonempty");
  const int p = model.params.total_dim();

  std::vector<Eigen::VectorXd> grads(ds_tr.size());
  for (size_t i = 0; i < ds_tr.size(); ++i)
    grads[i] = grad_example(model, ds_tr.examples[i]).flatten();

  if (damping < 0.0) {
    double mean_sq = 0.0;
    for (const auto& g : grads) mean_sq += g.squaredNorm();
    mean_sq /= static_cast<double>(ds_tr.size());
    damping = 0.1 * mean_sq / static_cast<double>(p);
  }

  Eigen::MatrixXd H = exact_hessian(ds_tr, model);
  H.diagonal().array() += damping;

  ParamBlocks val_sum = ParamBlocks::zeros_like(model.params);
  for (const auto& ex : ds_val.examples) val_sum.axpy(1.0, grad_example(model, ex));
  if (aggregation == ValAggregation::kMean) val_sum.scale(1.0 / ds_val.size());

  const Eigen::VectorXd y = H.ldlt().solve(val_sum.flatten());
  if (!y.allFinite()) throw std::runtime_error("non-finite inverse-Hessian solve");

  InfluenceScores out;
  out.method = InfluenceMethod::kExact;
  out.validation_set_name = ds_val.name;
  out.lambdas.assign(1, damping);
  out.scores.resize(ds_tr.size());
  for (size_t i = 0; i < ds_tr.size(); ++i) out.scores[i] = -y.dot(grads[i]);
  return out;
}

double validation_loss(const RewardModel& model, const PreferenceDataset& ds_val,
                       ValAggregation aggregation) {
  double s = 0.0;
  for (const auto& ex : ds_val.examples) s += pref_loss(model, ex);
  if (aggregation == ValAggregation::kMean) s /= ds_val.size();
  return s;
}

std::map<std::string, double> loo_oracle(const RewardModelConfig& config,
                                         const PreferenceDataset& ds_tr,
                                         const PreferenceDataset& ds_val,
                                         const std::vector<std::string>& ids,
                                         ValAggregation aggregation, int jobs) {
  if (ds_tr.size() > 500)
    throw std::invalid_argument("loo_oracle limited to n <= 500");
  if (config.arch != Arch::kLinear)
    throw std::invalid_argument("loo_oracle requires the convex (linear) config");

  const TrainResult full = train(ds_tr, config);
  const double base = validation_loss(full.model, ds_val, aggregation);

  std::vector<size_t> positions;
  for (const auto& id : ids) {
    auto it = std::find_if(ds_tr.examples.begin(), ds_tr.examples.end(),
                           [&](const PreferenceExample& e) { return e.id == id; });
    if (it == ds_tr.examples.end())
      throw std::invalid_argument("unknown example id: " + id);
    positions.push_back(static_cast<size_t>(it - ds_tr.examples.begin()));
  }

  std::vector<double> deltas(ids.size());
  parallel_for(ids.size(), jobs, [&](size_t k) {
    PreferenceDataset minus;
    minus.name = ds_tr.name;
    minus.feature_dim = ds_tr.feature_dim;
    minus.sub_dim = ds_tr.sub_dim;
    minus.examples.reserve(ds_tr.size() - 1);
    for (size_t i = 0; i < ds_tr.size(); ++i)
      if (i != positions[k]) minus.examples.push_back(ds_tr.examples[i]);
    const TrainResult r = train(minus, config);
    deltas[k] = validation_loss(r.model, ds_val, aggregation) - base;
  });

  std::map<std::string, double> out;
  for (size_t k = 0; k < ids.size(); ++k) out[ids[k]] = deltas[k];
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * (i + j) + 1.0;  // average 1-based rank of the tie group
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) throw std::invalid_argument("zero variance");
  return cov / std::sqrt(va * vb);
}

}  // namespace

Correlation compare_scores(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("length mismatch");
  if (a.size() < 2) throw std::invalid_argument("need at least two scores");
  Correlation c;
  c.pearson = pearson(a, b);
  c.spearman = pearson(average_ranks(a), average_ranks(b));
  return c;
}

void save_scores_csv(const InfluenceScores& scores, const std::vector<std::string>& ids,
                     const std::string& path) {
  if (ids.size() != scores.scores.size())
    throw std::invalid_argument("ids and scores length mismatch");
  const size_t n = ids.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    return scores.scores[x] > scores.scores[y];
  });
  std::vector<int> rank(n);
  for (size_t r = 0; r < n; ++r) rank[order[r]] = static_cast<int>(r) + 1;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "id,score,rank\n";
  char buf[64];
  for (size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", scores.scores[i]);
    f << ids[i] << ',' << buf << ',' << rank[i] << "\n";
  }
}

std::string scores_metadata_json(const InfluenceScores& scores, uint64_t dataset_fp,
                                 uint64_t model_fp, uint64_t store_fp) {
  json j;
  j["method"] = to_string(scores.method);
  j["validation_set"] = scores.validation_set_name;
  j["lambda_per_block"] = scores.lambdas;
  j["dataset_fingerprint"] = dataset_fp;
  j["model_fingerprint"] = model_fp;
  j["store_fingerprint"] = store_fp;
  j["count"] = scores.scores.size();
  return j.dump(2);
}

const char* to_string(InfluenceMethod m) {
  switch (m) {
    case InfluenceMethod::kDataInfRaw: return "datainf_raw";
    case InfluenceMethod::kDataInfSketched: return "datainf_sketched";
    case InfluenceMethod::kExact: return "exact";
  }
  return "?";
}

}  // namespace prefinf

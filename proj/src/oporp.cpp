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

#include "prefinf/oporp.hpp"

#include <numeric>
#include <stdexcept>

#include "prefinf/rng.hpp"

namespace prefinf {

void CompressionConfig::validate() const {
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  if (chunk_size < 1) throw std::invalid_argument("chunk_size must be >= 1");
}

uint64_t compression_config_hash(const CompressionConfig& config) {
  uint64_t h = fnv1a64(&config.seed, sizeof(config.seed));
  h = fnv1a64(&config.bins, sizeof(config.bins), h);
  h = fnv1a64(&config.chunk_size, sizeof(config.chunk_size), h);
  h = fnv1a64(&config.per_block, sizeof(config.per_block), h);
  return h;
}

Sketcher::Sketcher(uint64_t seed, size_t dim, const CompressionConfig& config) {
  config.validate();
  if (dim < 1) throw std::invalid_argument("sketcher dim must be >= 1");
  k_ = std::min<size_t>(static_cast<size_t>(config.bins), dim);

  const size_t chunk = static_cast<size_t>(config.chunk_size);
  const size_t nchunks = (dim + chunk - 1) / chunk;

  Rng rng(sub_seed(seed, "permutation"));
  std::vector<uint32_t> within(dim);
  std::iota(within.begin(), within.end(), 0u);
  for (size_t c = 0; c < nchunks; ++c) {
    const size_t begin = c * chunk;
    const size_t end = std::min(dim, begin + chunk);
    // Fisher-Yates restricted to [begin, end)
    for (size_t i = end - begin; i > 1; --i) {
      size_t j = static_cast<size_t>(rng.below(i));
      std::swap(within[begin + i - 1], within[begin + j]);
    }
  }
  std::vector<uint32_t> chunk_order(nchunks);
  std::iota(chunk_order.begin(), chunk_order.end(), 0u);
  rng.shuffle(chunk_order);

  perm_.reserve(dim);
  for (uint32_t c : chunk_order) {
    const size_t begin = static_cast<size_t>(c) * chunk;
    const size_t end = std::min(dim, begin + chunk);
    perm_.insert(perm_.end(), within.begin() + begin, within.begin() + end);
  }

  Rng sign_rng(sub_seed(seed, "signs"));
  signs_.resize(dim);
  for (auto& s : signs_) s = static_cast<int8_t>(sign_rng.sign());

  uint64_t h = fnv1a64(&seed, sizeof(seed));
  h = fnv1a64(&dim, sizeof(dim), h);
  h = fnv1a64(&config.bins, sizeof(config.bins), h);
  h = fnv1a64(&config.chunk_size, sizeof(config.chunk_size), h);
  hash_ = h;
}

Eigen::VectorXd Sketcher::compress(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  const size_t dim = perm_.size();
  if (static_cast<size_t>(v.size()) != dim)
    throw std::invalid_argument("vector length does not match sketcher dim");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(k_);
  const size_t bin_size = dim / k_;  // last bin absorbs the remainder
  for (size_t b = 0; b < k_; ++b) {
    const size_t begin = b * bin_size;
    const size_t end = (b + 1 == k_) ? dim : begin + bin_size;
    double s = 0.0;
    for (size_t i = begin; i < end; ++i) {
      const uint32_t src = perm_[i];
      s += static_cast<double>(signs_[src]) * v[src];
    }
    out[b] = s;
  }
  return out;
}

CompressedVec compress(const Sketcher& sk, const Eigen::Ref<const Eigen::VectorXd>& v) {
  return {sk.compress(v), sk.sketch_hash()};
}

double dot_estimate(const CompressedVec& a, const CompressedVec& b) {
  if (a.sketch_hash != b.sketch_hash)
    throw std::invalid_argument("sketch config mismatch: incomparable compressed vectors");
  return a.values.dot(b.values);
}

size_t sketch_record_bytes(size_t dim, int bins, size_t bytes_per_value) {
  return std::min<size_t>(static_cast<size_t>(bins), dim) * bytes_per_value;
}

}  // namespace prefinf

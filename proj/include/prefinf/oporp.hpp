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

#ifndef PREFINF_OPORP_HPP_
#define PREFINF_OPORP_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace prefinf {

// One-permutation one-random-projection compression: permute, flip signs,
// sum within equal-sized contiguous bins. Inner products of compressed
// vectors are unbiased estimates of the original inner products.
struct CompressionConfig {
  uint64_t seed = 0;
  int bins = 1 << 12;
  int chunk_size = 4096;  // sub-permutation chunk length
  bool per_block = true;  // one sketch per parameter block

  void validate() const;
};

uint64_t compression_config_hash(const CompressionConfig& config);

class Sketcher {
 public:
  // The permutation is built from seeded shuffles of contiguous chunks of
  // chunk_size composed with a seeded shuffle of the chunk order; the sign
  // stream is a seeded Rademacher sequence over the original coordinates.
  Sketcher(uint64_t seed, size_t dim, const CompressionConfig& config);

  size_t input_dim() const { return perm_.size(); }
  size_t output_dim() const { return k_; }
  // Identifies the (seed, dim, bins, chunk_size) stream; compressed vectors
  // are only comparable when their hashes match.
  uint64_t sketch_hash() const { return hash_; }

  const std::vector<uint32_t>& permutation() const { return perm_; }
  int sign(size_t original_index) const { return signs_[original_index]; }

  Eigen::VectorXd compress(const Eigen::Ref<const Eigen::VectorXd>& v) const;

 private:
  std::vector<uint32_t> perm_;  // output position -> original index
  std::vector<int8_t> signs_;   // keyed by original index
  size_t k_ = 0;
  uint64_t hash_ = 0;
};

struct CompressedVec {
  Eigen::VectorXd values;
  uint64_t sketch_hash = 0;
};

CompressedVec compress(const Sketcher& sk, const Eigen::Ref<const Eigen::VectorXd>& v);

// Plain inner product of two compressed vectors; throws on stream mismatch.
double dot_estimate(const CompressedVec& a, const CompressedVec& b);

// Bytes needed for one compressed record of a vector with the given
// dimension, at the given value width. Independent of dim once dim >= bins.
size_t sketch_record_bytes(size_t dim, int bins, size_t bytes_per_value);

}  // namespace prefinf

#endif  // PREFINF_OPORP_HPP_

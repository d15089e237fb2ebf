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

#ifndef PREFINF_PREFDATA_HPP_
#define PREFINF_PREFDATA_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace prefinf {

// Feature representation of one response. Entries must be finite and the
// length must match the owning dataset's feature_dim.
using FeatureVector = std::vector<double>;

// One preference pair: two responses as feature vectors, a binary label z
// (z == 1 means the second response is preferred), optional ground-truth
// bookkeeping for evaluation, and optional per-response sub-objective scores.
struct PreferenceExample {
  std::string id;
  FeatureVector feat0;
  FeatureVector feat1;
  int z = 0;
  std::optional<bool> flipped;
  std::optional<std::vector<double>> sub0;
  std::optional<std::vector<double>> sub1;
  // Named real attributes, one value per response (e.g. a length proxy).
  std::map<std::string, std::array<double, 2>> attrs;

  const FeatureVector& chosen() const { return z == 1 ? feat1 : feat0; }
  const FeatureVector& rejected() const { return z == 1 ? feat0 : feat1; }
  bool has_attr(const std::string& name) const { return attrs.count(name) > 0; }

  bool operator==(const PreferenceExample&) const = default;
};

struct PreferenceDataset {
  std::string name;
  int feature_dim = 0;
  int sub_dim = 0;  // 0 = no sub-objective scores
  std::vector<PreferenceExample> examples;

  size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  // Throws std::invalid_argument on the first violated invariant
  // (dimension mismatch, duplicate id, non-finite entry, bad label).
  void validate() const;

  bool operator==(const PreferenceDataset&) const = default;
};

struct GenerationConfig {
  int n = 0;
  int d = 0;
  int m = 0;  // 0 = no sub-objective scores; otherwise sub-scores are the
              // first m feature coordinates of each response
  uint64_t seed = 0;
  double noise = 0.0;  // probability of an (unmarked) random label flip
  std::string name = "synthetic";
  std::string attribute = "length";  // column d-1, recorded per response
  // Distinguishes draws that share one hidden utility: configs with the same
  // seed and different splits (e.g. "train" / "val") produce disjoint example
  // streams labeled by the same ground truth.
  std::string split;
};

// Hidden linear utility used to produce clean labels. The designated
// attribute column carries zero weight, so the attribute is orthogonal to
// response quality; when m > 0 only the first m coordinates carry weight and
// they double as the expert labeling strategy over sub-objective scores.
std::vector<double> generator_utility(const GenerationConfig& config);

// Seeded synthetic preference data. Labels are z = 1 iff the hidden utility
// strictly prefers the second response; exact ties are resampled.
PreferenceDataset generate_synthetic(const GenerationConfig& config);

enum class BiasKind { kFlipTowardAttribute, kFlipRandom };

struct BiasSpec {
  BiasKind kind = BiasKind::kFlipTowardAttribute;
  std::string attribute = "length";
  double candidate_fraction = 0.0;  // in [0, 1]
  uint64_t seed = 0;
};

struct InjectResult {
  PreferenceDataset dataset;
  int flip_count = 0;
  double flip_fraction = 0.0;  // flip_count / n
};

// Flips preference labels on a seeded candidate subset. For
// kFlipTowardAttribute the candidate draw covers the whole dataset but only
// eligible examples flip (eligible = chosen response has strictly lower
// attribute value than the rejected one); flipping makes the higher-attribute
// response preferred and marks flipped = true. kFlipRandom flips candidates
// unconditionally. Each example's candidacy is an independent coin with
// probability candidate_fraction, keyed to (seed, position), so re-applying
// with the same seed selects the same candidates.
InjectResult inject_bias(const PreferenceDataset& ds, const BiasSpec& spec);

enum class ValidationRule { kAttributeChosenLower, kAttributeChosenHigher, kAll };

struct FilterResult {
  PreferenceDataset dataset;
  bool empty_warning = false;
};

// Order-preserving subset of examples satisfying the rule; attribute ties are
// excluded by the strict rules. An empty result is not an error.
FilterResult build_targeted_validation(const PreferenceDataset& ds,
                                       ValidationRule rule,
                                       const std::string& attribute = "length");

// JSON Lines serialization. First line is a header object with feature_dim,
// optional sub_dim, and name; each following line is one example.
std::string serialize(const PreferenceDataset& ds);
PreferenceDataset deserialize(const std::string& text);
void save(const PreferenceDataset& ds, const std::string& path);
PreferenceDataset load(const std::string& path);

// FNV-1a fingerprint of the serialized dataset.
uint64_t fingerprint(const PreferenceDataset& ds);

const char* to_string(ValidationRule rule);
const char* to_string(BiasKind kind);

}  // namespace prefinf

#endif  // PREFINF_PREFDATA_HPP_

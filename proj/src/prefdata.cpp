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

#include "prefinf/prefdata.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "prefinf/rng.hpp"
#include <nlohmann/json.hpp>

namespace prefinf {

using nlohmann::json;

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

void PreferenceDataset::validate() const {
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  std::unordered_set<std::string> ids;
  for (const auto& ex : examples) {
    if (!ids.insert(ex.id).second)
      throw std::invalid_argument("duplicate id: " + ex.id);
    if (static_cast<int>(ex.feat0.size()) != feature_dim ||
        static_cast<int>(ex.feat1.size()) != feature_dim)
      throw std::invalid_argument("feature length mismatch in example " + ex.id);
    if (!all_finite(ex.feat0) || !all_finite(ex.feat1))
      throw std::invalid_argument("non-finite feature in example " + ex.id);
    if (ex.z != 0 && ex.z != 1)
      throw std::invalid_argument("label out of {0,1} in example " + ex.id);
    if (ex.sub0.has_value() != ex.sub1.has_value())
      throw std::invalid_argument("sub-scores present for only one response in " + ex.id);
    if (sub_dim > 0) {
      if (!ex.sub0 || !ex.sub1)
        throw std::invalid_argument("missing sub-scores in example " + ex.id);
      if (static_cast<int>(ex.sub0->size()) != sub_dim ||
          static_cast<int>(ex.sub1->size()) != sub_dim)
        throw std::invalid_argument("sub-score length mismatch in example " + ex.id);
      if (!all_finite(*ex.sub0) || !all_finite(*ex.sub1))
        throw std::invalid_argument("non-finite sub-score in example " + ex.id);
    }
  }
}

std::vector<double> generator_utility(const GenerationConfig& config) {
  if (config.d < 1) throw std::invalid_argument("d must be >= 1");
  if (config.m < 0 || config.m > config.d)
    throw std::invalid_argument("m must be in [0, d]");
  Rng rng(sub_seed(config.seed, "utility"));
  std::vector<double> w(config.d);
  for (auto& x : w) x = rng.normal();
  w[config.d - 1] = 0.0;
  if (config.m > 0)
    for (int i = config.m; i < config.d; ++i) w[i] = 0.0;
  return w;
}

PreferenceDataset generate_synthetic(const GenerationConfig& config) {
  if (config.n < 1) throw std::invalid_argument("empty dataset: n must be >= 1");
  if (config.d < 1) throw std::invalid_argument("d must be >= 1");
  if (config.m < 0 || config.m > config.d)
    throw std::invalid_argument("m must be in [0, d]");
  if (config.noise < 0.0 || config.noise > 1.0)
    throw std::invalid_argument("noise must be in [0, 1]");

  const std::vector<double> w = generator_utility(config);
  Rng feat_rng(sub_seed(config.seed, "features|" + config.split));
  Rng noise_rng(sub_seed(config.seed, "noise|" + config.split));

  PreferenceDataset ds;
  ds.name = config.name;
  ds.feature_dim = config.d;
  ds.sub_dim = config.m;
  ds.examples.reserve(config.n);

  char idbuf[32];
  for (int i = 0; i < config.n; ++i) {
    PreferenceExample ex;
    std::snprintf(idbuf, sizeof(idbuf), "ex%06d", i);
    ex.id = idbuf;
    double u0 = 0.0, u1 = 0.0;
    do {
      ex.feat0.resize(config.d);
      ex.feat1.resize(config.d);
      for (auto& x : ex.feat0) x = feat_rng.normal();
      for (auto& x : ex.feat1) x = feat_rng.normal();
      u0 = dot(w, ex.feat0);
      u1 = dot(w, ex.feat1);
    } while (u0 == u1);  // exact ties resampled
    ex.z = u1 > u0 ? 1 : 0;
    if (config.noise > 0.0 && noise_rng.uniform() < config.noise) ex.z = 1 - ex.z;
    ex.attrs[config.attribute] = {ex.feat0[config.d - 1], ex.feat1[config.d - 1]};
    if (config.m > 0) {
      ex.sub0 = std::vector<double>(ex.feat0.begin(), ex.feat0.begin() + config.m);
      ex.sub1 = std::vector<double>(ex.feat1.begin(), ex.feat1.begin() + config.m);
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

InjectResult inject_bias(const PreferenceDataset& ds, const BiasSpec& spec) {
  if (spec.candidate_fraction < 0.0 || spec.candidate_fraction > 1.0)
    throw std::invalid_argument("candidate_fraction must be in [0, 1]");
  if (spec.kind == BiasKind::kFlipTowardAttribute) {
    for (const auto& ex : ds.examples)
      if (!ex.has_attr(spec.attribute))
        throw std::invalid_argument("missing attribute '" + spec.attribute +
                                    "' in example " + ex.id);
  }

  InjectResult out;
  out.dataset = ds;
  Rng rng(sub_seed(spec.seed, "bias"));
  for (auto& ex : out.dataset.examples) {
    // One coin per position keeps the candidate set stable under re-application.
    const bool candidate = rng.uniform() < spec.candidate_fraction;
    if (!candidate) continue;
    if (spec.kind == BiasKind::kFlipTowardAttribute) {
      const auto& a = ex.attrs.at(spec.attribute);
      const double chosen_attr = a[ex.z];
      const double rejected_attr = a[1 - ex.z];
      if (!(chosen_attr < rejected_attr)) continue;  // not eligible
    }
    ex.z = 1 - ex.z;
    ex.flipped = true;
    ++out.flip_count;
  }
  out.flip_fraction =
      ds.examples.empty() ? 0.0 : static_cast<double>(out.flip_count) / ds.examples.size();
  return out;
}

FilterResult build_targeted_validation(const PreferenceDataset& ds,
                                       ValidationRule rule,
                                       const std::string& attribute) {
  FilterResult out;
  out.dataset.name = ds.name + "." + to_string(rule);
  out.dataset.feature_dim = ds.feature_dim;
  out.dataset.sub_dim = ds.sub_dim;
  if (rule == ValidationRule::kAll) {
    out.dataset.examples = ds.examples;
    out.dataset.name = ds.name;
    return out;
  }
  for (const auto& ex : ds.examples) {
    if (!ex.has_attr(attribute))
      throw std::invalid_argument("missing attribute '" + attribute +
                                  "' in example " + ex.id);
    const auto& a = ex.attrs.at(attribute);
    const double chosen_attr = a[ex.z];
    const double rejected_attr = a[1 - ex.z];
    const bool keep = rule == ValidationRule::kAttributeChosenLower
                          ? chosen_attr < rejected_attr
                          : chosen_attr > rejected_attr;
    if (keep) out.dataset.examples.push_back(ex);
  }
  out.empty_warning = out.dataset.examples.empty();
  return out;
}

namespace {

json example_to_json(const PreferenceExample& ex) {
  json j;
  j["id"] = ex.id;
  j["feat0"] = ex.feat0;
  j["feat1"] = ex.feat1;
  j["z"] = ex.z;
  if (ex.flipped) j["flipped"] = *ex.flipped;
  if (ex.sub0) j["sub0"] = *ex.sub0;
  if (ex.sub1) j["sub1"] = *ex.sub1;
  if (!ex.attrs.empty()) {
    json a = json::object();
    for (const auto& [name, vals] : ex.attrs) a[name] = {vals[0], vals[1]};
    j["attrs"] = a;
  }
  return j;
}

PreferenceExample example_from_json(const json& j) {
  PreferenceExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.feat0 = j.at("feat0").get<std::vector<double>>();
  ex.feat1 = j.at("feat1").get<std::vector<double>>();
  ex.z = j.at("z").get<int>();
  if (j.contains("flipped")) ex.flipped = j.at("flipped").get<bool>();
  if (j.contains("sub0")) ex.sub0 = j.at("sub0").get<std::vector<double>>();
  if (j.contains("sub1")) ex.sub1 = j.at("sub1").get<std::vector<double>>();
  if (j.contains("attrs")) {
    for (const auto& [name, vals] : j.at("attrs").items()) {
      if (!vals.is_array() || vals.size() != 2)
        throw std::invalid_argument("attribute '" + name + "' must hold two values");
      ex.attrs[name] = {vals[0].get<double>(), vals[1].get<double>()};
    }
  }
  return ex;
}

}  // namespace

std::string serialize(const PreferenceDataset& ds) {
  std::ostringstream os;
  json header;
  header["feature_dim"] = ds.feature_dim;
  if (ds.sub_dim > 0) header["sub_dim"] = ds.sub_dim;
  header["name"] = ds.name;
  os << header.dump() << "\n";
  for (const auto& ex : ds.examples) os << example_to_json(ex).dump() << "\n";
  return os.str();
}

PreferenceDataset deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  PreferenceDataset ds;

  if (!std::getline(is, line) || line.empty())
    throw std::runtime_error("line 1: missing header");
  ++lineno;
  try {
    json header = json::parse(line);
    ds.feature_dim = header.at("feature_dim").get<int>();
    ds.sub_dim = header.value("sub_dim", 0);
    ds.name = header.value("name", "");
  } catch (const json::exception& e) {
    throw std::runtime_error("line 1: malformed header: " + std::string(e.what()));
  }

  std::unordered_set<std::string> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    PreferenceExample ex;
    try {
      ex = example_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": malformed record: " + std::string(e.what()));
    }
    if (!seen.insert(ex.id).second)
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": duplicate id: " + ex.id);
    if (static_cast<int>(ex.feat0.size()) != ds.feature_dim ||
        static_cast<int>(ex.feat1.size()) != ds.feature_dim)
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": feature length mismatch in example " + ex.id);
    ds.examples.push_back(std::move(ex));
  }
  ds.validate();
  return ds;
}

void save(const PreferenceDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << serialize(ds);
  if (!f) throw std::runtime_error("write failed: " + path);
}

PreferenceDataset load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

uint64_t fingerprint(const PreferenceDataset& ds) { return fnv1a64(serialize(ds)); }

const char* to_string(ValidationRule rule) {
  switch (rule) {
    case ValidationRule::kAttributeChosenLower: return "attribute_chosen_lower";
    case ValidationRule::kAttributeChosenHigher: return "attribute_chosen_higher";
    case ValidationRule::kAll: return "all";
  }
  return "?";
}

const char* to_string(BiasKind kind) {
  switch (kind) {
    case BiasKind::kFlipTowardAttribute: return "flip_toward_attribute";
    case BiasKind::kFlipRandom: return "flip_random";
  }
  return "?";
}

}  // namespace prefinf

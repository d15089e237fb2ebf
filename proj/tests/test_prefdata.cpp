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

#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "prefinf/prefdata.hpp"

using namespace prefinf;

namespace {

PreferenceExample make_example(const std::string& id, double attr_chosen,
                               double attr_rejected, int z = 0) {
  PreferenceExample ex;
  ex.id = id;
  ex.feat0 = {1.0, 2.0};
  ex.feat1 = {3.0, 4.0};
  ex.z = z;
  // attrs hold [value for response 0, value for response 1]
  if (z == 0)
    ex.attrs["length"] = {attr_chosen, attr_rejected};
  else
    ex.attrs["length"] = {attr_rejected, attr_chosen};
  return ex;
}

PreferenceDataset make_dataset(std::vector<PreferenceExample> examples) {
  PreferenceDataset ds;
  ds.name = "fixture";
  ds.feature_dim = 2;
  ds.examples = std::move(examples);
  return ds;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("generate_synthetic rejects degenerate configs") {
  GenerationConfig cfg;
  cfg.n = 0;
  cfg.d = 4;
  CHECK_THROWS_WITH_AS(generate_synthetic(cfg), doctest::Contains("empty dataset"),
                       std::invalid_argument);
  cfg.n = 10;
  cfg.d = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg.d = 4;
  cfg.m = 5;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("generate_synthetic is deterministic byte for byte") {
  GenerationConfig cfg;
  cfg.n = 50;
  cfg.d = 8;
  cfg.m = 4;
  cfg.seed = 123;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  CHECK(serialize(a) == serialize(b));
}

TEST_CASE("generate_synthetic labels match the generating utility exactly") {
  GenerationConfig cfg;
  cfg.n = 5000;
  cfg.d = 16;
  cfg.seed = 7;
  const auto ds = generate_synthetic(cfg);
  ds.validate();
  const auto w = generator_utility(cfg);

  int correct = 0;
  for (const auto& ex : ds.examples) {
    const int z = dot(w, ex.feat1) > dot(w, ex.feat0) ? 1 : 0;
    if (z == ex.z) ++correct;
  }
  CHECK(correct == cfg.n);

  // comparison rule is invariant to positive rescaling of the utility
  auto w_scaled = w;
  for (auto& x : w_scaled) x *= 37.5;
  for (const auto& ex : ds.examples) {
    const int z = dot(w_scaled, ex.feat1) > dot(w_scaled, ex.feat0) ? 1 : 0;
    CHECK(z == ex.z);
  }
}

TEST_CASE("splits share the hidden utility but draw fresh examples") {
  GenerationConfig a;
  a.n = 200;
  a.d = 8;
  a.seed = 42;
  a.split = "train";
  GenerationConfig b = a;
  b.split = "val";

  CHECK(generator_utility(a) == generator_utility(b));
  const auto tr = generate_synthetic(a);
  const auto val = generate_synthetic(b);
  CHECK(tr.examples[0].feat0 != val.examples[0].feat0);

  // both splits are labeled by the shared utility
  const auto w = generator_utility(a);
  for (const auto& ex : val.examples) {
    const int z = dot(w, ex.feat1) > dot(w, ex.feat0) ? 1 : 0;
    CHECK(z == ex.z);
  }
}

TEST_CASE("generate_synthetic attribute column is recorded and utility-neutral") {
  GenerationConfig cfg;
  cfg.n = 20;
  cfg.d = 6;
  cfg.seed = 3;
  const auto ds = generate_synthetic(cfg);
  const auto w = generator_utility(cfg);
  CHECK(w[cfg.d - 1] == 0.0);
  for (const auto& ex : ds.examples) {
    REQUIRE(ex.has_attr("length"));
    CHECK(ex.attrs.at("length")[0] == ex.feat0[cfg.d - 1]);
    CHECK(ex.attrs.at("length")[1] == ex.feat1[cfg.d - 1]);
  }
}

TEST_CASE("generate_synthetic sub-scores are leading feature coordinates") {
  GenerationConfig cfg;
  cfg.n = 10;
  cfg.d = 8;
  cfg.m = 3;
  cfg.seed = 11;
  const auto ds = generate_synthetic(cfg);
  CHECK(ds.sub_dim == 3);
  for (const auto& ex : ds.examples) {
    REQUIRE(ex.sub0.has_value());
    for (int j = 0; j < 3; ++j) {
      CHECK((*ex.sub0)[j] == ex.feat0[j]);
      CHECK((*ex.sub1)[j] == ex.feat1[j]);
    }
  }
}

TEST_CASE("inject_bias with zero fraction is the identity") {
  GenerationConfig cfg;
  cfg.n = 100;
  cfg.d = 4;
  cfg.seed = 5;
  const auto ds = generate_synthetic(cfg);
  BiasSpec spec;
  spec.candidate_fraction = 0.0;
  spec.seed = 9;
  const auto out = inject_bias(ds, spec);
  CHECK(out.flip_count == 0);
  CHECK(out.dataset == ds);
}

TEST_CASE("inject_bias flips every eligible example at fraction 1") {
  // 4 of 10 examples have the chosen response strictly lower on the attribute.
  std::vector<PreferenceExample> exs;
  exs.push_back(make_example("a", 1.0, 2.0));   // eligible
  exs.push_back(make_example("b", 2.0, 1.0));
  exs.push_back(make_example("c", 0.5, 3.0, 1));  // eligible
  exs.push_back(make_example("d", 3.0, 3.0));     // tie, not eligible
  exs.push_back(make_example("e", 5.0, 1.0, 1));
  exs.push_back(make_example("f", -1.0, 0.0));  // eligible
  exs.push_back(make_example("g", 0.0, 0.0, 1));
  exs.push_back(make_example("h", 7.0, 2.0));
  exs.push_back(make_example("i", 2.0, 9.0, 1));  // eligible
  exs.push_back(make_example("j", 4.0, 4.0));
  const auto ds = make_dataset(std::move(exs));

  BiasSpec spec;
  spec.candidate_fraction = 1.0;
  spec.seed = 42;
  const auto out = inject_bias(ds, spec);
  CHECK(out.flip_count == 4);
  CHECK(out.flip_fraction == doctest::Approx(0.4));
  int marked = 0;
  for (const auto& ex : out.dataset.examples) {
    if (ex.flipped && *ex.flipped) {
      ++marked;
      // after the flip the chosen response carries the higher attribute
      const auto& a = ex.attrs.at("length");
      CHECK(a[ex.z] > a[1 - ex.z]);
    }
  }
  CHECK(marked == 4);
}

TEST_CASE("inject_bias candidate rate reproduces the fraction-times-eligible ratio") {
  GenerationConfig cfg;
  cfg.n = 5000;
  cfg.d = 16;
  cfg.seed = 7;
  const auto ds = generate_synthetic(cfg);

  int eligible = 0;
  for (const auto& ex : ds.examples) {
    const auto& a = ex.attrs.at("length");
    if (a[ex.z] < a[1 - ex.z]) ++eligible;
  }
  const double eligible_rate = static_cast<double>(eligible) / cfg.n;

  BiasSpec spec;
  spec.candidate_fraction = 0.2;
  spec.seed = 17;
  const auto out = inject_bias(ds, spec);
  // flips/n tracks fraction * eligible_rate up to binomial noise
  CHECK(out.flip_fraction ==
        doctest::Approx(spec.candidate_fraction * eligible_rate).epsilon(0.12));
}

TEST_CASE("inject_bias toward attribute is idempotent under one seed") {
  GenerationConfig cfg;
  cfg.n = 400;
  cfg.d = 8;
  cfg.seed = 21;
  const auto ds = generate_synthetic(cfg);
  BiasSpec spec;
  spec.candidate_fraction = 0.5;
  spec.seed = 2;
  const auto first = inject_bias(ds, spec);
  CHECK(first.flip_count > 0);
  const auto second = inject_bias(first.dataset, spec);
  CHECK(second.flip_count == 0);
  CHECK(second.dataset == first.dataset);
}

TEST_CASE("inject_bias random kind ignores attributes") {
  GenerationConfig cfg;
  cfg.n = 1000;
  cfg.d = 4;
  cfg.seed = 31;
  const auto ds = generate_synthetic(cfg);
  BiasSpec spec;
  spec.kind = BiasKind::kFlipRandom;
  spec.candidate_fraction = 0.3;
  spec.seed = 8;
  const auto out = inject_bias(ds, spec);
  CHECK(out.flip_count == doctest::Approx(300).epsilon(0.15));
  for (size_t i = 0; i < ds.size(); ++i) {
    const bool marked = out.dataset.examples[i].flipped &&
                        *out.dataset.examples[i].flipped;
    CHECK((out.dataset.examples[i].z != ds.examples[i].z) == marked);
  }
}

TEST_CASE("inject_bias validates inputs") {
  auto ds = make_dataset({make_example("a", 1.0, 2.0)});
  BiasSpec spec;
  spec.candidate_fraction = 1.5;
  CHECK_THROWS_AS(inject_bias(ds, spec), std::invalid_argument);
  spec.candidate_fraction = 0.5;
  spec.attribute = "tone";
  CHECK_THROWS_WITH_AS(inject_bias(ds, spec), doctest::Contains("tone"),
                       std::invalid_argument);
}

TEST_CASE("build_targeted_validation filters by strict attribute comparison") {
  std::vector<PreferenceExample> exs;
  exs.push_back(make_example("a", 1.0, 2.0));      // chosen lower
  exs.push_back(make_example("b", 5.0, 2.0));      // chosen higher
  exs.push_back(make_example("c", 0.0, 4.0, 1));   // chosen lower
  exs.push_back(make_example("d", 3.0, 3.0));      // tie
  exs.push_back(make_example("e", 9.0, 1.0, 1));   // chosen higher
  exs.push_back(make_example("f", 2.0, 2.0, 1));   // tie
  const auto ds = make_dataset(std::move(exs));

  const auto lower = build_targeted_validation(ds, ValidationRule::kAttributeChosenLower);
  REQUIRE(lower.dataset.size() == 2);
  CHECK(lower.dataset.examples[0].id == "a");
  CHECK(lower.dataset.examples[1].id == "c");
  CHECK_FALSE(lower.empty_warning);

  const auto higher = build_targeted_validation(ds, ValidationRule::kAttributeChosenHigher);
  REQUIRE(higher.dataset.size() == 2);
  CHECK(higher.dataset.examples[0].id == "b");
  CHECK(higher.dataset.examples[1].id == "e");

  const auto all = build_targeted_validation(ds, ValidationRule::kAll);
  CHECK(all.dataset.examples == ds.examples);

  // lower + higher + ties partition the dataset
  CHECK(lower.dataset.size() + higher.dataset.size() + 2 == ds.size());
}

TEST_CASE("build_targeted_validation returns empty subsets with a warning") {
  const auto ds = make_dataset({make_example("a", 5.0, 1.0),
                                make_example("b", 4.0, 2.0)});
  const auto out = build_targeted_validation(ds, ValidationRule::kAttributeChosenLower);
  CHECK(out.dataset.empty());
  CHECK(out.empty_warning);
}

TEST_CASE("dataset save/load round trips exactly") {
  GenerationConfig cfg;
  cfg.n = 3;
  cfg.d = 5;
  cfg.m = 2;
  cfg.seed = 77;
  auto ds = generate_synthetic(cfg);
  ds.examples[1].flipped = true;

  const std::string path = "roundtrip_test.jsonl";
  save(ds, path);
  const auto back = load(path);
  std::filesystem::remove(path);
  CHECK(back == ds);
}

TEST_CASE("dataset loader reports malformed records") {
  const std::string header = R"({"feature_dim":2,"name":"x"})";
  const std::string good = R"({"id":"a","feat0":[1.0,2.0],"feat1":[0.5,1.5],"z":0})";

  SUBCASE("feature length mismatch names the offending id") {
    const std::string bad = R"({"id":"b","feat0":[1.0],"feat1":[0.5,1.5],"z":1})";
    CHECK_THROWS_WITH_AS(deserialize(header + "\n" + good + "\n" + bad + "\n"),
                         doctest::Contains("b"), std::runtime_error);
  }
  SUBCASE("duplicate id is rejected with its line number") {
    const std::string dup = header + "\n" + good + "\n" + good + "\n";
    CHECK_THROWS_WITH_AS(deserialize(dup), doctest::Contains("duplicate id"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(deserialize(dup), doctest::Contains("line 3"),
                         std::runtime_error);
  }
  SUBCASE("unparseable json reports the line") {
    CHECK_THROWS_WITH_AS(deserialize(header + "\n" + "{not json\n"),
                         doctest::Contains("line 2"), std::runtime_error);
  }
}

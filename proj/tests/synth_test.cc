// Copyright 2026 The recsae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <set>
#include <string>

#include "gtest/gtest.h"
#include "recsae/error.h"
#include "recsae/hash.h"
#include "recsae/synth.h"
#include "test_util.h"

namespace recsae {
namespace {

size_t number(const std::string& id) { return std::stoul(id.substr(1)); }

TEST(SynthTest, NoiselessPositivesRespectAffinity) {
  const SynthData d = generate_synthetic(SynthConfig{.noise = 0.0, .seed = 3});
  ASSERT_EQ(d.interactions.size(), 200u * 20u);
  for (const RawInteraction& r : d.interactions) {
    EXPECT_EQ(d.user_concept[number(r.user_id)], d.item_concept[number(r.item_id)])
        << r.user_id << " " << r.item_id;
  }
}

TEST(SynthTest, SingleConceptCoversWholeCatalog) {
  const SynthData d = generate_synthetic(
      SynthConfig{.n_users = 10, .n_items = 30, .n_concepts = 1, .noise = 0.0});
  for (uint32_t c : d.item_concept) EXPECT_EQ(c, 0u);
  for (uint32_t c : d.user_concept) EXPECT_EQ(c, 0u);
  for (const MetadataRow& row : d.metadata) {
    EXPECT_EQ(row.metadata.labels, (std::vector<std::string>{"concept0"}));
  }
}

TEST(SynthTest, BlocksAreContiguousAndUsersRoundRobin) {
  const SynthData d = generate_synthetic(SynthConfig{});
  for (size_t i = 0; i < 120; ++i) EXPECT_EQ(d.item_concept[i], i / 30);
  for (size_t u = 0; u < 200; ++u) EXPECT_EQ(d.user_concept[u], u % 4);
}

TEST(SynthTest, NoDuplicatePositivesPerUser) {
  const SynthData d = generate_synthetic(SynthConfig{.noise = 0.5, .seed = 4});
  std::set<std::pair<std::string, std::string>> seen;
  for (const RawInteraction& r : d.interactions) {
    EXPECT_TRUE(seen.insert({r.user_id, r.item_id}).second);
  }
}

TEST(SynthTest, FixedSeedReproducesDatasetHash) {
  auto hash = [](uint64_t seed) {
    const SynthData d = generate_synthetic(SynthConfig{.seed = seed});
    return synthetic_dataset(d, {}, seed).fingerprint();
  };
  EXPECT_EQ(hash(8), hash(8));
  EXPECT_NE(hash(8), hash(9));
}

TEST(SynthTest, WrittenFilesRoundTripThroughLoaders) {
  const SynthData d = generate_synthetic(SynthConfig{.n_users = 12, .n_items = 16,
                                                     .n_concepts = 2, .positives_per_user = 6,
                                                     .seed = 5});
  testing::TempDir dir;
  write_synthetic(d, dir.path());
  EXPECT_EQ(load_movielens(dir / "ratings.dat"), d.interactions);
  const auto meta = load_metadata(dir / "items.tsv");
  ASSERT_EQ(meta.size(), d.metadata.size());
  for (size_t k = 0; k < meta.size(); ++k) EXPECT_EQ(meta[k].metadata, d.metadata[k].metadata);
  const auto gt = nlohmann::json::parse(testing::read_file(dir / "ground_truth.json"));
  EXPECT_EQ(gt.at("schema"), "synth/1");
  EXPECT_EQ(gt.at("concepts").size(), 2u);
  EXPECT_EQ(gt.at("concepts").at(1).at("label"), "concept1");
  EXPECT_EQ(gt.at("concepts").at(1).at("items").size(), 8u);
}

TEST(SynthTest, ConfigValidationAndJson) {
  EXPECT_THROW(generate_synthetic(SynthConfig{.n_concepts = 0}), ConfigError);
  EXPECT_THROW(generate_synthetic(SynthConfig{.noise = 1.5}), ConfigError);
  EXPECT_THROW(generate_synthetic(SynthConfig{.n_items = 40, .positives_per_user = 20}),
               ConfigError);
  const SynthConfig c{.n_users = 7, .noise = 0.25, .seed = 11};
  const SynthConfig back = SynthConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  const SynthConfig partial = SynthConfig::from_json({{"n_items", 60}}, c);
  EXPECT_EQ(partial.n_items, 60u);
  EXPECT_EQ(partial.n_users, 7u);
}

}  // namespace
}  // namespace recsae

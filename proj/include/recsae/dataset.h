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

#ifndef RECSAE_DATASET_H_
#define RECSAE_DATASET_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "recsae/rng.h"

namespace recsae {

struct RawInteraction {
  std::string user_id;
  std::string item_id;
  double value = 1.0;
  std::optional<int64_t> timestamp;

  friend bool operator==(const RawInteraction&,
                         const RawInteraction&) = default;
};

struct LoadStats {
  size_t lines = 0;
  size_t malformed = 0;
  std::vector<std::string> warnings;
};

// Parses `user::item::rating::timestamp` lines. Every rated item is kept as
// a positive regardless of rating. Throws DataError when the file is missing
// or more than 1% of non-empty lines are malformed.
std::vector<RawInteraction> load_movielens(const std::filesystem::path& path,
                                           LoadStats* stats = nullptr);

struct LastfmColumns {
  size_t user = 0;
  size_t artist = 1;
  size_t track = 2;
};

// Aggregates tab-separated listening events to one interaction per
// (user, artist) pair whose value is the event count. Output order follows
// first appearance of each pair.
std::vector<RawInteraction> load_lastfm(const std::filesystem::path& path,
                                        LastfmColumns columns = {},
                                        LoadStats* stats = nullptr);

struct ItemMetadata {
  std::string title;
  std::vector<std::string> labels;  // sorted, unique
  std::optional<int> year;
  bool known = false;  // false when no sidecar row covered this item

  bool has_label(std::string_view label) const;
  friend bool operator==(const ItemMetadata&, const ItemMetadata&) = default;
};

struct MetadataRow {
  std::string item_id;
  ItemMetadata metadata;
};

// Sidecar TSV: item_id <tab> title <tab> label1|label2|... <tab> year.
std::vector<MetadataRow> load_metadata(const std::filesystem::path& path);

enum class Split : uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

struct Positive {
  uint32_t user;
  uint32_t item;
  Split split;
  friend bool operator==(const Positive&, const Positive&) = default;
};

struct DatasetConfig {
  size_t min_user_positives = 6;
  size_t test_per_user = 5;
  double val_fraction = 0.05;
};

// Immutable once built.
class InteractionDataset {
 public:
  InteractionDataset() = default;
  InteractionDataset(std::vector<std::string> user_ids,
                     std::vector<std::string> item_ids,
                     std::vector<Positive> positives,
                     std::vector<ItemMetadata> metadata);

  size_t n_users() const { return user_ids_.size(); }
  size_t n_items() const { return item_ids_.size(); }
  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  // Sorted by (user, item).
  const std::vector<Positive>& positives() const { return positives_; }
  const std::vector<uint64_t>& item_popularity() const { return popularity_; }
  const std::vector<ItemMetadata>& metadata() const { return metadata_; }

  // Sorted item indices of a user's positives in the given split.
  std::span<const uint32_t> items_of(uint32_t user, Split split) const;
  bool is_train_positive(uint32_t user, uint32_t item) const;
  std::vector<Positive> split_positives(Split split) const;
  size_t split_size(Split split) const;
  std::vector<uint32_t> users_with_train() const;

  std::optional<uint32_t> user_index(std::string_view id) const;
  std::optional<uint32_t> item_index(std::string_view id) const;

  void attach_metadata(const std::vector<MetadataRow>& rows);

  // Build parameters (config, seed) carried into the serialized artifact.
  const nlohmann::json& provenance() const { return provenance_; }
  void set_provenance(nlohmann::json p) { provenance_ = std::move(p); }

  // Content hash of the serialized form.
  std::string fingerprint() const;

  nlohmann::json to_json() const;
  static InteractionDataset from_json(const nlohmann::json& j);

 private:
  void index();

  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::vector<Positive> positives_;
  std::vector<ItemMetadata> metadata_;
  std::vector<uint64_t> popularity_;
  nlohmann::json provenance_ = nlohmann::json::object();
  // per_split_[s][u] holds sorted items.
  std::vector<std::vector<uint32_t>> per_split_[3];
  std::unordered_map<std::string, uint32_t> user_lookup_;
  std::unordered_map<std::string, uint32_t> item_lookup_;
};

// Deduplicates, maps ids to dense indices in order of first appearance,
// holds out `test_per_user` random positives per eligible user and carves
// a validation subset from the remaining training positives.
InteractionDataset build_dataset(const std::vector<RawInteraction>& raw,
                                 const DatasetConfig& config, uint64_t seed);

// Popularity-proportional sampler over items outside a user's training
// positives. Draws are independent (with replacement).
class NegativeSampler {
 public:
  NegativeSampler(const InteractionDataset& dataset, uint64_t seed);

  // Normalized weights, sum to 1.
  const std::vector<double>& weights() const { return weights_; }

  // Throws ConfigError when k exceeds the number of eligible items.
  std::vector<uint32_t> sample(uint32_t user, size_t k);
  size_t eligible_count(uint32_t user) const;

 private:
  uint32_t draw_restricted(std::span<const uint32_t> excluded);

  const InteractionDataset* dataset_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
  Rng rng_;
};

inline std::vector<uint32_t> sample_negatives(NegativeSampler& sampler,
                                              uint32_t user, size_t k) {
  return sampler.sample(user, k);
}

}  // namespace recsae

#endif  // RECSAE_DATASET_H_

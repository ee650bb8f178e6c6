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

#ifndef RECSAE_INTERVENE_H_
#define RECSAE_INTERVENE_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "recsae/analysis.h"
#include "recsae/dataset.h"
#include "recsae/recommender.h"
#include "recsae/sae.h"

namespace recsae {

enum class EditMode { kSet, kAdd, kScale };

std::string to_string(EditMode mode);
EditMode parse_edit_mode(std::string_view name);

struct NeuronEdit {
  size_t neuron = 0;
  EditMode mode = EditMode::kSet;
  double value = 0.0;
};

struct Audience {
  enum class Kind { kAll, kLabel, kUsers };
  Kind kind = Kind::kAll;
  std::string label;            // kLabel
  std::vector<uint32_t> users;  // kUsers, dense indices
};

struct InterventionSpec {
  Side side = Side::kItem;
  uint32_t entity = 0;
  std::vector<NeuronEdit> edits;  // applied left to right
  Audience audience;

  // Schema `intervention/1`; entity and audience users are external ids
  // resolved against `dataset`.
  nlohmann::json to_json(const InteractionDataset& dataset) const;
  static InterventionSpec from_json(const nlohmann::json& j,
                                    const InteractionDataset& dataset);
};

// Applies edits to a latent code in place. Out-of-range neurons and
// negative scale factors throw ConfigError; negative results of set/add are
// clamped to zero and noted in `warnings`.
void apply_edits(std::span<double> z, std::span<const NeuronEdit> edits,
                 std::vector<std::string>* warnings = nullptr);

// decode(edit(encode(e_target))). Neither model is modified.
Vector apply_intervention(const SaeBundle& bundle,
                          const RecommenderModel& model,
                          const InterventionSpec& spec,
                          std::vector<std::string>* warnings = nullptr);

// 1 + number of competitors ranked ahead of `item` (higher score, or equal
// score and lower index). Items in `excluded` (sorted) do not compete.
size_t rank_of_item(std::span<const double> scores, uint32_t item,
                    std::span<const uint32_t> excluded = {});

// Rank of `item` for `user` when its embedding is replaced by `item_vec`.
// In the default pool every other item and the user keep their original
// embeddings; with `reconstructed_pool` they are all reconstructions.
size_t rank_of_item(const RecommenderModel& model, const SaeBundle& bundle,
                    uint32_t user, uint32_t item,
                    std::span<const double> item_vec, bool reconstructed_pool,
                    std::span<const uint32_t> excluded = {});

struct Segment {
  std::string name;
  std::vector<uint32_t> users;
};

// Users whose training positives carry `label` in at least `threshold` of
// cases, one segment per label in sorted label order.
std::vector<Segment> label_segments(const InteractionDataset& dataset,
                                    double threshold = 0.6);

std::vector<uint32_t> resolve_audience(const Audience& audience,
                                       const InteractionDataset& dataset,
                                       double threshold = 0.6);

struct PromotionOptions {
  size_t top_n = 30;
  EditMode mode = EditMode::kSet;
  bool reconstructed_pool = false;
  bool exclude_train = true;
};

struct RankTrajectory {
  std::vector<double> sweep_values;
  std::vector<std::string> segments;
  // [segment][value]; absent for an empty segment. Ranks beyond N count
  // as N + 1.
  std::vector<std::vector<std::optional<double>>> mean_rank;
  std::vector<std::vector<std::optional<double>>> fraction_in_top_n;
  size_t top_n = 0;
};

RankTrajectory promotion_sweep(const SaeBundle& bundle,
                               const RecommenderModel& model,
                               const InteractionDataset& dataset,
                               uint32_t item, size_t neuron,
                               const std::vector<double>& values,
                               const std::vector<Segment>& segments,
                               const PromotionOptions& options = {});

std::string trajectory_csv(const RankTrajectory& trajectory);

struct SuppressionOptions {
  size_t top_n = 10;
  double scale = 0.0;  // 0 zeroes the neurons
  bool reconstructed_pool = false;
  bool exclude_train = true;
};

struct SuppressionReport {
  std::vector<uint32_t> users;
  std::vector<size_t> before;  // label-matching items in each user's top-N
  std::vector<size_t> after;
  size_t total_before = 0;
  size_t total_after = 0;
  double reduction = 0.0;  // 1 - after/before; 0 when before is 0
};

// Scales `neurons` of each cohort user's code and counts items carrying
// `label` in the top-N before (pure reconstruction) and after the edit.
SuppressionReport suppress_for_cohort(const SaeBundle& bundle,
                                      const RecommenderModel& model,
                                      const InteractionDataset& dataset,
                                      const std::vector<uint32_t>& cohort,
                                      const std::vector<size_t>& neurons,
                                      std::string_view label,
                                      const SuppressionOptions& options = {});

}  // namespace recsae

#endif  // RECSAE_INTERVENE_H_

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

#ifndef RECSAE_ANALYSIS_H_
#define RECSAE_ANALYSIS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "recsae/dataset.h"
#include "recsae/matrix.h"
#include "recsae/recommender.h"
#include "recsae/sae.h"

namespace recsae {

enum class Side { kUser, kItem };

// Row per entity: encoding of its frozen embedding (n x m).
Matrix neuron_activations(const SaeBundle& bundle,
                          const RecommenderModel& model, Side side);

struct ScoredItem {
  uint32_t item;
  double activation;
  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

// K largest activations of column `neuron`, ties by ascending index.
std::vector<ScoredItem> top_activating(const Matrix& activations,
                                       size_t neuron, size_t k);

struct PurityResult {
  double purity = 0.0;
  size_t matched = 0;
  size_t missing_metadata = 0;  // counted as non-matching
};

// Fraction of the items carrying `label` among any of their labels.
PurityResult semantic_purity(std::span<const ScoredItem> top_items,
                             std::string_view label,
                             const std::vector<ItemMetadata>& metadata);

// Distance from the head of the popularity distribution for each item:
// (rank - 0.5) / n with rank 1 for the most popular item and tied items
// sharing their mean rank.
Vector popularity_top_distance(std::span<const uint64_t> popularity);

// Mean top-distance over the first K of `top_items`.
double popularity_percentile(std::span<const ScoredItem> top_items,
                             std::span<const uint64_t> popularity, size_t k);

struct MonosemanticityResult {
  std::vector<std::optional<double>> per_neuron;
  double aggregate = 0.0;  // mean over scored neurons; NaN if none
  std::vector<size_t> skipped;  // neurons with fewer than 2 active items
};

// For each neuron, activation-weighted mean pairwise cosine similarity of
// the item embeddings among its top-T activating items:
//   sum_{a<b} w_a w_b cos(e_a, e_b) / sum_{a<b} w_a w_b.
MonosemanticityResult monosemanticity_score(const Matrix& item_activations,
                                            const Matrix& item_embeddings,
                                            size_t top_t = 30);

MonosemanticityResult monosemanticity_score(const SaeBundle& bundle,
                                            const RecommenderModel& model,
                                            size_t top_t = 30);

struct LabelProfile {
  std::string label;
  size_t items = 0;
  Vector mean_activation;  // per neuron
  Vector baseline;         // per neuron, whole catalog
};

// Mean activation of every neuron over items carrying `label`, alongside
// the catalog-wide mean. Throws ConfigError for an empty label or one
// that no item carries.
LabelProfile label_activation_profile(const Matrix& item_activations,
                                      const std::vector<ItemMetadata>& metadata,
                                      std::string_view label);

struct NeuronProfile {
  size_t neuron = 0;
  std::vector<std::string> labels;
  Vector mean_activation;  // per label
  std::vector<size_t> items;  // per label
};

// Mean activation of one neuron across each label's items.
NeuronProfile neuron_label_profile(const Matrix& item_activations,
                                   const std::vector<ItemMetadata>& metadata,
                                   size_t neuron);

struct DecadeHistogram {
  std::map<int, size_t> counts;  // decade start year -> items
  size_t missing_year = 0;
};

DecadeHistogram temporal_profile(const Matrix& item_activations,
                                 const std::vector<ItemMetadata>& metadata,
                                 size_t neuron, size_t k = 50,
                                 int bucket_years = 10);

std::string label_profile_csv(const LabelProfile& profile);
std::string neuron_profile_csv(const NeuronProfile& profile);
std::string decade_histogram_csv(size_t neuron, const DecadeHistogram& hist);

struct NeuronReport {
  size_t neuron = 0;
  std::vector<ScoredItem> top_items;
  std::optional<std::string> label;
  std::map<size_t, double> purity_at;
  std::map<size_t, double> popularity_percentile_at;
  std::optional<double> monosemanticity;
};

// Builds per-neuron reports; purity is filled only for labeled neurons.
std::vector<NeuronReport> neuron_reports(
    const Matrix& item_activations, const InteractionDataset& dataset,
    const MonosemanticityResult& mono,
    const std::map<size_t, std::string>& labels,
    const std::vector<size_t>& ks = {10, 20, 50}, size_t k_max = 50);

// `neurons/1` export of top-activating items for external labeling.
nlohmann::json export_neurons(const std::vector<NeuronReport>& reports,
                              const InteractionDataset& dataset);

// TSV `neuron_index <tab> label`.
std::map<size_t, std::string> load_neuron_labels(
    const std::filesystem::path& path);

// For each label, the neuron with the highest purity at K and that purity.
std::map<std::string, std::pair<size_t, double>> best_neuron_per_label(
    const Matrix& item_activations, const std::vector<ItemMetadata>& metadata,
    const std::vector<std::string>& labels, size_t k);

// Live neurons whose top-K items reach `min_purity` for `label`.
std::vector<size_t> label_neurons(const Matrix& item_activations,
                                  const std::vector<ItemMetadata>& metadata,
                                  std::string_view label, size_t k = 10,
                                  double min_purity = 0.9);

// Among `candidates`, the neuron with the highest mean activation over
// `rows` (e.g. a user cohort); nullopt when either list is empty.
std::optional<size_t> most_active_neuron(const Matrix& activations,
                                         std::span<const uint32_t> rows,
                                         std::span<const size_t> candidates);

}  // namespace recsae

#endif  // RECSAE_ANALYSIS_H_

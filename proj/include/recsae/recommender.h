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

#ifndef RECSAE_RECOMMENDER_H_
#define RECSAE_RECOMMENDER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "recsae/dataset.h"
#include "recsae/matrix.h"

namespace recsae {

enum class ModelKind { kMF, kNCF };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

// Fully connected layer: out = weight * in + bias, weight is (out x in).
struct DenseLayer {
  Matrix weight;
  Vector bias;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Two-tower model. User and item towers are embedding lookups of equal
// width; the scorer is a dot product (MF) or an MLP over the concatenated
// embeddings with ReLU hidden layers and a scalar output (NCF). Both
// squash the logit with a sigmoid.
struct RecommenderModel {
  ModelKind kind = ModelKind::kMF;
  size_t dim = 0;
  Matrix user_embeddings;  // n_users x dim
  Matrix item_embeddings;  // n_items x dim
  std::vector<DenseLayer> scorer;  // empty for MF
  std::string dataset_fingerprint;
  nlohmann::json provenance = nlohmann::json::object();  // config + seed

  size_t n_users() const { return user_embeddings.rows(); }
  size_t n_items() const { return item_embeddings.rows(); }

  // Hash over kind, shapes and every parameter bit.
  std::string fingerprint() const;
  bool all_finite() const;

  nlohmann::json to_json() const;
  static RecommenderModel from_json(const nlohmann::json& j);

  friend bool operator==(const RecommenderModel&,
                         const RecommenderModel&) = default;
};

inline const std::vector<size_t> kDefaultNcfHidden = {64, 32, 16};

// Embeddings uniform in [-0.05, 0.05]; NCF layers uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)] with zero biases.
RecommenderModel init_recommender(ModelKind kind, size_t n_users,
                                  size_t n_items, size_t dim, Rng& rng,
                                  const std::vector<size_t>& hidden =
                                      kDefaultNcfHidden);

// Pre-sigmoid output of the scorer.
double score_logit(const RecommenderModel& model,
                   std::span<const double> user_vec,
                   std::span<const double> item_vec);

// Affinity in (0, 1).
double score(const RecommenderModel& model, std::span<const double> user_vec,
             std::span<const double> item_vec);

struct ScoreGradients {
  Vector d_user;  // d affinity / d user embedding
  Vector d_item;  // d affinity / d item embedding
};

struct ScoreWithGradients {
  double affinity = 0.0;
  ScoreGradients grads;
};

// Affinity and its exact gradient with respect to both input embeddings,
// with the scorer parameters held fixed.
ScoreWithGradients score_with_gradients(const RecommenderModel& model,
                                        std::span<const double> user_vec,
                                        std::span<const double> item_vec);

struct TrainConfig {
  double learning_rate = 0.05;
  size_t batch_size = 256;  // positives per batch, each with its negatives
  size_t epochs = 10;
  size_t negatives_per_positive = 4;
  size_t patience = 2;
  size_t dim = 20;
  std::vector<size_t> hidden = kDefaultNcfHidden;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

struct EpochLog {
  size_t epoch = 0;
  double mean_loss = 0.0;
  double val_mpr = 0.0;  // NaN when the validation split is empty
};

struct TrainResult {
  RecommenderModel model;
  std::vector<EpochLog> log;
  size_t best_epoch = 0;  // 0 means the initial model was kept
};

// Mini-batch BCE training with fresh popularity-proportional negatives
// each epoch and early stopping on validation MPR. Returns the snapshot
// with the best validation MPR.
TrainResult train_recommender(const InteractionDataset& dataset,
                              const TrainConfig& config, ModelKind kind);

// Mean percentile rank of held-out positives among items outside the
// user's training positives; 0 is best, ties take the midpoint.
double mpr(const RecommenderModel& model, const InteractionDataset& dataset,
           Split split);

// Scores every row of `item_table` against `user_vec`.
Vector score_all(const RecommenderModel& model,
                 std::span<const double> user_vec, const Matrix& item_table);

// Items by descending score, ties by ascending index, skipping `excluded`
// (sorted).
std::vector<uint32_t> rank_items(std::span<const double> scores, size_t n,
                                 std::span<const uint32_t> excluded = {});

std::vector<uint32_t> top_n(const RecommenderModel& model,
                            const InteractionDataset& dataset, uint32_t user,
                            size_t n, bool exclude_train);

}  // namespace recsae

#endif  // RECSAE_RECOMMENDER_H_

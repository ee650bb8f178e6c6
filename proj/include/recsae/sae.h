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

#ifndef RECSAE_SAE_H_
#define RECSAE_SAE_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "recsae/adam.h"
#include "recsae/dataset.h"
#include "recsae/matrix.h"
#include "recsae/recommender.h"

namespace recsae {

// Sparse autoencoder with a ReLU bottleneck and a tied decoder:
//   z = relu(W e + b_enc),  e~ = W^T z + b_dec.
// Only W is stored, so the decoder is the encoder transpose by construction.
// With nested sizes m_1 < ... < m_n = m, level k decodes from the first m_k
// latents only.
struct SaeModel {
  Matrix weight;     // m x d
  Vector enc_bias;   // m
  Vector dec_bias;   // d
  std::vector<size_t> nested_sizes;  // empty or strictly ascending to m

  size_t dim() const { return weight.cols(); }
  size_t width() const { return weight.rows(); }
  // Number of reconstruction levels; 1 when not nested.
  size_t levels() const {
    return nested_sizes.empty() ? 1 : nested_sizes.size();
  }
  // Latents visible at a 1-based level.
  size_t level_width(size_t level) const;

  bool all_finite() const;
  void validate() const;

  friend bool operator==(const SaeModel&, const SaeModel&) = default;
};

SaeModel make_sae(size_t dim, size_t width,
                  std::vector<size_t> nested_sizes = {});

// {ceil(m/L), ceil(2m/L), ..., m} with duplicates removed.
std::vector<size_t> matryoshka_sizes(size_t width, size_t levels);

Vector encode(const SaeModel& sae, std::span<const double> e);
void encode_into(const SaeModel& sae, std::span<const double> e,
                 std::span<double> pre, std::span<double> z);

// Decodes using the first level_width(level) latents; `level` is 1-based
// and absent means all latents.
Vector decode(const SaeModel& sae, std::span<const double> z,
              std::optional<size_t> level = std::nullopt);

Vector reconstruct(const SaeModel& sae, std::span<const double> e,
                   std::optional<size_t> level = std::nullopt);

enum class ActivationStat {
  kSoftClip,   // a = min(z, 1)
  kIndicator,  // a = [z > 0], contributes no gradient
};

struct LossConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double rho = 0.05;
  size_t batch_size = 64;
  size_t pred_pairs = 0;  // 0 means batch_size
  ActivationStat stat = ActivationStat::kSoftClip;

  size_t pairs() const { return pred_pairs == 0 ? batch_size : pred_pairs; }
  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
  static LossConfig from_json(const nlohmann::json& j, LossConfig base);
};

inline constexpr double kRateClamp = 1e-6;

// ||e - e~||^2
double loss_emb(std::span<const double> e, std::span<const double> e_rec);

// Mean squared difference between original and reconstructed affinities
// over the pairs, with both towers reconstructed and scored by the frozen
// model. Throws ConfigError on an empty pair list.
double loss_pred(const RecommenderModel& model,
                 std::span<const std::pair<uint32_t, uint32_t>> pairs,
                 const SaeModel& user_sae, const SaeModel& item_sae,
                 std::optional<size_t> level = std::nullopt);

struct SparsityLoss {
  double l1 = 0.0;
  double kl = 0.0;
  Vector rates;  // unclamped p_j
};

// l1 = mean over rows of sum_j |z_j|; kl = sum_j KL(rho || p_j) with p_j the
// mean activation statistic clamped to [1e-6, 1 - 1e-6].
SparsityLoss loss_sparsity(const Matrix& z_batch, const LossConfig& config);

double kl_bernoulli(double rho, double p);

// One or two autoencoders plus the metadata of the run that produced them.
// A shared bundle holds a single SAE used for both towers.
struct SaeBundle {
  std::vector<SaeModel> saes;
  LossConfig loss;
  std::string recommender_fingerprint;
  nlohmann::json provenance = nlohmann::json::object();

  bool shared() const { return saes.size() == 1; }
  const SaeModel& user_sae() const { return saes.front(); }
  const SaeModel& item_sae() const { return saes.back(); }
  const SaeModel& for_side(bool item_side) const {
    return item_side ? item_sae() : user_sae();
  }

  std::string fingerprint() const;
  nlohmann::json to_json() const;
  static SaeBundle from_json(const nlohmann::json& j);

  // Flat parameter view in a fixed order, for optimizers and gradient checks.
  std::vector<double> pack() const;
  void unpack(std::span<const double> flat);
  size_t parameter_count() const;
};

// One training step's inputs. Embedding rows are copies of frozen table
// rows; pair rows are the (user, item) embeddings for the prediction loss.
struct SaeBatch {
  Matrix users;
  Matrix items;
  Matrix pair_users;
  Matrix pair_items;
};

struct LossBreakdown {
  double emb = 0.0;   // summed over towers, averaged over rows and levels
  double pred = 0.0;  // averaged over pairs and levels
  double l1 = 0.0;
  double kl = 0.0;
  double total = 0.0;
  std::vector<Vector> rates;  // per SAE
};

// alpha*L_emb + beta*L_pred + lambda1*l1 + lambda2*kl for a batch. When
// `grads` is non-null it receives d(total)/d(parameters) in pack() order,
// including the prediction-loss path through the frozen scorer.
LossBreakdown total_loss(const RecommenderModel& model, const SaeBundle& bundle,
                         const SaeBatch& batch, const LossConfig& config,
                         std::vector<double>* grads = nullptr);

struct SaeTrainConfig {
  LossConfig loss;
  double learning_rate = 1e-2;
  size_t width = 22;
  size_t nested_levels = 0;  // 0 disables nesting
  bool shared = true;
  size_t epochs = 20;
  size_t steps_per_epoch = 0;  // 0 means ceil(max(n_users, n_items) / B)
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SaeTrainConfig from_json(const nlohmann::json& j);
  static SaeTrainConfig from_json(const nlohmann::json& j, SaeTrainConfig base);
};

struct SaeEpochReport {
  size_t epoch = 0;
  double emb = 0.0;
  double pred = 0.0;
  double l1 = 0.0;
  double kl = 0.0;
  double total = 0.0;
  std::vector<Vector> rates;  // per SAE, mean activation statistic
  double dead_fraction = 0.0;  // neurons with rate < 1e-6
};

struct SaeTrainResult {
  SaeBundle bundle;
  std::vector<SaeEpochReport> report;
};

SaeBundle init_sae_bundle(const RecommenderModel& model,
                          const SaeTrainConfig& config, Rng& rng);

SaeBatch sample_sae_batch(const RecommenderModel& model,
                          std::span<const uint32_t> pair_users, size_t batch,
                          size_t pairs, Rng& rng);

// Trains the autoencoder(s) on the frozen model's embeddings. The model is
// only read.
SaeTrainResult train_sae(const RecommenderModel& model,
                         const InteractionDataset& dataset,
                         const SaeTrainConfig& config);

// Reconstructed copy of a whole embedding table.
Matrix reconstruct_table(const SaeModel& sae, const Matrix& table,
                         std::optional<size_t> level = std::nullopt);

}  // namespace recsae

#endif  // RECSAE_SAE_H_

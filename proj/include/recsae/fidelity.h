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

#ifndef RECSAE_FIDELITY_H_
#define RECSAE_FIDELITY_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recsae/dataset.h"
#include "recsae/recommender.h"
#include "recsae/sae.h"

namespace recsae {

// Ranks items for `user` after replacing the user vector and every item
// vector with their autoencoder reconstructions.
std::vector<uint32_t> reconstructed_top_n(const RecommenderModel& model,
                                          const SaeBundle& bundle,
                                          const InteractionDataset& dataset,
                                          uint32_t user, size_t n,
                                          bool exclude_train);

// Extrapolated rank-biased overlap of the two lists truncated to the
// shorter length k:
//   (X_k / k) p^k + (1 - p) / p * sum_{d=1..k} (X_d / d) p^d
// where X_d is the overlap of the depth-d prefixes. Two empty lists score
// 1, one empty list 0. Throws ConfigError on duplicates or p outside (0,1).
double rbo(std::span<const uint32_t> a, std::span<const uint32_t> b,
           double p = 0.9);

struct TauResult {
  double tau = 0.0;
  size_t shared = 0;     // items present in both lists
  bool defined = false;  // false when fewer than two shared items
};

// (concordant - discordant) / C(n, 2) over the items both lists contain.
TauResult kendall_tau(std::span<const uint32_t> a, std::span<const uint32_t> b);

struct FidelityOptions {
  size_t depth = 30;
  double persistence = 0.9;
  bool exclude_train = true;
  size_t max_users = 0;  // 0 evaluates every user with training data
  uint64_t seed = 0;     // user subsample
};

struct FidelityResult {
  std::vector<uint32_t> users;
  std::vector<double> rbo;
  std::vector<double> tau;  // NaN where undefined
  std::vector<size_t> shared;
  double rbo_mean = 0.0;
  double rbo_std = 0.0;
  double tau_mean = 0.0;  // over users with a defined tau
  double tau_std = 0.0;
  size_t tau_undefined = 0;
};

FidelityResult evaluate_fidelity(const RecommenderModel& model,
                                 const SaeBundle& bundle,
                                 const InteractionDataset& dataset,
                                 const FidelityOptions& options = {});

// Mean over user and item rows of the fraction of latents above zero.
double active_neuron_fraction(const SaeBundle& bundle,
                              const RecommenderModel& model);

struct SweepRow {
  double beta = 0.0;
  std::optional<uint64_t> seed;  // absent on aggregate rows
  double rbo_mean = 0.0;
  double rbo_std = 0.0;
  double tau_mean = 0.0;
  double tau_std = 0.0;
  double monosemanticity = 0.0;
  double active_neuron_fraction = 0.0;
};

// Trains one autoencoder per (beta, seed) with `base` otherwise fixed and
// scores it. With several seeds each beta also gets an aggregate row whose
// means average the per-seed rows and whose stds are across seeds.
std::vector<SweepRow> beta_sweep(const InteractionDataset& dataset,
                                 const RecommenderModel& model,
                                 const SaeTrainConfig& base,
                                 const std::vector<double>& betas,
                                 const std::vector<uint64_t>& seeds,
                                 const FidelityOptions& options = {},
                                 size_t monosemanticity_top_t = 30);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace recsae

#endif  // RECSAE_FIDELITY_H_

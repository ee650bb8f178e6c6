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

#ifndef RECSAE_SYNTH_H_
#define RECSAE_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "recsae/dataset.h"
#include "recsae/sae.h"

namespace recsae {

// Planted-concept interaction data. Items are split into contiguous,
// equally sized concept blocks; each user is assigned one concept and
// draws positives from its block, except for a `noise` fraction drawn
// from the whole catalog.
struct SynthConfig {
  size_t n_users = 200;
  size_t n_items = 120;
  size_t n_concepts = 4;
  double noise = 0.1;
  size_t positives_per_user = 20;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
  static SynthConfig from_json(const nlohmann::json& j, SynthConfig base);
};

struct SynthData {
  SynthConfig config;
  std::vector<RawInteraction> interactions;
  std::vector<MetadataRow> metadata;
  std::vector<uint32_t> item_concept;  // by item number
  std::vector<uint32_t> user_concept;  // by user number
  std::vector<std::string> concept_labels;

  nlohmann::json ground_truth() const;
};

std::string concept_label(size_t concept_index);

SynthData generate_synthetic(const SynthConfig& config);

// ratings.dat (`user::item::rating::timestamp`), items.tsv
// (`id<TAB>title<TAB>labels<TAB>year`) and ground_truth.json.
void write_synthetic(const SynthData& data, const std::filesystem::path& dir);

// Dataset built from the generated interactions with metadata attached.
InteractionDataset synthetic_dataset(const SynthData& data,
                                     const DatasetConfig& config,
                                     uint64_t split_seed);

// Autoencoder settings for the planted-concept suite: a sparse shared
// bottleneck of 22 neurons. The prediction loss lives on the probability
// scale and is two to three orders of magnitude smaller than the
// embedding loss, hence the large beta.
SaeTrainConfig planted_sae_config(uint64_t seed = 0);

}  // namespace recsae

#endif  // RECSAE_SYNTH_H_

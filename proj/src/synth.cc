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

#include "recsae/synth.h"

#include <algorithm>
#include <fstream>
#include <set>

#include "recsae/error.h"
#include "recsae/rng.h"

namespace recsae {

using nlohmann::json;

void SynthConfig::validate() const {
  if (n_concepts == 0) throw ConfigError("need at least one concept");
  if (n_items < n_concepts) throw ConfigError("fewer items than concepts");
  if (n_users == 0) throw ConfigError("need at least one user");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must be in [0,1]");
  if (positives_per_user == 0) throw ConfigError("positives_per_user must be positive");
  if (positives_per_user > n_items / n_concepts) {
    throw ConfigError("positives_per_user exceeds the smallest concept block");
  }
}

json SynthConfig::to_json() const {
  return {{"n_users", n_users},   {"n_items", n_items},
          {"n_concepts", n_concepts}, {"noise", noise},
          {"positives_per_user", positives_per_user}, {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) { return from_json(j, {}); }

SynthConfig SynthConfig::from_json(const json& j, SynthConfig c) {
  try {
    c.n_users = j.value("n_users", c.n_users);
    c.n_items = j.value("n_items", c.n_items);
    c.n_concepts = j.value("n_concepts", c.n_concepts);
    c.noise = j.value("noise", c.noise);
    c.positives_per_user = j.value("positives_per_user", c.positives_per_user);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synthetic config: ") + e.what());
  }
  return c;
}

std::string concept_label(size_t concept_index) {
  return "concept" + std::to_string(concept_index);
}

json SynthData::ground_truth() const {
  json concepts = json::array();
  for (size_t c = 0; c < concept_labels.size(); ++c) {
    json items = json::array();
    json users = json::array();
    for (size_t i = 0; i < item_concept.size(); ++i) {
      if (item_concept[i] == c) items.push_back("i" + std::to_string(i));
    }
    for (size_t u = 0; u < user_concept.size(); ++u) {
      if (user_concept[u] == c) users.push_back("u" + std::to_string(u));
    }
    concepts.push_back({{"label", concept_labels[c]},
                        {"items", std::move(items)},
                        {"users", std::move(users)}});
  }
  return {{"schema", "synth/1"},
          {"config", config.to_json()},
          {"concepts", std::move(concepts)}};
}

SynthData generate_synthetic(const SynthConfig& config) {
  config.validate();
  SynthData d;
  d.config = config;
  Rng rng(config.seed);
  const size_t C = config.n_concepts;
  for (size_t c = 0; c < C; ++c) d.concept_labels.push_back(concept_label(c));

  // Block c covers items [c*n/C, (c+1)*n/C).
  std::vector<size_t> block_start(C + 1);
  for (size_t c = 0; c <= C; ++c) block_start[c] = c * config.n_items / C;
  d.item_concept.resize(config.n_items);
  for (size_t c = 0; c < C; ++c) {
    for (size_t i = block_start[c]; i < block_start[c + 1]; ++i) {
      d.item_concept[i] = static_cast<uint32_t>(c);
    }
  }
  for (size_t i = 0; i < config.n_items; ++i) {
    MetadataRow row;
    row.item_id = "i" + std::to_string(i);
    row.metadata.title = "Item " + std::to_string(i);
    row.metadata.labels = {d.concept_labels[d.item_concept[i]]};
    row.metadata.year = 1950 + static_cast<int>(rng.uniform_index(70));
    row.metadata.known = true;
    d.metadata.push_back(std::move(row));
  }

  d.user_concept.resize(config.n_users);
  for (size_t u = 0; u < config.n_users; ++u) {
    d.user_concept[u] = static_cast<uint32_t>(u % C);
  }

  int64_t timestamp = 978300000;
  for (size_t u = 0; u < config.n_users; ++u) {
    const size_t c = d.user_concept[u];
    const size_t lo = block_start[c];
    const size_t width = block_start[c + 1] - lo;
    std::set<size_t> chosen;
    while (chosen.size() < config.positives_per_user) {
      const bool noisy = config.noise > 0.0 && rng.uniform() < config.noise;
      const size_t item = noisy ? rng.uniform_index(config.n_items)
                                : lo + rng.uniform_index(width);
      chosen.insert(item);
    }
    std::vector<size_t> order(chosen.begin(), chosen.end());
    rng.shuffle(std::span<size_t>(order));
    for (size_t item : order) {
      RawInteraction r;
      r.user_id = "u" + std::to_string(u);
      r.item_id = "i" + std::to_string(item);
      r.value = 5.0;
      r.timestamp = timestamp++;
      d.interactions.push_back(std::move(r));
    }
  }
  return d;
}

void write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    return out;
  };
  {
    std::ofstream out = open("ratings.dat");
    for (const RawInteraction& r : data.interactions) {
      out << r.user_id << "::" << r.item_id << "::" << r.value << "::"
          << r.timestamp.value_or(0) << "\n";
    }
  }
  {
    std::ofstream out = open("items.tsv");
    for (const MetadataRow& row : data.metadata) {
      out << row.item_id << "\t" << row.metadata.title << "\t";
      for (size_t l = 0; l < row.metadata.labels.size(); ++l) {
        out << (l ? "|" : "") << row.metadata.labels[l];
      }
      out << "\t";
      if (row.metadata.year) out << *row.metadata.year;
      out << "\n";
    }
  }
  {
    std::ofstream out = open("ground_truth.json");
    out << data.ground_truth().dump(2) << "\n";
  }
}

InteractionDataset synthetic_dataset(const SynthData& data,
                                     const DatasetConfig& config,
                                     uint64_t split_seed) {
  InteractionDataset ds = build_dataset(data.interactions, config, split_seed);
  ds.attach_metadata(data.metadata);
  return ds;
}

SaeTrainConfig planted_sae_config(uint64_t seed) {
  SaeTrainConfig c;
  c.width = 22;
  c.loss.alpha = 1.0;
  c.loss.beta = 1000.0;
  c.loss.lambda1 = 1.0;
  c.loss.lambda2 = 1.0;
  c.loss.rho = 0.05;
  c.loss.batch_size = 64;
  c.learning_rate = 1e-2;
  c.epochs = 200;
  c.seed = seed;
  return c;
}

}  // namespace recsae

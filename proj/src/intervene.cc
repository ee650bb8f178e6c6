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

#include "recsae/intervene.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "recsae/error.h"

namespace recsae {

using nlohmann::json;

std::string to_string(EditMode mode) {
  switch (mode) {
    case EditMode::kSet: return "set";
    case EditMode::kAdd: return "add";
    case EditMode::kScale: return "scale";
  }
  return "set";
}

EditMode parse_edit_mode(std::string_view name) {
  if (name == "set") return EditMode::kSet;
  if (name == "add") return EditMode::kAdd;
  if (name == "scale") return EditMode::kScale;
  throw ConfigError("unknown edit mode '" + std::string(name) +
                    "' (expected set, add or scale)");
}

json InterventionSpec::to_json(const InteractionDataset& dataset) const {
  const auto& ids = side == Side::kItem ? dataset.item_ids() : dataset.user_ids();
  if (entity >= ids.size()) throw ConfigError("intervention target out of range");
  json edits_j = json::array();
  for (const NeuronEdit& e : edits) {
    edits_j.push_back(
        {{"neuron", e.neuron}, {"mode", to_string(e.mode)}, {"value", e.value}});
  }
  json aud;
  switch (audience.kind) {
    case Audience::Kind::kAll: aud = {{"kind", "all"}}; break;
    case Audience::Kind::kLabel:
      aud = {{"kind", "label"}, {"label", audience.label}};
      break;
    case Audience::Kind::kUsers: {
      json users = json::array();
      for (uint32_t u : audience.users) users.push_back(dataset.user_ids().at(u));
      aud = {{"kind", "users"}, {"users", std::move(users)}};
      break;
    }
  }
  return {{"schema", "intervention/1"},
          {"target",
           {{"side", side == Side::kItem ? "item" : "user"}, {"id", ids[entity]}}},
          {"edits", std::move(edits_j)},
          {"audience", std::move(aud)}};
}

InterventionSpec InterventionSpec::from_json(const json& j,
                                             const InteractionDataset& dataset) {
  try {
    if (j.at("schema") != "intervention/1") {
      throw ConfigError("intervention spec has schema " +
                        j.at("schema").dump() + ", expected \"intervention/1\"");
    }
    InterventionSpec spec;
    const json& target = j.at("target");
    const std::string side = target.at("side");
    if (side != "item" && side != "user") {
      throw ConfigError("target side must be 'item' or 'user'");
    }
    spec.side = side == "item" ? Side::kItem : Side::kUser;
    const std::string id = target.at("id").is_string()
                               ? target.at("id").get<std::string>()
                               : target.at("id").dump();
    const auto index = spec.side == Side::kItem ? dataset.item_index(id)
                                                : dataset.user_index(id);
    if (!index) throw ConfigError("unknown " + side + " id '" + id + "'");
    spec.entity = *index;
    for (const json& e : j.value("edits", json::array())) {
      NeuronEdit edit;
      edit.neuron = e.at("neuron").get<size_t>();
      edit.mode = parse_edit_mode(e.at("mode").get<std::string>());
      edit.value = e.at("value").get<double>();
      if (edit.mode == EditMode::kScale && edit.value < 0.0) {
        throw ConfigError("scale edits need a non-negative value");
      }
      spec.edits.push_back(edit);
    }
    if (j.contains("audience")) {
      const json& a = j.at("audience");
      const std::string kind = a.at("kind");
      if (kind == "all") {
        spec.audience.kind = Audience::Kind::kAll;
      } else if (kind == "label") {
        spec.audience.kind = Audience::Kind::kLabel;
        spec.audience.label = a.at("label");
        if (spec.audience.label.empty()) throw ConfigError("empty audience label");
      } else if (kind == "users") {
        spec.audience.kind = Audience::Kind::kUsers;
        for (const json& u : a.at("users")) {
          const std::string uid = u.is_string() ? u.get<std::string>() : u.dump();
          const auto ui = dataset.user_index(uid);
          if (!ui) throw ConfigError("unknown audience user '" + uid + "'");
          spec.audience.users.push_back(*ui);
        }
      } else {
        throw ConfigError("audience kind must be all, label or users");
      }
    }
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed intervention spec: ") + e.what());
  }
}

void apply_edits(std::span<double> z, std::span<const NeuronEdit> edits,
                 std::vector<std::string>* warnings) {
  for (const NeuronEdit& e : edits) {
    if (e.neuron >= z.size()) {
      throw ConfigError("edit targets neuron " + std::to_string(e.neuron) +
                        " but the code has " + std::to_string(z.size()));
    }
    if (!std::isfinite(e.value)) throw ConfigError("edit value must be finite");
    double& v = z[e.neuron];
    switch (e.mode) {
      case EditMode::kSet: v = e.value; break;
      case EditMode::kAdd: v += e.value; break;
      case EditMode::kScale:
        if (e.value < 0.0) throw ConfigError("scale edits need a non-negative value");
        v *= e.value;
        break;
    }
    if (v < 0.0) {
      if (warnings) {
        warnings->push_back("neuron " + std::to_string(e.neuron) +
                            " clamped from " + std::to_string(v) + " to 0");
      }
      v = 0.0;
    }
  }
}

Vector apply_intervention(const SaeBundle& bundle,
                          const RecommenderModel& model,
                          const InterventionSpec& spec,
                          std::vector<std::string>* warnings) {
  const bool item_side = spec.side == Side::kItem;
  const Matrix& table = item_side ? model.item_embeddings : model.user_embeddings;
  const SaeModel& sae = bundle.for_side(item_side);
  if (sae.dim() != table.cols()) {
    throw ConfigError("autoencoder and recommender dims differ");
  }
  if (spec.entity >= table.rows()) {
    throw ConfigError("intervention target " + std::to_string(spec.entity) +
                      " out of range");
  }
  Vector z = encode(sae, table.row(spec.entity));
  apply_edits(z, spec.edits, warnings);
  return decode(sae, z);
}

size_t rank_of_item(std::span<const double> scores, uint32_t item,
                    std::span<const uint32_t> excluded) {
  if (item >= scores.size()) throw ConfigError("item index out of range");
  size_t ahead = 0;
  for (uint32_t j = 0; j < scores.size(); ++j) {
    if (j == item || std::binary_search(excluded.begin(), excluded.end(), j)) {
      continue;
    }
    if (scores[j] > scores[item] || (scores[j] == scores[item] && j < item)) {
      ++ahead;
    }
  }
  return ahead + 1;
}

namespace {

// Scores of every item for one user vector, with `item` overridden.
Vector pool_scores(const RecommenderModel& model, std::span<const double> user,
                   const Matrix& items, uint32_t item,
                   std::span<const double> item_vec) {
  Vector scores = score_all(model, user, items);
  scores[item] = score(model, user, item_vec);
  return scores;
}

std::span<const uint32_t> excluded_for(const InteractionDataset& dataset,
                                       uint32_t user, bool exclude_train) {
  return exclude_train ? dataset.items_of(user, Split::kTrain)
                       : std::span<const uint32_t>{};
}

}  // namespace

size_t rank_of_item(const RecommenderModel& model, const SaeBundle& bundle,
                    uint32_t user, uint32_t item,
                    std::span<const double> item_vec, bool reconstructed_pool,
                    std::span<const uint32_t> excluded) {
  if (reconstructed_pool) {
    const Vector u = reconstruct(bundle.user_sae(), model.user_embeddings.row(user));
    const Matrix items = reconstruct_table(bundle.item_sae(), model.item_embeddings);
    return rank_of_item(pool_scores(model, u, items, item, item_vec), item, excluded);
  }
  return rank_of_item(pool_scores(model, model.user_embeddings.row(user),
                                  model.item_embeddings, item, item_vec),
                      item, excluded);
}

std::vector<Segment> label_segments(const InteractionDataset& dataset,
                                    double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("segment threshold must be in (0,1]");
  }
  std::map<std::string, std::vector<uint32_t>> by_label;
  for (const ItemMetadata& md : dataset.metadata()) {
    for (const std::string& l : md.labels) by_label[l];
  }
  for (uint32_t u = 0; u < dataset.n_users(); ++u) {
    const auto items = dataset.items_of(u, Split::kTrain);
    if (items.empty()) continue;
    std::map<std::string, size_t> counts;
    for (uint32_t i : items) {
      for (const std::string& l : dataset.metadata()[i].labels) ++counts[l];
    }
    for (const auto& [label, c] : counts) {
      if (static_cast<double>(c) >= threshold * items.size()) {
        by_label[label].push_back(u);
      }
    }
  }
  std::vector<Segment> out;
  for (auto& [label, users] : by_label) out.push_back({label, std::move(users)});
  return out;
}

std::vector<uint32_t> resolve_audience(const Audience& audience,
                                       const InteractionDataset& dataset,
                                       double threshold) {
  switch (audience.kind) {
    case Audience::Kind::kAll: return dataset.users_with_train();
    case Audience::Kind::kUsers: {
      for (uint32_t u : audience.users) {
        if (u >= dataset.n_users()) throw ConfigError("audience user out of range");
      }
      return audience.users;
    }
    case Audience::Kind::kLabel:
      for (Segment& s : label_segments(dataset, threshold)) {
        if (s.name == audience.label) return std::move(s.users);
      }
      return {};
  }
  return {};
}

RankTrajectory promotion_sweep(const SaeBundle& bundle,
                               const RecommenderModel& model,
                               const InteractionDataset& dataset,
                               uint32_t item, size_t neuron,
                               const std::vector<double>& values,
                               const std::vector<Segment>& segments,
                               const PromotionOptions& options) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  for (size_t v = 1; v < values.size(); ++v) {
    if (!(values[v] > values[v - 1])) {
      throw ConfigError("sweep values must be strictly increasing");
    }
  }
  if (options.top_n == 0) throw ConfigError("top-N must be positive");
  if (item >= model.item_embeddings.rows()) {
    throw ConfigError("target item out of range");
  }
  const SaeModel& sae = bundle.item_sae();
  if (neuron >= sae.width()) throw ConfigError("neuron out of range");

  RankTrajectory t;
  t.sweep_values = values;
  t.top_n = options.top_n;
  for (const Segment& s : segments) t.segments.push_back(s.name);
  t.mean_rank.assign(segments.size(), {});
  t.fraction_in_top_n.assign(segments.size(), {});

  const Vector z0 = encode(sae, model.item_embeddings.row(item));
  Matrix rec_items;
  if (options.reconstructed_pool) {
    rec_items = reconstruct_table(sae, model.item_embeddings);
  }
  const Matrix& pool = options.reconstructed_pool ? rec_items : model.item_embeddings;

  // Scores of the untouched pool, cached per user across sweep values.
  std::map<uint32_t, std::pair<Vector, Vector>> cache;
  auto user_state = [&](uint32_t u) -> const std::pair<Vector, Vector>& {
    auto it = cache.find(u);
    if (it != cache.end()) return it->second;
    Vector uvec = options.reconstructed_pool
                      ? reconstruct(bundle.user_sae(), model.user_embeddings.row(u))
                      : Vector(model.user_embeddings.row(u).begin(),
                               model.user_embeddings.row(u).end());
    Vector scores = score_all(model, uvec, pool);
    return cache.emplace(u, std::make_pair(std::move(uvec), std::move(scores)))
        .first->second;
  };

  for (double value : values) {
    Vector z = z0;
    const NeuronEdit edit{neuron, options.mode, value};
    apply_edits(z, std::span<const NeuronEdit>(&edit, 1));
    const Vector item_vec = decode(sae, z);
    for (size_t s = 0; s < segments.size(); ++s) {
      if (segments[s].users.empty()) {
        t.mean_rank[s].push_back(std::nullopt);
        t.fraction_in_top_n[s].push_back(std::nullopt);
        continue;
      }
      double rank_sum = 0.0;
      size_t in_top = 0;
      for (uint32_t u : segments[s].users) {
        if (u >= dataset.n_users()) throw ConfigError("segment user out of range");
        const auto& [uvec, base_scores] = user_state(u);
        Vector scores = base_scores;
        scores[item] = score(model, uvec, item_vec);
        const size_t rank = rank_of_item(
            scores, item, excluded_for(dataset, u, options.exclude_train));
        if (rank <= options.top_n) {
          rank_sum += rank;
          ++in_top;
        } else {
          rank_sum += options.top_n + 1;
        }
      }
      const double n = segments[s].users.size();
      t.mean_rank[s].push_back(rank_sum / n);
      t.fraction_in_top_n[s].push_back(in_top / n);
    }
  }
  return t;
}

std::string trajectory_csv(const RankTrajectory& t) {
  std::ostringstream os;
  os.precision(10);
  os << "sweep_value,segment,mean_rank,fraction_in_topN\n";
  for (size_t v = 0; v < t.sweep_values.size(); ++v) {
    for (size_t s = 0; s < t.segments.size(); ++s) {
      os << t.sweep_values[v] << "," << t.segments[s] << ",";
      if (t.mean_rank[s][v]) os << *t.mean_rank[s][v];
      os << ",";
      if (t.fraction_in_top_n[s][v]) os << *t.fraction_in_top_n[s][v];
      os << "\n";
    }
  }
  return os.str();
}

SuppressionReport suppress_for_cohort(const SaeBundle& bundle,
                                      const RecommenderModel& model,
                                      const InteractionDataset& dataset,
                                      const std::vector<uint32_t>& cohort,
                                      const std::vector<size_t>& neurons,
                                      std::string_view label,
                                      const SuppressionOptions& options) {
  if (!(options.scale >= 0.0 && options.scale <= 1.0)) {
    throw ConfigError("suppression scale must be in [0,1]");
  }
  if (options.top_n == 0) throw ConfigError("top-N must be positive");
  const SaeModel& sae = bundle.user_sae();
  std::vector<NeuronEdit> edits;
  for (size_t j : neurons) edits.push_back({j, EditMode::kScale, options.scale});

  Matrix rec_items;
  if (options.reconstructed_pool) {
    rec_items = reconstruct_table(bundle.item_sae(), model.item_embeddings);
  }
  const Matrix& pool = options.reconstructed_pool ? rec_items : model.item_embeddings;
  const auto& md = dataset.metadata();
  auto count_label = [&](const std::vector<uint32_t>& list) {
    size_t c = 0;
    for (uint32_t i : list) c += i < md.size() && md[i].has_label(label);
    return c;
  };

  SuppressionReport r;
  for (uint32_t u : cohort) {
    if (u >= dataset.n_users()) throw ConfigError("cohort user out of range");
    const auto excluded = excluded_for(dataset, u, options.exclude_train);
    Vector z = encode(sae, model.user_embeddings.row(u));
    const Vector before_vec = decode(sae, z);
    apply_edits(z, edits);
    const Vector after_vec = decode(sae, z);
    const size_t before =
        count_label(rank_items(score_all(model, before_vec, pool), options.top_n, excluded));
    const size_t after =
        count_label(rank_items(score_all(model, after_vec, pool), options.top_n, excluded));
    r.users.push_back(u);
    r.before.push_back(before);
    r.after.push_back(after);
    r.total_before += before;
    r.total_after += after;
  }
  r.reduction = r.total_before
                    ? 1.0 - static_cast<double>(r.total_after) / r.total_before
                    : 0.0;
  return r;
}

}  // namespace recsae

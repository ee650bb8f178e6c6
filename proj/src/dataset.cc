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

#include "recsae/dataset.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "recsae/error.h"
#include "recsae/hash.h"

namespace recsae {
namespace {

constexpr double kMaxMalformedFraction = 0.01;

std::vector<std::string_view> split_on(std::string_view line,
                                       std::string_view sep) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

void warn(LoadStats* stats, std::string message) {
  if (stats) {
    stats->warnings.push_back(std::move(message));
  } else {
    std::clog << "warning: " << message << "\n";
  }
}

// Applies the malformed-line budget shared by all loaders.
void check_malformed(const std::filesystem::path& path, size_t lines,
                     size_t malformed, size_t first_bad, LoadStats* stats) {
  if (stats) {
    stats->lines = lines;
    stats->malformed = malformed;
  }
  if (lines == 0) {
    warn(stats, path.string() + " contains no interactions");
    return;
  }
  if (static_cast<double>(malformed) >
      kMaxMalformedFraction * static_cast<double>(lines)) {
    throw DataError(path.string() + ": " + std::to_string(malformed) + " of " +
                    std::to_string(lines) +
                    " lines malformed; first at line " +
                    std::to_string(first_bad));
  }
  if (malformed > 0) {
    warn(stats, path.string() + ": skipped " + std::to_string(malformed) +
                    " malformed lines");
  }
}

}  // namespace

std::vector<RawInteraction> load_movielens(const std::filesystem::path& path,
                                           LoadStats* stats) {
  std::ifstream in = open_or_throw(path);
  std::vector<RawInteraction> out;
  std::string line;
  size_t line_no = 0, lines = 0, malformed = 0, first_bad = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (view.empty()) continue;
    ++lines;
    const auto fields = split_on(view, "::");
    RawInteraction r;
    bool ok = (fields.size() == 3 || fields.size() == 4) &&
              !fields[0].empty() && !fields[1].empty() &&
              parse_number(fields[2], r.value) && r.value >= 0.0;
    if (ok && fields.size() == 4) {
      int64_t ts = 0;
      ok = parse_number(fields[3], ts);
      r.timestamp = ts;
    }
    if (!ok) {
      if (malformed++ == 0) first_bad = line_no;
      continue;
    }
    r.user_id = fields[0];
    r.item_id = fields[1];
    out.push_back(std::move(r));
  }
  check_malformed(path, lines, malformed, first_bad, stats);
  return out;
}

std::vector<RawInteraction> load_lastfm(const std::filesystem::path& path,
                                        LastfmColumns columns,
                                        LoadStats* stats) {
  std::ifstream in = open_or_throw(path);
  const size_t needed =
      std::max({columns.user, columns.artist, columns.track}) + 1;
  std::vector<RawInteraction> out;
  std::map<std::pair<std::string, std::string>, size_t> slot;
  std::string line;
  size_t line_no = 0, lines = 0, malformed = 0, first_bad = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (view.empty()) continue;
    ++lines;
    const auto fields = split_on(view, "\t");
    if (fields.size() < needed || fields[columns.user].empty() ||
        fields[columns.artist].empty()) {
      if (malformed++ == 0) first_bad = line_no;
      continue;
    }
    auto key = std::make_pair(std::string(fields[columns.user]),
                              std::string(fields[columns.artist]));
    auto [it, inserted] = slot.try_emplace(key, out.size());
    if (inserted) {
      out.push_back({key.first, key.second, 0.0, std::nullopt});
    }
    out[it->second].value += 1.0;
  }
  check_malformed(path, lines, malformed, first_bad, stats);
  return out;
}

bool ItemMetadata::has_label(std::string_view label) const {
  return std::binary_search(labels.begin(), labels.end(), label);
}

std::vector<MetadataRow> load_metadata(const std::filesystem::path& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<MetadataRow> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (view.empty()) continue;
    const auto fields = split_on(view, "\t");
    if (fields.size() < 2 || fields[0].empty()) {
      throw DataError(path.string() + ": malformed metadata at line " +
                      std::to_string(line_no));
    }
    MetadataRow row;
    row.item_id = fields[0];
    row.metadata.title = fields[1];
    row.metadata.known = true;
    if (fields.size() >= 3 && !fields[2].empty()) {
      std::set<std::string> labels;
      for (auto label : split_on(fields[2], "|")) {
        if (!label.empty()) labels.emplace(label);
      }
      row.metadata.labels.assign(labels.begin(), labels.end());
    }
    if (fields.size() >= 4 && !fields[3].empty()) {
      int year;
      if (!parse_number(fields[3], year)) {
        throw DataError(path.string() + ": bad year at line " +
                        std::to_string(line_no));
      }
      row.metadata.year = year;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

InteractionDataset::InteractionDataset(std::vector<std::string> user_ids,
                                       std::vector<std::string> item_ids,
                                       std::vector<Positive> positives,
                                       std::vector<ItemMetadata> metadata)
    : user_ids_(std::move(user_ids)),
      item_ids_(std::move(item_ids)),
      positives_(std::move(positives)),
      metadata_(std::move(metadata)) {
  if (metadata_.empty()) metadata_.resize(item_ids_.size());
  if (metadata_.size() != item_ids_.size()) {
    throw DataError("metadata size does not match item count");
  }
  index();
}

void InteractionDataset::index() {
  std::sort(positives_.begin(), positives_.end(),
            [](const Positive& a, const Positive& b) {
              return std::tie(a.user, a.item) < std::tie(b.user, b.item);
            });
  for (size_t k = 0; k < positives_.size(); ++k) {
    const Positive& p = positives_[k];
    if (p.user >= n_users() || p.item >= n_items()) {
      throw DataError("positive (" + std::to_string(p.user) + ", " +
                      std::to_string(p.item) + ") out of range");
    }
    if (k > 0 && positives_[k - 1].user == p.user &&
        positives_[k - 1].item == p.item) {
      throw DataError("duplicate positive (" + std::to_string(p.user) + ", " +
                      std::to_string(p.item) + ")");
    }
  }
  popularity_.assign(n_items(), 0);
  for (auto& table : per_split_) table.assign(n_users(), {});
  for (const Positive& p : positives_) {
    ++popularity_[p.item];
    per_split_[static_cast<int>(p.split)][p.user].push_back(p.item);
  }
  user_lookup_.clear();
  item_lookup_.clear();
  for (uint32_t u = 0; u < n_users(); ++u) {
    if (!user_lookup_.emplace(user_ids_[u], u).second) {
      throw DataError("duplicate user id " + user_ids_[u]);
    }
  }
  for (uint32_t i = 0; i < n_items(); ++i) {
    if (!item_lookup_.emplace(item_ids_[i], i).second) {
      throw DataError("duplicate item id " + item_ids_[i]);
    }
  }
}

std::span<const uint32_t> InteractionDataset::items_of(uint32_t user,
                                                       Split split) const {
  return per_split_[static_cast<int>(split)].at(user);
}

bool InteractionDataset::is_train_positive(uint32_t user, uint32_t item) const {
  const auto items = items_of(user, Split::kTrain);
  return std::binary_search(items.begin(), items.end(), item);
}

std::vector<Positive> InteractionDataset::split_positives(Split split) const {
  std::vector<Positive> out;
  for (const Positive& p : positives_) {
    if (p.split == split) out.push_back(p);
  }
  return out;
}

size_t InteractionDataset::split_size(Split split) const {
  return static_cast<size_t>(
      std::count_if(positives_.begin(), positives_.end(),
                    [split](const Positive& p) { return p.split == split; }));
}

std::vector<uint32_t> InteractionDataset::users_with_train() const {
  std::vector<uint32_t> out;
  for (uint32_t u = 0; u < n_users(); ++u) {
    if (!items_of(u, Split::kTrain).empty()) out.push_back(u);
  }
  return out;
}

std::optional<uint32_t> InteractionDataset::user_index(
    std::string_view id) const {
  auto it = user_lookup_.find(std::string(id));
  if (it == user_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<uint32_t> InteractionDataset::item_index(
    std::string_view id) const {
  auto it = item_lookup_.find(std::string(id));
  if (it == item_lookup_.end()) return std::nullopt;
  return it->second;
}

void InteractionDataset::attach_metadata(const std::vector<MetadataRow>& rows) {
  for (const MetadataRow& row : rows) {
    if (auto idx = item_index(row.item_id)) metadata_[*idx] = row.metadata;
  }
}

std::string InteractionDataset::fingerprint() const {
  Fnv1a h;
  h.update(to_json().dump());
  return h.hex();
}

nlohmann::json InteractionDataset::to_json() const {
  nlohmann::json items = nlohmann::json::array();
  for (size_t i = 0; i < n_items(); ++i) {
    const ItemMetadata& m = metadata_[i];
    nlohmann::json item = {{"id", item_ids_[i]}};
    if (m.known) {
      item["title"] = m.title;
      item["labels"] = m.labels;
      item["year"] = m.year ? nlohmann::json(*m.year) : nlohmann::json();
    }
    items.push_back(std::move(item));
  }
  nlohmann::json positives = nlohmann::json::array();
  for (const Positive& p : positives_) {
    positives.push_back({p.user, p.item, static_cast<int>(p.split)});
  }
  return {{"schema", "dataset/1"},
          {"provenance", provenance_},
          {"users", user_ids_},
          {"items", std::move(items)},
          {"positives", std::move(positives)}};
}

InteractionDataset InteractionDataset::from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "dataset/1") {
    throw DataError("expected schema dataset/1");
  }
  std::vector<std::string> users = j.at("users").get<std::vector<std::string>>();
  std::vector<std::string> items;
  std::vector<ItemMetadata> metadata;
  for (const auto& item : j.at("items")) {
    items.push_back(item.at("id").get<std::string>());
    ItemMetadata m;
    if (item.contains("title")) {
      m.known = true;
      m.title = item.at("title").get<std::string>();
      m.labels = item.at("labels").get<std::vector<std::string>>();
      if (!item.at("year").is_null()) m.year = item.at("year").get<int>();
    }
    metadata.push_back(std::move(m));
  }
  std::vector<Positive> positives;
  for (const auto& p : j.at("positives")) {
    const int split = p.at(2).get<int>();
    if (split < 0 || split > 2) throw DataError("bad split code");
    positives.push_back({p.at(0).get<uint32_t>(), p.at(1).get<uint32_t>(),
                         static_cast<Split>(split)});
  }
  InteractionDataset ds(std::move(users), std::move(items),
                        std::move(positives), std::move(metadata));
  ds.set_provenance(j.value("provenance", nlohmann::json::object()));
  return ds;
}

InteractionDataset build_dataset(const std::vector<RawInteraction>& raw,
                                 const DatasetConfig& config, uint64_t seed) {
  if (raw.empty()) throw DataError("no interactions to build a dataset from");
  if (config.min_user_positives <= config.test_per_user) {
    throw ConfigError("min_user_positives must exceed test_per_user");
  }
  if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in [0, 1)");
  }

  std::vector<std::string> users, items;
  std::unordered_map<std::string, uint32_t> user_map, item_map;
  std::set<std::pair<uint32_t, uint32_t>> seen;
  for (const RawInteraction& r : raw) {
    if (r.user_id.empty() || r.item_id.empty()) {
      throw DataError("interaction with empty id");
    }
    if (r.value < 0.0) throw DataError("negative interaction value");
    auto [uit, unew] = user_map.try_emplace(r.user_id, users.size());
    if (unew) users.push_back(r.user_id);
    auto [iit, inew] = item_map.try_emplace(r.item_id, items.size());
    if (inew) items.push_back(r.item_id);
    seen.emplace(uit->second, iit->second);
  }

  std::vector<std::vector<uint32_t>> by_user(users.size());
  for (const auto& [u, i] : seen) by_user[u].push_back(i);

  Rng rng(seed);
  std::vector<Positive> positives;
  positives.reserve(seen.size());
  bool any_eligible = false;
  for (uint32_t u = 0; u < by_user.size(); ++u) {
    std::vector<uint32_t> order = by_user[u];
    size_t n_test = 0;
    if (order.size() >= config.min_user_positives) {
      rng.shuffle(std::span<uint32_t>(order));
      n_test = config.test_per_user;
      any_eligible = true;
    }
    for (size_t k = 0; k < order.size(); ++k) {
      positives.push_back(
          {u, order[k], k < n_test ? Split::kTest : Split::kTrain});
    }
  }
  if (!any_eligible) {
    throw ConfigError("no user has at least " +
                      std::to_string(config.min_user_positives) +
                      " positives");
  }

  // Validation carve-out over all remaining training positives; a user
  // never loses their last training positive.
  std::vector<size_t> train_slots;
  std::vector<size_t> train_count(users.size(), 0);
  for (size_t k = 0; k < positives.size(); ++k) {
    if (positives[k].split == Split::kTrain) {
      train_slots.push_back(k);
      ++train_count[positives[k].user];
    }
  }
  std::sort(train_slots.begin(), train_slots.end(), [&](size_t a, size_t b) {
    return std::tie(positives[a].user, positives[a].item) <
           std::tie(positives[b].user, positives[b].item);
  });
  rng.shuffle(std::span<size_t>(train_slots));
  const auto n_val = static_cast<size_t>(
      std::llround(config.val_fraction * static_cast<double>(train_slots.size())));
  size_t taken = 0;
  for (size_t slot : train_slots) {
    if (taken == n_val) break;
    Positive& p = positives[slot];
    if (train_count[p.user] <= 1) continue;
    p.split = Split::kVal;
    --train_count[p.user];
    ++taken;
  }

  InteractionDataset ds(std::move(users), std::move(items),
                        std::move(positives), {});
  ds.set_provenance({{"seed", seed},
                     {"min_user_positives", config.min_user_positives},
                     {"test_per_user", config.test_per_user},
                     {"val_fraction", config.val_fraction}});
  return ds;
}

NegativeSampler::NegativeSampler(const InteractionDataset& dataset,
                                 uint64_t seed)
    : dataset_(&dataset), rng_(seed) {
  const auto& pop = dataset.item_popularity();
  double total = 0.0;
  for (uint64_t c : pop) total += static_cast<double>(c);
  weights_.resize(pop.size());
  cumulative_.resize(pop.size());
  double running = 0.0;
  for (size_t i = 0; i < pop.size(); ++i) {
    weights_[i] = total > 0.0 ? static_cast<double>(pop[i]) / total : 0.0;
    running += weights_[i];
    cumulative_[i] = running;
  }
}

size_t NegativeSampler::eligible_count(uint32_t user) const {
  return dataset_->n_items() - dataset_->items_of(user, Split::kTrain).size();
}

uint32_t NegativeSampler::draw_restricted(
    std::span<const uint32_t> excluded) {
  // Exact draw from the popularity distribution renormalized over eligible
  // items; uniform over them when they all have zero popularity.
  std::vector<uint32_t> eligible;
  std::vector<double> cum;
  double running = 0.0;
  for (uint32_t i = 0; i < weights_.size(); ++i) {
    if (std::binary_search(excluded.begin(), excluded.end(), i)) continue;
    eligible.push_back(i);
    running += weights_[i];
    cum.push_back(running);
  }
  if (running <= 0.0) {
    return eligible[rng_.uniform_index(eligible.size())];
  }
  const double target = rng_.uniform() * running;
  auto it = std::upper_bound(cum.begin(), cum.end(), target);
  size_t k = static_cast<size_t>(it - cum.begin());
  if (k >= eligible.size()) k = eligible.size() - 1;
  // Skip zero-weight items that share a cumulative value.
  while (weights_[eligible[k]] == 0.0 && k + 1 < eligible.size()) ++k;
  return eligible[k];
}

std::vector<uint32_t> NegativeSampler::sample(uint32_t user, size_t k) {
  const auto excluded = dataset_->items_of(user, Split::kTrain);
  const size_t eligible = eligible_count(user);
  if (k > eligible) {
    throw ConfigError("requested " + std::to_string(k) +
                      " negatives but user " + std::to_string(user) +
                      " has only " + std::to_string(eligible) +
                      " eligible items");
  }
  std::vector<uint32_t> out;
  out.reserve(k);
  const double total = cumulative_.empty() ? 0.0 : cumulative_.back();
  constexpr int kMaxRejections = 32;
  for (size_t n = 0; n < k; ++n) {
    bool drawn = false;
    // Rejection against the global distribution yields the same
    // conditional law as the restricted draw, and is cheap when the user
    // has few positives.
    for (int attempt = 0; attempt < kMaxRejections && total > 0.0;
         ++attempt) {
      const double target = rng_.uniform() * total;
      auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(),
                                 target);
      auto item = static_cast<uint32_t>(
          std::min<size_t>(it - cumulative_.begin(), weights_.size() - 1));
      if (weights_[item] == 0.0) continue;
      if (!std::binary_search(excluded.begin(), excluded.end(), item)) {
        out.push_back(item);
        drawn = true;
        break;
      }
    }
    if (!drawn) out.push_back(draw_restricted(excluded));
  }
  return out;
}

}  // namespace recsae

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

#include "recsae/analysis.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "recsae/error.h"

namespace recsae {

using nlohmann::json;

Matrix neuron_activations(const SaeBundle& bundle,
                          const RecommenderModel& model, Side side) {
  const bool item_side = side == Side::kItem;
  const SaeModel& sae = bundle.for_side(item_side);
  const Matrix& table =
      item_side ? model.item_embeddings : model.user_embeddings;
  if (sae.dim() != table.cols()) {
    throw ConfigError("autoencoder input dim " + std::to_string(sae.dim()) +
                      " does not match embedding dim " +
                      std::to_string(table.cols()));
  }
  Matrix out(table.rows(), sae.width());
  Vector pre(sae.width());
  for (size_t r = 0; r < table.rows(); ++r) {
    encode_into(sae, table.row(r), pre, out.row(r));
  }
  return out;
}

std::vector<ScoredItem> top_activating(const Matrix& activations,
                                       size_t neuron, size_t k) {
  if (neuron >= activations.cols()) {
    throw ConfigError("neuron " + std::to_string(neuron) + " out of range");
  }
  std::vector<uint32_t> order(activations.rows());
  std::iota(order.begin(), order.end(), 0u);
  k = std::min(k, order.size());
  auto before = [&](uint32_t a, uint32_t b) {
    const double va = activations(a, neuron);
    const double vb = activations(b, neuron);
    return va != vb ? va > vb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), before);
  std::vector<ScoredItem> out;
  out.reserve(k);
  for (size_t i = 0; i < k; ++i) {
    out.push_back({order[i], activations(order[i], neuron)});
  }
  return out;
}

PurityResult semantic_purity(std::span<const ScoredItem> top_items,
                             std::string_view label,
                             const std::vector<ItemMetadata>& metadata) {
  PurityResult r;
  if (top_items.empty()) return r;
  for (const ScoredItem& s : top_items) {
    if (s.item >= metadata.size() || !metadata[s.item].known) {
      ++r.missing_metadata;
      continue;
    }
    if (metadata[s.item].has_label(label)) ++r.matched;
  }
  r.purity = static_cast<double>(r.matched) / top_items.size();
  return r;
}

Vector popularity_top_distance(std::span<const uint64_t> popularity) {
  const size_t n = popularity.size();
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return popularity[a] > popularity[b];
  });
  Vector out(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && popularity[order[j]] == popularity[order[i]]) ++j;
    // Ranks i+1..j share their mean.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t t = i; t < j; ++t) out[order[t]] = (rank - 0.5) / n;
    i = j;
  }
  return out;
}

double popularity_percentile(std::span<const ScoredItem> top_items,
                             std::span<const uint64_t> popularity, size_t k) {
  k = std::min(k, top_items.size());
  if (k == 0) throw ConfigError("popularity percentile needs K >= 1 items");
  const Vector dist = popularity_top_distance(popularity);
  double sum = 0.0;
  for (size_t i = 0; i < k; ++i) {
    if (top_items[i].item >= dist.size()) {
      throw ConfigError("item index out of range for popularity table");
    }
    sum += dist[top_items[i].item];
  }
  return sum / k;
}

MonosemanticityResult monosemanticity_score(const Matrix& item_activations,
                                            const Matrix& item_embeddings,
                                            size_t top_t) {
  if (item_activations.rows() != item_embeddings.rows()) {
    throw ConfigError("activation and embedding row counts differ");
  }
  MonosemanticityResult r;
  r.per_neuron.resize(item_activations.cols());
  Vector norms(item_embeddings.rows());
  for (size_t i = 0; i < norms.size(); ++i) {
    norms[i] = std::sqrt(squared_norm(item_embeddings.row(i)));
  }
  double sum = 0.0;
  size_t scored = 0;
  for (size_t j = 0; j < item_activations.cols(); ++j) {
    std::vector<ScoredItem> top = top_activating(item_activations, j, top_t);
    std::erase_if(top, [](const ScoredItem& s) { return !(s.activation > 0.0); });
    if (top.size() < 2) {
      r.skipped.push_back(j);
      continue;
    }
    double total = 0.0;
    for (const ScoredItem& s : top) total += s.activation;
    double num = 0.0;
    double den = 0.0;
    for (size_t a = 0; a < top.size(); ++a) {
      const double wa = top[a].activation / total;
      for (size_t b = a + 1; b < top.size(); ++b) {
        const double wb = top[b].activation / total;
        const double na = norms[top[a].item];
        const double nb = norms[top[b].item];
        const double cos =
            na > 0.0 && nb > 0.0
                ? dot(item_embeddings.row(top[a].item),
                      item_embeddings.row(top[b].item)) / (na * nb)
                : 0.0;
        num += wa * wb * cos;
        den += wa * wb;
      }
    }
    r.per_neuron[j] = num / den;
    sum += num / den;
    ++scored;
  }
  r.aggregate = scored ? sum / scored
                       : std::numeric_limits<double>::quiet_NaN();
  return r;
}

MonosemanticityResult monosemanticity_score(const SaeBundle& bundle,
                                            const RecommenderModel& model,
                                            size_t top_t) {
  return monosemanticity_score(neuron_activations(bundle, model, Side::kItem),
                               model.item_embeddings, top_t);
}

namespace {

void check_metadata(const Matrix& activations,
                    const std::vector<ItemMetadata>& metadata) {
  if (metadata.size() != activations.rows()) {
    throw ConfigError("metadata covers " + std::to_string(metadata.size()) +
                      " items, activations " +
                      std::to_string(activations.rows()));
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

LabelProfile label_activation_profile(const Matrix& item_activations,
                                      const std::vector<ItemMetadata>& metadata,
                                      std::string_view label) {
  if (label.empty()) throw ConfigError("empty label");
  check_metadata(item_activations, metadata);
  const size_t m = item_activations.cols();
  LabelProfile p;
  p.label = std::string(label);
  p.mean_activation.assign(m, 0.0);
  p.baseline.assign(m, 0.0);
  for (size_t i = 0; i < item_activations.rows(); ++i) {
    const auto row = item_activations.row(i);
    axpy(1.0, row, p.baseline);
    if (metadata[i].has_label(label)) {
      axpy(1.0, row, p.mean_activation);
      ++p.items;
    }
  }
  if (p.items == 0) {
    throw ConfigError("no item carries label '" + p.label + "'");
  }
  for (double& v : p.mean_activation) v /= p.items;
  for (double& v : p.baseline) v /= item_activations.rows();
  return p;
}

NeuronProfile neuron_label_profile(const Matrix& item_activations,
                                   const std::vector<ItemMetadata>& metadata,
                                   size_t neuron) {
  check_metadata(item_activations, metadata);
  if (neuron >= item_activations.cols()) {
    throw ConfigError("neuron " + std::to_string(neuron) + " out of range");
  }
  std::map<std::string, std::pair<double, size_t>> acc;
  for (size_t i = 0; i < metadata.size(); ++i) {
    for (const std::string& l : metadata[i].labels) {
      auto& [sum, count] = acc[l];
      sum += item_activations(i, neuron);
      ++count;
    }
  }
  NeuronProfile p;
  p.neuron = neuron;
  for (const auto& [label, sc] : acc) {
    p.labels.push_back(label);
    p.mean_activation.push_back(sc.first / sc.second);
    p.items.push_back(sc.second);
  }
  return p;
}

DecadeHistogram temporal_profile(const Matrix& item_activations,
                                 const std::vector<ItemMetadata>& metadata,
                                 size_t neuron, size_t k, int bucket_years) {
  check_metadata(item_activations, metadata);
  if (bucket_years <= 0) throw ConfigError("bucket width must be positive");
  DecadeHistogram h;
  for (const ScoredItem& s : top_activating(item_activations, neuron, k)) {
    const auto& year = metadata[s.item].year;
    if (!year) {
      ++h.missing_year;
      continue;
    }
    const int y = *year;
    const int start = y - ((y % bucket_years) + bucket_years) % bucket_years;
    ++h.counts[start];
  }
  return h;
}

std::string label_profile_csv(const LabelProfile& profile) {
  std::string out = "label,neuron,mean_activation,baseline\n";
  for (size_t j = 0; j < profile.mean_activation.size(); ++j) {
    out += csv_field(profile.label) + "," + std::to_string(j) + "," +
           format_double(profile.mean_activation[j]) + "," +
           format_double(profile.baseline[j]) + "\n";
  }
  return out;
}

std::string neuron_profile_csv(const NeuronProfile& profile) {
  std::string out = "neuron,label,items,mean_activation\n";
  for (size_t l = 0; l < profile.labels.size(); ++l) {
    out += std::to_string(profile.neuron) + "," + csv_field(profile.labels[l]) +
           "," + std::to_string(profile.items[l]) + "," +
           format_double(profile.mean_activation[l]) + "\n";
  }
  return out;
}

std::string decade_histogram_csv(size_t neuron, const DecadeHistogram& hist) {
  std::string out = "neuron,decade,count\n";
  for (const auto& [decade, count] : hist.counts) {
    out += std::to_string(neuron) + "," + std::to_string(decade) + "," +
           std::to_string(count) + "\n";
  }
  out += std::to_string(neuron) + ",missing," +
         std::to_string(hist.missing_year) + "\n";
  return out;
}

std::vector<NeuronReport> neuron_reports(
    const Matrix& item_activations, const InteractionDataset& dataset,
    const MonosemanticityResult& mono,
    const std::map<size_t, std::string>& labels, const std::vector<size_t>& ks,
    size_t k_max) {
  for (const auto& [neuron, label] : labels) {
    if (neuron >= item_activations.cols()) {
      throw ConfigError("label file names neuron " + std::to_string(neuron) +
                        " but the autoencoder has " +
                        std::to_string(item_activations.cols()));
    }
  }
  const Vector dist = popularity_top_distance(dataset.item_popularity());
  std::vector<NeuronReport> out;
  for (size_t j = 0; j < item_activations.cols(); ++j) {
    NeuronReport r;
    r.neuron = j;
    r.top_items = top_activating(item_activations, j,
                                 std::max(k_max, *std::max_element(
                                                     ks.begin(), ks.end())));
    if (j < mono.per_neuron.size()) r.monosemanticity = mono.per_neuron[j];
    if (auto it = labels.find(j); it != labels.end()) r.label = it->second;
    for (size_t k : ks) {
      const size_t kk = std::min(k, r.top_items.size());
      if (kk == 0) continue;
      const std::span<const ScoredItem> head(r.top_items.data(), kk);
      double sum = 0.0;
      for (const ScoredItem& s : head) sum += dist[s.item];
      r.popularity_percentile_at[k] = sum / kk;
      if (r.label) {
        r.purity_at[k] = semantic_purity(head, *r.label, dataset.metadata()).purity;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

json export_neurons(const std::vector<NeuronReport>& reports,
                    const InteractionDataset& dataset) {
  json neurons = json::array();
  for (const NeuronReport& r : reports) {
    json items = json::array();
    for (const ScoredItem& s : r.top_items) {
      const ItemMetadata& md = dataset.metadata()[s.item];
      items.push_back({{"item_id", dataset.item_ids()[s.item]},
                       {"title", md.title},
                       {"labels", md.labels},
                       {"activation", s.activation}});
    }
    json entry = {{"neuron", r.neuron}, {"top_items", std::move(items)}};
    if (r.label) entry["label"] = *r.label;
    if (!r.purity_at.empty()) {
      json p = json::object();
      for (const auto& [k, v] : r.purity_at) p[std::to_string(k)] = v;
      entry["purity_at"] = std::move(p);
    }
    json pp = json::object();
    for (const auto& [k, v] : r.popularity_percentile_at) {
      pp[std::to_string(k)] = v;
    }
    entry["popularity_percentile_at"] = std::move(pp);
    entry["monosemanticity"] =
        r.monosemanticity ? json(*r.monosemanticity) : json(nullptr);
    neurons.push_back(std::move(entry));
  }
  return {{"schema", "neurons/1"}, {"neurons", std::move(neurons)}};
}

std::map<size_t, std::string> load_neuron_labels(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file " + path.string());
  std::map<size_t, std::string> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    size_t neuron = 0;
    bool ok = tab != std::string::npos && tab > 0 && tab + 1 < line.size();
    if (ok) {
      try {
        size_t used = 0;
        neuron = std::stoul(line.substr(0, tab), &used);
        ok = used == tab;
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 'neuron_index<TAB>label'");
    }
    out[neuron] = line.substr(tab + 1);
  }
  return out;
}

std::map<std::string, std::pair<size_t, double>> best_neuron_per_label(
    const Matrix& item_activations, const std::vector<ItemMetadata>& metadata,
    const std::vector<std::string>& labels, size_t k) {
  check_metadata(item_activations, metadata);
  std::vector<std::vector<ScoredItem>> tops;
  for (size_t j = 0; j < item_activations.cols(); ++j) {
    tops.push_back(top_activating(item_activations, j, k));
  }
  std::map<std::string, std::pair<size_t, double>> out;
  for (const std::string& label : labels) {
    std::pair<size_t, double> best{0, -1.0};
    for (size_t j = 0; j < tops.size(); ++j) {
      // Dead neurons have no meaningful top list.
      if (tops[j].empty() || !(tops[j].front().activation > 0.0)) continue;
      const double p = semantic_purity(tops[j], label, metadata).purity;
      if (p > best.second) best = {j, p};
    }
    if (best.second < 0.0) best.second = 0.0;
    out[label] = best;
  }
  return out;
}

std::vector<size_t> label_neurons(const Matrix& item_activations,
                                  const std::vector<ItemMetadata>& metadata,
                                  std::string_view label, size_t k,
                                  double min_purity) {
  check_metadata(item_activations, metadata);
  std::vector<size_t> out;
  for (size_t j = 0; j < item_activations.cols(); ++j) {
    const auto top = top_activating(item_activations, j, k);
    if (top.empty() || !(top.front().activation > 0.0)) continue;
    if (semantic_purity(top, label, metadata).purity >= min_purity) {
      out.push_back(j);
    }
  }
  return out;
}

std::optional<size_t> most_active_neuron(const Matrix& activations,
                                         std::span<const uint32_t> rows,
                                         std::span<const size_t> candidates) {
  if (rows.empty() || candidates.empty()) return std::nullopt;
  std::optional<size_t> best;
  double best_sum = 0.0;
  for (size_t j : candidates) {
    if (j >= activations.cols()) throw ConfigError("neuron out of range");
    double sum = 0.0;
    for (uint32_t r : rows) {
      if (r >= activations.rows()) throw ConfigError("row out of range");
      sum += activations(r, j);
    }
    if (!best || sum > best_sum) {
      best = j;
      best_sum = sum;
    }
  }
  return best;
}

}  // namespace recsae

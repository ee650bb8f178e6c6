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

#include "recsae/fidelity.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "recsae/analysis.h"
#include "recsae/error.h"
#include "recsae/rng.h"

namespace recsae {

namespace {

void check_unique(std::span<const uint32_t> list, const char* name) {
  std::unordered_set<uint32_t> seen;
  for (uint32_t x : list) {
    if (!seen.insert(x).second) {
      throw ConfigError(std::string("duplicate item ") + std::to_string(x) +
                        " in ranked list " + name);
    }
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

// Population standard deviation.
double std_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::vector<uint32_t> reconstructed_top_n(const RecommenderModel& model,
                                          const SaeBundle& bundle,
                                          const InteractionDataset& dataset,
                                          uint32_t user, size_t n,
                                          bool exclude_train) {
  const Vector u = reconstruct(bundle.user_sae(), model.user_embeddings.row(user));
  const Matrix items = reconstruct_table(bundle.item_sae(), model.item_embeddings);
  const Vector scores = score_all(model, u, items);
  return rank_items(scores, n,
                    exclude_train ? dataset.items_of(user, Split::kTrain)
                                  : std::span<const uint32_t>{});
}

double rbo(std::span<const uint32_t> a, std::span<const uint32_t> b, double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("RBO persistence must be in (0,1)");
  check_unique(a, "a");
  check_unique(b, "b");
  const size_t k = std::min(a.size(), b.size());
  if (k == 0) return a.size() == b.size() ? 1.0 : 0.0;
  std::unordered_set<uint32_t> seen_a;
  std::unordered_set<uint32_t> seen_b;
  size_t overlap = 0;
  double sum = 0.0;
  double pd = 1.0;
  for (size_t d = 1; d <= k; ++d) {
    const uint32_t x = a[d - 1];
    const uint32_t y = b[d - 1];
    if (x == y) {
      ++overlap;
    } else {
      if (seen_b.count(x)) ++overlap;
      if (seen_a.count(y)) ++overlap;
    }
    seen_a.insert(x);
    seen_b.insert(y);
    pd *= p;
    sum += static_cast<double>(overlap) / d * pd;
  }
  const double value =
      static_cast<double>(overlap) / k * pd + (1.0 - p) / p * sum;
  return std::clamp(value, 0.0, 1.0);
}

TauResult kendall_tau(std::span<const uint32_t> a, std::span<const uint32_t> b) {
  check_unique(a, "a");
  check_unique(b, "b");
  std::unordered_map<uint32_t, size_t> pos_b;
  for (size_t i = 0; i < b.size(); ++i) pos_b[b[i]] = i;
  // Positions in b of the shared items, in a's order.
  std::vector<size_t> ranks;
  for (uint32_t x : a) {
    if (auto it = pos_b.find(x); it != pos_b.end()) ranks.push_back(it->second);
  }
  TauResult r;
  r.shared = ranks.size();
  if (ranks.size() < 2) return r;
  long long concordant = 0;
  long long discordant = 0;
  for (size_t i = 0; i < ranks.size(); ++i) {
    for (size_t j = i + 1; j < ranks.size(); ++j) {
      (ranks[i] < ranks[j] ? concordant : discordant) += 1;
    }
  }
  const double pairs = 0.5 * ranks.size() * (ranks.size() - 1.0);
  r.tau = static_cast<double>(concordant - discordant) / pairs;
  r.defined = true;
  return r;
}

FidelityResult evaluate_fidelity(const RecommenderModel& model,
                                 const SaeBundle& bundle,
                                 const InteractionDataset& dataset,
                                 const FidelityOptions& options) {
  if (options.depth == 0) throw ConfigError("fidelity depth must be positive");
  if (model.user_embeddings.rows() != dataset.n_users() ||
      model.item_embeddings.rows() != dataset.n_items()) {
    throw ConfigError("model does not match the dataset");
  }
  FidelityResult r;
  r.users = dataset.users_with_train();
  if (options.max_users > 0 && r.users.size() > options.max_users) {
    Rng rng(options.seed);
    rng.shuffle(std::span<uint32_t>(r.users));
    r.users.resize(options.max_users);
    std::sort(r.users.begin(), r.users.end());
  }
  if (r.users.empty()) throw DataError("no users to evaluate");

  const Matrix items = reconstruct_table(bundle.item_sae(), model.item_embeddings);
  std::vector<double> taus;
  for (uint32_t u : r.users) {
    const std::span<const uint32_t> excluded =
        options.exclude_train ? dataset.items_of(u, Split::kTrain)
                              : std::span<const uint32_t>{};
    const Vector orig_scores =
        score_all(model, model.user_embeddings.row(u), model.item_embeddings);
    const Vector rec_user = reconstruct(bundle.user_sae(), model.user_embeddings.row(u));
    const Vector rec_scores = score_all(model, rec_user, items);
    const auto a = rank_items(orig_scores, options.depth, excluded);
    const auto b = rank_items(rec_scores, options.depth, excluded);
    r.rbo.push_back(rbo(a, b, options.persistence));
    const TauResult t = kendall_tau(a, b);
    r.shared.push_back(t.shared);
    if (t.defined) {
      r.tau.push_back(t.tau);
      taus.push_back(t.tau);
    } else {
      r.tau.push_back(std::numeric_limits<double>::quiet_NaN());
      ++r.tau_undefined;
    }
  }
  r.rbo_mean = mean_of(r.rbo);
  r.rbo_std = std_of(r.rbo);
  r.tau_mean = mean_of(taus);
  r.tau_std = std_of(taus);
  return r;
}

double active_neuron_fraction(const SaeBundle& bundle,
                              const RecommenderModel& model) {
  size_t active = 0;
  size_t total = 0;
  for (Side side : {Side::kUser, Side::kItem}) {
    const Matrix z = neuron_activations(bundle, model, side);
    for (double v : z.values()) active += v > 0.0;
    total += z.size();
  }
  return total ? static_cast<double>(active) / total : 0.0;
}

std::vector<SweepRow> beta_sweep(const InteractionDataset& dataset,
                                 const RecommenderModel& model,
                                 const SaeTrainConfig& base,
                                 const std::vector<double>& betas,
                                 const std::vector<uint64_t>& seeds,
                                 const FidelityOptions& options,
                                 size_t monosemanticity_top_t) {
  if (betas.empty() || seeds.empty()) {
    throw ConfigError("sweep needs at least one beta and one seed");
  }
  std::vector<SweepRow> rows;
  for (double beta : betas) {
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    std::vector<SweepRow> per_seed;
    for (uint64_t seed : seeds) {
      SaeTrainConfig cfg = base;
      cfg.loss.beta = beta;
      cfg.seed = seed;
      const std::string where = "beta=" + format_double(beta) +
                                " seed=" + std::to_string(seed) + ": ";
      try {
        const SaeBundle bundle = train_sae(model, dataset, cfg).bundle;
        const FidelityResult f = evaluate_fidelity(model, bundle, dataset, options);
        SweepRow row;
        row.beta = beta;
        row.seed = seed;
        row.rbo_mean = f.rbo_mean;
        row.rbo_std = f.rbo_std;
        row.tau_mean = f.tau_mean;
        row.tau_std = f.tau_std;
        row.monosemanticity =
            monosemanticity_score(bundle, model, monosemanticity_top_t).aggregate;
        row.active_neuron_fraction = active_neuron_fraction(bundle, model);
        per_seed.push_back(row);
      } catch (const Error& e) {
        throw Error(e.kind(), where + e.what());
      }
    }
    rows.insert(rows.end(), per_seed.begin(), per_seed.end());
    if (per_seed.size() > 1) {
      std::vector<double> rbo, tau, mono, active;
      for (const SweepRow& r : per_seed) {
        rbo.push_back(r.rbo_mean);
        tau.push_back(r.tau_mean);
        mono.push_back(r.monosemanticity);
        active.push_back(r.active_neuron_fraction);
      }
      SweepRow agg;
      agg.beta = beta;
      agg.rbo_mean = mean_of(rbo);
      agg.rbo_std = std_of(rbo);
      agg.tau_mean = mean_of(tau);
      agg.tau_std = std_of(tau);
      agg.monosemanticity = mean_of(mono);
      agg.active_neuron_fraction = mean_of(active);
      rows.push_back(agg);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out =
      "beta,seed,rbo_mean,rbo_std,tau_mean,tau_std,monosemanticity,"
      "active_neuron_fraction\n";
  for (const SweepRow& r : rows) {
    out += format_double(r.beta) + "," +
           (r.seed ? std::to_string(*r.seed) : std::string("all")) + "," +
           format_double(r.rbo_mean) + "," + format_double(r.rbo_std) + "," +
           format_double(r.tau_mean) + "," + format_double(r.tau_std) + "," +
           format_double(r.monosemanticity) + "," +
           format_double(r.active_neuron_fraction) + "\n";
  }
  return out;
}

}  // namespace recsae

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

#include "recsae/recommender.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "recsae/activations.h"
#include "recsae/adam.h"
#include "recsae/error.h"
#include "recsae/hash.h"

namespace recsae {
namespace {

void check_dims(const RecommenderModel& model, std::span<const double> u,
                std::span<const double> i) {
  if (u.size() != model.dim || i.size() != model.dim) {
    throw ConfigError("embedding length " + std::to_string(u.size()) + "/" +
                      std::to_string(i.size()) + " does not match model dim " +
                      std::to_string(model.dim));
  }
}

// Activations of every NCF layer; acts[0] is the concatenated input and
// acts.back() holds the scalar logit.
struct MlpTrace {
  std::vector<Vector> pre;
  std::vector<Vector> acts;
};

MlpTrace mlp_forward(const RecommenderModel& model, std::span<const double> u,
                     std::span<const double> i) {
  MlpTrace t;
  Vector input(u.begin(), u.end());
  input.insert(input.end(), i.begin(), i.end());
  t.acts.push_back(std::move(input));
  for (size_t l = 0; l < model.scorer.size(); ++l) {
    const DenseLayer& layer = model.scorer[l];
    Vector pre(layer.weight.rows());
    matvec(layer.weight, t.acts.back(), pre);
    for (size_t k = 0; k < pre.size(); ++k) pre[k] += layer.bias[k];
    Vector act = pre;
    const bool hidden = l + 1 < model.scorer.size();
    if (hidden) {
      for (double& a : act) a = relu(a);
    }
    t.pre.push_back(std::move(pre));
    t.acts.push_back(std::move(act));
  }
  return t;
}

// Backpropagates d(loss)/d(logit). Accumulates parameter gradients into
// `layer_grads` when non-null; returns d(loss)/d(input).
Vector mlp_backward(const RecommenderModel& model, const MlpTrace& t,
                    double d_logit, std::vector<DenseLayer>* layer_grads) {
  Vector delta = {d_logit};
  for (size_t l = model.scorer.size(); l-- > 0;) {
    const DenseLayer& layer = model.scorer[l];
    const bool hidden = l + 1 < model.scorer.size();
    if (hidden) {
      for (size_t k = 0; k < delta.size(); ++k) {
        delta[k] *= relu_grad(t.pre[l][k]);
      }
    }
    if (layer_grads) {
      DenseLayer& g = (*layer_grads)[l];
      for (size_t r = 0; r < delta.size(); ++r) {
        if (delta[r] == 0.0) continue;
        axpy(delta[r], t.acts[l], g.weight.row(r));
        g.bias[r] += delta[r];
      }
    }
    Vector next(layer.weight.cols());
    matvec_transposed(layer.weight, delta, next);
    delta = std::move(next);
  }
  return delta;
}

}  // namespace

std::string to_string(ModelKind kind) {
  return kind == ModelKind::kMF ? "mf" : "ncf";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mf" || name == "MF") return ModelKind::kMF;
  if (name == "ncf" || name == "NCF") return ModelKind::kNCF;
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

std::string RecommenderModel::fingerprint() const {
  Fnv1a h;
  h.update(to_string(kind));
  h.update_u64(dim);
  h.update_u64(user_embeddings.rows());
  h.update(user_embeddings.values());
  h.update_u64(item_embeddings.rows());
  h.update(item_embeddings.values());
  for (const DenseLayer& layer : scorer) {
    h.update_u64(layer.weight.rows());
    h.update_u64(layer.weight.cols());
    h.update(layer.weight.values());
    h.update(layer.bias);
  }
  return h.hex();
}

bool RecommenderModel::all_finite() const {
  if (!user_embeddings.all_finite() || !item_embeddings.all_finite()) {
    return false;
  }
  return std::all_of(scorer.begin(), scorer.end(), [](const DenseLayer& l) {
    return l.weight.all_finite() && recsae::all_finite(l.bias);
  });
}

nlohmann::json RecommenderModel::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const DenseLayer& l : scorer) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", l.weight.values()},
                      {"bias", l.bias}});
  }
  return {{"schema", "recmodel/1"},
          {"kind", to_string(kind)},
          {"dim", dim},
          {"n_users", n_users()},
          {"n_items", n_items()},
          {"user_embeddings", user_embeddings.values()},
          {"item_embeddings", item_embeddings.values()},
          {"scorer", std::move(layers)},
          {"dataset_fingerprint", dataset_fingerprint},
          {"fingerprint", fingerprint()},
          {"provenance", provenance}};
}

RecommenderModel RecommenderModel::from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "recmodel/1") {
    throw DataError("expected schema recmodel/1");
  }
  RecommenderModel m;
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  m.dim = j.at("dim").get<size_t>();
  m.user_embeddings = Matrix(j.at("n_users").get<size_t>(), m.dim,
                             j.at("user_embeddings").get<Vector>());
  m.item_embeddings = Matrix(j.at("n_items").get<size_t>(), m.dim,
                             j.at("item_embeddings").get<Vector>());
  for (const auto& l : j.at("scorer")) {
    m.scorer.push_back({Matrix(l.at("rows").get<size_t>(),
                               l.at("cols").get<size_t>(),
                               l.at("weight").get<Vector>()),
                        l.at("bias").get<Vector>()});
  }
  m.dataset_fingerprint = j.value("dataset_fingerprint", "");
  m.provenance = j.value("provenance", nlohmann::json::object());
  if (!m.all_finite()) throw DataError("recommender has non-finite values");
  if (j.contains("fingerprint") &&
      j.at("fingerprint").get<std::string>() != m.fingerprint()) {
    throw DataError("recommender checkpoint fingerprint mismatch");
  }
  return m;
}

RecommenderModel init_recommender(ModelKind kind, size_t n_users,
                                  size_t n_items, size_t dim, Rng& rng,
                                  const std::vector<size_t>& hidden) {
  if (dim == 0) throw ConfigError("embedding dim must be positive");
  RecommenderModel m;
  m.kind = kind;
  m.dim = dim;
  m.user_embeddings = Matrix(n_users, dim);
  m.item_embeddings = Matrix(n_items, dim);
  for (double& v : m.user_embeddings.values()) v = rng.uniform(-0.05, 0.05);
  for (double& v : m.item_embeddings.values()) v = rng.uniform(-0.05, 0.05);
  if (kind == ModelKind::kNCF) {
    size_t fan_in = 2 * dim;
    std::vector<size_t> widths = hidden;
    widths.push_back(1);
    for (size_t width : widths) {
      DenseLayer layer{Matrix(width, fan_in), Vector(width, 0.0)};
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : layer.weight.values()) v = rng.uniform(-bound, bound);
      m.scorer.push_back(std::move(layer));
      fan_in = width;
    }
  }
  return m;
}

double score_logit(const RecommenderModel& model,
                   std::span<const double> user_vec,
                   std::span<const double> item_vec) {
  check_dims(model, user_vec, item_vec);
  if (model.kind == ModelKind::kMF) return dot(user_vec, item_vec);
  return mlp_forward(model, user_vec, item_vec).acts.back()[0];
}

double score(const RecommenderModel& model, std::span<const double> user_vec,
             std::span<const double> item_vec) {
  return sigmoid(score_logit(model, user_vec, item_vec));
}

ScoreWithGradients score_with_gradients(const RecommenderModel& model,
                                        std::span<const double> user_vec,
                                        std::span<const double> item_vec) {
  check_dims(model, user_vec, item_vec);
  ScoreWithGradients out;
  const size_t d = model.dim;
  if (model.kind == ModelKind::kMF) {
    out.affinity = sigmoid(dot(user_vec, item_vec));
    const double slope = sigmoid_grad_from_output(out.affinity);
    out.grads.d_user.resize(d);
    out.grads.d_item.resize(d);
    for (size_t k = 0; k < d; ++k) {
      out.grads.d_user[k] = slope * item_vec[k];
      out.grads.d_item[k] = slope * user_vec[k];
    }
    return out;
  }
  const MlpTrace trace = mlp_forward(model, user_vec, item_vec);
  out.affinity = sigmoid(trace.acts.back()[0]);
  const Vector d_input = mlp_backward(
      model, trace, sigmoid_grad_from_output(out.affinity), nullptr);
  out.grads.d_user.assign(d_input.begin(), d_input.begin() + d);
  out.grads.d_item.assign(d_input.begin() + d, d_input.end());
  return out;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"negatives_per_positive", negatives_per_positive},
          {"patience", patience},
          {"dim", dim},
          {"hidden", hidden},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  return from_json(j, TrainConfig());
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig base) {
  TrainConfig c = base;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.negatives_per_positive =
      j.value("negatives_per_positive", c.negatives_per_positive);
  c.patience = j.value("patience", c.patience);
  c.dim = j.value("dim", c.dim);
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  if (c.batch_size == 0 || c.negatives_per_positive == 0 || c.dim == 0 ||
      c.patience == 0) {
    throw ConfigError("train config counts must be at least 1");
  }
  if (!(c.learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  return c;
}

namespace {

struct ModelGrads {
  Matrix user;
  Matrix item;
  std::vector<DenseLayer> scorer;

  explicit ModelGrads(const RecommenderModel& m)
      : user(m.user_embeddings.rows(), m.dim),
        item(m.item_embeddings.rows(), m.dim) {
    for (const DenseLayer& l : m.scorer) {
      scorer.push_back({Matrix(l.weight.rows(), l.weight.cols()),
                        Vector(l.bias.size(), 0.0)});
    }
  }
  void zero() {
    user.fill(0.0);
    item.fill(0.0);
    for (DenseLayer& l : scorer) {
      l.weight.fill(0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
  }
};

struct Optimizer {
  AdamState user, item;
  std::vector<AdamState> weights, biases;

  Optimizer(const RecommenderModel& m, double lr) {
    AdamConfig cfg;
    cfg.learning_rate = lr;
    user = AdamState(m.user_embeddings.size(), cfg);
    item = AdamState(m.item_embeddings.size(), cfg);
    for (const DenseLayer& l : m.scorer) {
      weights.emplace_back(l.weight.size(), cfg);
      biases.emplace_back(l.bias.size(), cfg);
    }
  }

  void step(RecommenderModel& m, const ModelGrads& g) {
    adam_step(m.user_embeddings.values(), g.user.values(), user,
              "user_embeddings");
    adam_step(m.item_embeddings.values(), g.item.values(), item,
              "item_embeddings");
    for (size_t l = 0; l < m.scorer.size(); ++l) {
      const std::string name = "scorer[" + std::to_string(l) + "]";
      adam_step(m.scorer[l].weight.values(), g.scorer[l].weight.values(),
                weights[l], name + ".weight");
      adam_step(m.scorer[l].bias, g.scorer[l].bias, biases[l],
                name + ".bias");
    }
  }
};

// BCE loss of one labeled example; accumulates scaled gradients.
double accumulate_example(const RecommenderModel& m, uint32_t u, uint32_t i,
                          double label, double scale, ModelGrads& g) {
  const auto eu = m.user_embeddings.row(u);
  const auto ei = m.item_embeddings.row(i);
  if (m.kind == ModelKind::kMF) {
    const double logit = dot(eu, ei);
    const double d_logit = (sigmoid(logit) - label) * scale;
    axpy(d_logit, ei, g.user.row(u));
    axpy(d_logit, eu, g.item.row(i));
    return bce_with_logit(logit, label);
  }
  const MlpTrace trace = mlp_forward(m, eu, ei);
  const double logit = trace.acts.back()[0];
  const double d_logit = (sigmoid(logit) - label) * scale;
  const Vector d_input = mlp_backward(m, trace, d_logit, &g.scorer);
  const size_t d = m.dim;
  axpy(1.0, std::span<const double>(d_input).first(d), g.user.row(u));
  axpy(1.0, std::span<const double>(d_input).subspan(d), g.item.row(i));
  return bce_with_logit(logit, label);
}

}  // namespace

TrainResult train_recommender(const InteractionDataset& dataset,
                              const TrainConfig& config, ModelKind kind) {
  const std::vector<Positive> train = dataset.split_positives(Split::kTrain);
  if (train.empty()) throw DataError("training split is empty");
  Rng rng(config.seed);
  TrainResult result;
  result.model = init_recommender(kind, dataset.n_users(), dataset.n_items(),
                                  config.dim, rng, config.hidden);
  result.model.dataset_fingerprint = dataset.fingerprint();
  result.model.provenance = {{"train_config", config.to_json()},
                             {"seed", config.seed}};
  if (config.epochs == 0) return result;

  RecommenderModel model = result.model;
  NegativeSampler sampler(dataset, rng.next_u64());
  Optimizer opt(model, config.learning_rate);
  ModelGrads grads(model);
  const bool has_val = dataset.split_size(Split::kVal) > 0;
  double best_mpr = std::numeric_limits<double>::infinity();
  size_t bad_epochs = 0;

  std::vector<size_t> order(train.size());
  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(std::span<size_t>(order));
    double loss_sum = 0.0;
    size_t examples = 0;
    for (size_t start = 0, batch = 0; start < order.size();
         start += config.batch_size, ++batch) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      // Gather labels first so the batch size is known for averaging.
      std::vector<std::tuple<uint32_t, uint32_t, double>> examples_in_batch;
      for (size_t k = start; k < end; ++k) {
        const Positive& p = train[order[k]];
        examples_in_batch.emplace_back(p.user, p.item, 1.0);
        const size_t k_neg = std::min(config.negatives_per_positive,
                                      sampler.eligible_count(p.user));
        for (uint32_t neg : sampler.sample(p.user, k_neg)) {
          examples_in_batch.emplace_back(p.user, neg, 0.0);
        }
      }
      grads.zero();
      const double scale = 1.0 / static_cast<double>(examples_in_batch.size());
      double batch_loss = 0.0;
      for (const auto& [u, i, label] : examples_in_batch) {
        batch_loss += accumulate_example(model, u, i, label, scale, grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch));
      }
      loss_sum += batch_loss;
      examples += examples_in_batch.size();
      opt.step(model, grads);
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(examples),
                 std::numeric_limits<double>::quiet_NaN()};
    if (has_val) {
      log.val_mpr = mpr(model, dataset, Split::kVal);
      if (log.val_mpr < best_mpr) {
        best_mpr = log.val_mpr;
        result.model = model;
        result.best_epoch = epoch;
        bad_epochs = 0;
      } else {
        ++bad_epochs;
      }
    } else {
      result.model = model;
      result.best_epoch = epoch;
    }
    result.log.push_back(log);
    if (has_val && bad_epochs >= config.patience) break;
  }
  return result;
}

Vector score_all(const RecommenderModel& model,
                 std::span<const double> user_vec, const Matrix& item_table) {
  Vector scores(item_table.rows());
  for (size_t i = 0; i < item_table.rows(); ++i) {
    scores[i] = score(model, user_vec, item_table.row(i));
  }
  return scores;
}

double mpr(const RecommenderModel& model, const InteractionDataset& dataset,
           Split split) {
  const std::vector<Positive> held_out = dataset.split_positives(split);
  if (held_out.empty()) throw DataError("cannot compute MPR on an empty split");
  double total = 0.0;
  Vector scores;
  uint32_t scored_user = UINT32_MAX;
  for (const Positive& p : held_out) {
    if (p.user != scored_user) {
      scores = score_all(model, model.user_embeddings.row(p.user),
                         model.item_embeddings);
      scored_user = p.user;
    }
    const auto train = dataset.items_of(p.user, Split::kTrain);
    const double target = scores[p.item];
    size_t higher = 0, ties = 0, candidates = 0;
    for (uint32_t i = 0; i < scores.size(); ++i) {
      if (std::binary_search(train.begin(), train.end(), i)) continue;
      ++candidates;
      if (i == p.item) continue;
      if (scores[i] > target) {
        ++higher;
      } else if (scores[i] == target) {
        ++ties;
      }
    }
    if (candidates > 1) {
      total += (static_cast<double>(higher) + 0.5 * static_cast<double>(ties)) /
               static_cast<double>(candidates - 1);
    }
  }
  return total / static_cast<double>(held_out.size());
}

std::vector<uint32_t> rank_items(std::span<const double> scores, size_t n,
                                 std::span<const uint32_t> excluded) {
  std::vector<uint32_t> candidates;
  candidates.reserve(scores.size());
  for (uint32_t i = 0; i < scores.size(); ++i) {
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) {
      candidates.push_back(i);
    }
  }
  n = std::min(n, candidates.size());
  auto better = [&](uint32_t a, uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + n,
                    candidates.end(), better);
  candidates.resize(n);
  return candidates;
}

std::vector<uint32_t> top_n(const RecommenderModel& model,
                            const InteractionDataset& dataset, uint32_t user,
                            size_t n, bool exclude_train) {
  const Vector scores = score_all(model, model.user_embeddings.row(user),
                                  model.item_embeddings);
  return rank_items(scores, n,
                    exclude_train ? dataset.items_of(user, Split::kTrain)
                                  : std::span<const uint32_t>{});
}

}  // namespace recsae

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

#include "recsae/sae.h"

#include <algorithm>
#include <cmath>

#include "recsae/activations.h"
#include "recsae/error.h"
#include "recsae/hash.h"

namespace recsae {

size_t SaeModel::level_width(size_t level) const {
  if (nested_sizes.empty()) {
    if (level != 1) throw ConfigError("level out of range for non-nested SAE");
    return width();
  }
  if (level < 1 || level > nested_sizes.size()) {
    throw ConfigError("level " + std::to_string(level) + " out of range 1.." +
                      std::to_string(nested_sizes.size()));
  }
  return nested_sizes[level - 1];
}

bool SaeModel::all_finite() const {
  return weight.all_finite() && recsae::all_finite(enc_bias) &&
         recsae::all_finite(dec_bias);
}

void SaeModel::validate() const {
  if (width() == 0 || dim() == 0) throw ConfigError("SAE shape must be non-empty");
  if (enc_bias.size() != width() || dec_bias.size() != dim()) {
    throw ConfigError("SAE bias sizes do not match weight shape");
  }
  if (!nested_sizes.empty()) {
    for (size_t k = 0; k < nested_sizes.size(); ++k) {
      if (nested_sizes[k] == 0 ||
          (k > 0 && nested_sizes[k] <= nested_sizes[k - 1])) {
        throw ConfigError("nested sizes must be strictly ascending");
      }
    }
    if (nested_sizes.back() != width()) {
      throw ConfigError("nested sizes must end at the bottleneck width");
    }
  }
  if (!all_finite()) throw NumericError("SAE has non-finite parameters");
}

SaeModel make_sae(size_t dim, size_t width, std::vector<size_t> nested_sizes) {
  SaeModel sae{Matrix(width, dim), Vector(width, 0.0), Vector(dim, 0.0),
               std::move(nested_sizes)};
  sae.validate();
  return sae;
}

std::vector<size_t> matryoshka_sizes(size_t width, size_t levels) {
  if (levels == 0) return {};
  std::vector<size_t> sizes;
  for (size_t k = 1; k <= levels; ++k) {
    const size_t s = (k * width + levels - 1) / levels;
    if (s > 0 && (sizes.empty() || s > sizes.back())) sizes.push_back(s);
  }
  return sizes;
}

void encode_into(const SaeModel& sae, std::span<const double> e,
                 std::span<double> pre, std::span<double> z) {
  matvec(sae.weight, e, pre);
  for (size_t j = 0; j < pre.size(); ++j) {
    pre[j] += sae.enc_bias[j];
    z[j] = relu(pre[j]);
  }
}

Vector encode(const SaeModel& sae, std::span<const double> e) {
  if (e.size() != sae.dim()) {
    throw ConfigError("encode: input length " + std::to_string(e.size()) +
                      " != SAE dim " + std::to_string(sae.dim()));
  }
  Vector pre(sae.width()), z(sae.width());
  encode_into(sae, e, pre, z);
  return z;
}

Vector decode(const SaeModel& sae, std::span<const double> z,
              std::optional<size_t> level) {
  if (z.size() != sae.width()) {
    throw ConfigError("decode: code length " + std::to_string(z.size()) +
                      " != SAE width " + std::to_string(sae.width()));
  }
  const size_t visible = level ? sae.level_width(*level) : sae.width();
  Vector out = sae.dec_bias;
  for (size_t j = 0; j < visible; ++j) {
    if (z[j] != 0.0) axpy(z[j], sae.weight.row(j), out);
  }
  return out;
}

Vector reconstruct(const SaeModel& sae, std::span<const double> e,
                   std::optional<size_t> level) {
  return decode(sae, encode(sae, e), level);
}

Matrix reconstruct_table(const SaeModel& sae, const Matrix& table,
                         std::optional<size_t> level) {
  Matrix out(table.rows(), table.cols());
  for (size_t r = 0; r < table.rows(); ++r) {
    const Vector rec = reconstruct(sae, table.row(r), level);
    std::copy(rec.begin(), rec.end(), out.row(r).begin());
  }
  return out;
}

void LossConfig::validate() const {
  for (double w : {alpha, beta, lambda1, lambda2}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
}

nlohmann::json LossConfig::to_json() const {
  return {{"alpha", alpha},
          {"beta", beta},
          {"lambda1", lambda1},
          {"lambda2", lambda2},
          {"rho", rho},
          {"batch_size", batch_size},
          {"pred_pairs", pairs()},
          {"activation_stat",
           stat == ActivationStat::kSoftClip ? "soft_clip" : "indicator"}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  return from_json(j, LossConfig());
}

LossConfig LossConfig::from_json(const nlohmann::json& j, LossConfig base) {
  LossConfig c = base;
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.rho = j.value("rho", c.rho);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.pred_pairs = j.value("pred_pairs", c.pred_pairs);
  if (j.contains("activation_stat")) {
    const auto s = j.at("activation_stat").get<std::string>();
    if (s == "soft_clip") {
      c.stat = ActivationStat::kSoftClip;
    } else if (s == "indicator") {
      c.stat = ActivationStat::kIndicator;
    } else {
      throw ConfigError("unknown activation_stat '" + s + "'");
    }
  }
  c.validate();
  return c;
}

double loss_emb(std::span<const double> e, std::span<const double> e_rec) {
  if (e.size() != e_rec.size()) throw ConfigError("loss_emb: length mismatch");
  return squared_distance(e, e_rec);
}

double loss_pred(const RecommenderModel& model,
                 std::span<const std::pair<uint32_t, uint32_t>> pairs,
                 const SaeModel& user_sae, const SaeModel& item_sae,
                 std::optional<size_t> level) {
  if (pairs.empty()) throw ConfigError("loss_pred: empty pair sample");
  double sum = 0.0;
  for (const auto& [u, i] : pairs) {
    const auto eu = model.user_embeddings.row(u);
    const auto ei = model.item_embeddings.row(i);
    const double original = score(model, eu, ei);
    const double rebuilt = score(model, reconstruct(user_sae, eu, level),
                                 reconstruct(item_sae, ei, level));
    sum += (original - rebuilt) * (original - rebuilt);
  }
  return sum / static_cast<double>(pairs.size());
}

double kl_bernoulli(double rho, double p) {
  p = std::clamp(p, kRateClamp, 1.0 - kRateClamp);
  return rho * std::log(rho / p) + (1.0 - rho) * std::log((1.0 - rho) / (1.0 - p));
}

namespace {

double activation_stat(double z, ActivationStat stat) {
  if (stat == ActivationStat::kIndicator) return z > 0.0 ? 1.0 : 0.0;
  return std::min(z, 1.0);
}

double activation_stat_grad(double z, ActivationStat stat) {
  if (stat == ActivationStat::kIndicator) return 0.0;
  return z < 1.0 ? 1.0 : 0.0;
}

// d KL(rho || clamp(p)) / dp; zero where the clamp is active.
double kl_grad(double rho, double p) {
  if (p < kRateClamp || p > 1.0 - kRateClamp) return 0.0;
  return -rho / p + (1.0 - rho) / (1.0 - p);
}

}  // namespace

SparsityLoss loss_sparsity(const Matrix& z_batch, const LossConfig& config) {
  if (z_batch.rows() == 0) throw ConfigError("loss_sparsity: empty batch");
  const double n = static_cast<double>(z_batch.rows());
  SparsityLoss out;
  out.rates.assign(z_batch.cols(), 0.0);
  for (size_t r = 0; r < z_batch.rows(); ++r) {
    for (size_t j = 0; j < z_batch.cols(); ++j) {
      const double z = z_batch(r, j);
      out.l1 += std::abs(z);
      out.rates[j] += activation_stat(z, config.stat);
    }
  }
  out.l1 /= n;
  for (double& p : out.rates) {
    p /= n;
    out.kl += kl_bernoulli(config.rho, p);
  }
  return out;
}

std::vector<double> SaeBundle::pack() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const SaeModel& s : saes) {
    flat.insert(flat.end(), s.weight.values().begin(), s.weight.values().end());
    flat.insert(flat.end(), s.enc_bias.begin(), s.enc_bias.end());
    flat.insert(flat.end(), s.dec_bias.begin(), s.dec_bias.end());
  }
  return flat;
}

void SaeBundle::unpack(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ConfigError("unpack: parameter count mismatch");
  }
  size_t k = 0;
  for (SaeModel& s : saes) {
    for (double& v : s.weight.values()) v = flat[k++];
    for (double& v : s.enc_bias) v = flat[k++];
    for (double& v : s.dec_bias) v = flat[k++];
  }
}

size_t SaeBundle::parameter_count() const {
  size_t n = 0;
  for (const SaeModel& s : saes) {
    n += s.weight.size() + s.enc_bias.size() + s.dec_bias.size();
  }
  return n;
}

std::string SaeBundle::fingerprint() const {
  Fnv1a h;
  h.update_u64(saes.size());
  for (const SaeModel& s : saes) {
    h.update_u64(s.width());
    h.update_u64(s.dim());
    h.update(s.weight.values());
    h.update(s.enc_bias);
    h.update(s.dec_bias);
    h.update_u64(s.nested_sizes.size());
    for (size_t n : s.nested_sizes) h.update_u64(n);
  }
  h.update(recommender_fingerprint);
  return h.hex();
}

nlohmann::json SaeBundle::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const SaeModel& s : saes) {
    list.push_back({{"dim", s.dim()},
                    {"width", s.width()},
                    {"weight", s.weight.values()},
                    {"enc_bias", s.enc_bias},
                    {"dec_bias", s.dec_bias},
                    {"nested_sizes", s.nested_sizes}});
  }
  return {{"schema", "sae/1"},
          {"shared", shared()},
          {"saes", std::move(list)},
          {"loss_config", loss.to_json()},
          {"recommender_fingerprint", recommender_fingerprint},
          {"fingerprint", fingerprint()},
          {"provenance", provenance}};
}

SaeBundle SaeBundle::from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "sae/1") throw DataError("expected schema sae/1");
  SaeBundle b;
  for (const auto& s : j.at("saes")) {
    SaeModel sae{Matrix(s.at("width").get<size_t>(), s.at("dim").get<size_t>(),
                        s.at("weight").get<Vector>()),
                 s.at("enc_bias").get<Vector>(), s.at("dec_bias").get<Vector>(),
                 s.at("nested_sizes").get<std::vector<size_t>>()};
    sae.validate();
    b.saes.push_back(std::move(sae));
  }
  if (b.saes.empty() || b.saes.size() > 2) {
    throw DataError("SAE checkpoint must hold one or two autoencoders");
  }
  b.loss = LossConfig::from_json(j.at("loss_config"));
  b.recommender_fingerprint = j.at("recommender_fingerprint").get<std::string>();
  b.provenance = j.value("provenance", nlohmann::json::object());
  if (j.contains("fingerprint") &&
      j.at("fingerprint").get<std::string>() != b.fingerprint()) {
    throw DataError("SAE checkpoint fingerprint mismatch");
  }
  return b;
}

namespace {

// Gradient slots of one SAE inside the packed vector.
struct GradSlots {
  double* weight;
  double* enc_bias;
  double* dec_bias;
};

// Forward state of one embedding pushed through an SAE.
struct EncodedRow {
  size_t sae;
  std::span<const double> input;
  Vector pre;
  Vector z;
  Vector dz;
};

EncodedRow encode_row(const SaeModel& sae, size_t index,
                      std::span<const double> input) {
  EncodedRow row{index, input, Vector(sae.width()), Vector(sae.width()),
                 Vector(sae.width(), 0.0)};
  encode_into(sae, input, row.pre, row.z);
  return row;
}

// Decoder half of the chain rule for e~ = W^T z_visible + b_dec.
void backprop_decoder(const SaeModel& sae, GradSlots g, EncodedRow& row,
                      size_t visible, std::span<const double> d_rec) {
  const size_t d = sae.dim();
  for (size_t k = 0; k < d; ++k) g.dec_bias[k] += d_rec[k];
  for (size_t j = 0; j < visible; ++j) {
    const double zj = row.z[j];
    double* gw = g.weight + j * d;
    if (zj != 0.0) {
      for (size_t k = 0; k < d; ++k) gw[k] += zj * d_rec[k];
    }
    row.dz[j] += dot(sae.weight.row(j), d_rec);
  }
}

// Encoder half for z = relu(W e + b_enc).
void backprop_encoder(const SaeModel& sae, GradSlots g, const EncodedRow& row) {
  const size_t d = sae.dim();
  for (size_t j = 0; j < sae.width(); ++j) {
    if (row.pre[j] <= 0.0 || row.dz[j] == 0.0) continue;
    const double dp = row.dz[j];
    g.enc_bias[j] += dp;
    double* gw = g.weight + j * d;
    for (size_t k = 0; k < d; ++k) gw[k] += dp * row.input[k];
  }
}

}  // namespace

LossBreakdown total_loss(const RecommenderModel& model, const SaeBundle& bundle,
                         const SaeBatch& batch, const LossConfig& config,
                         std::vector<double>* grads) {
  const SaeModel& user_sae = bundle.user_sae();
  const SaeModel& item_sae = bundle.item_sae();
  const size_t item_index = bundle.saes.size() - 1;
  for (const SaeModel& s : bundle.saes) {
    if (s.dim() != model.dim) {
      throw ConfigError("SAE dim " + std::to_string(s.dim()) +
                        " != recommender dim " + std::to_string(model.dim));
    }
  }
  if (user_sae.levels() != item_sae.levels()) {
    throw ConfigError("user and item SAEs must share a nesting depth");
  }
  const size_t levels = user_sae.levels();
  const double inv_levels = 1.0 / static_cast<double>(levels);

  std::vector<GradSlots> slots;
  if (grads) {
    grads->assign(bundle.parameter_count(), 0.0);
    double* base = grads->data();
    for (const SaeModel& s : bundle.saes) {
      GradSlots g{base, base + s.weight.size(),
                  base + s.weight.size() + s.enc_bias.size()};
      slots.push_back(g);
      base += s.weight.size() + s.enc_bias.size() + s.dec_bias.size();
    }
  }

  LossBreakdown out;

  // Embedding reconstruction rows; these also define the sparsity batch.
  std::vector<EncodedRow> rows;
  for (size_t r = 0; r < batch.users.rows(); ++r) {
    rows.push_back(encode_row(user_sae, 0, batch.users.row(r)));
  }
  const size_t n_user_rows = rows.size();
  for (size_t r = 0; r < batch.items.rows(); ++r) {
    rows.push_back(encode_row(item_sae, item_index, batch.items.row(r)));
  }

  for (size_t idx = 0; idx < rows.size(); ++idx) {
    EncodedRow& row = rows[idx];
    const SaeModel& sae = bundle.saes[row.sae];
    const bool is_user = idx < n_user_rows;
    const double tower_rows =
        static_cast<double>(is_user ? n_user_rows : rows.size() - n_user_rows);
    const double weight = inv_levels / tower_rows;
    for (size_t level = 1; level <= levels; ++level) {
      const size_t visible = sae.level_width(level);
      Vector rec = sae.dec_bias;
      for (size_t j = 0; j < visible; ++j) {
        if (row.z[j] != 0.0) axpy(row.z[j], sae.weight.row(j), rec);
      }
      out.emb += weight * squared_distance(row.input, rec);
      if (grads && config.alpha != 0.0) {
        Vector d_rec(rec.size());
        for (size_t k = 0; k < rec.size(); ++k) {
          d_rec[k] = config.alpha * weight * 2.0 * (rec[k] - row.input[k]);
        }
        backprop_decoder(sae, slots[row.sae], row, visible, d_rec);
      }
    }
  }

  // Sparsity over the rows each SAE saw.
  out.rates.resize(bundle.saes.size());
  for (size_t s = 0; s < bundle.saes.size(); ++s) {
    const SaeModel& sae = bundle.saes[s];
    std::vector<EncodedRow*> mine;
    for (EncodedRow& row : rows) {
      if (row.sae == s) mine.push_back(&row);
    }
    Vector& rates = out.rates[s];
    rates.assign(sae.width(), 0.0);
    if (mine.empty()) continue;
    const double n = static_cast<double>(mine.size());
    for (const EncodedRow* row : mine) {
      for (size_t j = 0; j < sae.width(); ++j) {
        out.l1 += std::abs(row->z[j]) / n;
        rates[j] += activation_stat(row->z[j], config.stat) / n;
      }
    }
    for (size_t j = 0; j < sae.width(); ++j) {
      out.kl += kl_bernoulli(config.rho, rates[j]);
    }
    if (grads) {
      for (EncodedRow* row : mine) {
        for (size_t j = 0; j < sae.width(); ++j) {
          const double z = row->z[j];
          double dz = config.lambda1 / n * (z > 0.0 ? 1.0 : 0.0);
          if (config.lambda2 != 0.0) {
            dz += config.lambda2 * kl_grad(config.rho, rates[j]) / n *
                  activation_stat_grad(z, config.stat);
          }
          row->dz[j] += dz;
        }
      }
    }
  }

  // Prediction-level loss through the frozen scorer.
  const size_t n_pairs = batch.pair_users.rows();
  std::vector<EncodedRow> pair_rows;
  if (n_pairs > 0) {
    const double pair_weight = inv_levels / static_cast<double>(n_pairs);
    for (size_t p = 0; p < n_pairs; ++p) {
      const auto eu = batch.pair_users.row(p);
      const auto ei = batch.pair_items.row(p);
      const double original = score(model, eu, ei);
      EncodedRow ru = encode_row(user_sae, 0, eu);
      EncodedRow ri = encode_row(item_sae, item_index, ei);
      for (size_t level = 1; level <= levels; ++level) {
        const Vector rec_u = decode(user_sae, ru.z, level);
        const Vector rec_i = decode(item_sae, ri.z, level);
        const ScoreWithGradients sg = score_with_gradients(model, rec_u, rec_i);
        const double diff = original - sg.affinity;
        out.pred += pair_weight * diff * diff;
        if (grads && config.beta != 0.0) {
          const double d_affinity = -2.0 * diff * config.beta * pair_weight;
          Vector d_rec_u = sg.grads.d_user;
          Vector d_rec_i = sg.grads.d_item;
          for (double& v : d_rec_u) v *= d_affinity;
          for (double& v : d_rec_i) v *= d_affinity;
          backprop_decoder(user_sae, slots[0], ru,
                           user_sae.level_width(level), d_rec_u);
          backprop_decoder(item_sae, slots[item_index], ri,
                           item_sae.level_width(level), d_rec_i);
        }
      }
      if (grads) {
        pair_rows.push_back(std::move(ru));
        pair_rows.push_back(std::move(ri));
      }
    }
  }

  if (grads) {
    for (const EncodedRow& row : rows) {
      backprop_encoder(bundle.saes[row.sae], slots[row.sae], row);
    }
    for (const EncodedRow& row : pair_rows) {
      backprop_encoder(bundle.saes[row.sae], slots[row.sae], row);
    }
  }

  out.total = config.alpha * out.emb + config.beta * out.pred +
              config.lambda1 * out.l1 + config.lambda2 * out.kl;
  return out;
}

nlohmann::json SaeTrainConfig::to_json() const {
  return {{"loss", loss.to_json()},
          {"learning_rate", learning_rate},
          {"width", width},
          {"nested_levels", nested_levels},
          {"shared", shared},
          {"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"seed", seed}};
}

SaeTrainConfig SaeTrainConfig::from_json(const nlohmann::json& j) {
  return from_json(j, SaeTrainConfig());
}

SaeTrainConfig SaeTrainConfig::from_json(const nlohmann::json& j,
                                         SaeTrainConfig base) {
  SaeTrainConfig c = base;
  if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"), c.loss);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.width = j.value("width", c.width);
  c.nested_levels = j.value("nested_levels", c.nested_levels);
  c.shared = j.value("shared", c.shared);
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.seed = j.value("seed", c.seed);
  if (c.width == 0) throw ConfigError("SAE width must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  c.loss.validate();
  return c;
}

SaeBundle init_sae_bundle(const RecommenderModel& model,
                          const SaeTrainConfig& config, Rng& rng) {
  const size_t d = model.dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto init_one = [&](std::initializer_list<const Matrix*> tables) {
    SaeModel sae =
        make_sae(d, config.width, matryoshka_sizes(config.width,
                                                   config.nested_levels));
    for (double& v : sae.weight.values()) v = rng.uniform(-bound, bound);
    double rows = 0.0;
    for (const Matrix* t : tables) {
      for (size_t r = 0; r < t->rows(); ++r) axpy(1.0, t->row(r), sae.dec_bias);
      rows += static_cast<double>(t->rows());
    }
    if (rows > 0.0) {
      for (double& v : sae.dec_bias) v /= rows;
    }
    return sae;
  };
  SaeBundle bundle;
  bundle.loss = config.loss;
  bundle.recommender_fingerprint = model.fingerprint();
  if (config.shared) {
    bundle.saes.push_back(
        init_one({&model.user_embeddings, &model.item_embeddings}));
  } else {
    bundle.saes.push_back(init_one({&model.user_embeddings}));
    bundle.saes.push_back(init_one({&model.item_embeddings}));
  }
  return bundle;
}

SaeBatch sample_sae_batch(const RecommenderModel& model,
                          std::span<const uint32_t> pair_users, size_t batch,
                          size_t pairs, Rng& rng) {
  const size_t d = model.dim;
  SaeBatch b{Matrix(batch, d), Matrix(batch, d), Matrix(pairs, d),
             Matrix(pairs, d)};
  auto copy_row = [](std::span<const double> src, std::span<double> dst) {
    std::copy(src.begin(), src.end(), dst.begin());
  };
  for (size_t r = 0; r < batch; ++r) {
    copy_row(model.user_embeddings.row(rng.uniform_index(model.n_users())),
             b.users.row(r));
    copy_row(model.item_embeddings.row(rng.uniform_index(model.n_items())),
             b.items.row(r));
  }
  for (size_t p = 0; p < pairs; ++p) {
    const uint32_t u = pair_users[rng.uniform_index(pair_users.size())];
    copy_row(model.user_embeddings.row(u), b.pair_users.row(p));
    copy_row(model.item_embeddings.row(rng.uniform_index(model.n_items())),
             b.pair_items.row(p));
  }
  return b;
}

SaeTrainResult train_sae(const RecommenderModel& model,
                         const InteractionDataset& dataset,
                         const SaeTrainConfig& config) {
  config.loss.validate();
  if (model.n_users() != dataset.n_users() ||
      model.n_items() != dataset.n_items()) {
    throw ConfigError("recommender tables do not match the dataset");
  }
  const std::vector<uint32_t> pair_users = dataset.users_with_train();
  if (pair_users.empty()) throw DataError("no users with training positives");

  Rng rng(config.seed);
  SaeTrainResult result;
  result.bundle = init_sae_bundle(model, config, rng);
  result.bundle.provenance = {{"train_config", config.to_json()},
                              {"seed", config.seed}};
  SaeBundle& bundle = result.bundle;

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  std::vector<double> params = bundle.pack();
  AdamState state(params.size(), adam);
  std::vector<double> grads;

  const size_t batch = config.loss.batch_size;
  const size_t steps =
      config.steps_per_epoch > 0
          ? config.steps_per_epoch
          : (std::max(model.n_users(), model.n_items()) + batch - 1) / batch;
  const double inv_steps = 1.0 / static_cast<double>(steps);

  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    SaeEpochReport rep;
    rep.epoch = epoch;
    for (const SaeModel& s : bundle.saes) rep.rates.emplace_back(s.width(), 0.0);
    for (size_t step = 0; step < steps; ++step) {
      const SaeBatch b =
          sample_sae_batch(model, pair_users, batch, config.loss.pairs(), rng);
      const LossBreakdown loss = total_loss(model, bundle, b, config.loss, &grads);
      if (!std::isfinite(loss.total)) {
        throw NumericError("non-finite SAE loss at epoch " +
                           std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      adam_step(params, grads, state, "sae");
      bundle.unpack(params);
      rep.emb += loss.emb * inv_steps;
      rep.pred += loss.pred * inv_steps;
      rep.l1 += loss.l1 * inv_steps;
      rep.kl += loss.kl * inv_steps;
      rep.total += loss.total * inv_steps;
      for (size_t s = 0; s < loss.rates.size(); ++s) {
        axpy(inv_steps, loss.rates[s], rep.rates[s]);
      }
    }
    size_t dead = 0, neurons = 0;
    for (const Vector& r : rep.rates) {
      for (double p : r) {
        ++neurons;
        if (p < 1e-6) ++dead;
      }
    }
    rep.dead_fraction = static_cast<double>(dead) / static_cast<double>(neurons);
    result.report.push_back(std::move(rep));
  }
  for (const SaeModel& s : bundle.saes) s.validate();
  return result;
}

}  // namespace recsae

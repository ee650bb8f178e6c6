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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "recsae/activations.h"
#include "recsae/error.h"
#include "recsae/gradcheck.h"
#include "recsae/recommender.h"
#include "recsae/synth.h"
#include "test_util.h"

namespace recsae {
namespace {

RecommenderModel mf_from(const Matrix& users, const Matrix& items) {
  RecommenderModel m;
  m.kind = ModelKind::kMF;
  m.dim = users.cols();
  m.user_embeddings = users;
  m.item_embeddings = items;
  return m;
}

InteractionDataset planted(uint64_t seed) {
  return synthetic_dataset(generate_synthetic(SynthConfig{.seed = seed}), {}, seed);
}

// Percentile of each held-out positive from a full descending sort of the
// eligible items; a tie block shares the mean of its positions.
double mpr_oracle(const RecommenderModel& model, const InteractionDataset& ds,
                  Split split) {
  double total = 0.0;
  size_t n = 0;
  for (const Positive& p : ds.split_positives(split)) {
    std::vector<std::pair<double, uint32_t>> cands;
    for (uint32_t i = 0; i < ds.n_items(); ++i) {
      if (ds.is_train_positive(p.user, i)) continue;
      cands.push_back({score(model, model.user_embeddings.row(p.user),
                             model.item_embeddings.row(i)),
                       i});
    }
    std::sort(cands.begin(), cands.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    const double target = score(model, model.user_embeddings.row(p.user),
                                model.item_embeddings.row(p.item));
    size_t first = cands.size(), last = 0;
    for (size_t k = 0; k < cands.size(); ++k) {
      if (cands[k].first == target) {
        first = std::min(first, k);
        last = k;
      }
    }
    total += 0.5 * static_cast<double>(first + last) /
             static_cast<double>(cands.size() - 1);
    ++n;
  }
  return total / static_cast<double>(n);
}

TEST(ScoreTest, MfZeroUserIsHalf) {
  const RecommenderModel m = mf_from(Matrix(1, 2, 0.0), Matrix(1, 2, {3, -7}));
  EXPECT_EQ(score(m, m.user_embeddings.row(0), m.item_embeddings.row(0)), 0.5);
}

TEST(ScoreTest, MfClosedForm) {
  const RecommenderModel m = mf_from(Matrix(1, 2, {1, 0}), Matrix(1, 2, {2, 0}));
  EXPECT_NEAR(score(m, m.user_embeddings.row(0), m.item_embeddings.row(0)),
              0.880797077977882, 1e-12);
}

TEST(ScoreTest, NcfAllZeroParametersIsHalf) {
  Rng rng(1);
  RecommenderModel m = init_recommender(ModelKind::kNCF, 2, 2, 4, rng);
  for (DenseLayer& l : m.scorer) {
    l.weight.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  const std::vector<double> u = {1, -2, 3, 4}, i = {0.5, 0.5, -1, 2};
  EXPECT_EQ(score(m, u, i), 0.5);
}

TEST(ScoreTest, NcfShapes) {
  Rng rng(1);
  const RecommenderModel m = init_recommender(ModelKind::kNCF, 2, 3, 5, rng);
  ASSERT_EQ(m.scorer.size(), 4u);
  EXPECT_EQ(m.scorer[0].weight.rows(), 64u);
  EXPECT_EQ(m.scorer[0].weight.cols(), 10u);
  EXPECT_EQ(m.scorer[1].weight.rows(), 32u);
  EXPECT_EQ(m.scorer[2].weight.rows(), 16u);
  EXPECT_EQ(m.scorer[3].weight.rows(), 1u);
}

TEST(ScoreTest, DimensionMismatchIsConfigError) {
  const RecommenderModel m = mf_from(Matrix(1, 2, 0.0), Matrix(1, 2, 0.0));
  const std::vector<double> three = {1, 2, 3};
  EXPECT_THROW(score(m, three, m.item_embeddings.row(0)), ConfigError);
}

TEST(ScoreGradientTest, MfUserGradientIsScaledItem) {
  const RecommenderModel m = mf_from(Matrix(1, 2, {0.3, -0.4}), Matrix(1, 2, {1.5, 2.0}));
  const auto r = score_with_gradients(m, m.user_embeddings.row(0), m.item_embeddings.row(0));
  const double y = r.affinity;
  EXPECT_NEAR(r.grads.d_user[0], y * (1 - y) * 1.5, 1e-15);
  EXPECT_NEAR(r.grads.d_user[1], y * (1 - y) * 2.0, 1e-15);
}

TEST(ScoreGradientTest, MfZeroItemGivesZeroUserGradient) {
  const RecommenderModel m = mf_from(Matrix(1, 2, {0.3, -0.4}), Matrix(1, 2, 0.0));
  const auto r = score_with_gradients(m, m.user_embeddings.row(0), m.item_embeddings.row(0));
  EXPECT_EQ(r.grads.d_user, (Vector{0.0, 0.0}));
}

// Concatenated (e_u, e_i) point checked against central differences.
void check_gradients(ModelKind kind, uint64_t seed, size_t trials) {
  Rng rng(seed);
  const size_t d = 6;
  size_t checked = 0;
  for (size_t t = 0; t < trials; ++t) {
    const RecommenderModel m = testing::random_model(kind, 1, 1, d, rng);
    std::vector<double> point(2 * d);
    for (double& v : point) v = rng.uniform(-1, 1);
    const auto split = [&](std::span<const double> x) {
      return std::pair{x.subspan(0, d), x.subspan(d, d)};
    };
    const auto [u, i] = split(point);
    const auto r = score_with_gradients(m, u, i);
    EXPECT_EQ(r.affinity, score(m, u, i));
    std::vector<double> grad(r.grads.d_user);
    grad.insert(grad.end(), r.grads.d_item.begin(), r.grads.d_item.end());
    const ScalarFunction f = [&](std::span<const double> x) {
      const auto [xu, xi] = split(x);
      return score(m, xu, xi);
    };
    const GradCheckReport rep = finite_diff_check(f, grad, point, 1e-6, 1e-5);
    EXPECT_TRUE(rep.passed) << "trial " << t << ": " << rep.message;
    ++checked;
  }
  EXPECT_EQ(checked, trials);
}

TEST(ScoreGradientTest, MfMatchesFiniteDifferences) { check_gradients(ModelKind::kMF, 3, 100); }

TEST(ScoreGradientTest, NcfMatchesFiniteDifferences) {
  check_gradients(ModelKind::kNCF, 4, 100);
}

TEST(TrainTest, PlantedBlocksReachLowValidationMpr) {
  const InteractionDataset ds = planted(0);
  const TrainResult r = train_recommender(ds, TrainConfig{}, ModelKind::kMF);
  EXPECT_LT(mpr(r.model, ds, Split::kVal), 0.35);
  for (const EpochLog& e : r.log) EXPECT_TRUE(std::isfinite(e.mean_loss));
}

TEST(TrainTest, NcfLearnsPlantedBlocks) {
  const InteractionDataset ds = planted(1);
  const TrainResult r = train_recommender(ds, TrainConfig{.learning_rate = 0.01, .patience = 10}, ModelKind::kNCF);
  EXPECT_LT(mpr(r.model, ds, Split::kVal), 0.35);
}

TEST(TrainTest, ZeroEpochsReturnsInitialModel) {
  const InteractionDataset ds = planted(2);
  const TrainConfig cfg{.epochs = 0, .seed = 9};
  const TrainResult r = train_recommender(ds, cfg, ModelKind::kMF);
  Rng rng(cfg.seed);
  const RecommenderModel init =
      init_recommender(ModelKind::kMF, ds.n_users(), ds.n_items(), cfg.dim, rng);
  EXPECT_EQ(r.model.user_embeddings, init.user_embeddings);
  EXPECT_EQ(r.model.item_embeddings, init.item_embeddings);
  EXPECT_EQ(r.best_epoch, 0u);
}

TEST(TrainTest, SameSeedIdenticalParameters) {
  const InteractionDataset ds = planted(3);
  const TrainConfig cfg{.epochs = 3, .seed = 5};
  const TrainResult a = train_recommender(ds, cfg, ModelKind::kNCF);
  const TrainResult b = train_recommender(ds, cfg, ModelKind::kNCF);
  EXPECT_TRUE(a.model == b.model);
  EXPECT_EQ(a.model.fingerprint(), b.model.fingerprint());
}

TEST(TrainTest, RecordsDatasetFingerprint) {
  const InteractionDataset ds = planted(4);
  const TrainResult r = train_recommender(ds, TrainConfig{.epochs = 1}, ModelKind::kMF);
  EXPECT_EQ(r.model.dataset_fingerprint, ds.fingerprint());
}

TEST(MprTest, PerfectModelScoresZero) {
  // One user, item 0 trained, item 1 held out and scored highest.
  const InteractionDataset ds({"u"}, {"a", "b", "c", "d"},
                              {{0, 0, Split::kTrain}, {0, 1, Split::kTest}}, {});
  const RecommenderModel m =
      mf_from(Matrix(1, 1, {1.0}), Matrix(4, 1, {5.0, 3.0, -1.0, -2.0}));
  EXPECT_EQ(mpr(m, ds, Split::kTest), 0.0);
}

TEST(MprTest, ConstantScoresGiveHalf) {
  const InteractionDataset ds({"u"}, {"a", "b", "c", "d"},
                              {{0, 0, Split::kTrain}, {0, 1, Split::kTest}}, {});
  const RecommenderModel m = mf_from(Matrix(1, 1, {0.0}), Matrix(4, 1, 1.0));
  EXPECT_EQ(mpr(m, ds, Split::kTest), 0.5);
}

TEST(MprTest, EmptySplitIsDataError) {
  const InteractionDataset ds({"u"}, {"a", "b"}, {{0, 0, Split::kTrain}}, {});
  const RecommenderModel m = mf_from(Matrix(1, 1, {1.0}), Matrix(2, 1, 1.0));
  EXPECT_THROW(mpr(m, ds, Split::kVal), DataError);
}

TEST(MprTest, MatchesSortOracleOnRandomCatalogs) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Positive> pos = {{0, 0, Split::kTrain}, {0, 1, Split::kTest},
                                 {0, 2, Split::kTest}, {1, 3, Split::kTrain},
                                 {1, 4, Split::kTest}};
    const InteractionDataset ds({"u", "v"}, {"a", "b", "c", "d", "e"}, pos, {});
    Matrix users(2, 2), items(5, 2);
    // Coarse values so ties occur.
    for (double& v : users.values()) v = static_cast<double>(rng.uniform_index(3)) - 1.0;
    for (double& v : items.values()) v = static_cast<double>(rng.uniform_index(3)) - 1.0;
    const RecommenderModel m = mf_from(users, items);
    EXPECT_NEAR(mpr(m, ds, Split::kTest), mpr_oracle(m, ds, Split::kTest), 1e-15)
        << "trial " << trial;
  }
}

TEST(MprTest, UntrainedModelIsNearRandom) {
  const InteractionDataset ds = planted(6);
  double lo = 1.0, hi = 0.0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const RecommenderModel m =
        init_recommender(ModelKind::kMF, ds.n_users(), ds.n_items(), 20, rng);
    const double v = mpr(m, ds, Split::kTest);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, 0.4);
  EXPECT_LE(hi, 0.6);
}

TEST(TopNTest, FullListIsPermutation) {
  Rng rng(2);
  const RecommenderModel m = testing::random_model(ModelKind::kMF, 1, 7, 3, rng);
  const InteractionDataset ds({"u"}, {"a", "b", "c", "d", "e", "f", "g"},
                              {{0, 0, Split::kTrain}}, {});
  std::vector<uint32_t> got = top_n(m, ds, 0, 7, false);
  ASSERT_EQ(got.size(), 7u);
  for (size_t k = 0; k + 1 < got.size(); ++k) {
    EXPECT_GE(score(m, m.user_embeddings.row(0), m.item_embeddings.row(got[k])),
              score(m, m.user_embeddings.row(0), m.item_embeddings.row(got[k + 1])));
  }
  std::sort(got.begin(), got.end());
  std::vector<uint32_t> all(7);
  std::iota(all.begin(), all.end(), 0u);
  EXPECT_EQ(got, all);
}

TEST(TopNTest, TiesGoToLowerIndex) {
  const std::vector<double> scores = {0.2, 0.7, 0.7, 0.1};
  EXPECT_EQ(rank_items(scores, 3), (std::vector<uint32_t>{1, 2, 0}));
}

TEST(TopNTest, HandScoredMf) {
  // Dot products with u = (1, 2): 1, -1, 4.
  const RecommenderModel m =
      mf_from(Matrix(1, 2, {1, 2}), Matrix(3, 2, {1, 0, 1, -1, 0, 2}));
  const InteractionDataset ds({"u"}, {"a", "b", "c"}, {{0, 1, Split::kTrain}}, {});
  EXPECT_EQ(top_n(m, ds, 0, 3, false), (std::vector<uint32_t>{2, 0, 1}));
  EXPECT_EQ(top_n(m, ds, 0, 3, true), (std::vector<uint32_t>{2, 0}));
}

TEST(CheckpointTest, JsonRoundTrip) {
  Rng rng(8);
  RecommenderModel m = testing::random_model(ModelKind::kNCF, 3, 4, 5, rng);
  m.dataset_fingerprint = "abc";
  const nlohmann::json j = m.to_json();
  EXPECT_EQ(j.at("schema"), "recmodel/1");
  const RecommenderModel back = RecommenderModel::from_json(j);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.fingerprint(), m.fingerprint());
}

}  // namespace
}  // namespace recsae

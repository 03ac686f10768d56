/*
 * Copyright 2026 The BHE Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

namespace bhe {
namespace {

RankingGroundTruth one_user(std::vector<std::uint32_t> positives, std::size_t n_items) {
  RankingGroundTruth gt;
  gt.positives = {std::move(positives)};
  gt.candidates.resize(1);
  for (std::uint32_t v = 0; v < n_items; ++v) gt.candidates[0].push_back(v);
  return gt;
}

TEST(Ndcg, HandValues) {
  const std::vector<std::vector<std::uint32_t>> ranking{{7, 1, 2, 3, 4, 5}};
  EXPECT_DOUBLE_EQ(ndcg_at_k(ranking, one_user({7}, 8), 5).mean, 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(ranking, one_user({2}, 8), 5).mean, 0.5);
  EXPECT_NEAR(ndcg_at_k(ranking, one_user({1, 3}, 8), 5).mean, 0.6510, 1e-4);
  EXPECT_THROW(ndcg_at_k(ranking, one_user({1}, 8), 0), ArgumentError);
}

TEST(Recall, HandValues) {
  const std::vector<std::vector<std::uint32_t>> ranking{{0, 1, 2, 3}};
  EXPECT_EQ(recall_at_k(ranking, one_user({0, 2}, 8), 3).mean, 1.0);
  EXPECT_EQ(recall_at_k(ranking, one_user({1, 5, 6, 7}, 8), 3).mean, 0.25);
  EXPECT_EQ(recall_at_k(ranking, one_user({6, 7}, 8), 3).mean, 0.0);
}

TEST(Metrics, UsersWithoutPositivesAreExcluded) {
  RankingGroundTruth gt;
  gt.positives = {{0}, {}, {1}};
  gt.candidates = {{0, 1}, {0, 1}, {0, 1}};
  const MetricReport r = recall_at_k({{0, 1}, {}, {0, 1}}, gt, 1);
  EXPECT_EQ(r.users, (std::vector<std::uint32_t>{0, 2}));
  EXPECT_DOUBLE_EQ(r.mean, 0.5);
}

TEST(Metrics, MatchBruteForceOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n_items = 1 + rng.uniform_int(8);
    const std::size_t n_users = 1 + rng.uniform_int(4);
    RankingGroundTruth gt;
    std::vector<std::vector<std::uint32_t>> rankings;
    const std::size_t k = 1 + rng.uniform_int(8);
    for (std::size_t u = 0; u < n_users; ++u) {
      std::vector<std::uint32_t> items(n_items);
      std::iota(items.begin(), items.end(), 0u);
      rng.shuffle(items);
      const std::size_t n_pos = rng.uniform_int(std::min<std::size_t>(4, n_items) + 1);
      std::vector<std::uint32_t> pos(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_pos));
      std::sort(pos.begin(), pos.end());
      gt.positives.push_back(pos);
      gt.candidates.push_back(items);
      rng.shuffle(items);
      items.resize(std::min(k, n_items));
      rankings.push_back(items);
    }
    const MetricReport nd = ndcg_at_k(rankings, gt, k);
    const MetricReport rc = recall_at_k(rankings, gt, k);
    std::size_t row = 0;
    for (std::size_t u = 0; u < n_users; ++u) {
      if (gt.positives[u].empty()) continue;
      const std::set<std::uint32_t> rel(gt.positives[u].begin(), gt.positives[u].end());
      EXPECT_EQ(nd.values[row], testing::ndcg_reference(rankings[u], rel, k));
      EXPECT_EQ(rc.values[row], testing::recall_reference(rankings[u], rel, k));
      EXPECT_GE(nd.values[row], 0.0);
      EXPECT_LE(nd.values[row], 1.0);
      ++row;
    }
    EXPECT_EQ(row, nd.user_count());
  }
}

TEST(Metrics, PerfectRankingIffPositivesFirstAndRecallMonotone) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(10);
    std::vector<std::uint32_t> items(n);
    std::iota(items.begin(), items.end(), 0u);
    rng.shuffle(items);
    const std::size_t n_pos = 1 + rng.uniform_int(n - 1);
    std::vector<std::uint32_t> pos(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_pos));
    const auto gt = one_user(pos, n);
    rng.shuffle(items);
    const std::set<std::uint32_t> rel(pos.begin(), pos.end());
    bool first = true;
    for (std::size_t j = 0; j < n_pos; ++j) first = first && rel.count(items[j]);
    EXPECT_EQ(ndcg_at_k({items}, gt, n).mean == 1.0, first);
    double previous = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double r = recall_at_k({items}, gt, k).mean;
      EXPECT_GE(r, previous);
      previous = r;
    }
  }
}

TEST(GroundTruth, CandidatesExcludeTrainingItems) {
  const Dataset train = testing::id_dataset(2, 4, {{0, 0, 1.0}, {0, 1, 0.0}, {1, 3, 1.0}});
  const Dataset test = testing::id_dataset(2, 4, {{0, 2, 1.0}, {0, 3, 0.0}, {1, 0, 4.0}});
  const RankingGroundTruth gt = build_ground_truth(train, test);
  EXPECT_EQ(gt.positives[0], (std::vector<std::uint32_t>{2}));
  EXPECT_EQ(gt.candidates[0], (std::vector<std::uint32_t>{2, 3}));
  EXPECT_EQ(gt.candidates[1], (std::vector<std::uint32_t>{0, 1, 2}));
  const RankingGroundTruth thr = build_ground_truth(train, test, 3.0);
  EXPECT_TRUE(thr.positives[0].empty());
  EXPECT_EQ(thr.positives[1], (std::vector<std::uint32_t>{0}));
}

Matrix points_of(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

TEST(Compactness, HandValues) {
  EXPECT_EQ(compactness(points_of({{1, 1}, {1, 1}, {1, 1}}), {0, 0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(compactness(points_of({{0, 0}, {2, 0}}), {0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(compactness(points_of({{0, 0}, {2, 0}, {10, 0}, {16, 0}}), {0, 0, 1, 1}), 2.0);
  EXPECT_THROW(compactness(points_of({{0, 0}, {1, 1}}), {0, 2}), ArgumentError);
}

TEST(Compactness, NonNegativeAndZeroOnlyAtCentroids) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(20), k = 1 + rng.uniform_int(std::min<std::size_t>(n, 4));
    Matrix pts(n, 2);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);
    const bool collapse = trial % 4 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < 2; ++d) pts(i, d) = collapse ? static_cast<double>(labels[i]) : rng.normal();
    }
    const double cp = compactness(pts, labels);
    EXPECT_GE(cp, 0.0);
    if (collapse) {
      EXPECT_EQ(cp, 0.0);
    }
  }
}

TEST(Ari, KnownValuesAndOracle) {
  EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}), -0.5, 1e-12);
  EXPECT_THROW(adjusted_rand_index({0}, {0, 1}), ArgumentError);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(30);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.uniform_int(3));
      b[i] = static_cast<int>(rng.uniform_int(4));
    }
    EXPECT_NEAR(adjusted_rand_index(a, b), testing::ari_reference(a, b), 1e-12);
  }
}

TEST(CrossEnv, SingleEnvironmentRowsAgree) {
  const Dataset ds = gen_heterogeneous(testing::sign_flip_config(1));
  CrossEnvConfig cfg;
  cfg.train.factors = 2;
  cfg.train.epochs = 3;
  const CrossEnvResult r = cross_env_matrix(ds, std::vector<int>(ds.size(), 0), 1, cfg);
  ASSERT_EQ(r.ndcg.rows(), 2u);
  ASSERT_EQ(r.ndcg.cols(), 1u);
  EXPECT_EQ(r.ndcg(0, 0), r.ndcg(1, 0));
}

TEST(CrossEnv, OpposingMechanismsFavourTheDiagonal) {
  const Dataset ds = gen_heterogeneous(testing::sign_flip_config(1));
  CrossEnvConfig cfg;
  cfg.train.factors = 2;
  const CrossEnvResult r = cross_env_matrix(ds, testing::truth_e(ds), 2, cfg);
  ASSERT_EQ(r.ndcg.rows(), 3u);
  ASSERT_EQ(r.ndcg.cols(), 2u);
  EXPECT_GT(std::min(r.ndcg(0, 0), r.ndcg(1, 1)), std::max(r.ndcg(0, 1), r.ndcg(1, 0)));
}

TEST(CrossEnv, TinyEnvironmentIsSkipped) {
  const Dataset ds = gen_heterogeneous(testing::sign_flip_config(1));
  std::vector<int> labels(ds.size(), 0);
  labels[0] = 1;
  CrossEnvConfig cfg;
  cfg.train.factors = 1;
  cfg.train.epochs = 1;
  const CrossEnvResult r = cross_env_matrix(ds, labels, 2, cfg);
  EXPECT_EQ(r.skipped, (std::vector<int>{1}));
  EXPECT_TRUE(std::isnan(r.ndcg(0, 1)));
  EXPECT_FALSE(std::isnan(r.ndcg(0, 0)));
  EXPECT_EQ(r.warnings.size(), 1u);
}

struct SubpopFixture {
  Dataset train, test;
  FactorizationModel model;
};

SubpopFixture subpop_fixture() {
  SynthConfig sc = testing::sign_flip_config(4);
  sc.n_item_categories = 3;
  const Split s = split(gen_heterogeneous(sc), 0.3, 5);
  TrainConfig tc;
  tc.factors = 2;
  tc.epochs = 3;
  const TrainingSet ts = make_training_set(s.train, LossKind::mse);
  FactorizationModel m = make_model(Backbone::mf, ts, tc, 1);
  sgd_train(m, ts, tc);
  return {s.train, s.test, m};
}

TEST(Subpop, SingleCategoryIsTheOverallReport) {
  SubpopFixture fx = subpop_fixture();
  const Scorer scorer = make_scorer(fx.model, fx.test);
  const RankingMetrics overall = evaluate_ranking(scorer, fx.train, fx.test, 10);
  const auto buckets = subpop_report(scorer, fx.train, fx.test, "user_id", 10);
  std::size_t users = 0;
  for (const auto& b : buckets) users += b.ndcg.user_count();
  EXPECT_EQ(users, overall.ndcg.user_count());

  // Same data under a schema whose only covariate has one category.
  Dataset train = fx.train, test = fx.test;
  FeatureSchema one({{"user_id", Side::user, {}, true}, {"item_id", Side::item, {}, true},
                     {"all", Side::user, {"x"}, false}});
  one.bind(test.n_users, test.n_items);
  for (Dataset* d : {&train, &test}) {
    d->schema = one;
    d->user_categories.assign(d->n_users * 3, 0);
    d->item_categories.assign(d->n_items * 3, 0);
  }
  const auto single = subpop_report(scorer, train, test, "all", 10);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_DOUBLE_EQ(single[0].ndcg.mean, overall.ndcg.mean);
  EXPECT_DOUBLE_EQ(single[0].recall.mean, overall.recall.mean);
  EXPECT_THROW(subpop_report(scorer, train, test, "missing", 10), ArgumentError);
}

TEST(Subpop, UserBucketsPartitionEvaluatedUsers) {
  SubpopFixture fx = subpop_fixture();
  const Scorer scorer = make_scorer(fx.model, fx.test);
  const auto overall = evaluate_ranking(scorer, fx.train, fx.test, 10);
  const auto buckets = subpop_report(scorer, fx.train, fx.test, "u_grp", 10);
  ASSERT_EQ(buckets.size(), 2u);
  std::set<std::uint32_t> seen;
  for (const auto& b : buckets) {
    for (auto u : b.ndcg.users) EXPECT_TRUE(seen.insert(u).second);
  }
  EXPECT_EQ(seen.size(), overall.ndcg.user_count());
}

TEST(Subpop, ItemBucketsMatchFilteredRecomputation) {
  SubpopFixture fx = subpop_fixture();
  const Scorer scorer = make_scorer(fx.model, fx.test);
  const std::size_t f = *fx.test.schema.find("i_cat");
  const auto buckets = subpop_report(scorer, fx.train, fx.test, "i_cat", 5);
  const RankingGroundTruth gt = build_ground_truth(fx.train, fx.test);
  for (const auto& b : buckets) {
    double sum = 0.0;
    std::size_t users = 0;
    for (std::uint32_t u = 0; u < gt.n_users(); ++u) {
      std::set<std::uint32_t> rel;
      for (auto v : gt.positives[u]) {
        if (fx.test.category(f, u, v) == b.category) rel.insert(v);
      }
      if (rel.empty()) continue;
      // Full sort of the candidates, ties by id.
      std::vector<std::pair<double, std::uint32_t>> scored;
      for (auto v : gt.candidates[u]) scored.emplace_back(-scorer(u, v), v);
      std::sort(scored.begin(), scored.end());
      std::vector<std::uint32_t> ranked;
      for (const auto& [s, v] : scored) ranked.push_back(v);
      sum += testing::recall_reference(ranked, rel, 5);
      ++users;
    }
    EXPECT_EQ(b.recall.user_count(), users);
    EXPECT_NEAR(b.recall.mean, sum / static_cast<double>(users), 1e-12);
  }
}

TEST(Profile, DegenerateAndEndpointCases) {
  const Dataset ds = gen_heterogeneous(testing::sign_flip_config(1));
  const EnvProfile one = profile_environments(ds, std::vector<int>(ds.size(), 0), 1, "i_cat");
  for (double v : one.normalized.data()) EXPECT_EQ(v, 0.0);

  testing::TempDir tmp;
  testing::write_file(tmp.file("d.csv"), "user_id,item_id,rating,g\na,x,1,p\nb,y,0,p\nc,x,1,q\n");
  const FeatureSchema schema({{"user_id", Side::user, {}, true}, {"item_id", Side::item, {}, true},
                              {"g", Side::user, {"p", "q"}, false}});
  Dataset small = binarize(load_interactions(tmp.file("d.csv"), TextFormat::csv, schema), 1.0);
  const EnvProfile p = profile_environments(small, {0, 1, 1}, 2, "g");
  EXPECT_EQ(p.normalized(0, 0), 1.0);
  EXPECT_EQ(p.normalized(1, 0), 0.0);
  // Environment 0 never shows category q: imputed with its overall rate.
  EXPECT_EQ(p.positive_rate(0, 1), 1.0);
  EXPECT_EQ(p.imputed.size(), 1u);
  EXPECT_THROW(profile_environments(small, {0, 1, 1}, 2, "zzz"), ArgumentError);
}

TEST(Profile, PlantedPreferencesAreRecovered) {
  SynthConfig sc = testing::sign_flip_config(2);
  Mechanism a, b;
  a.preferred_category = 0;
  a.preference = 2.0;
  a.offset = -0.5;
  b.preferred_category = 1;
  b.preference = 2.0;
  b.offset = -0.5;
  sc.mechanisms = {a, b};
  const Dataset ds = gen_heterogeneous(sc);
  const EnvProfile p = profile_environments(ds, testing::truth_e(ds), 2, "i_cat");
  EXPECT_EQ(argmax(p.normalized.row(0)), 0u);
  EXPECT_EQ(argmax(p.normalized.row(1)), 1u);
}

TEST(Reports, CsvShapeAndJson) {
  CrossEnvResult r;
  r.ndcg = Matrix(3, 2, 0.25);
  r.ndcg(2, 1) = std::numeric_limits<double>::quiet_NaN();
  const std::string csv = cross_env_csv(r);
  EXPECT_EQ(csv, "trained_on,env_0,env_1\nenv_0,0.2500000000,0.2500000000\nenv_1,0.2500000000,0.2500000000\n"
                 "all,0.2500000000,\n");
  EXPECT_TRUE(to_json(r)["ndcg"][2][1].is_null());
}

}  // namespace
}  // namespace bhe

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

#include "support.hpp"

namespace bhe {
namespace {

using testing::constant_only;
using testing::constant_set;

MFModel constant_model(double value) {
  MFModel m(1, 1, 0);
  m.global_bias() = value;
  return m;
}

TEST(MStep, SingleEnvironmentIsPlainTraining) {
  Rng rng(1);
  const TrainingSet ts = testing::random_training_set(rng, 60, 5, 5, false);
  BHEConfig cfg;
  cfg.n_e = 1;
  cfg.train.factors = 2;
  cfg.seed = 4;
  std::vector<FactorizationModel> models{make_model(Backbone::mf, ts, cfg.train, 7)};
  FactorizationModel plain = models[0];
  m_step(ts, std::vector<int>(ts.size(), 0), models, cfg, 3);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "m_step", 3);
  sgd_train(plain, ts, tc);
  EXPECT_TRUE(std::get<MFModel>(models[0]) == std::get<MFModel>(plain));
}

TEST(MStep, ConstantModelsFitPerEnvironmentMeans) {
  const TrainingSet ts = constant_set({0.2, 1.0, 0.4});
  BHEConfig cfg;
  cfg.train = constant_only();
  std::vector<FactorizationModel> models{MFModel(1, 1, 0), MFModel(1, 1, 0)};
  const MStepReport rep = m_step(ts, {0, 1, 0}, models, cfg);
  EXPECT_NEAR(std::get<MFModel>(models[0]).global_bias(), 0.3, 1e-3);
  EXPECT_NEAR(std::get<MFModel>(models[1]).global_bias(), 1.0, 1e-3);
  EXPECT_EQ(rep.env_sizes, (std::vector<std::size_t>{2, 1}));
  EXPECT_TRUE(rep.reinitialized_envs.empty());
}

TEST(MStep, EmptyEnvironmentIsReinitializedNotTrained) {
  const TrainingSet ts = constant_set({0.2, 0.4});
  BHEConfig cfg;
  cfg.train.factors = 1;
  cfg.train.fit_biases = false;
  std::vector<FactorizationModel> models{make_model(Backbone::mf, ts, cfg.train, 1),
                                         make_model(Backbone::mf, ts, cfg.train, 2)};
  std::get<MFModel>(models[1]).global_bias() = 9.0;
  const MStepReport rep = m_step(ts, {0, 0}, models, cfg, 5);
  EXPECT_EQ(rep.reinitialized_envs, (std::vector<int>{1}));
  FactorizationModel expected = models[1];
  reinitialize(expected, cfg.train.init_scale, derive_seed(cfg.seed, "reinit", 1 * 1000003ULL + 5));
  EXPECT_TRUE(std::get<MFModel>(models[1]) == std::get<MFModel>(expected));
  EXPECT_EQ(std::get<MFModel>(models[1]).global_bias(), 0.0);
}

TEST(EStep, HandValuesAndTies) {
  const std::vector<FactorizationModel> models{constant_model(0.2), constant_model(0.9)};
  const EStepResult r = e_step(constant_set({1.0}), models, LossKind::mse);
  EXPECT_NEAR(r.distances(0, 0), 0.64, 1e-12);
  EXPECT_NEAR(r.distances(0, 1), 0.01, 1e-12);
  EXPECT_EQ(r.labels[0], 1);

  const std::vector<FactorizationModel> tied{constant_model(0.4), constant_model(0.6)};
  const EStepResult t = e_step(constant_set({0.5}), tied, LossKind::mse);
  EXPECT_EQ(t.distances(0, 0), t.distances(0, 1));
  EXPECT_EQ(t.labels[0], 0);

  const EStepResult one = e_step(constant_set({0.1, 3.0, -2.0}), {constant_model(0.5)}, LossKind::mse);
  EXPECT_EQ(one.labels, (std::vector<int>{0, 0, 0}));
}

// Random models over random data: the chosen label attains the row minimum,
// and relabeling never increases the assigned loss of any previous labeling.
TEST(EStep, OptimalityAndMonotonicity) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const bool bce = trial % 2;
    const TrainingSet ts = testing::random_training_set(rng, 30, 4, 5, bce);
    TrainConfig tc;
    tc.factors = 2;
    const std::size_t n_e = 1 + rng.uniform_int(4);
    std::vector<FactorizationModel> models;
    for (std::size_t e = 0; e < n_e; ++e) {
      models.push_back(make_model(trial % 3 ? Backbone::mf : Backbone::fm, ts, tc, rng.next()));
      std::visit([&](auto& m) { testing::randomize(m.parameters(), rng, 1.0); }, models.back());
    }
    const EStepResult r = e_step(ts, models, bce ? LossKind::bce : LossKind::mse, 1 + trial % 3);
    std::vector<int> previous(ts.size());
    for (auto& l : previous) l = static_cast<int>(rng.uniform_int(n_e));
    for (std::size_t i = 0; i < ts.size(); ++i) {
      for (std::size_t e = 0; e < n_e; ++e) {
        EXPECT_LE(r.distances(i, static_cast<std::size_t>(r.labels[i])), r.distances(i, e));
        if (r.distances(i, e) == r.distances(i, static_cast<std::size_t>(r.labels[i]))) {
          EXPECT_LE(r.labels[i], static_cast<int>(e));
        }
      }
    }
    EXPECT_LE(assigned_loss(r.distances, r.labels), assigned_loss(r.distances, previous));
  }
}

TEST(ExploreE, SingleEnvironmentConvergesImmediately) {
  Rng rng(2);
  const TrainingSet ts = testing::random_training_set(rng, 50, 5, 5, false);
  BHEConfig cfg;
  cfg.n_e = 1;
  cfg.train.factors = 2;
  const ExploreEResult r = explore_e(ts, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.trace.size(), 1u);
  EXPECT_TRUE(std::all_of(r.labels.begin(), r.labels.end(), [](int l) { return l == 0; }));
}

TEST(ExploreE, ConstantTargetsStabilize) {
  std::vector<double> y(40, 0.7);
  BHEConfig cfg;
  cfg.n_e = 2;
  cfg.train = constant_only();
  cfg.max_em_iters = 20;
  const ExploreEResult r = explore_e(constant_set(y), cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.trace.back().label_change_fraction, 0.0);
  EXPECT_LT(r.trace.size(), 20u);
}

TEST(ExploreE, TraceLossesNeverIncreaseWithinAnIteration) {
  const Dataset ds = gen_heterogeneous(testing::sign_flip_config(3));
  const ExploreEResult r = explore_e(make_training_set(ds, LossKind::mse), testing::sign_flip_bhe(0));
  ASSERT_FALSE(r.trace.empty());
  for (const auto& it : r.trace) {
    EXPECT_LE(it.total_assigned_loss, it.loss_before_e_step);
    EXPECT_GE(it.label_change_fraction, 0.0);
    EXPECT_LE(it.label_change_fraction, 1.0);
  }
}

TEST(ExploreE, RecoversSignFlipMechanisms) {
  const Dataset ds = gen_heterogeneous(testing::sign_flip_config(1));
  ASSERT_EQ(ds.size(), 2000u);
  const auto truth = testing::truth_e(ds);
  double best = -1.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ExploreEResult r = explore_e(make_training_set(ds, LossKind::mse), testing::sign_flip_bhe(seed));
    best = std::max(best, adjusted_rand_index(r.labels, truth));
  }
  EXPECT_GE(best, 0.8);
}

TEST(ExploreE, ThreadCountDoesNotChangeLabels) {
  const Dataset ds = gen_heterogeneous(testing::sign_flip_config(2));
  const TrainingSet ts = make_training_set(ds, LossKind::mse);
  BHEConfig cfg = testing::sign_flip_bhe(1);
  cfg.max_em_iters = 10;
  const ExploreEResult a = explore_e(ts, cfg);
  cfg.threads = 4;
  const ExploreEResult b = explore_e(ts, cfg);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.distances.data(), b.distances.data());
}

TEST(ExploreR, SingleClusterAndDegenerateEnvironment) {
  Rng rng(3);
  const TrainingSet ts = testing::random_training_set(rng, 20, 4, 4, false);
  BHEConfig cfg;
  cfg.train.factors = 2;
  std::vector<FactorizationModel> models{make_model(Backbone::mf, ts, cfg.train, 1),
                                         make_model(Backbone::mf, ts, cfg.train, 2)};
  std::vector<int> labels(ts.size(), 0);
  labels[0] = labels[1] = 1;
  cfg.n_r = 1;
  const ExploreRResult r = explore_r(ts, labels, models, cfg);
  EXPECT_TRUE(std::all_of(r.labels.begin(), r.labels.end(), [](int l) { return l == 0; }));
  cfg.n_r = 3;
  try {
    explore_r(ts, labels, models, cfg);
    FAIL() << "expected a degenerate environment";
  } catch (const DegenerateEnvError& e) {
    EXPECT_NE(std::string(e.what()).find("environment 1"), std::string::npos);
  }
}

TEST(ExploreR, EmbeddingBlobsAreRecovered) {
  // Identity-like model: user factors are the blob coordinates, item factors 0.
  Rng rng(4);
  const std::size_t n = 40;
  MFModel m(n, 1, 2);
  std::vector<int> blob(n);
  for (std::size_t u = 0; u < n; ++u) {
    blob[u] = static_cast<int>(u % 2);
    m.user_factors(u)[0] = 10.0 * blob[u] + 0.1 * rng.normal();
    m.user_factors(u)[1] = 10.0 * blob[u] + 0.1 * rng.normal();
  }
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> rows;
  for (std::size_t u = 0; u < n; ++u) rows.emplace_back(static_cast<std::uint32_t>(u), 0, 1.0);
  const TrainingSet ts = make_training_set(testing::id_dataset(n, 1, rows), LossKind::mse);
  BHEConfig cfg;
  cfg.n_e = 1;
  cfg.n_r = 2;
  const ExploreRResult r = explore_r(ts, std::vector<int>(n, 0), {m}, cfg);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(r.labels[i] == r.labels[j], blob[i] == blob[j]);
  }
}

TEST(ExploreR, RawFeaturesSeparateCategories) {
  testing::TempDir tmp;
  std::string text = "user_id,item_id,rating,gender\n";
  for (int u = 0; u < 12; ++u) {
    for (int v = 0; v < 3; ++v) {
      text += "u" + std::to_string(u) + ",i" + std::to_string(v) + ",1," + (u % 2 ? "m" : "f") + "\n";
    }
  }
  testing::write_file(tmp.file("d.csv"), text);
  const FeatureSchema schema({{"gender", Side::user, {"f", "m"}, false}});
  const Dataset ds = load_interactions(tmp.file("d.csv"), TextFormat::csv, schema);
  const TrainingSet ts = make_training_set(ds, LossKind::mse);
  BHEConfig cfg;
  cfg.n_e = 1;
  cfg.n_r = 2;
  cfg.r_space = RSpace::raw_feature;
  cfg.backbone = Backbone::fm;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const ExploreRResult r = explore_r(ts, std::vector<int>(ts.size(), 0), {FMModel(ts.dimension, 1)}, cfg);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = 0; j < ds.size(); ++j) {
        EXPECT_EQ(r.labels[i] == r.labels[j], ds.category(0, ds.interactions[i].user, 0) ==
                                                   ds.category(0, ds.interactions[j].user, 0));
      }
    }
  }
}

TEST(RunBHE, SingleCellHoldsEverything) {
  Rng rng(5);
  const TrainingSet ts = testing::random_training_set(rng, 30, 4, 4, false);
  BHEConfig cfg;
  cfg.n_e = 1;
  cfg.n_r = 1;
  cfg.train.factors = 2;
  const EnvAssignment a = run_bhe(ts, cfg);
  EXPECT_EQ(a.cell_counts(), (std::vector<std::size_t>{30}));
}

TEST(RunBHE, AssignmentInvariantsOnRandomInstances) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const TrainingSet ts = testing::random_training_set(rng, 80, 6, 6, trial % 2);
    BHEConfig cfg;
    cfg.n_e = 1 + static_cast<int>(rng.uniform_int(3));
    cfg.n_r = 1 + static_cast<int>(rng.uniform_int(2));
    cfg.train.factors = 2;
    cfg.train.epochs = 3;
    cfg.train.loss_kind = trial % 2 ? LossKind::bce : LossKind::mse;
    cfg.seed = rng.next();
    EnvAssignment a;
    try {
      a = run_bhe(ts, cfg);
    } catch (const DegenerateEnvError&) {
      continue;
    }
    std::size_t total = 0;
    for (auto c : a.cell_counts()) total += c;
    EXPECT_EQ(total, ts.size());
    ASSERT_EQ(a.size(), ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
      EXPECT_EQ(a.e_labels[i], static_cast<int>(argmin(a.G_e.row(i))));
      EXPECT_EQ(a.r_labels[i], static_cast<int>(argmin(a.G_er.row(i))));
    }
  }
}

TEST(RunBHE, RecoversTwoByTwoCells) {
  SynthConfig sc = testing::sign_flip_config(1);
  sc.n_r = 2;
  sc.samples_per_cell = 500;
  sc.blob_separation = 1.5;
  sc.blob_spread = 0.2;
  sc.item_scale = 0.3;
  sc.item_mean = 0.5;
  const Dataset ds = gen_heterogeneous(sc);
  const auto truth = joint_labels(testing::truth_e(ds), testing::truth_r(ds), 2);
  double best = -1.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    BHEConfig cfg = testing::sign_flip_bhe(seed);
    cfg.n_r = 2;
    const EnvAssignment a = run_bhe(ds, cfg);
    best = std::max(best, adjusted_rand_index(joint_labels(a.e_labels, a.r_labels, 2), truth));
  }
  EXPECT_GE(best, 0.6);
}

TEST(Assignment, JsonRoundTrip) {
  Rng rng(7);
  const TrainingSet ts = testing::random_training_set(rng, 40, 5, 5, false);
  BHEConfig cfg;
  cfg.n_e = 2;
  cfg.n_r = 2;
  cfg.train.factors = 2;
  cfg.train.epochs = 2;
  const EnvAssignment a = run_bhe(ts, cfg);
  std::vector<std::string> paths{"models/e0.json", "models/e1.json"};
  const json j = to_json(a, paths, true);
  std::vector<std::string> back_paths;
  const EnvAssignment b = assignment_from_json(json::parse(j.dump()), &back_paths);
  EXPECT_EQ(back_paths, paths);
  EXPECT_EQ(b.e_labels, a.e_labels);
  EXPECT_EQ(b.r_labels, a.r_labels);
  EXPECT_EQ(b.G_e.data(), a.G_e.data());
  EXPECT_EQ(b.G_er.data(), a.G_er.data());
  EXPECT_THROW(assignment_from_json(json::parse(R"({"e_labels": [0]})"), nullptr), Error);
}

}  // namespace
}  // namespace bhe

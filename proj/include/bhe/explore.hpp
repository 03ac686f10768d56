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

// Bilevel heterogeneity exploration.
//
// Stage one clusters samples by prediction mechanism: |E| factorization
// models are fitted to their assigned samples (M step) and every sample is
// then moved to the model with the smallest loss on it (E step). Stage two
// runs k-means inside every mechanism environment, over the embeddings
// learned by that environment's model (or over one-hot raw features), to
// split it by covariate distribution.

#ifndef BHE_EXPLORE_HPP_
#define BHE_EXPLORE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "bhe/common.hpp"
#include "bhe/data.hpp"
#include "bhe/kmeans.hpp"
#include "bhe/models.hpp"

namespace bhe {

enum class RSpace { embedding, raw_feature };

inline std::string to_string(RSpace s) {
  return s == RSpace::embedding ? "embedding" : "raw_feature";
}

struct BHEConfig {
  int n_e = 2;
  int n_r = 1;
  int max_em_iters = 20;
  double label_change_tol = 0.01;
  RSpace r_space = RSpace::embedding;
  Backbone backbone = Backbone::mf;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (n_e < 1) throw ConfigError("n_e must be >= 1");
    if (n_r < 1) throw ConfigError("n_r must be >= 1");
    if (max_em_iters < 1) throw ConfigError("max_em_iters must be >= 1");
    if (!(label_change_tol >= 0.0)) throw ConfigError("label_change_tol must be >= 0");
    train.validate();
  }
};

struct EMIteration {
  int iteration = 0;
  // Sum over samples of G_e[label] with the new models, before and after
  // re-labeling. The E step never increases it.
  double loss_before_e_step = 0.0;
  double total_assigned_loss = 0.0;
  double label_change_fraction = 0.0;
  std::vector<double> env_losses;
  std::vector<std::size_t> env_sizes;
  std::vector<int> reinitialized_envs;
};

struct MStepReport {
  std::vector<double> env_losses;
  std::vector<std::size_t> env_sizes;
  std::vector<int> reinitialized_envs;
};

struct EStepResult {
  std::vector<int> labels;
  Matrix distances;  // n x |E|, d_{u,v,e} = loss(h_e(u,v), y)
};

struct ExploreEResult {
  std::vector<int> labels;
  Matrix distances;
  std::vector<FactorizationModel> models;
  std::vector<EMIteration> trace;
  bool converged = false;
};

struct ExploreRResult {
  std::vector<int> labels;
  Matrix distances;              // n x |R|, to the centers of the sample's own e
  std::vector<Matrix> centers;   // per e, |R| x dim
  std::vector<std::vector<double>> objective_histories;  // per e
};

struct EnvAssignment {
  int n_e = 1;
  int n_r = 1;
  std::vector<int> e_labels;
  std::vector<int> r_labels;
  Matrix G_e;
  Matrix G_er;
  std::vector<FactorizationModel> models;
  std::vector<Matrix> r_centers;
  std::vector<EMIteration> trace;

  std::size_t size() const { return e_labels.size(); }

  // |D_{e,r}| for every cell, row-major [e][r].
  std::vector<std::size_t> cell_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_e * n_r), 0);
    for (std::size_t i = 0; i < e_labels.size(); ++i) {
      ++counts[static_cast<std::size_t>(e_labels[i] * n_r + r_labels[i])];
    }
    return counts;
  }
};

// Indices of samples per label.
inline std::vector<std::vector<std::size_t>> group_by_label(const std::vector<int>& labels,
                                                            int n_groups) {
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(n_groups));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    groups.at(static_cast<std::size_t>(labels[i])).push_back(i);
  }
  return groups;
}

// Trains every h_e on its own D_e, warm-started from the current parameters.
// Models of empty environments are re-initialized from the seed and left
// untrained so the next E step can still capture samples for them.
inline MStepReport m_step(const TrainingSet& data, const std::vector<int>& labels,
                          std::vector<FactorizationModel>& models, const BHEConfig& cfg,
                          int iteration = 0) {
  const int n_e = static_cast<int>(models.size());
  const auto groups = group_by_label(labels, n_e);
  MStepReport report;
  report.env_losses.assign(models.size(), 0.0);
  report.env_sizes.assign(models.size(), 0);
  std::vector<char> reinit(models.size(), 0);
  parallel_for(models.size(), cfg.threads, [&](std::size_t e) {
    report.env_sizes[e] = groups[e].size();
    if (groups[e].empty()) {
      reinitialize(models[e], cfg.train.init_scale,
                   derive_seed(cfg.seed, "reinit", e * 1000003ULL + static_cast<std::uint64_t>(iteration)));
      reinit[e] = 1;
      return;
    }
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "m_step", e * 1000003ULL + static_cast<std::uint64_t>(iteration));
    const TrainingSet subset = data.select(groups[e]);
    report.env_losses[e] = sgd_train(models[e], subset, tc).final_loss;
  });
  for (std::size_t e = 0; e < models.size(); ++e) {
    if (reinit[e]) report.reinitialized_envs.push_back(static_cast<int>(e));
  }
  return report;
}

// d_{u,v,e} for every sample and model; label = argmin, ties to lowest e.
inline EStepResult e_step(const TrainingSet& data, const std::vector<FactorizationModel>& models,
                          LossKind kind, std::size_t threads = 1) {
  EStepResult result;
  const std::size_t n = data.size();
  result.labels.assign(n, 0);
  result.distances = Matrix(n, models.size());
  parallel_for(n, threads, [&](std::size_t i) {
    auto row = result.distances.row(i);
    for (std::size_t e = 0; e < models.size(); ++e) {
      row[e] = loss(predict_sample(models[e], data, i), data.targets[i], kind);
    }
    result.labels[i] = static_cast<int>(argmin(row));
  });
  return result;
}

inline double assigned_loss(const Matrix& distances, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += distances(i, static_cast<std::size_t>(labels[i]));
  }
  return total;
}

// EM-like alternation from uniformly random initial labels until fewer than
// label_change_tol of the labels move, or max_em_iters is reached.
inline ExploreEResult explore_e(const TrainingSet& data, const BHEConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ArgumentError("explore_e needs data");
  ExploreEResult result;
  const auto n_e = static_cast<std::size_t>(cfg.n_e);
  for (std::size_t e = 0; e < n_e; ++e) {
    result.models.push_back(make_model(cfg.backbone, data, cfg.train, derive_seed(cfg.seed, "init", e)));
  }
  Rng rng(derive_seed(cfg.seed, "labels"));
  result.labels.resize(data.size());
  for (auto& l : result.labels) l = static_cast<int>(rng.uniform_int(n_e));

  for (int iter = 1; iter <= cfg.max_em_iters; ++iter) {
    const MStepReport m = m_step(data, result.labels, result.models, cfg, iter);
    EStepResult e = e_step(data, result.models, cfg.train.loss_kind, cfg.threads);
    EMIteration record;
    record.iteration = iter;
    record.loss_before_e_step = assigned_loss(e.distances, result.labels);
    record.total_assigned_loss = assigned_loss(e.distances, e.labels);
    if (record.total_assigned_loss > record.loss_before_e_step) {
      throw Error("E step increased the assigned loss in iteration " + std::to_string(iter));
    }
    std::size_t changed = 0;
    for (std::size_t i = 0; i < e.labels.size(); ++i) changed += e.labels[i] != result.labels[i];
    record.label_change_fraction = static_cast<double>(changed) / static_cast<double>(data.size());
    record.env_losses = m.env_losses;
    record.env_sizes = m.env_sizes;
    record.reinitialized_envs = m.reinitialized_envs;
    result.trace.push_back(record);
    result.labels = std::move(e.labels);
    result.distances = std::move(e.distances);
    if (record.label_change_fraction < cfg.label_change_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

// Dense one-hot rows of the raw features.
inline Matrix raw_feature_points(const TrainingSet& data, std::span<const std::size_t> indices) {
  Matrix points(indices.size(), data.dimension);
  for (std::size_t row = 0; row < indices.size(); ++row) {
    for (auto f : data.features_of(indices[row])) points(row, f) = 1.0;
  }
  return points;
}

inline Matrix embedding_points(const TrainingSet& data, std::span<const std::size_t> indices,
                               const FactorizationModel& model) {
  Matrix points(indices.size(), embedding_width(model, data.nnz));
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const auto a = extract_embedding(model, data, indices[row]);
    std::copy(a.begin(), a.end(), points.row(row).begin());
  }
  return points;
}

// k-means with k = n_r inside every E environment.
inline ExploreRResult explore_r(const TrainingSet& data, const std::vector<int>& e_labels,
                                const std::vector<FactorizationModel>& models,
                                const BHEConfig& cfg) {
  const int n_e = static_cast<int>(models.size());
  const auto n_r = static_cast<std::size_t>(cfg.n_r);
  const auto groups = group_by_label(e_labels, n_e);
  for (int e = 0; e < n_e; ++e) {
    if (groups[static_cast<std::size_t>(e)].size() < n_r) {
      throw DegenerateEnvError("environment " + std::to_string(e) + " has " +
                               std::to_string(groups[static_cast<std::size_t>(e)].size()) +
                               " samples, fewer than n_r = " + std::to_string(n_r));
    }
  }
  ExploreRResult result;
  result.labels.assign(data.size(), 0);
  result.distances = Matrix(data.size(), n_r);
  result.centers.resize(static_cast<std::size_t>(n_e));
  result.objective_histories.resize(static_cast<std::size_t>(n_e));
  parallel_for(static_cast<std::size_t>(n_e), cfg.threads, [&](std::size_t e) {
    const auto& idx = groups[e];
    const Matrix points = cfg.r_space == RSpace::raw_feature
                              ? raw_feature_points(data, idx)
                              : embedding_points(data, idx, models[e]);
    KMeansResult km = kmeans(points, n_r, derive_seed(cfg.seed, "kmeans", e));
    for (std::size_t row = 0; row < idx.size(); ++row) {
      result.labels[idx[row]] = km.labels[row];
      for (std::size_t r = 0; r < n_r; ++r) result.distances(idx[row], r) = km.distances(row, r);
    }
    result.centers[e] = std::move(km.centers);
    result.objective_histories[e] = std::move(km.objective_history);
  });
  return result;
}

inline EnvAssignment run_bhe(const TrainingSet& data, const BHEConfig& cfg) {
  ExploreEResult e = explore_e(data, cfg);
  ExploreRResult r = explore_r(data, e.labels, e.models, cfg);
  EnvAssignment a;
  a.n_e = cfg.n_e;
  a.n_r = cfg.n_r;
  a.e_labels = std::move(e.labels);
  a.r_labels = std::move(r.labels);
  a.G_e = std::move(e.distances);
  a.G_er = std::move(r.distances);
  a.models = std::move(e.models);
  a.r_centers = std::move(r.centers);
  a.trace = std::move(e.trace);
  return a;
}

inline EnvAssignment run_bhe(const Dataset& ds, const BHEConfig& cfg) {
  return run_bhe(make_training_set(ds, cfg.train.loss_kind), cfg);
}

// ---------------------------------------------------------------------------
// Serialization

inline json trace_to_json(const std::vector<EMIteration>& trace) {
  json out = json::array();
  for (const auto& it : trace) {
    out.push_back({{"iteration", it.iteration},
                   {"loss_before_e_step", it.loss_before_e_step},
                   {"total_assigned_loss", it.total_assigned_loss},
                   {"label_change_fraction", it.label_change_fraction},
                   {"env_losses", it.env_losses},
                   {"env_sizes", it.env_sizes},
                   {"reinitialized_envs", it.reinitialized_envs}});
  }
  return out;
}

// Models are stored as separate files referenced from `model_paths`.
inline json to_json(const EnvAssignment& a, const std::vector<std::string>& model_paths,
                    bool include_distances = true) {
  json centers = json::array();
  for (const auto& c : a.r_centers) {
    centers.push_back({{"rows", c.rows()}, {"cols", c.cols()}, {"values", c.data()}});
  }
  json j = {{"format", "bhe-assignment"},
            {"version", 1},
            {"n_e", a.n_e},
            {"n_r", a.n_r},
            {"e_labels", a.e_labels},
            {"r_labels", a.r_labels},
            {"r_centers", centers},
            {"models", model_paths}};
  if (include_distances) {
    j["G_e"] = {{"rows", a.G_e.rows()}, {"cols", a.G_e.cols()}, {"values", a.G_e.data()}};
    j["G_er"] = {{"rows", a.G_er.rows()}, {"cols", a.G_er.cols()}, {"values", a.G_er.data()}};
  }
  return j;
}

inline Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != m.rows() * m.cols()) throw FormatError("matrix values have wrong length");
  m.data() = values;
  return m;
}

// Reads labels, distances and centers; models are loaded by the caller from
// the returned paths.
inline EnvAssignment assignment_from_json(const json& j, std::vector<std::string>* model_paths) {
  try {
    if (j.value("format", "") != "bhe-assignment") throw FormatError("not a bhe-assignment document");
    EnvAssignment a;
    a.n_e = j.at("n_e").get<int>();
    a.n_r = j.at("n_r").get<int>();
    a.e_labels = j.at("e_labels").get<std::vector<int>>();
    a.r_labels = j.at("r_labels").get<std::vector<int>>();
    if (a.e_labels.size() != a.r_labels.size()) throw FormatError("label arrays differ in length");
    for (std::size_t i = 0; i < a.e_labels.size(); ++i) {
      if (a.e_labels[i] < 0 || a.e_labels[i] >= a.n_e || a.r_labels[i] < 0 ||
          a.r_labels[i] >= a.n_r) {
        throw FormatError("assignment label out of range at sample " + std::to_string(i));
      }
    }
    if (j.contains("G_e")) a.G_e = matrix_from_json(j["G_e"]);
    if (j.contains("G_er")) a.G_er = matrix_from_json(j["G_er"]);
    for (const auto& c : j.value("r_centers", json::array())) a.r_centers.push_back(matrix_from_json(c));
    if (model_paths) *model_paths = j.value("models", std::vector<std::string>{});
    return a;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed assignment: ") + e.what());
  }
}

}  // namespace bhe

#endif  // BHE_EXPLORE_HPP_

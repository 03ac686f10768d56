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

#ifndef BHE_EVAL_HPP_
#define BHE_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bhe/common.hpp"
#include "bhe/data.hpp"
#include "bhe/exploit.hpp"
#include "bhe/models.hpp"

namespace bhe {

// Per user: positive test items and the candidate items to rank. Indexed by
// user id; users without positives have an empty positive list.
struct RankingGroundTruth {
  std::vector<std::vector<std::uint32_t>> positives;
  std::vector<std::vector<std::uint32_t>> candidates;

  std::size_t n_users() const { return positives.size(); }
};

// A test sample is positive when its label is 1, or, with a threshold, when
// rating >= threshold. Candidates: every item the user has no training
// interaction with, plus the user's test positives.
inline RankingGroundTruth build_ground_truth(const Dataset& train, const Dataset& test,
                                             std::optional<double> threshold = std::nullopt) {
  const std::size_t n_users = std::max(train.n_users, test.n_users);
  const std::size_t n_items = std::max(train.n_items, test.n_items);
  std::vector<std::vector<bool>> seen(n_users, std::vector<bool>(n_items, false));
  for (const auto& it : train.interactions) seen[it.user][it.item] = true;
  RankingGroundTruth gt;
  gt.positives.resize(n_users);
  gt.candidates.resize(n_users);
  std::vector<std::vector<bool>> positive(n_users, std::vector<bool>(n_items, false));
  for (const auto& it : test.interactions) {
    const bool pos = threshold ? it.rating >= *threshold : it.label == 1;
    if (pos) positive[it.user][it.item] = true;
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    for (std::uint32_t v = 0; v < n_items; ++v) {
      if (positive[u][v]) gt.positives[u].push_back(v);
      if (!seen[u][v] || positive[u][v]) gt.candidates[u].push_back(v);
    }
  }
  return gt;
}

struct MetricReport {
  std::string metric;
  std::size_t k = 0;
  std::vector<std::uint32_t> users;
  std::vector<double> values;
  double mean = 0.0;

  std::size_t user_count() const { return users.size(); }
};

namespace detail {

inline std::vector<bool> positive_mask(const std::vector<std::uint32_t>& positives, std::size_t n) {
  std::vector<bool> m(n, false);
  for (auto v : positives) m.at(v) = true;
  return m;
}

inline std::size_t max_item(const RankingGroundTruth& gt,
                            const std::vector<std::vector<std::uint32_t>>& rankings) {
  std::size_t n = 0;
  for (const auto& p : gt.positives) for (auto v : p) n = std::max<std::size_t>(n, v + 1);
  for (const auto& r : rankings) for (auto v : r) n = std::max<std::size_t>(n, v + 1);
  return n;
}

template <class PerUser>
MetricReport per_user_metric(const std::string& name, const std::vector<std::vector<std::uint32_t>>& rankings,
                             const RankingGroundTruth& gt, std::size_t k, PerUser fn) {
  if (k < 1) throw ArgumentError("K must be >= 1");
  if (rankings.size() != gt.n_users()) throw ArgumentError("one ranking per user is required");
  MetricReport r;
  r.metric = name;
  r.k = k;
  const std::size_t n_items = max_item(gt, rankings);
  double sum = 0.0;
  for (std::size_t u = 0; u < gt.n_users(); ++u) {
    if (gt.positives[u].empty()) continue;
    const auto mask = positive_mask(gt.positives[u], n_items);
    const double value = fn(rankings[u], mask, gt.positives[u].size());
    r.users.push_back(static_cast<std::uint32_t>(u));
    r.values.push_back(value);
    sum += value;
  }
  r.mean = r.users.empty() ? 0.0 : sum / static_cast<double>(r.users.size());
  return r;
}

}  // namespace detail

inline MetricReport ndcg_at_k(const std::vector<std::vector<std::uint32_t>>& rankings,
                              const RankingGroundTruth& gt, std::size_t k) {
  return detail::per_user_metric(
      "ndcg", rankings, gt, k,
      [k](const std::vector<std::uint32_t>& ranked, const std::vector<bool>& pos, std::size_t n_pos) {
        double dcg = 0.0;
        const std::size_t depth = std::min(k, ranked.size());
        for (std::size_t j = 0; j < depth; ++j) {
          if (pos[ranked[j]]) dcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
        }
        double idcg = 0.0;
        for (std::size_t j = 0; j < std::min(k, n_pos); ++j) idcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
        return dcg / idcg;
      });
}

inline MetricReport recall_at_k(const std::vector<std::vector<std::uint32_t>>& rankings,
                                const RankingGroundTruth& gt, std::size_t k) {
  return detail::per_user_metric(
      "recall", rankings, gt, k,
      [k](const std::vector<std::uint32_t>& ranked, const std::vector<bool>& pos, std::size_t n_pos) {
        std::size_t hits = 0;
        const std::size_t depth = std::min(k, ranked.size());
        for (std::size_t j = 0; j < depth; ++j) hits += pos[ranked[j]] ? 1 : 0;
        return static_cast<double>(hits) / static_cast<double>(n_pos);
      });
}

// Top-`depth` ranking of every user's candidates. Users without positives get
// an empty list.
inline std::vector<std::vector<std::uint32_t>> rank_candidates(const Scorer& scorer,
                                                               const RankingGroundTruth& gt,
                                                               std::size_t depth,
                                                               std::size_t threads = 1) {
  std::vector<std::vector<std::uint32_t>> rankings(gt.n_users());
  parallel_for(gt.n_users(), threads, [&](std::size_t u) {
    if (gt.positives[u].empty()) return;
    rankings[u] = recommend_topk(scorer, static_cast<std::uint32_t>(u), gt.candidates[u], depth);
  });
  return rankings;
}

struct RankingMetrics {
  MetricReport ndcg;
  MetricReport recall;
};

inline RankingMetrics evaluate_ranking(const Scorer& scorer, const RankingGroundTruth& gt,
                                       std::size_t k, std::size_t threads = 1) {
  const auto rankings = rank_candidates(scorer, gt, k, threads);
  return {ndcg_at_k(rankings, gt, k), recall_at_k(rankings, gt, k)};
}

inline RankingMetrics evaluate_ranking(const Scorer& scorer, const Dataset& train, const Dataset& test,
                                       std::size_t k, std::optional<double> threshold = std::nullopt,
                                       std::size_t threads = 1) {
  return evaluate_ranking(scorer, build_ground_truth(train, test, threshold), k, threads);
}

// Mean over clusters of the mean Euclidean distance to the cluster centroid.
inline double compactness(const Matrix& points, const std::vector<int>& labels) {
  if (labels.size() != points.rows()) throw ArgumentError("one label per point is required");
  int n_clusters = 0;
  for (int l : labels) {
    if (l < 0) throw ArgumentError("negative cluster label");
    n_clusters = std::max(n_clusters, l + 1);
  }
  if (n_clusters == 0) throw ArgumentError("compactness needs at least one point");
  const std::size_t dim = points.cols();
  Matrix centroid(static_cast<std::size_t>(n_clusters), dim);
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_clusters), 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    for (std::size_t d = 0; d < dim; ++d) centroid(c, d) += points(i, d);
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw ArgumentError("cluster " + std::to_string(c) + " is empty");
    for (std::size_t d = 0; d < dim; ++d) centroid(c, d) /= static_cast<double>(counts[c]);
  }
  std::vector<double> spread(counts.size(), 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    spread[c] += std::sqrt(squared_distance(points.row(i), centroid.row(c)));
  }
  double cp = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) cp += spread[c] / static_cast<double>(counts[c]);
  return cp / static_cast<double>(counts.size());
}

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ArgumentError("partitions differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, c] : table) index += pairs(c);
  for (const auto& [key, c] : rows) sum_rows += pairs(c);
  for (const auto& [key, c] : cols) sum_cols += pairs(c);
  const double expected = sum_rows * sum_cols / pairs(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// Joint (e, r) label as a single integer.
inline std::vector<int> joint_labels(const std::vector<int>& e, const std::vector<int>& r, int n_r) {
  std::vector<int> out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = e[i] * n_r + r[i];
  return out;
}

// One-hot raw feature vector of every sample.
inline Matrix one_hot_points(const Dataset& ds) {
  Matrix points(ds.size(), ds.schema.dimension());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (auto f : encode(ds.interactions[i], ds)) points(i, f) = 1.0;
  }
  return points;
}

// ---------------------------------------------------------------------------
// Cross-environment matrix

struct CrossEnvConfig {
  Backbone backbone = Backbone::mf;
  TrainConfig train;
  std::size_t k = 10;
  double test_fraction = 0.2;
  std::optional<double> threshold;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct CrossEnvResult {
  // (|E| + 1) x |E|; row |E| is the model trained on all environments. NaN
  // marks skipped environments.
  Matrix ndcg;
  std::vector<int> skipped;
  std::vector<std::string> warnings;
};

inline CrossEnvResult cross_env_matrix(const Dataset& ds, const std::vector<int>& e_labels, int n_e,
                                       const CrossEnvConfig& cfg) {
  if (e_labels.size() != ds.size()) throw ArgumentError("assignment does not cover the dataset");
  CrossEnvResult res;
  const auto groups = group_by_label(e_labels, n_e);
  const auto n = static_cast<std::size_t>(n_e);
  std::vector<std::optional<Split>> splits(n);
  std::vector<std::size_t> all_train, all_test;
  for (std::size_t e = 0; e < n; ++e) {
    const Dataset env = ds.subset(groups[e]);
    const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(env.size())));
    if (env.size() < 2 || n_test == 0 || n_test == env.size()) {
      res.skipped.push_back(static_cast<int>(e));
      res.warnings.push_back("environment " + std::to_string(e) + " is too small to split; skipped");
      continue;
    }
    splits[e] = split(env, cfg.test_fraction, derive_seed(cfg.seed, "cross_env_split", e));
    for (auto i : splits[e]->train_indices) all_train.push_back(groups[e][i]);
    for (auto i : splits[e]->test_indices) all_test.push_back(groups[e][i]);
  }
  std::sort(all_train.begin(), all_train.end());
  const Dataset train_all = ds.subset(all_train);

  std::vector<std::optional<FactorizationModel>> models(n + 1);
  auto fit = [&](const Dataset& train, std::size_t slot) {
    const TrainingSet data = make_training_set(train, cfg.train.loss_kind);
    // One init and shuffle seed for every model.
    FactorizationModel m = make_model(cfg.backbone, data, cfg.train, derive_seed(cfg.seed, "cross_env_init"));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "cross_env_train");
    sgd_train(m, data, tc);
    models[slot] = std::move(m);
  };
  parallel_for(n + 1, cfg.threads, [&](std::size_t slot) {
    if (slot == n) {
      fit(train_all, n);
    } else if (splits[slot]) {
      fit(splits[slot]->train, slot);
    }
  });

  res.ndcg = Matrix(n + 1, n);
  for (std::size_t i = 0; i <= n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!models[i] || !splits[j]) {
        res.ndcg(i, j) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const auto gt = build_ground_truth(train_all, splits[j]->test, cfg.threshold);
      res.ndcg(i, j) = evaluate_ranking(make_scorer(*models[i], ds), gt, cfg.k, 1).ndcg.mean;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Sub-population reports

struct SubpopBucket {
  std::uint32_t category = 0;
  std::string name;
  MetricReport ndcg;
  MetricReport recall;
};

// User-side fields bucket the evaluated users; item-side fields bucket the
// test positives (and keep every user's candidates).
inline std::vector<SubpopBucket> subpop_report(const Scorer& scorer, const Dataset& train,
                                               const Dataset& test, const std::string& field,
                                               std::size_t k, std::optional<double> threshold = std::nullopt,
                                               std::size_t threads = 1) {
  const auto f = test.schema.find(field);
  if (!f) throw ArgumentError("unknown grouping field '" + field + "'");
  const auto& spec = test.schema.fields()[*f];
  const RankingGroundTruth gt = build_ground_truth(train, test, threshold);
  const auto rankings = rank_candidates(scorer, gt, k, threads);
  const std::size_t n_categories = test.schema.cardinality(*f);
  std::vector<SubpopBucket> out;
  for (std::uint32_t c = 0; c < n_categories; ++c) {
    RankingGroundTruth bucket;
    bucket.positives.resize(gt.n_users());
    bucket.candidates = gt.candidates;
    bool any = false;
    for (std::size_t u = 0; u < gt.n_users(); ++u) {
      for (auto v : gt.positives[u]) {
        if (test.category(*f, static_cast<std::uint32_t>(u), v) == c) bucket.positives[u].push_back(v);
      }
      if (spec.side == Side::item) {
        any = any || !bucket.positives[u].empty();
      } else if (!bucket.positives[u].empty()) {
        bucket.positives[u] = gt.positives[u];
        any = true;
      }
    }
    if (!any) continue;
    SubpopBucket b;
    b.category = c;
    b.name = spec.id_field ? std::to_string(c) : spec.categories.at(c);
    b.ndcg = ndcg_at_k(rankings, bucket, k);
    b.recall = recall_at_k(rankings, bucket, k);
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Environment profiles

struct EnvProfile {
  std::string field;
  std::vector<std::string> categories;
  Matrix positive_rate;  // |E| x categories
  Matrix normalized;     // min-max across environments per category
  std::vector<std::pair<int, std::uint32_t>> imputed;
};

inline EnvProfile profile_environments(const Dataset& ds, const std::vector<int>& e_labels, int n_e,
                                       const std::string& field) {
  if (e_labels.size() != ds.size()) throw ArgumentError("assignment does not cover the dataset");
  const auto f = ds.schema.find(field);
  if (!f) throw ArgumentError("unknown profile field '" + field + "'");
  const auto& spec = ds.schema.fields()[*f];
  const std::size_t n_cat = ds.schema.cardinality(*f);
  const auto n = static_cast<std::size_t>(n_e);
  EnvProfile p;
  p.field = field;
  for (std::size_t c = 0; c < n_cat; ++c) {
    p.categories.push_back(spec.id_field ? std::to_string(c) : spec.categories.at(c));
  }
  Matrix pos(n, n_cat), cnt(n, n_cat);
  std::vector<double> env_pos(n, 0.0), env_cnt(n, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& it = ds.interactions[i];
    const auto e = static_cast<std::size_t>(e_labels[i]);
    const auto c = ds.category(*f, it.user, it.item);
    pos(e, c) += it.label;
    cnt(e, c) += 1.0;
    env_pos[e] += it.label;
    env_cnt[e] += 1.0;
  }
  p.positive_rate = Matrix(n, n_cat);
  for (std::size_t e = 0; e < n; ++e) {
    const double overall = env_cnt[e] > 0.0 ? env_pos[e] / env_cnt[e] : 0.0;
    for (std::size_t c = 0; c < n_cat; ++c) {
      if (cnt(e, c) > 0.0) {
        p.positive_rate(e, c) = pos(e, c) / cnt(e, c);
      } else {
        p.positive_rate(e, c) = overall;
        p.imputed.emplace_back(static_cast<int>(e), static_cast<std::uint32_t>(c));
      }
    }
  }
  p.normalized = Matrix(n, n_cat);
  for (std::size_t c = 0; c < n_cat; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t e = 0; e < n; ++e) {
      lo = std::min(lo, p.positive_rate(e, c));
      hi = std::max(hi, p.positive_rate(e, c));
    }
    for (std::size_t e = 0; e < n; ++e) {
      p.normalized(e, c) = hi > lo ? (p.positive_rate(e, c) - lo) / (hi - lo) : 0.0;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Report emission

inline json to_json(const MetricReport& r, bool per_user = false) {
  json j = {{"metric", r.metric}, {"k", r.k}, {"mean", r.mean}, {"user_count", r.user_count()}};
  if (per_user) {
    j["users"] = r.users;
    j["values"] = r.values;
  }
  return j;
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (std::isnan(m(i, j))) {
        row.push_back(nullptr);
      } else {
        row.push_back(m(i, j));
      }
    }
    rows.push_back(row);
  }
  return rows;
}

inline json to_json(const CrossEnvResult& r) {
  return {{"ndcg", matrix_to_json(r.ndcg)}, {"skipped", r.skipped}, {"warnings", r.warnings}};
}

inline json to_json(const std::vector<SubpopBucket>& buckets) {
  json out = json::array();
  for (const auto& b : buckets) {
    out.push_back({{"category", b.category}, {"name", b.name}, {"ndcg", to_json(b.ndcg)},
                   {"recall", to_json(b.recall)}});
  }
  return out;
}

inline json to_json(const EnvProfile& p) {
  json imputed = json::array();
  for (const auto& [e, c] : p.imputed) imputed.push_back({e, c});
  return {{"field", p.field},
          {"categories", p.categories},
          {"positive_rate", matrix_to_json(p.positive_rate)},
          {"normalized", matrix_to_json(p.normalized)},
          {"imputed", imputed}};
}

inline std::string format_number(double v, int precision = 6) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// Aligned columns, first row is the header.
inline std::string format_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) os << "  ";
      os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
    }
    os << '\n';
  }
  return os.str();
}

inline std::string cross_env_csv(const CrossEnvResult& r) {
  std::ostringstream os;
  os << "trained_on";
  for (std::size_t j = 0; j < r.ndcg.cols(); ++j) os << ",env_" << j;
  os << '\n';
  for (std::size_t i = 0; i < r.ndcg.rows(); ++i) {
    os << (i + 1 == r.ndcg.rows() ? std::string("all") : "env_" + std::to_string(i));
    for (std::size_t j = 0; j < r.ndcg.cols(); ++j) {
      os << ',';
      if (!std::isnan(r.ndcg(i, j))) os << format_number(r.ndcg(i, j), 10);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace bhe

#endif  // BHE_EVAL_HPP_

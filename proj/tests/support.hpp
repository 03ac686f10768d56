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

// Test helpers: scratch directories, small hand-rolled generators and
// brute-force reference implementations.

#ifndef BHE_TESTS_SUPPORT_HPP_
#define BHE_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <unistd.h>

#include "bhe/bhe.hpp"

namespace bhe::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("bhe_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Contents of every regular file under `dir`, keyed by relative path.
inline std::vector<std::pair<std::string, std::string>> snapshot(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      out.emplace_back(fs::relative(entry.path(), dir).string(), read_file(entry.path().string()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Id-only schema with `n_users` x `n_items` and the given samples.
inline Dataset id_dataset(std::size_t n_users, std::size_t n_items,
                          const std::vector<std::tuple<std::uint32_t, std::uint32_t, double>>& rows) {
  Dataset ds;
  ds.schema = FeatureSchema({{"user_id", Side::user, {}, true}, {"item_id", Side::item, {}, true}});
  ds.n_users = n_users;
  ds.n_items = n_items;
  ds.schema.bind(n_users, n_items);
  const std::size_t nf = ds.schema.size();
  ds.user_categories.assign(n_users * nf, 0);
  ds.item_categories.assign(n_items * nf, 0);
  for (std::size_t u = 0; u < n_users; ++u) {
    ds.user_categories[u * nf] = static_cast<std::uint32_t>(u);
    ds.user_names.push_back("u" + std::to_string(u));
  }
  for (std::size_t v = 0; v < n_items; ++v) {
    ds.item_categories[v * nf + 1] = static_cast<std::uint32_t>(v);
    ds.item_names.push_back("i" + std::to_string(v));
  }
  for (const auto& [u, v, y] : rows) {
    Interaction it;
    it.user = u;
    it.item = v;
    it.rating = y;
    it.label = y >= 0.5 ? 1 : 0;
    ds.interactions.push_back(it);
  }
  return ds;
}

// Constant targets on a single (user, item) id space; every sample touches
// user 0 and item 0.
inline TrainingSet constant_set(const std::vector<double>& targets, const std::vector<double>& weights = {}) {
  TrainingSet ts;
  ts.n_users = 1;
  ts.n_items = 1;
  ts.dimension = 2;
  ts.nnz = 2;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ts.users.push_back(0);
    ts.items.push_back(0);
    ts.features.push_back(0);
    ts.features.push_back(1);
    ts.targets.push_back(targets[i]);
    ts.weights.push_back(weights.empty() ? 1.0 : weights[i]);
  }
  return ts;
}

// Global bias only, full-batch steps.
inline TrainConfig constant_only(int epochs = 400, double lr = 0.05) {
  TrainConfig c;
  c.factors = 0;
  c.fit_biases = false;
  c.fit_global_bias = true;
  c.l2_reg = 0.0;
  c.epochs = epochs;
  c.learning_rate = lr;
  c.batch_size = std::size_t{1} << 30;
  return c;
}

inline TrainingSet random_training_set(Rng& rng, std::size_t n, std::size_t n_users, std::size_t n_items,
                                       bool binary) {
  TrainingSet ts;
  ts.n_users = n_users;
  ts.n_items = n_items;
  ts.dimension = n_users + n_items;
  ts.nnz = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::uint32_t>(rng.uniform_int(n_users));
    const auto v = static_cast<std::uint32_t>(rng.uniform_int(n_items));
    ts.users.push_back(u);
    ts.items.push_back(v);
    ts.features.push_back(u);
    ts.features.push_back(static_cast<std::uint32_t>(n_users + v));
    ts.targets.push_back(binary ? static_cast<double>(rng.uniform_int(2)) : rng.uniform(-2.0, 2.0));
    ts.weights.push_back(rng.uniform(0.1, 2.0));
  }
  return ts;
}

inline void randomize(std::span<double> params, Rng& rng, double scale = 1.0) {
  for (double& p : params) p = rng.uniform(-scale, scale);
}

// NDCG@K from the definition: DCG over the top-K list, IDCG from sorting the
// relevance of every listed or relevant item.
inline double ndcg_reference(const std::vector<std::uint32_t>& ranked, const std::set<std::uint32_t>& relevant,
                             std::size_t k) {
  double dcg = 0.0;
  for (std::size_t pos = 1; pos <= ranked.size() && pos <= k; ++pos) {
    const double rel = relevant.count(ranked[pos - 1]) ? 1.0 : 0.0;
    dcg += (std::pow(2.0, rel) - 1.0) / std::log2(static_cast<double>(pos) + 1.0);
  }
  std::vector<double> ideal(relevant.size(), 1.0);
  std::sort(ideal.rbegin(), ideal.rend());
  double idcg = 0.0;
  for (std::size_t pos = 1; pos <= ideal.size() && pos <= k; ++pos) {
    idcg += (std::pow(2.0, ideal[pos - 1]) - 1.0) / std::log2(static_cast<double>(pos) + 1.0);
  }
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

inline double recall_reference(const std::vector<std::uint32_t>& ranked, const std::set<std::uint32_t>& relevant,
                               std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t pos = 0; pos < ranked.size() && pos < k; ++pos) hits += relevant.count(ranked[pos]);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// ARI by explicit enumeration of all sample pairs.
inline double ari_reference(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0.0, in_a = 0.0, in_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j];
      const bool sb = b[i] == b[j];
      both += sa && sb;
      in_a += sa;
      in_b += sb;
    }
  }
  const double total = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double expected = in_a * in_b / total;
  const double max_index = 0.5 * (in_a + in_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

// Pairwise FM score from the definition.
inline double fm_naive(const FMModel& m, const std::vector<std::uint32_t>& x) {
  double s = m.global_bias();
  for (auto i : x) s += m.linear(i);
  for (std::size_t a = 0; a < x.size(); ++a) {
    for (std::size_t b = a + 1; b < x.size(); ++b) {
      for (std::size_t f = 0; f < m.factors(); ++f) s += m.factor_row(x[a])[f] * m.factor_row(x[b])[f];
    }
  }
  return s;
}

// Independent central-difference oracle: the objective is recomputed from the
// raw parameter vector with explicit loops, not through the library scorer.
inline double oracle_objective(const FactorizationModel& model, const TrainingSet& ts, std::size_t i,
                        const TrainConfig& cfg) {
  double s = 0.0, reg = 0.0;
  if (const auto* mf = std::get_if<MFModel>(&model)) {
    const auto p = mf->parameters();
    const std::size_t nu = mf->n_users(), ni = mf->n_items(), k = mf->factors();
    const std::size_t u = ts.users[i], v = ts.items[i];
    const double bu = p[1 + u], bv = p[1 + nu + v];
    s = p[0] + bu + bv;
    if (cfg.fit_biases) reg += bu * bu + bv * bv;
    const std::size_t pu = 1 + nu + ni + u * k, qv = 1 + nu + ni + nu * k + v * k;
    for (std::size_t f = 0; f < k; ++f) {
      s += p[pu + f] * p[qv + f];
      reg += p[pu + f] * p[pu + f] + p[qv + f] * p[qv + f];
    }
  } else {
    const auto& fm = std::get<FMModel>(model);
    const auto p = fm.parameters();
    const std::size_t d = fm.dimension(), k = fm.factors();
    const auto x = ts.features_of(i);
    s = p[0];
    for (auto j : x) {
      s += p[1 + j];
      if (cfg.fit_biases) reg += p[1 + j] * p[1 + j];
      for (std::size_t f = 0; f < k; ++f) reg += p[1 + d + j * k + f] * p[1 + d + j * k + f];
    }
    for (std::size_t a = 0; a < x.size(); ++a) {
      for (std::size_t b = a + 1; b < x.size(); ++b) {
        for (std::size_t f = 0; f < k; ++f) s += p[1 + d + x[a] * k + f] * p[1 + d + x[b] * k + f];
      }
    }
  }
  const double y = ts.targets[i];
  double l;
  if (cfg.loss_kind == LossKind::mse) {
    l = (s - y) * (s - y);
  } else {
    const double prob = 1.0 / (1.0 + std::exp(-s));
    l = -(y * std::log(prob) + (1.0 - y) * std::log(1.0 - prob));
  }
  return ts.weights[i] * (l + cfg.l2_reg * reg);
}

inline std::map<std::size_t, double> analytic_gradient(const FactorizationModel& model, const TrainingSet& ts,
                                                std::size_t i, const TrainConfig& cfg) {
  std::map<std::size_t, double> out;
  std::visit(
      [&](const auto& m) {
        GradientList g;
        const double s = score(m, ts, i);
        accumulate_gradient(m, ts, i, ts.weights[i] * loss_derivative(s, ts.targets[i], cfg.loss_kind),
                            ts.weights[i], cfg, g);
        for (const auto& [index, v] : g) out[index] += v;
      },
      model);
  return out;
}

// Largest relative gap between the library gradient of sample `i` and a
// central difference of oracle_objective.
inline double central_difference_error(const FactorizationModel& m, const TrainingSet& ts, std::size_t i,
                                       const TrainConfig& cfg) {
  const auto grad = analytic_gradient(m, ts, i, cfg);
  constexpr double h = 1e-5;
  double max_rel = 0.0;
  for (const auto& [index, g] : grad) {
    FactorizationModel up = m, down = m;
    std::visit([&](auto& mm) { mm.parameters()[index] += h; }, up);
    std::visit([&](auto& mm) { mm.parameters()[index] -= h; }, down);
    const double numeric = (oracle_objective(up, ts, i, cfg) - oracle_objective(down, ts, i, cfg)) / (2 * h);
    max_rel = std::max(max_rel, std::abs(g - numeric) / std::max(1e-6, std::abs(g) + std::abs(numeric)));
  }
  return max_rel;
}

// The small two-environment sign-flip instance used across suites.
inline SynthConfig sign_flip_config(std::uint64_t seed = 1) {
  SynthConfig c;
  c.n_users = 30;
  c.n_items = 30;
  c.latent_dim = 1;
  c.n_e = 2;
  c.n_r = 1;
  c.samples_per_cell = 1000;
  c.noise_sigma = 0.05;
  c.common_offset = 1.0;
  c.env_affinity = 3.0;
  c.label_threshold = 0.0;
  c.seed = seed;
  return c;
}

inline BHEConfig sign_flip_bhe(std::uint64_t seed) {
  BHEConfig b;
  b.n_e = 2;
  b.n_r = 1;
  b.max_em_iters = 40;
  b.label_change_tol = 0.0;
  b.train.factors = 1;
  b.train.epochs = 1;
  b.train.fit_biases = false;
  b.seed = seed;
  return b;
}

inline std::vector<int> truth_e(const Dataset& ds) {
  std::vector<int> e;
  for (const auto& p : *ds.ground_truth) e.push_back(p.e);
  return e;
}

inline std::vector<int> truth_r(const Dataset& ds) {
  std::vector<int> r;
  for (const auto& p : *ds.ground_truth) r.push_back(p.r);
  return r;
}

}  // namespace bhe::testing

#endif  // BHE_TESTS_SUPPORT_HPP_

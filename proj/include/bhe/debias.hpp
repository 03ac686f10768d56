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

// Rating-conditional propensity estimation and IPS / SNIPS training.
//
//   P(O=1 | Y=y) = P(Y=y | O=1) P(O=1) / P(Y=y)
//
// P(Y=y | O=1) comes from the observed (biased) data, P(Y=y) from a small
// uniformly logged sample, P(O=1) = |observed| / total_pairs. The per-(e,r)
// variant stratifies only P(Y=y | O=1); both marginals stay global.

#ifndef BHE_DEBIAS_HPP_
#define BHE_DEBIAS_HPP_

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "bhe/common.hpp"
#include "bhe/data.hpp"
#include "bhe/explore.hpp"
#include "bhe/models.hpp"

namespace bhe {

enum class PropensityMode { global, per_env };
enum class DebiasMethod { none, ips, snips };

inline std::string to_string(PropensityMode m) { return m == PropensityMode::global ? "global" : "per_env"; }
inline std::string to_string(DebiasMethod m) {
  switch (m) {
    case DebiasMethod::none: return "none";
    case DebiasMethod::ips: return "ips";
    case DebiasMethod::snips: return "snips";
  }
  return "none";
}

inline DebiasMethod parse_debias_method(const std::string& s) {
  if (s == "none") return DebiasMethod::none;
  if (s == "ips") return DebiasMethod::ips;
  if (s == "snips") return DebiasMethod::snips;
  throw ConfigError("unknown debias method '" + s + "'");
}

inline PropensityMode parse_propensity_mode(const std::string& s) {
  if (s == "global") return PropensityMode::global;
  if (s == "per_env") return PropensityMode::per_env;
  throw ConfigError("unknown propensity mode '" + s + "'");
}

// Global entries use e = r = kAnyEnv.
inline constexpr int kAnyEnv = -1;

struct PropensityTable {
  PropensityMode mode = PropensityMode::global;
  double floor = 0.05;
  std::vector<double> y_levels;
  std::map<std::tuple<int, int, int>, double> values;  // (e, r, level index)
  std::vector<std::pair<int, int>> fallback_cells;     // per_env cells using global values

  std::optional<std::size_t> level_index(double y) const {
    for (std::size_t l = 0; l < y_levels.size(); ++l) {
      if (y_levels[l] == y) return l;
    }
    return std::nullopt;
  }

  double lookup(int e, int r, double y) const {
    const auto level = level_index(y);
    if (!level) throw LookupError("rating level " + std::to_string(y) + " not in propensity table");
    if (mode == PropensityMode::global) {
      e = kAnyEnv;
      r = kAnyEnv;
    }
    const auto it = values.find({e, r, static_cast<int>(*level)});
    if (it == values.end()) {
      throw LookupError("no propensity for cell " + std::to_string(e) + ":" + std::to_string(r));
    }
    return it->second;
  }
};

inline double naive_bayes_propensity(double p_y_given_observed, double p_observed, double p_y) {
  return p_y_given_observed * p_observed / p_y;
}

struct PropensityOptions {
  double floor = 0.05;
  double smoothing = 1.0;
};

namespace detail {

inline std::vector<double> rating_levels(const Dataset& a, const Dataset& b) {
  std::set<double> levels;
  for (const auto& it : a.interactions) levels.insert(it.rating);
  for (const auto& it : b.interactions) levels.insert(it.rating);
  return {levels.begin(), levels.end()};
}

// Laplace-smoothed distribution over the given levels.
inline std::vector<double> smoothed_distribution(const std::vector<double>& counts, double alpha) {
  double total = 0.0;
  for (double c : counts) total += c;
  const double denom = total + alpha * static_cast<double>(counts.size());
  std::vector<double> p(counts.size());
  for (std::size_t l = 0; l < counts.size(); ++l) p[l] = (counts[l] + alpha) / denom;
  return p;
}

inline std::vector<double> level_counts(const PropensityTable& t, const Dataset& ds,
                                        const std::vector<std::size_t>* indices = nullptr) {
  std::vector<double> counts(t.y_levels.size(), 0.0);
  auto add = [&](const Interaction& it) { counts[*t.level_index(it.rating)] += 1.0; };
  if (indices) {
    for (std::size_t i : *indices) add(ds.interactions[i]);
  } else {
    for (const auto& it : ds.interactions) add(it);
  }
  return counts;
}

inline double clip(double p, double floor) { return std::clamp(p, floor, 1.0); }

}  // namespace detail

inline PropensityTable estimate_propensity_naive(const Dataset& observed, const Dataset& uniform,
                                                 std::size_t total_pairs,
                                                 const PropensityOptions& opt = {}) {
  if (uniform.empty()) throw ArgumentError("the uniform sample is empty");
  if (total_pairs < observed.size()) throw ArgumentError("total_pairs is smaller than |observed|");
  PropensityTable t;
  t.mode = PropensityMode::global;
  t.floor = opt.floor;
  t.y_levels = detail::rating_levels(observed, uniform);
  const auto p_y_obs = detail::smoothed_distribution(detail::level_counts(t, observed), opt.smoothing);
  const auto p_y = detail::smoothed_distribution(detail::level_counts(t, uniform), opt.smoothing);
  const double p_o = static_cast<double>(observed.size()) / static_cast<double>(total_pairs);
  for (std::size_t l = 0; l < t.y_levels.size(); ++l) {
    t.values[{kAnyEnv, kAnyEnv, static_cast<int>(l)}] =
        detail::clip(naive_bayes_propensity(p_y_obs[l], p_o, p_y[l]), opt.floor);
  }
  return t;
}

// `e_labels` / `r_labels` give the cell of every observed sample.
inline PropensityTable estimate_propensity_env(const Dataset& observed, const Dataset& uniform,
                                               const std::vector<int>& e_labels,
                                               const std::vector<int>& r_labels, int n_e, int n_r,
                                               std::size_t total_pairs,
                                               const PropensityOptions& opt = {}) {
  if (e_labels.size() != observed.size() || r_labels.size() != observed.size()) {
    throw ArgumentError("assignment does not cover the observed data");
  }
  const PropensityTable global = estimate_propensity_naive(observed, uniform, total_pairs, opt);
  PropensityTable t;
  t.mode = PropensityMode::per_env;
  t.floor = opt.floor;
  t.y_levels = global.y_levels;
  const auto p_y = detail::smoothed_distribution(detail::level_counts(t, uniform), opt.smoothing);
  const double p_o = static_cast<double>(observed.size()) / static_cast<double>(total_pairs);
  std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(n_e * n_r));
  for (std::size_t i = 0; i < observed.size(); ++i) {
    cells.at(static_cast<std::size_t>(e_labels[i] * n_r + r_labels[i])).push_back(i);
  }
  for (int e = 0; e < n_e; ++e) {
    for (int r = 0; r < n_r; ++r) {
      const auto& idx = cells[static_cast<std::size_t>(e * n_r + r)];
      if (idx.empty()) {
        t.fallback_cells.emplace_back(e, r);
        for (std::size_t l = 0; l < t.y_levels.size(); ++l) {
          t.values[{e, r, static_cast<int>(l)}] = global.values.at({kAnyEnv, kAnyEnv, static_cast<int>(l)});
        }
        continue;
      }
      const auto p_y_obs = detail::smoothed_distribution(detail::level_counts(t, observed, &idx), opt.smoothing);
      for (std::size_t l = 0; l < t.y_levels.size(); ++l) {
        t.values[{e, r, static_cast<int>(l)}] =
            detail::clip(naive_bayes_propensity(p_y_obs[l], p_o, p_y[l]), opt.floor);
      }
    }
  }
  return t;
}

inline PropensityTable estimate_propensity_env(const Dataset& observed, const Dataset& uniform,
                                               const EnvAssignment& a, std::size_t total_pairs,
                                               const PropensityOptions& opt = {}) {
  return estimate_propensity_env(observed, uniform, a.e_labels, a.r_labels, a.n_e, a.n_r,
                                 total_pairs, opt);
}

struct WeightedLoss {
  double value = 0.0;
  bool empty = false;
};

// (1/n) sum loss_i / p_i
inline WeightedLoss ips_loss(std::span<const double> losses, std::span<const double> propensities,
                             std::optional<std::size_t> n = std::nullopt) {
  if (losses.size() != propensities.size()) throw ArgumentError("losses and propensities differ in length");
  const std::size_t count = n.value_or(losses.size());
  if (losses.empty()) return {0.0, true};
  double total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(propensities[i] > 0.0)) throw ArgumentError("propensity must be > 0");
    total += losses[i] / propensities[i];
  }
  return {total / static_cast<double>(count), false};
}

// sum (loss_i / p_i) / sum (1 / p_i)
inline WeightedLoss snips_loss(std::span<const double> losses, std::span<const double> propensities) {
  if (losses.size() != propensities.size()) throw ArgumentError("losses and propensities differ in length");
  if (losses.empty()) return {0.0, true};
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(propensities[i] > 0.0)) throw ArgumentError("propensity must be > 0");
    num += losses[i] / propensities[i];
    den += 1.0 / propensities[i];
  }
  return {num / den, false};
}

// Per-sample propensity of every observed sample.
inline std::vector<double> lookup_propensities(const Dataset& observed, const PropensityTable& t,
                                               const std::vector<int>* e_labels = nullptr,
                                               const std::vector<int>* r_labels = nullptr) {
  if (t.mode == PropensityMode::per_env && (!e_labels || !r_labels)) {
    throw ArgumentError("a per-environment table needs an assignment");
  }
  std::vector<double> p(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const int e = e_labels ? (*e_labels)[i] : kAnyEnv;
    const int r = r_labels ? (*r_labels)[i] : kAnyEnv;
    p[i] = t.lookup(e, r, observed.interactions[i].rating);
  }
  return p;
}

// IPS: w_i = 1/p_i. SNIPS: 1/p_i rescaled by n / sum(1/p), so the mean
// weighted loss is the self-normalized objective.
inline std::vector<double> debias_weights(std::span<const double> propensities, DebiasMethod method) {
  std::vector<double> w(propensities.size(), 1.0);
  if (method == DebiasMethod::none) return w;
  double inv_sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = 1.0 / propensities[i];
    inv_sum += w[i];
  }
  if (method == DebiasMethod::snips && inv_sum > 0.0) {
    const double scale = static_cast<double>(w.size()) / inv_sum;
    for (double& v : w) v *= scale;
  }
  return w;
}

struct DebiasOptions {
  Backbone backbone = Backbone::mf;
  DebiasMethod method = DebiasMethod::ips;
  TrainConfig train;
  std::uint64_t seed = 0;
};

inline FactorizationModel train_debiased(const Dataset& observed, const PropensityTable& table,
                                         const EnvAssignment* assignment, const DebiasOptions& opt) {
  TrainingSet data = make_training_set(observed, opt.train.loss_kind);
  if (opt.method != DebiasMethod::none) {
    const auto p = lookup_propensities(observed, table, assignment ? &assignment->e_labels : nullptr,
                                       assignment ? &assignment->r_labels : nullptr);
    const auto w = debias_weights(p, opt.method);
    for (std::size_t i = 0; i < w.size(); ++i) data.weights[i] *= w[i];
  }
  FactorizationModel model = make_model(opt.backbone, data, opt.train, derive_seed(opt.seed, "debias_init"));
  TrainConfig tc = opt.train;
  tc.seed = derive_seed(opt.seed, "debias_train");
  sgd_train(model, data, tc);
  return model;
}

inline std::string cell_key(int e, int r, double y) {
  std::ostringstream key;
  key.precision(17);
  key << (e == kAnyEnv ? std::string("*") : std::to_string(e)) << ':'
      << (r == kAnyEnv ? std::string("*") : std::to_string(r)) << ':' << y;
  return key.str();
}

inline json to_json(const PropensityTable& t) {
  json values = json::object();
  for (const auto& [key, p] : t.values) {
    const auto [e, r, l] = key;
    values[cell_key(e, r, t.y_levels[static_cast<std::size_t>(l)])] = p;
  }
  json fallback = json::array();
  for (const auto& [e, r] : t.fallback_cells) fallback.push_back({e, r});
  return {{"format", "bhe-propensity"},
          {"version", 1},
          {"mode", to_string(t.mode)},
          {"floor", t.floor},
          {"y_levels", t.y_levels},
          {"values", values},
          {"fallback_cells", fallback}};
}

inline PropensityTable propensity_from_json(const json& j) {
  try {
    PropensityTable t;
    t.mode = parse_propensity_mode(j.at("mode").get<std::string>());
    t.floor = j.at("floor").get<double>();
    t.y_levels = j.at("y_levels").get<std::vector<double>>();
    for (const auto& [key, value] : j.at("values").items()) {
      const auto c1 = key.find(':');
      const auto c2 = key.find(':', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) throw FormatError("bad key " + key);
      const std::string es = key.substr(0, c1), rs = key.substr(c1 + 1, c2 - c1 - 1);
      const int e = es == "*" ? kAnyEnv : std::stoi(es);
      const int r = rs == "*" ? kAnyEnv : std::stoi(rs);
      const auto level = t.level_index(std::stod(key.substr(c2 + 1)));
      if (!level) throw FormatError("unknown level in key " + key);
      t.values[{e, r, static_cast<int>(*level)}] = value.get<double>();
    }
    for (const auto& c : j.value("fallback_cells", json::array())) {
      t.fallback_cells.emplace_back(c.at(0).get<int>(), c.at(1).get<int>());
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed propensity table: ") + e.what());
  }
}

}  // namespace bhe

#endif  // BHE_DEBIAS_HPP_

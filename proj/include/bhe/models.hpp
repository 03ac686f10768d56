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

// Factorization backbones and their weighted SGD trainer.
//
// Both models keep every parameter in one flat vector so that the trainer,
// the gradient checker and the serializers can treat them uniformly. A
// per-sample gradient is a list of (parameter index, value) pairs.
//
// The per-sample objective minimized by sgd_train is
//
//   w_i * ( loss(score_i, target_i) + l2 * |theta_touched(i)|^2 )
//
// averaged over the mini-batch, where theta_touched are the embedding and
// bias / linear parameters the sample reads (never the global bias). A zero
// weight therefore leaves the model untouched.

#ifndef BHE_MODELS_HPP_
#define BHE_MODELS_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bhe/common.hpp"
#include "bhe/data.hpp"

namespace bhe {

enum class LossKind { mse, bce };
enum class Backbone { mf, fm };

inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "bce"; }
inline std::string to_string(Backbone b) { return b == Backbone::mf ? "mf" : "fm"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "bce") return LossKind::bce;
  throw ConfigError("unknown loss '" + s + "'");
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "mf") return Backbone::mf;
  if (s == "fm") return Backbone::fm;
  throw ConfigError("unknown backbone '" + s + "'");
}

struct TrainConfig {
  LossKind loss_kind = LossKind::mse;
  double learning_rate = 0.05;
  double l2_reg = 1e-5;
  int epochs = 30;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double init_scale = 0.1;
  std::size_t factors = 8;
  bool fit_global_bias = true;
  // User/item biases (MF) or linear weights (FM).
  bool fit_biases = true;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(l2_reg >= 0.0)) throw ConfigError("l2_reg must be >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Losses

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double loss(double pred, double label, LossKind kind) {
  if (kind == LossKind::mse) {
    const double d = pred - label;
    return d * d;
  }
  // -[y log s(p) + (1-y) log(1 - s(p))] = softplus(p) - y p
  return softplus(pred) - label * pred;
}

inline double loss_derivative(double pred, double label, LossKind kind) {
  return kind == LossKind::mse ? 2.0 * (pred - label) : sigmoid(pred) - label;
}

// ---------------------------------------------------------------------------
// Training data

// Samples flattened for training. Every sample has exactly `nnz` active
// feature indices (one per schema field).
struct TrainingSet {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t dimension = 0;
  std::size_t nnz = 0;
  std::vector<std::uint32_t> users;
  std::vector<std::uint32_t> items;
  std::vector<std::uint32_t> features;
  std::vector<double> targets;
  std::vector<double> weights;

  std::size_t size() const { return users.size(); }
  std::span<const std::uint32_t> features_of(std::size_t i) const {
    return {features.data() + i * nnz, nnz};
  }

  TrainingSet select(std::span<const std::size_t> indices) const {
    TrainingSet out;
    out.n_users = n_users;
    out.n_items = n_items;
    out.dimension = dimension;
    out.nnz = nnz;
    for (std::size_t i : indices) {
      out.users.push_back(users[i]);
      out.items.push_back(items[i]);
      auto f = features_of(i);
      out.features.insert(out.features.end(), f.begin(), f.end());
      out.targets.push_back(targets[i]);
      out.weights.push_back(weights[i]);
    }
    return out;
  }
};

enum class Target { rating, label };

// Target defaults: ratings for MSE, binary labels for BCE.
inline TrainingSet make_training_set(const Dataset& ds, Target target) {
  TrainingSet set;
  set.n_users = ds.n_users;
  set.n_items = ds.n_items;
  set.dimension = ds.schema.dimension();
  set.nnz = ds.schema.size();
  set.users.reserve(ds.size());
  for (const auto& it : ds.interactions) {
    set.users.push_back(it.user);
    set.items.push_back(it.item);
    auto f = encode(it, ds);
    set.features.insert(set.features.end(), f.begin(), f.end());
    set.targets.push_back(target == Target::rating ? it.rating : static_cast<double>(it.label));
    set.weights.push_back(it.weight);
  }
  return set;
}

inline TrainingSet make_training_set(const Dataset& ds, LossKind kind) {
  return make_training_set(ds, kind == LossKind::mse ? Target::rating : Target::label);
}

using GradientList = std::vector<std::pair<std::size_t, double>>;

// ---------------------------------------------------------------------------
// Matrix factorization

// score = mu + b_u + b_v + <p_u, q_v>
// Layout: [mu | b_user (n_u) | b_item (n_i) | P (n_u x k) | Q (n_i x k)]
class MFModel {
 public:
  MFModel() = default;
  MFModel(std::size_t n_users, std::size_t n_items, std::size_t k)
      : n_users_(n_users), n_items_(n_items), k_(k),
        params_(1 + n_users + n_items + (n_users + n_items) * k, 0.0) {}

  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }
  std::size_t factors() const { return k_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  double& global_bias() { return params_[0]; }
  double global_bias() const { return params_[0]; }
  double& user_bias(std::size_t u) { return params_[user_bias_index(u)]; }
  double user_bias(std::size_t u) const { return params_[user_bias_index(u)]; }
  double& item_bias(std::size_t v) { return params_[item_bias_index(v)]; }
  double item_bias(std::size_t v) const { return params_[item_bias_index(v)]; }
  std::span<double> user_factors(std::size_t u) { return {&params_[user_factor_index(u)], k_}; }
  std::span<const double> user_factors(std::size_t u) const {
    return {params_.data() + user_factor_index(u), k_};
  }
  std::span<double> item_factors(std::size_t v) { return {&params_[item_factor_index(v)], k_}; }
  std::span<const double> item_factors(std::size_t v) const {
    return {params_.data() + item_factor_index(v), k_};
  }

  std::size_t user_bias_index(std::size_t u) const { return 1 + u; }
  std::size_t item_bias_index(std::size_t v) const { return 1 + n_users_ + v; }
  std::size_t user_factor_index(std::size_t u) const {
    return 1 + n_users_ + n_items_ + u * k_;
  }
  std::size_t item_factor_index(std::size_t v) const {
    return 1 + n_users_ + n_items_ + n_users_ * k_ + v * k_;
  }

  void check_ids(std::size_t u, std::size_t v) const {
    if (u >= n_users_ || v >= n_items_) {
      throw LookupError("MF lookup out of range: user " + std::to_string(u) + ", item " +
                        std::to_string(v));
    }
  }

  bool operator==(const MFModel&) const = default;

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::size_t k_ = 0;
  std::vector<double> params_;
};

inline double mf_predict(const MFModel& m, std::size_t user, std::size_t item) {
  m.check_ids(user, item);
  double s = m.global_bias() + m.user_bias(user) + m.item_bias(item);
  const auto p = m.user_factors(user);
  const auto q = m.item_factors(item);
  for (std::size_t f = 0; f < p.size(); ++f) s += p[f] * q[f];
  return s;
}

// ---------------------------------------------------------------------------
// Factorization machine

// Second-order FM over one-hot inputs.
// Layout: [w0 | w (dim) | V (dim x k)]
class FMModel {
 public:
  FMModel() = default;
  FMModel(std::size_t dimension, std::size_t k)
      : dim_(dimension), k_(k), params_(1 + dimension + dimension * k, 0.0) {}

  std::size_t dimension() const { return dim_; }
  std::size_t factors() const { return k_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  double& global_bias() { return params_[0]; }
  double global_bias() const { return params_[0]; }
  double& linear(std::size_t i) { return params_[linear_index(i)]; }
  double linear(std::size_t i) const { return params_[linear_index(i)]; }
  std::span<double> factor_row(std::size_t i) { return {&params_[factor_index(i)], k_}; }
  std::span<const double> factor_row(std::size_t i) const {
    return {params_.data() + factor_index(i), k_};
  }

  std::size_t linear_index(std::size_t i) const { return 1 + i; }
  std::size_t factor_index(std::size_t i) const { return 1 + dim_ + i * k_; }

  void check_features(std::span<const std::uint32_t> x) const {
    for (auto i : x) {
      if (i >= dim_) throw LookupError("FM feature index " + std::to_string(i) + " out of range");
    }
  }

  bool operator==(const FMModel&) const = default;

 private:
  std::size_t dim_ = 0;
  std::size_t k_ = 0;
  std::vector<double> params_;
};

// O(k * nnz) form: w0 + sum w_i + 1/2 sum_f [(sum_i V_if)^2 - sum_i V_if^2].
inline double fm_predict(const FMModel& m, std::span<const std::uint32_t> x) {
  m.check_features(x);
  double s = m.global_bias();
  for (auto i : x) s += m.linear(i);
  for (std::size_t f = 0; f < m.factors(); ++f) {
    double sum = 0.0, sum_sq = 0.0;
    for (auto i : x) {
      const double v = m.factor_row(i)[f];
      sum += v;
      sum_sq += v * v;
    }
    s += 0.5 * (sum * sum - sum_sq);
  }
  return s;
}

using FactorizationModel = std::variant<MFModel, FMModel>;

inline Backbone backbone_of(const FactorizationModel& m) {
  return std::holds_alternative<MFModel>(m) ? Backbone::mf : Backbone::fm;
}

// ---------------------------------------------------------------------------
// Per-sample score and gradient

inline double score(const MFModel& m, const TrainingSet& data, std::size_t i) {
  return mf_predict(m, data.users[i], data.items[i]);
}

inline double score(const FMModel& m, const TrainingSet& data, std::size_t i) {
  return fm_predict(m, data.features_of(i));
}

// Appends coef * d(score)/d(theta) + weight * 2 * l2 * theta for the touched
// parameters. Returns sum of squares of the regularized touched parameters.
inline double accumulate_gradient(const MFModel& m, const TrainingSet& data, std::size_t i,
                                  double coef, double weight, const TrainConfig& cfg,
                                  GradientList& grads) {
  const auto u = data.users[i];
  const auto v = data.items[i];
  const double reg = 2.0 * cfg.l2_reg * weight;
  double reg_sum = 0.0;
  if (cfg.fit_global_bias) grads.emplace_back(0, coef);
  if (cfg.fit_biases) {
    const double bu = m.user_bias(u), bv = m.item_bias(v);
    grads.emplace_back(m.user_bias_index(u), coef + reg * bu);
    grads.emplace_back(m.item_bias_index(v), coef + reg * bv);
    reg_sum += bu * bu + bv * bv;
  }
  const auto p = m.user_factors(u);
  const auto q = m.item_factors(v);
  const std::size_t pu = m.user_factor_index(u), qv = m.item_factor_index(v);
  for (std::size_t f = 0; f < m.factors(); ++f) {
    grads.emplace_back(pu + f, coef * q[f] + reg * p[f]);
    grads.emplace_back(qv + f, coef * p[f] + reg * q[f]);
    reg_sum += p[f] * p[f] + q[f] * q[f];
  }
  return reg_sum;
}

inline double accumulate_gradient(const FMModel& m, const TrainingSet& data, std::size_t i,
                                  double coef, double weight, const TrainConfig& cfg,
                                  GradientList& grads) {
  const auto x = data.features_of(i);
  const double reg = 2.0 * cfg.l2_reg * weight;
  double reg_sum = 0.0;
  if (cfg.fit_global_bias) grads.emplace_back(0, coef);
  if (cfg.fit_biases) {
    for (auto j : x) {
      const double w = m.linear(j);
      grads.emplace_back(m.linear_index(j), coef + reg * w);
      reg_sum += w * w;
    }
  }
  for (std::size_t f = 0; f < m.factors(); ++f) {
    double sum = 0.0;
    for (auto j : x) sum += m.factor_row(j)[f];
    for (auto j : x) {
      const double v = m.factor_row(j)[f];
      grads.emplace_back(m.factor_index(j) + f, coef * (sum - v) + reg * v);
      reg_sum += v * v;
    }
  }
  return reg_sum;
}

// Weighted per-sample objective: w * (loss + l2 * |theta_touched|^2).
template <class Model>
double sample_objective(const Model& m, const TrainingSet& data, std::size_t i,
                        const TrainConfig& cfg) {
  const double w = data.weights[i];
  const double s = score(m, data, i);
  GradientList scratch;
  const double reg_sum = accumulate_gradient(m, data, i, 0.0, 0.0, cfg, scratch);
  return w * (loss(s, data.targets[i], cfg.loss_kind) + cfg.l2_reg * reg_sum);
}

// ---------------------------------------------------------------------------
// Initialization

inline void initialize(MFModel& m, double scale, std::uint64_t seed) {
  Rng rng(seed);
  auto params = m.parameters();
  std::fill(params.begin(), params.end(), 0.0);
  const std::size_t start = m.user_factor_index(0);
  for (std::size_t i = start; i < params.size(); ++i) params[i] = rng.uniform(-scale, scale);
}

inline void initialize(FMModel& m, double scale, std::uint64_t seed) {
  Rng rng(seed);
  auto params = m.parameters();
  std::fill(params.begin(), params.end(), 0.0);
  const std::size_t start = m.factor_index(0);
  for (std::size_t i = start; i < params.size(); ++i) params[i] = rng.uniform(-scale, scale);
}

inline FactorizationModel make_model(Backbone backbone, const TrainingSet& shape,
                                     const TrainConfig& cfg, std::uint64_t seed) {
  if (backbone == Backbone::mf) {
    MFModel m(shape.n_users, shape.n_items, cfg.factors);
    initialize(m, cfg.init_scale, seed);
    return m;
  }
  FMModel m(shape.dimension, cfg.factors);
  initialize(m, cfg.init_scale, seed);
  return m;
}

inline void reinitialize(FactorizationModel& model, double scale, std::uint64_t seed) {
  std::visit([&](auto& m) { initialize(m, scale, seed); }, model);
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  double final_loss = 0.0;
  std::vector<double> loss_history;
};

// Mini-batch SGD on the weighted objective. Each epoch visits samples in an
// order shuffled from derive_seed(cfg.seed, "epoch", epoch). The reported
// epoch loss is the weighted objective summed over the epoch (evaluated at
// the parameters each batch saw) divided by |data|.
template <class Model>
TrainResult sgd_train(Model& model, const TrainingSet& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ArgumentError("sgd_train needs at least one sample");
  for (double w : data.weights) {
    if (!(w >= 0.0)) throw ArgumentError("sample weights must be >= 0");
  }
  TrainResult result;
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  GradientList grads;
  auto params = model.parameters();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      grads.clear();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const double w = data.weights[i];
        if (w == 0.0) continue;
        const double s = score(model, data, i);
        const double y = data.targets[i];
        const double reg_sum = accumulate_gradient(
            model, data, i, w * loss_derivative(s, y, cfg.loss_kind), w, cfg, grads);
        total += w * (loss(s, y, cfg.loss_kind) + cfg.l2_reg * reg_sum);
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      for (const auto& [index, g] : grads) params[index] -= step * g;
    }
    const double epoch_loss = total / static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("training diverged in epoch " + std::to_string(epoch + 1));
    }
    result.loss_history.push_back(epoch_loss);
  }
  result.final_loss = result.loss_history.back();
  return result;
}

inline TrainResult sgd_train(FactorizationModel& model, const TrainingSet& data,
                             const TrainConfig& cfg) {
  return std::visit([&](auto& m) { return sgd_train(m, data, cfg); }, model);
}

// Full gradient of the mean weighted objective, dense. Used to compare
// weighting schemes and for tests.
template <class Model>
std::vector<double> full_gradient(const Model& model, const TrainingSet& data,
                                  const TrainConfig& cfg) {
  std::vector<double> g(model.parameters().size(), 0.0);
  GradientList grads;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double w = data.weights[i];
    const double s = score(model, data, i);
    accumulate_gradient(model, data, i, w * loss_derivative(s, data.targets[i], cfg.loss_kind),
                        w, cfg, grads);
  }
  for (const auto& [index, v] : grads) g[index] += v;
  return g;
}

// ---------------------------------------------------------------------------
// Prediction and embeddings on arbitrary pairs

inline double predict_pair(const FactorizationModel& model, const Dataset& ds,
                           std::uint32_t user, std::uint32_t item) {
  if (const auto* mf = std::get_if<MFModel>(&model)) return mf_predict(*mf, user, item);
  return fm_predict(std::get<FMModel>(model), encode_pair(ds, user, item));
}

inline double predict_sample(const FactorizationModel& model, const TrainingSet& data,
                             std::size_t i) {
  return std::visit([&](const auto& m) { return score(m, data, i); }, model);
}

// MF: [p_u | q_v] (2k). FM: V rows of the active features in schema order.
inline std::vector<double> extract_embedding(const MFModel& m, std::uint32_t user,
                                             std::uint32_t item) {
  m.check_ids(user, item);
  std::vector<double> a;
  a.reserve(2 * m.factors());
  for (double v : m.user_factors(user)) a.push_back(v);
  for (double v : m.item_factors(item)) a.push_back(v);
  return a;
}

inline std::vector<double> extract_embedding(const FMModel& m,
                                             std::span<const std::uint32_t> x) {
  m.check_features(x);
  std::vector<double> a;
  a.reserve(x.size() * m.factors());
  for (auto i : x) {
    for (double v : m.factor_row(i)) a.push_back(v);
  }
  return a;
}

inline std::vector<double> extract_embedding(const FactorizationModel& model,
                                             const TrainingSet& data, std::size_t i) {
  if (const auto* mf = std::get_if<MFModel>(&model)) {
    return extract_embedding(*mf, data.users[i], data.items[i]);
  }
  return extract_embedding(std::get<FMModel>(model), data.features_of(i));
}

inline std::vector<double> extract_embedding(const FactorizationModel& model,
                                             const Dataset& ds, const Interaction& it) {
  if (const auto* mf = std::get_if<MFModel>(&model)) {
    return extract_embedding(*mf, it.user, it.item);
  }
  return extract_embedding(std::get<FMModel>(model), encode(it, ds));
}

// Parameter index of each embedding coordinate, matching extract_embedding.
inline std::vector<std::size_t> embedding_parameter_indices(const FactorizationModel& model,
                                                            const TrainingSet& data,
                                                            std::size_t i) {
  std::vector<std::size_t> idx;
  if (const auto* mf = std::get_if<MFModel>(&model)) {
    for (std::size_t f = 0; f < mf->factors(); ++f) idx.push_back(mf->user_factor_index(data.users[i]) + f);
    for (std::size_t f = 0; f < mf->factors(); ++f) idx.push_back(mf->item_factor_index(data.items[i]) + f);
    return idx;
  }
  const auto& fm = std::get<FMModel>(model);
  for (auto j : data.features_of(i)) {
    for (std::size_t f = 0; f < fm.factors(); ++f) idx.push_back(fm.factor_index(j) + f);
  }
  return idx;
}

inline std::size_t embedding_width(const FactorizationModel& model, std::size_t nnz) {
  if (const auto* mf = std::get_if<MFModel>(&model)) return 2 * mf->factors();
  return nnz * std::get<FMModel>(model).factors();
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCheckResult {
  double max_relative_error = 0.0;
  double analytic_norm = 0.0;
};

// Compares the analytic per-sample gradient with central differences
// (h = 1e-5) over every touched parameter.
template <class Model>
GradientCheckResult gradient_check(Model model, const TrainingSet& data, std::size_t i,
                                   const TrainConfig& cfg) {
  const double w = data.weights[i];
  const double s = score(model, data, i);
  GradientList grads;
  accumulate_gradient(model, data, i, w * loss_derivative(s, data.targets[i], cfg.loss_kind), w,
                      cfg, grads);
  std::vector<std::pair<std::size_t, double>> merged;
  for (const auto& [index, g] : grads) {
    auto it = std::find_if(merged.begin(), merged.end(),
                           [&](const auto& e) { return e.first == index; });
    if (it == merged.end()) {
      merged.emplace_back(index, g);
    } else {
      it->second += g;
    }
  }
  constexpr double h = 1e-5;
  GradientCheckResult result;
  auto params = model.parameters();
  double norm_sq = 0.0;
  for (const auto& [index, analytic] : merged) {
    const double saved = params[index];
    params[index] = saved + h;
    const double up = sample_objective(model, data, i, cfg);
    params[index] = saved - h;
    const double down = sample_objective(model, data, i, cfg);
    params[index] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(1e-6, std::abs(analytic) + std::abs(numeric));
    result.max_relative_error = std::max(result.max_relative_error,
                                         std::abs(analytic - numeric) / denom);
    norm_sq += analytic * analytic;
  }
  result.analytic_norm = std::sqrt(norm_sq);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON, row-major arrays. nlohmann/json prints the
// shortest representation that round-trips, so finite doubles survive
// exactly.

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline std::vector<double> slice(std::span<const double> p, std::size_t start, std::size_t len) {
  return {p.begin() + static_cast<std::ptrdiff_t>(start),
          p.begin() + static_cast<std::ptrdiff_t>(start + len)};
}

inline void fill_slice(std::span<double> p, std::size_t start, const json& values,
                       std::size_t expected, const char* name) {
  if (!values.is_array() || values.size() != expected) {
    throw FormatError(std::string("model array '") + name + "' has the wrong length");
  }
  for (std::size_t i = 0; i < expected; ++i) p[start + i] = values[i].get<double>();
}

}  // namespace detail

inline json to_json(const MFModel& m) {
  const auto p = m.parameters();
  const std::size_t k = m.factors();
  return {{"format", "bhe-model"},
          {"version", kModelFormatVersion},
          {"kind", "mf"},
          {"shape", {{"n_users", m.n_users()}, {"n_items", m.n_items()}, {"factors", k}}},
          {"global_bias", m.global_bias()},
          {"user_bias", detail::slice(p, m.user_bias_index(0), m.n_users())},
          {"item_bias", detail::slice(p, m.item_bias_index(0), m.n_items())},
          {"user_factors", detail::slice(p, m.user_factor_index(0), m.n_users() * k)},
          {"item_factors", detail::slice(p, m.item_factor_index(0), m.n_items() * k)}};
}

inline json to_json(const FMModel& m) {
  const auto p = m.parameters();
  return {{"format", "bhe-model"},
          {"version", kModelFormatVersion},
          {"kind", "fm"},
          {"shape", {{"dimension", m.dimension()}, {"factors", m.factors()}}},
          {"global_bias", m.global_bias()},
          {"linear", detail::slice(p, m.linear_index(0), m.dimension())},
          {"factors", detail::slice(p, m.factor_index(0), m.dimension() * m.factors())}};
}

inline json to_json(const FactorizationModel& model) {
  return std::visit([](const auto& m) { return to_json(m); }, model);
}

inline FactorizationModel model_from_json(const json& j) {
  try {
    if (j.value("format", "") != "bhe-model") throw FormatError("not a bhe-model document");
    if (j.value("version", 0) != kModelFormatVersion) {
      throw FormatError("unsupported model version");
    }
    const auto& shape = j.at("shape");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "mf") {
      const auto nu = shape.at("n_users").get<std::size_t>();
      const auto ni = shape.at("n_items").get<std::size_t>();
      const auto k = shape.at("factors").get<std::size_t>();
      MFModel m(nu, ni, k);
      auto p = m.parameters();
      m.global_bias() = j.at("global_bias").get<double>();
      detail::fill_slice(p, m.user_bias_index(0), j.at("user_bias"), nu, "user_bias");
      detail::fill_slice(p, m.item_bias_index(0), j.at("item_bias"), ni, "item_bias");
      detail::fill_slice(p, m.user_factor_index(0), j.at("user_factors"), nu * k, "user_factors");
      detail::fill_slice(p, m.item_factor_index(0), j.at("item_factors"), ni * k, "item_factors");
      return m;
    }
    if (kind == "fm") {
      const auto dim = shape.at("dimension").get<std::size_t>();
      const auto k = shape.at("factors").get<std::size_t>();
      FMModel m(dim, k);
      auto p = m.parameters();
      m.global_bias() = j.at("global_bias").get<double>();
      detail::fill_slice(p, m.linear_index(0), j.at("linear"), dim, "linear");
      detail::fill_slice(p, m.factor_index(0), j.at("factors"), dim * k, "factors");
      return m;
    }
    throw FormatError("unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model document: ") + e.what());
  }
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path);
  out << j.dump(1) << '\n';
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void save_model(const std::string& path, const FactorizationModel& model) {
  save_json(path, to_json(model));
}

inline FactorizationModel load_model(const std::string& path) {
  return model_from_json(load_json(path));
}

}  // namespace bhe

#endif  // BHE_MODELS_HPP_

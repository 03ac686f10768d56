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

// Multi-sub-model exploitation: softmax sample weights from the exploration
// distances, one weighted sub-model per environment, and a jointly trained
// embedding model + linear environment classifier that mixes the sub-model
// predictions at serving time.

#ifndef BHE_EXPLOIT_HPP_
#define BHE_EXPLOIT_HPP_

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bhe/common.hpp"
#include "bhe/data.hpp"
#include "bhe/explore.hpp"
#include "bhe/models.hpp"

namespace bhe {

// w_{., e} = softmax_e(-d_{., e}), row by row.
inline Matrix sample_weights(const Matrix& distances) {
  Matrix w(distances.rows(), distances.cols());
  std::vector<double> neg(distances.cols());
  for (std::size_t i = 0; i < distances.rows(); ++i) {
    const auto d = distances.row(i);
    for (std::size_t e = 0; e < d.size(); ++e) neg[e] = -d[e];
    const auto p = softmax(neg);
    std::copy(p.begin(), p.end(), w.row(i).begin());
  }
  return w;
}

// Hard-environment weighting: `up` for the sample's own environment, `down`
// for every other column.
inline Matrix baseline_weights(const std::vector<int>& labels, int n_e, double up, double down) {
  Matrix w(labels.size(), static_cast<std::size_t>(n_e), down);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_e) throw ArgumentError("baseline label out of range");
    w(i, static_cast<std::size_t>(labels[i])) = up;
  }
  return w;
}

struct SubModelOptions {
  Backbone backbone = Backbone::mf;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // When set, f_e only sees samples whose hard label is e (still weighted).
  const std::vector<int>* restrict_to_labels = nullptr;
};

struct SubModels {
  std::vector<FactorizationModel> models;
  std::vector<double> final_losses;
};

// f_e minimizes sum_i loss_i * w_{i,e} (times any base weight already on the
// sample) over all samples.
inline SubModels train_sub_models(const TrainingSet& data, const Matrix& weights,
                                  const SubModelOptions& opt) {
  if (weights.rows() != data.size()) throw ArgumentError("weight rows must match samples");
  const std::size_t n_e = weights.cols();
  SubModels out;
  out.final_losses.assign(n_e, 0.0);
  for (std::size_t e = 0; e < n_e; ++e) {
    out.models.push_back(make_model(opt.backbone, data, opt.train, derive_seed(opt.seed, "sub_init", e)));
  }
  parallel_for(n_e, opt.threads, [&](std::size_t e) {
    TrainingSet weighted;
    if (opt.restrict_to_labels) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if ((*opt.restrict_to_labels)[i] == static_cast<int>(e)) idx.push_back(i);
      }
      weighted = data.select(idx);
      for (std::size_t r = 0; r < idx.size(); ++r) weighted.weights[r] *= weights(idx[r], e);
      if (weighted.size() == 0) return;
    } else {
      weighted = data;
      for (std::size_t i = 0; i < data.size(); ++i) weighted.weights[i] *= weights(i, e);
    }
    TrainConfig tc = opt.train;
    tc.seed = derive_seed(opt.seed, "sub_train", e);
    out.final_losses[e] = sgd_train(out.models[e], weighted, tc).final_loss;
  });
  return out;
}

// Linear softmax map from the embedding a_{u,v} to |E| logits.
struct EnvClassifier {
  std::size_t n_envs = 1;
  std::size_t input_dim = 0;
  std::vector<double> weights;  // n_envs x input_dim
  std::vector<double> bias;     // n_envs

  EnvClassifier() = default;
  EnvClassifier(std::size_t envs, std::size_t dim)
      : n_envs(envs), input_dim(dim), weights(envs * dim, 0.0), bias(envs, 0.0) {}

  std::vector<double> logits(std::span<const double> a) const {
    if (a.size() != input_dim) throw ArgumentError("classifier input width mismatch");
    std::vector<double> z(bias);
    for (std::size_t e = 0; e < n_envs; ++e) {
      for (std::size_t j = 0; j < input_dim; ++j) z[e] += weights[e * input_dim + j] * a[j];
    }
    return z;
  }

  std::vector<double> probabilities(std::span<const double> a) const { return softmax(logits(a)); }

  bool operator==(const EnvClassifier&) const = default;
};

struct ClassifierOptions {
  Backbone backbone = Backbone::mf;
  TrainConfig train;
  double ce_weight = 1.0;
  std::uint64_t seed = 0;
};

struct ClassifierResult {
  FactorizationModel emb_model;
  EnvClassifier classifier;
  double train_accuracy = 0.0;
  std::vector<double> loss_history;
};

// Joint SGD on sum_i [loss(h_emb(u,v), y) + ce_weight * CE(f_c(a_{u,v}), e)].
// Cross-entropy gradients flow back into the embedding parameters of h_emb.
inline ClassifierResult train_env_classifier(const TrainingSet& data, const std::vector<int>& e_labels,
                                             int n_e, const ClassifierOptions& opt) {
  if (e_labels.size() != data.size()) throw ArgumentError("labels must match samples");
  if (data.size() == 0) throw ArgumentError("classifier needs data");
  const TrainConfig& cfg = opt.train;
  cfg.validate();
  ClassifierResult result{make_model(opt.backbone, data, cfg, derive_seed(opt.seed, "emb_init")),
                          EnvClassifier{}, 0.0, {}};
  const std::size_t width = embedding_width(result.emb_model, data.nnz);
  const auto envs = static_cast<std::size_t>(n_e);
  result.classifier = EnvClassifier(envs, width);
  EnvClassifier& fc = result.classifier;

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  GradientList grads;
  std::vector<double> grad_w(fc.weights.size()), grad_b(envs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(opt.seed, "classifier_epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      grads.clear();
      std::fill(grad_w.begin(), grad_w.end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const double w = data.weights[i];
        if (w == 0.0) continue;
        const double s = predict_sample(result.emb_model, data, i);
        const double y = data.targets[i];
        const double reg_sum = std::visit(
            [&](const auto& m) {
              return accumulate_gradient(m, data, i, w * loss_derivative(s, y, cfg.loss_kind), w,
                                         cfg, grads);
            },
            result.emb_model);
        const auto a = extract_embedding(result.emb_model, data, i);
        const auto p = fc.probabilities(a);
        const auto label = static_cast<std::size_t>(e_labels[i]);
        total += w * (loss(s, y, cfg.loss_kind) + cfg.l2_reg * reg_sum -
                      opt.ce_weight * std::log(std::max(p[label], 1e-300)));
        const auto idx = embedding_parameter_indices(result.emb_model, data, i);
        for (std::size_t e = 0; e < envs; ++e) {
          const double dz = w * opt.ce_weight * (p[e] - (e == label ? 1.0 : 0.0));
          grad_b[e] += dz;
          for (std::size_t j = 0; j < width; ++j) {
            grad_w[e * width + j] += dz * a[j] + 2.0 * cfg.l2_reg * w * fc.weights[e * width + j];
            grads.emplace_back(idx[j], dz * fc.weights[e * width + j]);
          }
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      auto params = std::visit([](auto& m) { return m.parameters(); }, result.emb_model);
      for (const auto& [index, g] : grads) params[index] -= step * g;
      for (std::size_t k = 0; k < grad_w.size(); ++k) fc.weights[k] -= step * grad_w[k];
      for (std::size_t e = 0; e < envs; ++e) fc.bias[e] -= step * grad_b[e];
    }
    const double epoch_loss = total / static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("classifier training diverged in epoch " + std::to_string(epoch + 1));
    }
    result.loss_history.push_back(epoch_loss);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = fc.probabilities(extract_embedding(result.emb_model, data, i));
    correct += static_cast<int>(argmax(p)) == e_labels[i];
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

struct ComposedRecommender {
  Backbone backbone = Backbone::mf;
  std::vector<FactorizationModel> sub_models;
  FactorizationModel emb_model;
  EnvClassifier classifier;

  std::size_t n_envs() const { return sub_models.size(); }
};

inline std::vector<double> classify_env(const ComposedRecommender& cr, std::uint32_t user,
                                        std::uint32_t item, const Dataset& ds) {
  std::vector<double> a;
  if (const auto* mf = std::get_if<MFModel>(&cr.emb_model)) {
    a = extract_embedding(*mf, user, item);
  } else {
    a = extract_embedding(std::get<FMModel>(cr.emb_model), encode_pair(ds, user, item));
  }
  return cr.classifier.probabilities(a);
}

// sum_e yhat_e * p_e
inline double compose(std::span<const double> sub_predictions, std::span<const double> probs) {
  double s = 0.0;
  for (std::size_t e = 0; e < sub_predictions.size(); ++e) s += sub_predictions[e] * probs[e];
  return s;
}

inline double compose_predict(const ComposedRecommender& cr, std::uint32_t user,
                              std::uint32_t item, const Dataset& ds) {
  const auto p = classify_env(cr, user, item, ds);
  std::vector<double> preds;
  preds.reserve(cr.sub_models.size());
  for (const auto& m : cr.sub_models) preds.push_back(predict_pair(m, ds, user, item));
  return compose(preds, p);
}

using Scorer = std::function<double(std::uint32_t user, std::uint32_t item)>;

inline Scorer make_scorer(const FactorizationModel& model, const Dataset& ds) {
  return [&model, &ds](std::uint32_t u, std::uint32_t v) { return predict_pair(model, ds, u, v); };
}

inline Scorer make_scorer(const ComposedRecommender& cr, const Dataset& ds) {
  return [&cr, &ds](std::uint32_t u, std::uint32_t v) { return compose_predict(cr, u, v, ds); };
}

struct ScoredItem {
  std::uint32_t item = 0;
  double score = 0.0;
};

// Descending score, ties by ascending item id; min(K, |candidates|) items.
inline std::vector<std::uint32_t> recommend_topk(std::vector<ScoredItem> scored, std::size_t k) {
  if (k < 1) throw ArgumentError("K must be >= 1");
  const std::size_t take = std::min(k, scored.size());
  auto before = [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), before);
  std::vector<std::uint32_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = scored[i].item;
  return out;
}

inline std::vector<std::uint32_t> recommend_topk(const Scorer& scorer, std::uint32_t user,
                                                 std::span<const std::uint32_t> candidates,
                                                 std::size_t k) {
  std::vector<ScoredItem> scored;
  scored.reserve(candidates.size());
  for (auto v : candidates) scored.push_back({v, scorer(user, v)});
  return recommend_topk(std::move(scored), k);
}

struct ComposedTrainOptions {
  Backbone backbone = Backbone::mf;
  TrainConfig train;
  double ce_weight = 1.0;
  bool restrict_to_env = false;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ComposedTrainReport {
  std::vector<double> sub_losses;
  double classifier_accuracy = 0.0;
};

// Sub-models from softmax(-G_e) plus the embedding/classifier pair.
inline ComposedRecommender train_composed(const TrainingSet& data, const std::vector<int>& e_labels,
                                          const Matrix& weights, const ComposedTrainOptions& opt,
                                          ComposedTrainReport* report = nullptr) {
  SubModelOptions so;
  so.backbone = opt.backbone;
  so.train = opt.train;
  so.seed = derive_seed(opt.seed, "sub_models");
  so.threads = opt.threads;
  so.restrict_to_labels = opt.restrict_to_env ? &e_labels : nullptr;
  SubModels subs = train_sub_models(data, weights, so);

  ClassifierOptions co;
  co.backbone = opt.backbone;
  co.train = opt.train;
  co.ce_weight = opt.ce_weight;
  co.seed = derive_seed(opt.seed, "classifier");
  ClassifierResult cls = train_env_classifier(data, e_labels, static_cast<int>(weights.cols()), co);

  if (report) {
    report->sub_losses = subs.final_losses;
    report->classifier_accuracy = cls.train_accuracy;
  }
  return {opt.backbone, std::move(subs.models), std::move(cls.emb_model), std::move(cls.classifier)};
}

// ---------------------------------------------------------------------------
// Serialization: subs/<e>.json, emb.json, classifier.json, meta.json

inline void save_composed(const std::string& dir, const ComposedRecommender& cr,
                          const FeatureSchema& schema) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "subs");
  for (std::size_t e = 0; e < cr.sub_models.size(); ++e) {
    save_model((fs::path(dir) / "subs" / (std::to_string(e) + ".json")).string(), cr.sub_models[e]);
  }
  save_model((fs::path(dir) / "emb.json").string(), cr.emb_model);
  save_json((fs::path(dir) / "classifier.json").string(),
            {{"n_envs", cr.classifier.n_envs},
             {"input_dim", cr.classifier.input_dim},
             {"weights", cr.classifier.weights},
             {"bias", cr.classifier.bias}});
  save_json((fs::path(dir) / "meta.json").string(),
            {{"format", "bhe-composed"},
             {"version", 1},
             {"n_envs", cr.n_envs()},
             {"backbone", to_string(cr.backbone)},
             {"schema_hash", std::to_string(schema.hash())}});
}

inline ComposedRecommender load_composed(const std::string& dir) {
  namespace fs = std::filesystem;
  const json meta = load_json((fs::path(dir) / "meta.json").string());
  try {
    if (meta.value("format", "") != "bhe-composed") throw FormatError(dir + " is not a composed model");
    ComposedRecommender cr;
    cr.backbone = parse_backbone(meta.at("backbone").get<std::string>());
    const auto n = meta.at("n_envs").get<std::size_t>();
    for (std::size_t e = 0; e < n; ++e) {
      cr.sub_models.push_back(load_model((fs::path(dir) / "subs" / (std::to_string(e) + ".json")).string()));
    }
    cr.emb_model = load_model((fs::path(dir) / "emb.json").string());
    const json c = load_json((fs::path(dir) / "classifier.json").string());
    cr.classifier.n_envs = c.at("n_envs").get<std::size_t>();
    cr.classifier.input_dim = c.at("input_dim").get<std::size_t>();
    cr.classifier.weights = c.at("weights").get<std::vector<double>>();
    cr.classifier.bias = c.at("bias").get<std::vector<double>>();
    if (cr.classifier.n_envs != n ||
        cr.classifier.weights.size() != cr.classifier.n_envs * cr.classifier.input_dim) {
      throw FormatError("classifier shape does not match meta.json");
    }
    return cr;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed composed model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Feature-defined baseline: hard environments from one categorical field,
// weighted by baseline_weights, served by routing each pair to the sub-model
// of its own category. Every sub-model shares the single-model seeds.

struct BaselineRecommender {
  std::string field;
  std::vector<FactorizationModel> sub_models;
};

inline std::vector<int> feature_env_labels(const Dataset& ds, std::size_t field) {
  std::vector<int> labels(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& it = ds.interactions[i];
    labels[i] = static_cast<int>(ds.category(field, it.user, it.item));
  }
  return labels;
}

inline std::size_t resolve_category_field(const FeatureSchema& schema, const std::string& name) {
  const auto f = schema.find(name);
  if (!f) throw ConfigError("unknown feature field '" + name + "'");
  if (schema.fields()[*f].id_field) throw ConfigError("field '" + name + "' is an id field");
  return *f;
}

inline BaselineRecommender train_baseline(const Dataset& ds, const std::string& field, double up,
                                          double down, const SubModelOptions& opt) {
  const std::size_t f = resolve_category_field(ds.schema, field);
  const int n_e = static_cast<int>(ds.schema.fields()[f].categories.size());
  const auto labels = feature_env_labels(ds, f);
  const Matrix w = baseline_weights(labels, n_e, up, down);
  const TrainingSet data = make_training_set(ds, opt.train.loss_kind);
  BaselineRecommender br{field, {}};
  for (int e = 0; e < n_e; ++e) {
    br.sub_models.push_back(make_model(opt.backbone, data, opt.train, derive_seed(opt.seed, "sub_init", 0)));
  }
  parallel_for(static_cast<std::size_t>(n_e), opt.threads, [&](std::size_t e) {
    TrainingSet weighted = data;
    for (std::size_t i = 0; i < data.size(); ++i) weighted.weights[i] *= w(i, e);
    TrainConfig tc = opt.train;
    tc.seed = derive_seed(opt.seed, "sub_train", 0);
    sgd_train(br.sub_models[e], weighted, tc);
  });
  return br;
}

inline Scorer make_scorer(const BaselineRecommender& br, const Dataset& ds) {
  const std::size_t f = resolve_category_field(ds.schema, br.field);
  return [&br, &ds, f](std::uint32_t u, std::uint32_t v) {
    return predict_pair(br.sub_models.at(ds.category(f, u, v)), ds, u, v);
  };
}

inline void save_baseline(const std::string& dir, const BaselineRecommender& br,
                          const FeatureSchema& schema) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "subs");
  for (std::size_t e = 0; e < br.sub_models.size(); ++e) {
    save_model((fs::path(dir) / "subs" / (std::to_string(e) + ".json")).string(), br.sub_models[e]);
  }
  save_json((fs::path(dir) / "meta.json").string(),
            {{"format", "bhe-baseline"},
             {"version", 1},
             {"n_envs", br.sub_models.size()},
             {"field", br.field},
             {"schema_hash", std::to_string(schema.hash())}});
}

inline BaselineRecommender load_baseline(const std::string& dir) {
  namespace fs = std::filesystem;
  const json meta = load_json((fs::path(dir) / "meta.json").string());
  try {
    if (meta.value("format", "") != "bhe-baseline") throw FormatError(dir + " is not a baseline model");
    BaselineRecommender br;
    br.field = meta.at("field").get<std::string>();
    const auto n = meta.at("n_envs").get<std::size_t>();
    for (std::size_t e = 0; e < n; ++e) {
      br.sub_models.push_back(load_model((fs::path(dir) / "subs" / (std::to_string(e) + ".json")).string()));
    }
    return br;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed baseline model: ") + e.what());
  }
}

}  // namespace bhe

#endif  // BHE_EXPLOIT_HPP_

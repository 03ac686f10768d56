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

// Command-line driver: synth, explore, train, debias, eval, sweep. Each
// subcommand reads one JSON config; --seed and --threads override the
// top-level fields of the same name.

#ifndef BHE_CLI_HPP_
#define BHE_CLI_HPP_

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bhe/bhe.hpp"

namespace bhe::cli {

enum ExitCode { kOk = 0, kConfigError = 2, kRuntimeError = 3 };

namespace fs = std::filesystem;

struct Context {
  json config;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::ostream* out = &std::cout;
};

// ---------------------------------------------------------------------------
// Config helpers

inline json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

inline const json& require(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw ConfigError("missing '" + std::string(key) + "' in " + context);
  return j.at(key);
}

inline std::string require_string(const json& j, const char* key, const std::string& context) {
  const json& v = require(j, key, context);
  if (!v.is_string()) throw ConfigError("'" + std::string(key) + "' in " + context + " must be a string");
  return v.get<std::string>();
}

inline std::string existing_path(const json& j, const char* key, const std::string& context) {
  std::string path = require_string(j, key, context);
  if (!fs::exists(path)) throw ConfigError(std::string(key) + " '" + path + "' does not exist");
  return path;
}

inline TrainConfig train_config_from_json(const json& j) {
  const std::string ctx = "train config";
  check_keys(j, {"loss", "learning_rate", "l2_reg", "epochs", "batch_size", "init_scale", "factors",
                 "fit_global_bias", "fit_biases"},
             ctx);
  TrainConfig c;
  std::string loss = to_string(c.loss_kind);
  read_key(j, "loss", loss, ctx);
  c.loss_kind = parse_loss_kind(loss);
  read_key(j, "learning_rate", c.learning_rate, ctx);
  read_key(j, "l2_reg", c.l2_reg, ctx);
  read_key(j, "epochs", c.epochs, ctx);
  read_key(j, "batch_size", c.batch_size, ctx);
  read_key(j, "init_scale", c.init_scale, ctx);
  read_key(j, "factors", c.factors, ctx);
  read_key(j, "fit_global_bias", c.fit_global_bias, ctx);
  read_key(j, "fit_biases", c.fit_biases, ctx);
  if (c.factors < 1) throw ConfigError("factors must be >= 1");
  c.validate();
  return c;
}

inline BHEConfig bhe_config_from_json(const json& j) {
  const std::string ctx = "bhe config";
  check_keys(j, {"n_e", "n_r", "max_em_iters", "label_change_tol", "r_space", "backbone", "train"}, ctx);
  BHEConfig c;
  read_key(j, "n_e", c.n_e, ctx);
  read_key(j, "n_r", c.n_r, ctx);
  read_key(j, "max_em_iters", c.max_em_iters, ctx);
  read_key(j, "label_change_tol", c.label_change_tol, ctx);
  std::string space = to_string(c.r_space);
  read_key(j, "r_space", space, ctx);
  if (space == "embedding") {
    c.r_space = RSpace::embedding;
  } else if (space == "raw_feature") {
    c.r_space = RSpace::raw_feature;
  } else {
    throw ConfigError("unknown r_space '" + space + "'");
  }
  std::string backbone = to_string(c.backbone);
  read_key(j, "backbone", backbone, ctx);
  c.backbone = parse_backbone(backbone);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  c.validate();
  return c;
}

// Data block: {"path", "schema", "format", "test_fraction", "split_seed",
// "ground_truth", "label_threshold"}. test_fraction 0 keeps everything in
// the training part.
struct DataSpec {
  std::string path;
  std::string schema;
  TextFormat format = TextFormat::csv;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  std::optional<std::string> ground_truth;
  std::optional<double> label_threshold;
};

inline DataSpec data_spec_from_json(const json& j, double default_test_fraction = 0.2) {
  const std::string ctx = "data block";
  check_keys(j, {"path", "schema", "format", "test_fraction", "split_seed", "ground_truth", "label_threshold"},
             ctx);
  DataSpec d;
  d.path = existing_path(j, "path", ctx);
  d.schema = existing_path(j, "schema", ctx);
  std::string format = "csv";
  read_key(j, "format", format, ctx);
  if (format == "csv") {
    d.format = TextFormat::csv;
  } else if (format == "tsv") {
    d.format = TextFormat::tsv;
  } else {
    throw ConfigError("unknown data format '" + format + "'");
  }
  d.test_fraction = default_test_fraction;
  read_key(j, "test_fraction", d.test_fraction, ctx);
  if (!(d.test_fraction >= 0.0 && d.test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  read_key(j, "split_seed", d.split_seed, ctx);
  if (j.contains("ground_truth")) d.ground_truth = existing_path(j, "ground_truth", ctx);
  if (j.contains("label_threshold")) {
    double t = 0.0;
    read_key(j, "label_threshold", t, ctx);
    d.label_threshold = t;
  }
  return d;
}

struct LoadedData {
  Dataset all;
  Dataset train;
  Dataset test;
  bool has_test = false;
};

inline Dataset load_dataset(const DataSpec& d, const Dataset* vocabulary = nullptr) {
  Dataset ds = load_interactions(d.path, d.format, FeatureSchema::load(d.schema), vocabulary);
  if (d.ground_truth) {
    auto gt = ground_truth_from_json(load_json(*d.ground_truth));
    if (gt.size() != ds.size()) throw ConfigError("ground truth does not match the dataset size");
    ds.ground_truth = std::move(gt);
  }
  if (d.label_threshold) ds = binarize(std::move(ds), *d.label_threshold);
  return ds;
}

inline LoadedData load_data(const DataSpec& d) {
  LoadedData out;
  out.all = load_dataset(d);
  if (d.test_fraction > 0.0) {
    Split s = split(out.all, d.test_fraction, d.split_seed);
    out.train = std::move(s.train);
    out.test = std::move(s.test);
    out.has_test = true;
  } else {
    out.train = out.all;
  }
  return out;
}

inline std::optional<double> optional_double(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  double v = 0.0;
  read_key(j, key, v, ctx);
  return v;
}

inline std::string out_dir(const json& cfg, const std::string& ctx) {
  const std::string dir = require_string(cfg, "out_dir", ctx);
  fs::create_directories(dir);
  return dir;
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path);
  out << text;
}

inline std::vector<int> ground_truth_e(const Dataset& ds) {
  std::vector<int> e;
  for (const auto& p : *ds.ground_truth) e.push_back(p.e);
  return e;
}

inline std::vector<int> ground_truth_r(const Dataset& ds) {
  std::vector<int> r;
  for (const auto& p : *ds.ground_truth) r.push_back(p.r);
  return r;
}

inline EnvAssignment load_assignment(const std::string& path, std::size_t expected_size) {
  EnvAssignment a = assignment_from_json(load_json(path), nullptr);
  if (a.size() != expected_size) {
    throw ConfigError("assignment " + path + " covers " + std::to_string(a.size()) +
                      " samples, the training data has " + std::to_string(expected_size));
  }
  return a;
}

// Seeds shared by `train` and `sweep`, so a composed model with one
// environment reproduces the single model.
inline std::uint64_t composed_seed(std::uint64_t master) { return derive_seed(master, "composed"); }
inline std::uint64_t bhe_seed(std::uint64_t master) { return derive_seed(master, "bhe"); }

inline FactorizationModel train_single(const TrainingSet& data, Backbone backbone, const TrainConfig& train,
                                       std::uint64_t master) {
  SubModelOptions so;
  so.backbone = backbone;
  so.train = train;
  so.seed = derive_seed(composed_seed(master), "sub_models");
  SubModels subs = train_sub_models(data, Matrix(data.size(), 1, 1.0), so);
  return std::move(subs.models.front());
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const Context& ctx) {
  const std::string c = "synth config";
  check_keys(ctx.config, {"synth", "mnar", "out_dir", "seed", "threads"}, c);
  SynthConfig sc = synth_config_from_json(require(ctx.config, "synth", c));
  sc.seed = ctx.seed;
  std::optional<MNARConfig> mc;
  if (ctx.config.contains("mnar")) mc = mnar_config_from_json(ctx.config["mnar"]);
  const std::string dir = out_dir(ctx.config, c);

  const Dataset ds = gen_heterogeneous(sc);
  write_interactions(join(dir, "data.csv"), ds);
  save_json(join(dir, "schema.json"), ds.schema.to_json());
  save_json(join(dir, "ground_truth.json"), ground_truth_to_json(ds, sc.n_e, sc.n_r));
  *ctx.out << "synth: " << ds.size() << " samples, " << ds.n_users << " users, " << ds.n_items
           << " items\n";
  if (mc) {
    const MNARResult m = gen_mnar(ds, *mc, derive_seed(ctx.seed, "mnar"));
    write_interactions(join(dir, "observed.csv"), m.observed);
    write_interactions(join(dir, "uniform.csv"), m.uniform);
    save_json(join(dir, "observed_ground_truth.json"), ground_truth_to_json(m.observed, sc.n_e, sc.n_r));
    save_json(join(dir, "uniform_ground_truth.json"), ground_truth_to_json(m.uniform, sc.n_e, sc.n_r));
    save_json(join(dir, "mnar.json"), {{"format", "bhe-mnar"},
                                       {"version", 1},
                                       {"total_pairs", ds.size()},
                                       {"observed_indices", m.observed_indices},
                                       {"uniform_indices", m.uniform_indices},
                                       {"propensities", m.propensities}});
    *ctx.out << "mnar: " << m.observed.size() << " observed, " << m.uniform.size() << " uniform\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// explore

inline int cmd_explore(const Context& ctx) {
  const std::string c = "explore config";
  check_keys(ctx.config, {"data", "bhe", "out_dir", "seed", "threads"}, c);
  const DataSpec spec = data_spec_from_json(require(ctx.config, "data", c));
  BHEConfig cfg = ctx.config.contains("bhe") ? bhe_config_from_json(ctx.config["bhe"]) : BHEConfig{};
  cfg.seed = bhe_seed(ctx.seed);
  cfg.threads = ctx.threads;
  const std::string dir = out_dir(ctx.config, c);
  const LoadedData data = load_data(spec);

  const EnvAssignment a = run_bhe(data.train, cfg);
  fs::create_directories(join(dir, "models"));
  std::vector<std::string> paths;
  for (std::size_t e = 0; e < a.models.size(); ++e) {
    const std::string rel = "models/e" + std::to_string(e) + ".json";
    save_model(join(dir, rel), a.models[e]);
    paths.push_back(rel);
  }
  save_json(join(dir, "assignment.json"), to_json(a, paths));
  json trace = {{"format", "bhe-trace"},
                {"n_samples", a.size()},
                {"cell_counts", a.cell_counts()},
                {"iterations", trace_to_json(a.trace)}};
  if (data.train.ground_truth) {
    const auto ge = ground_truth_e(data.train);
    const auto gr = ground_truth_r(data.train);
    trace["ari_e"] = adjusted_rand_index(a.e_labels, ge);
    trace["ari_joint"] = adjusted_rand_index(joint_labels(a.e_labels, a.r_labels, a.n_r),
                                             joint_labels(ge, gr, std::max(1, *std::max_element(gr.begin(), gr.end()) + 1)));
  }
  save_json(join(dir, "trace.json"), trace);
  *ctx.out << "explore: " << a.trace.size() << " EM iterations";
  if (trace.contains("ari_e")) *ctx.out << ", ARI(e) " << format_number(trace["ari_e"].get<double>(), 4);
  *ctx.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct ModelSettings {
  Backbone backbone = Backbone::mf;
  TrainConfig train;
};

inline ModelSettings model_settings(const json& cfg, const std::string& ctx) {
  ModelSettings m;
  std::string backbone = to_string(m.backbone);
  read_key(cfg, "backbone", backbone, ctx);
  m.backbone = parse_backbone(backbone);
  if (cfg.contains("train")) m.train = train_config_from_json(cfg["train"]);
  return m;
}

inline int cmd_train(const Context& ctx) {
  const std::string c = "train config";
  check_keys(ctx.config, {"data", "mode", "assignment", "backbone", "train", "ce_weight", "restrict_to_env",
                          "baseline", "out_dir", "seed", "threads"},
             c);
  const std::string mode = require_string(ctx.config, "mode", c);
  if (mode != "single" && mode != "composed" && mode != "baseline-user" && mode != "baseline-item") {
    throw ConfigError("unknown train mode '" + mode + "'");
  }
  const DataSpec spec = data_spec_from_json(require(ctx.config, "data", c));
  const ModelSettings ms = model_settings(ctx.config, c);
  double ce_weight = 1.0;
  bool restrict_to_env = false;
  read_key(ctx.config, "ce_weight", ce_weight, c);
  read_key(ctx.config, "restrict_to_env", restrict_to_env, c);
  std::optional<std::string> assignment_path;
  if (mode == "composed") assignment_path = existing_path(ctx.config, "assignment", c);
  std::string field;
  double up = 2.0, down = 0.5;
  if (mode.starts_with("baseline")) {
    const json& b = require(ctx.config, "baseline", c);
    check_keys(b, {"field", "up", "down"}, "baseline block");
    field = require_string(b, "field", "baseline block");
    read_key(b, "up", up, "baseline block");
    read_key(b, "down", down, "baseline block");
    if (!(up >= 0.0 && down >= 0.0)) throw ConfigError("baseline weights must be >= 0");
  }
  const std::string dir = out_dir(ctx.config, c);
  const LoadedData data = load_data(spec);
  const TrainingSet ts = make_training_set(data.train, ms.train.loss_kind);

  json report = {{"format", "bhe-train-report"}, {"mode", mode}, {"n_train", ts.size()}};
  if (mode == "single") {
    const FactorizationModel m = train_single(ts, ms.backbone, ms.train, ctx.seed);
    save_model(join(dir, "model.json"), m);
  } else if (mode == "composed") {
    const EnvAssignment a = load_assignment(*assignment_path, ts.size());
    if (a.G_e.rows() != ts.size()) throw ConfigError("assignment has no distance matrix G_e");
    ComposedTrainOptions opt;
    opt.backbone = ms.backbone;
    opt.train = ms.train;
    opt.ce_weight = ce_weight;
    opt.restrict_to_env = restrict_to_env;
    opt.seed = composed_seed(ctx.seed);
    opt.threads = ctx.threads;
    ComposedTrainReport rep;
    const ComposedRecommender cr = train_composed(ts, a.e_labels, sample_weights(a.G_e), opt, &rep);
    save_composed(join(dir, "model"), cr, data.train.schema);
    report["sub_losses"] = rep.sub_losses;
    report["classifier_accuracy"] = rep.classifier_accuracy;
  } else {
    const Side side = mode == "baseline-user" ? Side::user : Side::item;
    const std::size_t f = resolve_category_field(data.train.schema, field);
    if (data.train.schema.fields()[f].side != side) {
      throw ConfigError("field '" + field + "' is not a " + to_string(side) + " field");
    }
    SubModelOptions so;
    so.backbone = ms.backbone;
    so.train = ms.train;
    so.seed = derive_seed(composed_seed(ctx.seed), "sub_models");
    so.threads = ctx.threads;
    const BaselineRecommender br = train_baseline(data.train, field, up, down, so);
    save_baseline(join(dir, "model"), br, data.train.schema);
    report["field"] = field;
    report["up"] = up;
    report["down"] = down;
  }
  save_json(join(dir, "train_report.json"), report);
  *ctx.out << "train: " << mode << " on " << ts.size() << " samples\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

// Owns whichever recommender was loaded and hands out a scorer over `ds`.
struct LoadedModel {
  std::optional<FactorizationModel> single;
  std::optional<ComposedRecommender> composed;
  std::optional<BaselineRecommender> baseline;

  Scorer scorer(const Dataset& ds) const {
    if (single) return make_scorer(*single, ds);
    if (composed) return make_scorer(*composed, ds);
    return make_scorer(*baseline, ds);
  }
};

inline LoadedModel load_any_model(const std::string& path) {
  LoadedModel m;
  if (fs::is_directory(path)) {
    const json meta = load_json(join(path, "meta.json"));
    const std::string format = meta.value("format", "");
    if (format == "bhe-composed") {
      m.composed = load_composed(path);
    } else if (format == "bhe-baseline") {
      m.baseline = load_baseline(path);
    } else {
      throw FormatError(path + " holds no known model");
    }
  } else {
    m.single = load_model(path);
  }
  return m;
}

inline int cmd_eval(const Context& ctx) {
  const std::string c = "eval config";
  check_keys(ctx.config, {"data", "model", "k", "threshold", "reports", "assignment", "subpop_field",
                          "profile_field", "cross_env", "out_dir", "seed", "threads"},
             c);
  const DataSpec spec = data_spec_from_json(require(ctx.config, "data", c));
  if (spec.test_fraction <= 0.0) throw ConfigError("eval needs a test split (test_fraction > 0)");
  const std::string model_path = existing_path(ctx.config, "model", c);
  std::size_t k = 10;
  read_key(ctx.config, "k", k, c);
  if (k < 1) throw ConfigError("k must be >= 1");
  const auto threshold = optional_double(ctx.config, "threshold", c);
  std::vector<std::string> reports = {"ndcg", "recall"};
  read_key(ctx.config, "reports", reports, c);
  bool need_assignment = false;
  for (const auto& r : reports) {
    if (r != "ndcg" && r != "recall" && r != "cross_env" && r != "subpop" && r != "profile") {
      throw ConfigError("unknown report '" + r + "'");
    }
    need_assignment = need_assignment || r == "cross_env" || r == "profile";
  }
  auto wants = [&](const char* name) { return std::find(reports.begin(), reports.end(), name) != reports.end(); };
  std::optional<std::string> assignment_path;
  if (need_assignment) assignment_path = existing_path(ctx.config, "assignment", c);
  std::string subpop_field, profile_field;
  if (wants("subpop")) subpop_field = require_string(ctx.config, "subpop_field", c);
  if (wants("profile")) profile_field = require_string(ctx.config, "profile_field", c);
  CrossEnvConfig ce;
  if (ctx.config.contains("cross_env")) {
    const json& j = ctx.config["cross_env"];
    check_keys(j, {"backbone", "train", "test_fraction"}, "cross_env block");
    const ModelSettings ms = model_settings(j, "cross_env block");
    ce.backbone = ms.backbone;
    ce.train = ms.train;
    read_key(j, "test_fraction", ce.test_fraction, "cross_env block");
  }
  ce.k = k;
  ce.threshold = threshold;
  ce.seed = derive_seed(ctx.seed, "cross_env");
  ce.threads = ctx.threads;
  const std::string dir = out_dir(ctx.config, c);

  const LoadedData data = load_data(spec);
  const LoadedModel model = load_any_model(model_path);
  const Scorer scorer = model.scorer(data.all);
  std::optional<EnvAssignment> a;
  if (assignment_path) a = load_assignment(*assignment_path, data.train.size());

  json report = {{"format", "bhe-eval-report"}, {"version", 1}, {"k", k}};
  std::vector<std::vector<std::string>> table = {{"report", "key", "value"}};
  if (wants("ndcg") || wants("recall")) {
    const RankingMetrics m = evaluate_ranking(scorer, data.train, data.test, k, threshold, ctx.threads);
    if (wants("ndcg")) {
      report["ndcg"] = to_json(m.ndcg);
      table.push_back({"ndcg@" + std::to_string(k), "mean", format_number(m.ndcg.mean)});
    }
    if (wants("recall")) {
      report["recall"] = to_json(m.recall);
      table.push_back({"recall@" + std::to_string(k), "mean", format_number(m.recall.mean)});
    }
  }
  if (wants("cross_env")) {
    const CrossEnvResult r = cross_env_matrix(data.train, a->e_labels, a->n_e, ce);
    report["cross_env"] = to_json(r);
    write_text(join(dir, "cross_env.csv"), cross_env_csv(r));
    for (std::size_t i = 0; i < r.ndcg.rows(); ++i) {
      for (std::size_t j = 0; j < r.ndcg.cols(); ++j) {
        const std::string row = i + 1 == r.ndcg.rows() ? "all" : std::to_string(i);
        table.push_back({"cross_env", row + "->" + std::to_string(j), format_number(r.ndcg(i, j))});
      }
    }
  }
  if (wants("subpop")) {
    const auto buckets = subpop_report(scorer, data.train, data.test, subpop_field, k, threshold, ctx.threads);
    report["subpop"] = {{"field", subpop_field}, {"buckets", to_json(buckets)}};
    for (const auto& b : buckets) table.push_back({"subpop", b.name, format_number(b.ndcg.mean)});
  }
  if (wants("profile")) {
    const EnvProfile p = profile_environments(data.train, a->e_labels, a->n_e, profile_field);
    report["profile"] = to_json(p);
    for (std::size_t e = 0; e < p.normalized.rows(); ++e) {
      for (std::size_t cat = 0; cat < p.normalized.cols(); ++cat) {
        table.push_back({"profile", std::to_string(e) + ":" + p.categories[cat],
                         format_number(p.normalized(e, cat))});
      }
    }
  }
  save_json(join(dir, "report.json"), report);
  const std::string text = format_table(table);
  write_text(join(dir, "report.txt"), text);
  *ctx.out << text;
  return kOk;
}

// ---------------------------------------------------------------------------
// debias

inline int cmd_debias(const Context& ctx) {
  const std::string c = "debias config";
  check_keys(ctx.config, {"observed", "uniform", "method", "propensity", "propensity_fraction", "floor",
                          "assignment", "total_pairs", "backbone", "train", "k", "threshold", "out_dir",
                          "seed", "threads"},
             c);
  const DataSpec obs_spec = data_spec_from_json(require(ctx.config, "observed", c), 0.0);
  if (obs_spec.test_fraction != 0.0) throw ConfigError("observed data is used whole; set test_fraction 0");
  const std::string uniform_path = existing_path(ctx.config, "uniform", c);
  std::string method_name = "ips", mode_name = "global";
  read_key(ctx.config, "method", method_name, c);
  read_key(ctx.config, "propensity", mode_name, c);
  const DebiasMethod method = parse_debias_method(method_name);
  const PropensityMode mode = parse_propensity_mode(mode_name);
  double fraction = 0.05;
  read_key(ctx.config, "propensity_fraction", fraction, c);
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("propensity_fraction must lie in (0, 1)");
  PropensityOptions po;
  read_key(ctx.config, "floor", po.floor, c);
  if (!(po.floor > 0.0 && po.floor <= 1.0)) throw ConfigError("floor must lie in (0, 1]");
  std::optional<std::string> assignment_path;
  if (mode == PropensityMode::per_env) assignment_path = existing_path(ctx.config, "assignment", c);
  const ModelSettings ms = model_settings(ctx.config, c);
  std::size_t k = 10;
  read_key(ctx.config, "k", k, c);
  if (k < 1) throw ConfigError("k must be >= 1");
  const auto threshold = optional_double(ctx.config, "threshold", c);
  const std::string dir = out_dir(ctx.config, c);

  Dataset observed = load_dataset(obs_spec);
  DataSpec uni_spec = obs_spec;
  uni_spec.path = uniform_path;
  uni_spec.ground_truth.reset();
  Dataset uniform = load_dataset(uni_spec, &observed);
  adopt_vocabulary(observed, uniform);
  std::size_t total_pairs = observed.n_users * observed.n_items;
  read_key(ctx.config, "total_pairs", total_pairs, c);

  // The held-out part of the split estimates propensities; the rest is the
  // unbiased test set.
  const Split us = split(uniform, fraction, derive_seed(ctx.seed, "propensity_split"));
  const Dataset& propensity_sample = us.test;
  const Dataset& uniform_test = us.train;

  std::optional<EnvAssignment> a;
  PropensityTable table;
  if (mode == PropensityMode::per_env) {
    a = load_assignment(*assignment_path, observed.size());
    table = estimate_propensity_env(observed, propensity_sample, *a, total_pairs, po);
  } else {
    table = estimate_propensity_naive(observed, propensity_sample, total_pairs, po);
  }
  DebiasOptions opt;
  opt.backbone = ms.backbone;
  opt.method = method;
  opt.train = ms.train;
  opt.seed = derive_seed(ctx.seed, "debias");
  const FactorizationModel model = train_debiased(observed, table, a ? &*a : nullptr, opt);
  save_model(join(dir, "model.json"), model);
  save_json(join(dir, "propensity.json"), to_json(table));
  const RankingMetrics m = evaluate_ranking(make_scorer(model, uniform), observed, uniform_test, k, threshold,
                                            ctx.threads);
  save_json(join(dir, "report.json"), {{"format", "bhe-debias-report"},
                                       {"method", to_string(method)},
                                       {"propensity", to_string(mode)},
                                       {"n_observed", observed.size()},
                                       {"n_propensity_sample", propensity_sample.size()},
                                       {"n_uniform_test", uniform_test.size()},
                                       {"ndcg", to_json(m.ndcg)},
                                       {"recall", to_json(m.recall)}});
  *ctx.out << "debias: " << to_string(method) << "/" << to_string(mode) << " ndcg@" << k << " "
           << format_number(m.ndcg.mean) << " recall@" << k << " " << format_number(m.recall.mean) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepPoint {
  int n_e = 1;
  int n_r = 1;
  double ndcg = 0.0;
  double recall = 0.0;
  double final_assigned_loss = 0.0;
  std::size_t em_iterations = 0;
  std::optional<double> ari_e;
};

struct SweepOptions {
  BHEConfig bhe;
  ModelSettings exploit;
  double ce_weight = 1.0;
  bool restrict_to_env = false;
  std::size_t k = 10;
  std::optional<double> threshold;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Explore with each grid point, train the composed model, score the test part.
inline SweepPoint sweep_point(const Dataset& train, const Dataset& test, int n_e, int n_r, const SweepOptions& o) {
  BHEConfig cfg = o.bhe;
  cfg.n_e = n_e;
  cfg.n_r = n_r;
  cfg.seed = bhe_seed(o.seed);
  cfg.threads = o.threads;
  cfg.validate();
  const TrainingSet explore_set = make_training_set(train, cfg.train.loss_kind);
  const EnvAssignment a = run_bhe(explore_set, cfg);
  const TrainingSet ts = make_training_set(train, o.exploit.train.loss_kind);
  ComposedTrainOptions opt;
  opt.backbone = o.exploit.backbone;
  opt.train = o.exploit.train;
  opt.ce_weight = o.ce_weight;
  opt.restrict_to_env = o.restrict_to_env;
  opt.seed = composed_seed(o.seed);
  opt.threads = o.threads;
  const ComposedRecommender cr = train_composed(ts, a.e_labels, sample_weights(a.G_e), opt);
  const RankingMetrics m = evaluate_ranking(make_scorer(cr, train), train, test, o.k, o.threshold, o.threads);
  SweepPoint p;
  p.n_e = n_e;
  p.n_r = n_r;
  p.ndcg = m.ndcg.mean;
  p.recall = m.recall.mean;
  p.em_iterations = a.trace.size();
  p.final_assigned_loss = a.trace.empty() ? 0.0 : a.trace.back().total_assigned_loss;
  if (train.ground_truth) p.ari_e = adjusted_rand_index(a.e_labels, ground_truth_e(train));
  return p;
}

inline json to_json(const std::vector<SweepPoint>& points) {
  json grid = json::array();
  for (const auto& p : points) {
    json j = {{"n_e", p.n_e},
              {"n_r", p.n_r},
              {"ndcg", p.ndcg},
              {"recall", p.recall},
              {"em_iterations", p.em_iterations},
              {"final_assigned_loss", p.final_assigned_loss}};
    if (p.ari_e) j["ari_e"] = *p.ari_e;
    grid.push_back(j);
  }
  return {{"format", "bhe-sweep"}, {"version", 1}, {"grid", grid}};
}

inline int cmd_sweep(const Context& ctx) {
  const std::string c = "sweep config";
  check_keys(ctx.config, {"data", "n_e", "n_r", "bhe", "exploit", "ce_weight", "restrict_to_env", "k",
                          "threshold", "out_dir", "seed", "threads"},
             c);
  const DataSpec spec = data_spec_from_json(require(ctx.config, "data", c));
  if (spec.test_fraction <= 0.0) throw ConfigError("sweep needs a test split (test_fraction > 0)");
  std::vector<int> grid_e = {1, 2, 4, 8}, grid_r = {1};
  read_key(ctx.config, "n_e", grid_e, c);
  read_key(ctx.config, "n_r", grid_r, c);
  if (grid_e.empty() || grid_r.empty()) throw ConfigError("sweep grids must be nonempty");
  for (int v : grid_e) if (v < 1) throw ConfigError("n_e values must be >= 1");
  for (int v : grid_r) if (v < 1) throw ConfigError("n_r values must be >= 1");
  SweepOptions o;
  if (ctx.config.contains("bhe")) o.bhe = bhe_config_from_json(ctx.config["bhe"]);
  if (ctx.config.contains("exploit")) {
    check_keys(ctx.config["exploit"], {"backbone", "train"}, "exploit block");
    o.exploit = model_settings(ctx.config["exploit"], "exploit block");
  }
  read_key(ctx.config, "ce_weight", o.ce_weight, c);
  read_key(ctx.config, "restrict_to_env", o.restrict_to_env, c);
  read_key(ctx.config, "k", o.k, c);
  if (o.k < 1) throw ConfigError("k must be >= 1");
  o.threshold = optional_double(ctx.config, "threshold", c);
  o.seed = ctx.seed;
  o.threads = ctx.threads;
  const std::string dir = out_dir(ctx.config, c);
  const LoadedData data = load_data(spec);

  std::vector<SweepPoint> points;
  for (int ne : grid_e) {
    for (int nr : grid_r) points.push_back(sweep_point(data.train, data.test, ne, nr, o));
  }
  save_json(join(dir, "sweep.json"), to_json(points));
  std::ostringstream csv;
  csv << "n_e,n_r,ndcg,recall,em_iterations,final_assigned_loss,ari_e\n";
  std::vector<std::vector<std::string>> table = {{"n_e", "n_r", "ndcg@" + std::to_string(o.k),
                                                  "recall@" + std::to_string(o.k), "ari_e"}};
  for (const auto& p : points) {
    const std::string ari = p.ari_e ? format_number(*p.ari_e, 10) : "";
    csv << p.n_e << ',' << p.n_r << ',' << format_number(p.ndcg, 10) << ',' << format_number(p.recall, 10)
        << ',' << p.em_iterations << ',' << format_number(p.final_assigned_loss, 10) << ',' << ari << '\n';
    table.push_back({std::to_string(p.n_e), std::to_string(p.n_r), format_number(p.ndcg),
                     format_number(p.recall), p.ari_e ? format_number(*p.ari_e, 4) : "-"});
  }
  write_text(join(dir, "sweep.csv"), csv.str());
  const std::string text = format_table(table);
  write_text(join(dir, "sweep.txt"), text);
  *ctx.out << text;
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

// `args` excludes the program name. Errors go to `err` only.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bilevel heterogeneity exploration for recommendation data", "bhe"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate a synthetic heterogeneous dataset"},
      {"explore", "discover E- and R-level environments"},
      {"train", "train single, composed or feature-baseline recommenders"},
      {"debias", "train an IPS/SNIPS-debiased recommender"},
      {"eval", "ranking metrics and environment reports"},
      {"sweep", "environment-number grid"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "JSON config")->required();
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--threads", threads, "worker threads");
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    Context ctx;
    ctx.out = &out;
    ctx.config = read_config(config_path);
    if (!ctx.config.is_object()) throw ConfigError("config must be a JSON object");
    read_key(ctx.config, "seed", ctx.seed, "config");
    read_key(ctx.config, "threads", ctx.threads, "config");
    if (seed) ctx.seed = *seed;
    if (threads) ctx.threads = *threads;
    if (ctx.threads < 1) throw ConfigError("threads must be >= 1");
    if (command == "synth") return cmd_synth(ctx);
    if (command == "explore") return cmd_explore(ctx);
    if (command == "train") return cmd_train(ctx);
    if (command == "debias") return cmd_debias(ctx);
    if (command == "eval") return cmd_eval(ctx);
    return cmd_sweep(ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kConfigError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace bhe::cli

#endif  // BHE_CLI_HPP_

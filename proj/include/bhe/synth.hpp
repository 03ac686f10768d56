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

// Synthetic heterogeneous data with known (e, r) labels.
//
// Users carry an affinity group a_u = u mod n_e and a covariate blob
// r_u = (u / n_e) mod n_r; items carry b_v = v mod n_e. A sample of cell
// (e, r) draws a user of blob r and a uniform item, accepted with probability
// proportional to softmax_e(affinity * ([a_u = e] + [b_v = e])). The
// environment of a pair is therefore random but depends on its covariates.
//
//   y = sign_e * (scale_e * <p_u, shift_e(q_v)> + offset_e) + pref_e * [cat(v) = c_e] + noise
//
// p_u is drawn around the center of blob r_u; shift_e rotates the latent
// dimensions cyclically. offset_e acts as a latent coordinate that is the
// same for every pair, so an MF model can only carry it in its global bias.

#ifndef BHE_SYNTH_HPP_
#define BHE_SYNTH_HPP_

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "bhe/common.hpp"
#include "bhe/data.hpp"

namespace bhe {

struct Mechanism {
  double sign = 1.0;
  double scale = 1.0;
  double offset = 0.0;
  int shift = 0;
  int preferred_category = -1;
  double preference = 0.0;
};

struct SynthConfig {
  std::size_t n_users = 100;
  std::size_t n_items = 80;
  std::size_t latent_dim = 4;
  int n_e = 2;
  int n_r = 1;
  std::size_t samples_per_cell = 1000;
  double noise_sigma = 0.05;
  // Empty: sign (-1)^e, shift e / 2, offset common_offset.
  std::vector<Mechanism> mechanisms;
  double common_offset = 0.0;
  double env_affinity = 3.0;
  // Weight of per-user and per-item Gaussian environment scores added to the
  // group affinity logits; breaks the tie of pairs whose groups disagree.
  double pair_affinity = 0.0;
  double blob_separation = 1.0;
  double blob_spread = 0.5;
  double item_scale = 1.0;
  // Added to every latent coordinate of every item.
  double item_mean = 0.0;
  // Probability that a categorical covariate shows its latent group.
  double purity = 0.9;
  std::size_t n_item_categories = 0;  // 0: n_e
  // 0 keeps continuous ratings; L > 0 maps them to 1..L by equal-frequency bins.
  int rating_levels = 0;
  double label_threshold = 0.0;
  // Forbid a (user, item) pair from appearing more than once.
  bool distinct_pairs = false;
  std::uint64_t seed = 0;

  std::size_t item_categories() const {
    return n_item_categories ? n_item_categories : static_cast<std::size_t>(n_e);
  }

  Mechanism mechanism(int e) const {
    if (!mechanisms.empty()) return mechanisms.at(static_cast<std::size_t>(e));
    Mechanism m;
    m.sign = e % 2 == 0 ? 1.0 : -1.0;
    m.shift = e / 2;
    m.offset = common_offset;
    return m;
  }

  void validate() const {
    if (n_users < 1 || n_items < 1 || latent_dim < 1) throw ConfigError("counts must be >= 1");
    if (n_e < 1 || n_r < 1) throw ConfigError("n_e and n_r must be >= 1");
    if (samples_per_cell < 1) throw ConfigError("samples_per_cell must be >= 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(pair_affinity >= 0.0)) throw ConfigError("pair_affinity must be >= 0");
    if (!(purity >= 0.0 && purity <= 1.0)) throw ConfigError("purity must lie in [0, 1]");
    if (rating_levels < 0) throw ConfigError("rating_levels must be >= 0");
    if (!mechanisms.empty() && mechanisms.size() != static_cast<std::size_t>(n_e)) {
      throw ConfigError("one mechanism per environment is required");
    }
    for (const auto& m : mechanisms) {
      if (m.preferred_category >= static_cast<int>(item_categories())) {
        throw ConfigError("preferred_category out of range");
      }
    }
    if (n_users < static_cast<std::size_t>(n_e * n_r)) {
      throw ConfigError("n_users must be >= n_e * n_r so every blob has users");
    }
    const double pairs = static_cast<double>(n_users) * static_cast<double>(n_items);
    const double needed = static_cast<double>(samples_per_cell) * n_e * n_r;
    if (distinct_pairs && needed > 0.5 * pairs) {
      throw ConfigError("too many samples for the number of distinct pairs");
    }
  }
};

inline SynthConfig synth_config_from_json(const json& j) {
  const std::string ctx = "synth config";
  check_keys(j, {"n_users", "n_items", "latent_dim", "n_e", "n_r", "samples_per_cell", "noise_sigma",
                 "mechanisms", "common_offset", "env_affinity", "pair_affinity", "blob_separation", "blob_spread", "item_scale", "item_mean", "purity",
                 "n_item_categories", "rating_levels", "label_threshold", "distinct_pairs", "seed"},
             ctx);
  SynthConfig c;
  read_key(j, "n_users", c.n_users, ctx);
  read_key(j, "n_items", c.n_items, ctx);
  read_key(j, "latent_dim", c.latent_dim, ctx);
  read_key(j, "n_e", c.n_e, ctx);
  read_key(j, "n_r", c.n_r, ctx);
  read_key(j, "samples_per_cell", c.samples_per_cell, ctx);
  read_key(j, "noise_sigma", c.noise_sigma, ctx);
  read_key(j, "common_offset", c.common_offset, ctx);
  read_key(j, "env_affinity", c.env_affinity, ctx);
  read_key(j, "pair_affinity", c.pair_affinity, ctx);
  read_key(j, "blob_separation", c.blob_separation, ctx);
  read_key(j, "blob_spread", c.blob_spread, ctx);
  read_key(j, "item_scale", c.item_scale, ctx);
  read_key(j, "item_mean", c.item_mean, ctx);
  read_key(j, "purity", c.purity, ctx);
  read_key(j, "n_item_categories", c.n_item_categories, ctx);
  read_key(j, "rating_levels", c.rating_levels, ctx);
  read_key(j, "label_threshold", c.label_threshold, ctx);
  read_key(j, "distinct_pairs", c.distinct_pairs, ctx);
  read_key(j, "seed", c.seed, ctx);
  if (j.contains("mechanisms")) {
    if (!j["mechanisms"].is_array()) throw ConfigError("'mechanisms' must be an array");
    for (const auto& m : j["mechanisms"]) {
      const std::string mctx = "mechanism";
      check_keys(m, {"sign", "scale", "offset", "shift", "preferred_category", "preference"}, mctx);
      Mechanism mech;
      read_key(m, "sign", mech.sign, mctx);
      read_key(m, "scale", mech.scale, mctx);
      read_key(m, "offset", mech.offset, mctx);
      read_key(m, "shift", mech.shift, mctx);
      read_key(m, "preferred_category", mech.preferred_category, mctx);
      read_key(m, "preference", mech.preference, mctx);
      c.mechanisms.push_back(mech);
    }
  }
  c.validate();
  return c;
}

struct SynthLatents {
  Matrix user;  // n_users x latent_dim
  Matrix item;  // n_items x latent_dim
  std::vector<int> user_group;
  std::vector<int> user_blob;
  std::vector<int> item_group;
};

// Noise-free expected rating of (u, v) under mechanism e.
inline double mechanism_score(const SynthConfig& cfg, const SynthLatents& lat, const Dataset& ds, int e,
                              std::uint32_t u, std::uint32_t v) {
  const Mechanism m = cfg.mechanism(e);
  const std::size_t k = cfg.latent_dim;
  double dot = 0.0;
  for (std::size_t d = 0; d < k; ++d) {
    const std::size_t src = (d + static_cast<std::size_t>(m.shift)) % k;
    dot += lat.user(u, d) * lat.item(v, src);
  }
  double y = m.sign * (m.scale * dot + m.offset);
  if (m.preferred_category >= 0) {
    const auto f = ds.schema.find("i_cat");
    if (f && ds.category(*f, u, v) == static_cast<std::uint32_t>(m.preferred_category)) y += m.preference;
  }
  return y;
}

inline FeatureSchema synth_schema(const SynthConfig& cfg) {
  auto names = [](const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
  };
  std::vector<FeatureField> fields;
  fields.push_back({"user_id", Side::user, {}, true});
  fields.push_back({"item_id", Side::item, {}, true});
  fields.push_back({"u_seg", Side::user, names("s", 2 * static_cast<std::size_t>(cfg.n_r)), false});
  fields.push_back({"u_grp", Side::user, names("g", static_cast<std::size_t>(cfg.n_e)), false});
  fields.push_back({"i_cat", Side::item, names("c", cfg.item_categories()), false});
  return FeatureSchema(std::move(fields));
}

// Renumbers users and items in order of first appearance, as the loader does,
// so that a written-then-loaded dataset equals the generated one.
inline void canonicalize_ids(Dataset& ds) {
  constexpr auto kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> umap(ds.n_users, kNone), imap(ds.n_items, kNone);
  std::vector<std::uint32_t> uorder, iorder;
  for (auto& it : ds.interactions) {
    if (umap[it.user] == kNone) {
      umap[it.user] = static_cast<std::uint32_t>(uorder.size());
      uorder.push_back(it.user);
    }
    if (imap[it.item] == kNone) {
      imap[it.item] = static_cast<std::uint32_t>(iorder.size());
      iorder.push_back(it.item);
    }
    it.user = umap[it.user];
    it.item = imap[it.item];
  }
  const std::size_t nf = ds.schema.size();
  auto remap_table = [nf](const std::vector<std::uint32_t>& table, const std::vector<std::uint32_t>& order) {
    std::vector<std::uint32_t> out(order.size() * nf);
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::copy_n(table.begin() + static_cast<std::ptrdiff_t>(order[i] * nf), nf,
                  out.begin() + static_cast<std::ptrdiff_t>(i * nf));
    }
    return out;
  };
  auto remap_names = [](const std::vector<std::string>& names, const std::vector<std::uint32_t>& order) {
    std::vector<std::string> out;
    for (auto o : order) out.push_back(names[o]);
    return out;
  };
  ds.user_categories = remap_table(ds.user_categories, uorder);
  ds.item_categories = remap_table(ds.item_categories, iorder);
  ds.user_names = remap_names(ds.user_names, uorder);
  ds.item_names = remap_names(ds.item_names, iorder);
  ds.n_users = uorder.size();
  ds.n_items = iorder.size();
  // The id-field categories were the old ids; refresh them to the new ones.
  for (std::size_t f = 0; f < nf; ++f) {
    if (!ds.schema.fields()[f].id_field) continue;
    auto& table = ds.schema.fields()[f].side == Side::user ? ds.user_categories : ds.item_categories;
    const std::size_t n = ds.schema.fields()[f].side == Side::user ? ds.n_users : ds.n_items;
    for (std::size_t i = 0; i < n; ++i) table[i * nf + f] = static_cast<std::uint32_t>(i);
  }
  ds.schema.bind(ds.n_users, ds.n_items);
}

struct SynthResult {
  Dataset data;
  SynthLatents latents;  // indexed by the generator's original ids
  // Noise-free score of every sample under every mechanism (n x n_e).
  Matrix mechanism_scores;
};

inline SynthResult gen_heterogeneous_full(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.latent_dim;
  SynthResult res;
  SynthLatents& lat = res.latents;
  Rng rng(derive_seed(cfg.seed, "synth_latent"));

  Matrix centers(static_cast<std::size_t>(cfg.n_r), k);
  for (std::size_t r = 0; r < centers.rows(); ++r) {
    for (std::size_t d = 0; d < k; ++d) centers(r, d) = cfg.blob_separation * rng.normal();
  }
  lat.user = Matrix(cfg.n_users, k);
  lat.item = Matrix(cfg.n_items, k);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    lat.user_group.push_back(static_cast<int>(u % static_cast<std::size_t>(cfg.n_e)));
    lat.user_blob.push_back(static_cast<int>((u / static_cast<std::size_t>(cfg.n_e)) % static_cast<std::size_t>(cfg.n_r)));
    for (std::size_t d = 0; d < k; ++d) {
      lat.user(u, d) = centers(static_cast<std::size_t>(lat.user_blob[u]), d) + cfg.blob_spread * rng.normal();
    }
  }
  for (std::size_t v = 0; v < cfg.n_items; ++v) {
    lat.item_group.push_back(static_cast<int>(v % static_cast<std::size_t>(cfg.n_e)));
    for (std::size_t d = 0; d < k; ++d) lat.item(v, d) = cfg.item_mean + cfg.item_scale * rng.normal();
  }

  Dataset& ds = res.data;
  ds.schema = synth_schema(cfg);
  ds.n_users = cfg.n_users;
  ds.n_items = cfg.n_items;
  ds.schema.bind(ds.n_users, ds.n_items);
  const std::size_t nf = ds.schema.size();
  ds.user_categories.assign(cfg.n_users * nf, 0);
  ds.item_categories.assign(cfg.n_items * nf, 0);
  // Covariates: u_seg in {2r, 2r+1}, u_grp = a_u, i_cat = b_v, each shown
  // with probability `purity` and uniform otherwise.
  Rng cov(derive_seed(cfg.seed, "synth_covariates"));
  auto noisy = [&](std::uint32_t value, std::size_t cardinality) {
    return cov.bernoulli(cfg.purity) ? value : static_cast<std::uint32_t>(cov.uniform_int(cardinality));
  };
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    ds.user_categories[u * nf + 0] = static_cast<std::uint32_t>(u);
    const auto seg = static_cast<std::uint32_t>(2 * lat.user_blob[u]) + static_cast<std::uint32_t>(cov.uniform_int(2));
    ds.user_categories[u * nf + 2] = noisy(seg, 2 * static_cast<std::size_t>(cfg.n_r));
    ds.user_categories[u * nf + 3] = noisy(static_cast<std::uint32_t>(lat.user_group[u]), static_cast<std::size_t>(cfg.n_e));
    ds.user_names.push_back("u" + std::to_string(u));
  }
  for (std::size_t v = 0; v < cfg.n_items; ++v) {
    ds.item_categories[v * nf + 1] = static_cast<std::uint32_t>(v);
    ds.item_categories[v * nf + 4] = noisy(static_cast<std::uint32_t>(lat.item_group[v] % static_cast<int>(cfg.item_categories())),
                                           cfg.item_categories());
    ds.item_names.push_back("i" + std::to_string(v));
  }

  // Acceptance probability of a pair for environment e, relative to the
  // most favourable pair for e.
  const auto n_env = static_cast<std::size_t>(cfg.n_e);
  Matrix user_aff(cfg.n_users, n_env), item_aff(cfg.n_items, n_env);
  if (cfg.pair_affinity > 0.0) {
    Rng aff(derive_seed(cfg.seed, "synth_affinity"));
    for (double& x : user_aff.data()) x = aff.normal();
    for (double& x : item_aff.data()) x = aff.normal();
  }
  auto env_prob = [&](int e, std::uint32_t u, std::uint32_t v) {
    std::vector<double> logits(n_env);
    for (std::size_t x = 0; x < n_env; ++x) {
      logits[x] = cfg.env_affinity * ((lat.user_group[u] == static_cast<int>(x)) + (lat.item_group[v] == static_cast<int>(x))) +
                  cfg.pair_affinity * (user_aff(u, x) + item_aff(v, x));
    }
    return softmax(logits)[static_cast<std::size_t>(e)];
  };
  std::vector<double> norm(n_env, 0.0);
  if (cfg.pair_affinity > 0.0) {
    for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
      for (std::uint32_t v = 0; v < cfg.n_items; ++v) {
        for (int e = 0; e < cfg.n_e; ++e) norm[static_cast<std::size_t>(e)] = std::max(norm[static_cast<std::size_t>(e)], env_prob(e, u, v));
      }
    }
  } else {
    for (std::size_t e = 0; e < n_env; ++e) {
      std::vector<double> logits(n_env, 0.0);
      logits[e] = 2.0 * cfg.env_affinity;
      norm[e] = softmax(logits)[e];
    }
  }

  std::vector<std::vector<std::uint32_t>> blob_users(static_cast<std::size_t>(cfg.n_r));
  for (std::size_t u = 0; u < cfg.n_users; ++u) blob_users[static_cast<std::size_t>(lat.user_blob[u])].push_back(static_cast<std::uint32_t>(u));

  Rng draw(derive_seed(cfg.seed, "synth_samples"));
  Rng noise(derive_seed(cfg.seed, "synth_noise"));
  std::set<std::pair<std::uint32_t, std::uint32_t>> used;
  std::vector<EnvPair> truth;
  std::vector<double> raw;
  std::vector<std::vector<double>> scores;
  for (int e = 0; e < cfg.n_e; ++e) {
    for (int r = 0; r < cfg.n_r; ++r) {
      const auto& pool = blob_users[static_cast<std::size_t>(r)];
      std::size_t made = 0;
      std::size_t attempts = 0;
      const std::size_t max_attempts = 1000 * cfg.samples_per_cell + 100000;
      while (made < cfg.samples_per_cell) {
        if (++attempts > max_attempts) {
          throw ConfigError("cannot place " + std::to_string(cfg.samples_per_cell) +
                            " distinct samples in cell (" + std::to_string(e) + "," + std::to_string(r) + ")");
        }
        const auto u = pool[draw.uniform_int(pool.size())];
        const auto v = static_cast<std::uint32_t>(draw.uniform_int(cfg.n_items));
        const double accept = env_prob(e, u, v) / norm[static_cast<std::size_t>(e)];
        if (!draw.bernoulli(accept)) continue;
        if (cfg.distinct_pairs && !used.insert({u, v}).second) continue;
        Interaction it;
        it.user = u;
        it.item = v;
        std::vector<double> s(static_cast<std::size_t>(cfg.n_e));
        for (int x = 0; x < cfg.n_e; ++x) s[static_cast<std::size_t>(x)] = mechanism_score(cfg, lat, ds, x, u, v);
        raw.push_back(s[static_cast<std::size_t>(e)] + cfg.noise_sigma * noise.normal());
        scores.push_back(std::move(s));
        ds.interactions.push_back(it);
        truth.push_back({e, r});
        ++made;
      }
    }
  }

  std::vector<double> ratings = raw;
  if (cfg.rating_levels > 0) {
    const auto edges = equal_frequency_edges(raw, static_cast<std::size_t>(cfg.rating_levels));
    for (std::size_t i = 0; i < raw.size(); ++i) ratings[i] = 1.0 + assign_bin(edges, raw[i]);
  }
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    ds.interactions[i].rating = ratings[i];
    ds.interactions[i].label = ratings[i] >= cfg.label_threshold ? 1 : 0;
  }

  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffler(derive_seed(cfg.seed, "synth_order"));
  shuffler.shuffle(order);
  Dataset shuffled;
  shuffled.schema = ds.schema;
  shuffled.n_users = ds.n_users;
  shuffled.n_items = ds.n_items;
  shuffled.user_categories = ds.user_categories;
  shuffled.item_categories = ds.item_categories;
  shuffled.user_names = ds.user_names;
  shuffled.item_names = ds.item_names;
  shuffled.ground_truth.emplace();
  res.mechanism_scores = Matrix(order.size(), static_cast<std::size_t>(cfg.n_e));
  for (std::size_t i = 0; i < order.size(); ++i) {
    shuffled.interactions.push_back(ds.interactions[order[i]]);
    shuffled.ground_truth->push_back(truth[order[i]]);
    for (int x = 0; x < cfg.n_e; ++x) {
      res.mechanism_scores(i, static_cast<std::size_t>(x)) = scores[order[i]][static_cast<std::size_t>(x)];
    }
  }
  canonicalize_ids(shuffled);
  res.data = std::move(shuffled);
  return res;
}

inline Dataset gen_heterogeneous(const SynthConfig& cfg) { return gen_heterogeneous_full(cfg).data; }

inline json ground_truth_to_json(const Dataset& ds, int n_e, int n_r) {
  if (!ds.ground_truth) throw ArgumentError("dataset has no ground truth");
  std::vector<int> e, r;
  for (const auto& p : *ds.ground_truth) {
    e.push_back(p.e);
    r.push_back(p.r);
  }
  return {{"format", "bhe-ground-truth"}, {"version", 1}, {"n_e", n_e}, {"n_r", n_r}, {"e", e}, {"r", r}};
}

inline std::vector<EnvPair> ground_truth_from_json(const json& j) {
  try {
    const auto e = j.at("e").get<std::vector<int>>();
    const auto r = j.at("r").get<std::vector<int>>();
    if (e.size() != r.size()) throw FormatError("ground truth e and r differ in length");
    std::vector<EnvPair> out;
    for (std::size_t i = 0; i < e.size(); ++i) out.push_back({e[i], r[i]});
    return out;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed ground truth: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Missing-not-at-random observation

struct MNARConfig {
  double base_observe_rate = 0.1;
  double bias_strength = 4.0;
  std::size_t uniform_sample_size = 1000;

  void validate() const {
    if (!(base_observe_rate > 0.0 && base_observe_rate < 1.0)) {
      throw ConfigError("base_observe_rate must lie in (0, 1)");
    }
    if (!(bias_strength >= 0.0)) throw ConfigError("bias_strength must be >= 0");
  }
};

inline MNARConfig mnar_config_from_json(const json& j) {
  const std::string ctx = "mnar config";
  check_keys(j, {"base_observe_rate", "bias_strength", "uniform_sample_size"}, ctx);
  MNARConfig c;
  read_key(j, "base_observe_rate", c.base_observe_rate, ctx);
  read_key(j, "bias_strength", c.bias_strength, ctx);
  read_key(j, "uniform_sample_size", c.uniform_sample_size, ctx);
  c.validate();
  return c;
}

// p(y) = clip(base * bias^{y_norm}, 0, 1), y_norm = (y - min) / (max - min).
inline std::vector<double> true_propensities(const Dataset& full, const MNARConfig& cfg) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& it : full.interactions) {
    lo = std::min(lo, it.rating);
    hi = std::max(hi, it.rating);
  }
  std::vector<double> p(full.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    const double y_norm = hi > lo ? (full.interactions[i].rating - lo) / (hi - lo) : 0.0;
    p[i] = std::clamp(cfg.base_observe_rate * std::pow(cfg.bias_strength, y_norm), 0.0, 1.0);
  }
  return p;
}

struct MNARResult {
  Dataset observed;
  Dataset uniform;
  std::vector<double> propensities;  // true propensity of each observed sample
  std::vector<std::size_t> observed_indices;
  std::vector<std::size_t> uniform_indices;
};

inline std::vector<std::size_t> draw_observed(const std::vector<double>& p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (rng.bernoulli(p[i])) out.push_back(i);
  }
  return out;
}

inline MNARResult gen_mnar(const Dataset& full, const MNARConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (full.empty()) throw ArgumentError("gen_mnar needs a nonempty dataset");
  if (cfg.uniform_sample_size > full.size()) {
    throw ConfigError("uniform_sample_size exceeds the dataset size");
  }
  const auto p = true_propensities(full, cfg);
  MNARResult res;
  res.observed_indices = draw_observed(p, derive_seed(seed, "mnar_observe"));
  std::vector<std::size_t> order(full.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "mnar_uniform"));
  rng.shuffle(order);
  res.uniform_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.uniform_sample_size));
  std::sort(res.uniform_indices.begin(), res.uniform_indices.end());
  res.observed = full.subset(res.observed_indices);
  res.uniform = full.subset(res.uniform_indices);
  for (auto i : res.observed_indices) res.propensities.push_back(p[i]);
  for (auto& it : res.observed.interactions) it.observed = true;
  return res;
}

}  // namespace bhe

#endif  // BHE_SYNTH_HPP_

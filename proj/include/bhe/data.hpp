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

// Interaction datasets: categorical schemas, CSV/TSV loading, binarization,
// train/test splitting and one-hot encoding.

#ifndef BHE_DATA_HPP_
#define BHE_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bhe/common.hpp"
#include "json.hpp"

namespace bhe {

using json = nlohmann::json;

// Rejects configuration objects with keys outside `allowed`.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + context);
    }
  }
}

// Typed read of an optional config key.
template <class T>
void read_key(const json& j, const char* key, T& out, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("'" + std::string(key) + "' in " + context + " has the wrong type");
  }
}

enum class Side { user, item };

inline std::string to_string(Side side) { return side == Side::user ? "user" : "item"; }

struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  double rating = 0.0;
  int label = 0;
  double weight = 1.0;
  bool observed = true;
};

// Ground-truth (e, r) environment of a synthetic sample.
struct EnvPair {
  int e = 0;
  int r = 0;
  bool operator==(const EnvPair&) const = default;
};

// A categorical field. Id fields (no category list) index users or items
// directly; their cardinality is fixed when the schema is bound to a dataset.
struct FeatureField {
  std::string name;
  Side side = Side::user;
  std::vector<std::string> categories;
  bool id_field = false;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureField> fields) : fields_(std::move(fields)) {
    std::unordered_set<std::string> seen;
    for (const auto& f : fields_) {
      if (!seen.insert(f.name).second) throw SchemaError("duplicate field '" + f.name + "'");
      if (!f.id_field && f.categories.empty()) {
        throw SchemaError("field '" + f.name + "' has no categories");
      }
    }
    bind(0, 0);
  }

  // Fixes id-field cardinalities and recomputes the offset table.
  void bind(std::size_t n_users, std::size_t n_items) {
    offsets_.assign(fields_.size(), 0);
    cardinalities_.assign(fields_.size(), 0);
    std::size_t offset = 0;
    for (std::size_t f = 0; f < fields_.size(); ++f) {
      const auto& field = fields_[f];
      cardinalities_[f] = field.id_field
                              ? (field.side == Side::user ? n_users : n_items)
                              : field.categories.size();
      offsets_[f] = offset;
      offset += cardinalities_[f];
    }
    dimension_ = offset;
  }

  const std::vector<FeatureField>& fields() const { return fields_; }
  std::size_t size() const { return fields_.size(); }
  std::size_t cardinality(std::size_t f) const { return cardinalities_.at(f); }
  std::size_t offset(std::size_t f) const { return offsets_.at(f); }
  std::size_t dimension() const { return dimension_; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t f = 0; f < fields_.size(); ++f) {
      if (fields_[f].name == name) return f;
    }
    return std::nullopt;
  }

  std::uint32_t category_index(std::size_t f, std::string_view value) const {
    const auto& cats = fields_.at(f).categories;
    for (std::size_t c = 0; c < cats.size(); ++c) {
      if (cats[c] == value) return static_cast<std::uint32_t>(c);
    }
    throw SchemaError("unknown category '" + std::string(value) + "' for field '" +
                      fields_[f].name + "'");
  }

  json to_json() const {
    json fields = json::array();
    for (const auto& f : fields_) {
      json entry = {{"name", f.name}, {"side", to_string(f.side)}};
      if (!f.id_field) entry["categories"] = f.categories;
      fields.push_back(entry);
    }
    return {{"fields", fields}};
  }

  static FeatureSchema from_json(const json& j) {
    if (!j.is_object() || !j.contains("fields") || !j["fields"].is_array()) {
      throw SchemaError("schema must be an object with a 'fields' array");
    }
    std::vector<FeatureField> fields;
    for (const auto& entry : j["fields"]) {
      FeatureField f;
      if (!entry.contains("name") || !entry["name"].is_string()) {
        throw SchemaError("schema field without a name");
      }
      f.name = entry["name"].get<std::string>();
      const std::string side = entry.value("side", "");
      if (side == "user") {
        f.side = Side::user;
      } else if (side == "item") {
        f.side = Side::item;
      } else {
        throw SchemaError("field '" + f.name + "' has side '" + side + "'");
      }
      if (entry.contains("categories")) {
        for (const auto& c : entry["categories"]) {
          f.categories.push_back(c.is_string() ? c.get<std::string>() : c.dump());
        }
      } else {
        f.id_field = true;
      }
      fields.push_back(std::move(f));
    }
    return FeatureSchema(std::move(fields));
  }

  static FeatureSchema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open schema file " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError("schema " + path + ": " + e.what());
    }
    return from_json(j);
  }

  std::uint64_t hash() const { return fnv1a(to_json().dump()); }

 private:
  std::vector<FeatureField> fields_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> cardinalities_;
  std::size_t dimension_ = 0;
};

struct Dataset {
  FeatureSchema schema;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<Interaction> interactions;
  // Row-major [id][field]; only entries of non-id fields on the matching side
  // are meaningful.
  std::vector<std::uint32_t> user_categories;
  std::vector<std::uint32_t> item_categories;
  // Inverse of the dense id remapping.
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::optional<std::vector<EnvPair>> ground_truth;

  std::size_t size() const { return interactions.size(); }
  bool empty() const { return interactions.empty(); }

  // Category of an entity under field f. Id fields return the id.
  std::uint32_t category(std::size_t f, std::uint32_t user, std::uint32_t item) const {
    const auto& field = schema.fields().at(f);
    const std::uint32_t id = field.side == Side::user ? user : item;
    if (field.id_field) return id;
    const auto& table = field.side == Side::user ? user_categories : item_categories;
    const std::size_t index = static_cast<std::size_t>(id) * schema.size() + f;
    if (index >= table.size()) {
      throw LookupError("no feature record for " + to_string(field.side) + " " +
                        std::to_string(id));
    }
    return table[index];
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.schema = schema;
    out.n_users = n_users;
    out.n_items = n_items;
    out.user_categories = user_categories;
    out.item_categories = item_categories;
    out.user_names = user_names;
    out.item_names = item_names;
    out.interactions.reserve(indices.size());
    if (ground_truth) out.ground_truth.emplace();
    for (std::size_t i : indices) {
      out.interactions.push_back(interactions.at(i));
      if (ground_truth) out.ground_truth->push_back((*ground_truth)[i]);
    }
    return out;
  }
};

struct Split {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::uint64_t seed = 0;
};

enum class TextFormat { csv, tsv };

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, delim)) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    out.push_back(cell.substr(start));
  }
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& map,
                            std::vector<std::string>& names, const std::string& key) {
  auto [it, inserted] = map.try_emplace(key, static_cast<std::uint32_t>(names.size()));
  if (inserted) names.push_back(key);
  return it->second;
}

}  // namespace detail

// Reads `user_id,item_id,rating[,<feature columns>]` with a header row.
// Raw ids are remapped to dense indices in order of first appearance. With a
// vocabulary dataset, its ids and feature records are kept and new raw ids
// are appended after them.
inline Dataset load_interactions(const std::string& path, TextFormat format,
                                 const FeatureSchema& schema,
                                 const Dataset* vocabulary = nullptr) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path);
  const char delim = format == TextFormat::csv ? ',' : '\t';

  Dataset ds;
  ds.schema = schema;
  std::string line;
  if (!std::getline(in, line)) {
    ds.schema.bind(0, 0);
    return ds;
  }
  const auto header = detail::split_line(line, delim);
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    return std::nullopt;
  };
  const auto user_col = column("user_id");
  const auto item_col = column("item_id");
  const auto rating_col = column("rating");
  if (!user_col || !item_col || !rating_col) {
    throw FormatError(path + ": header must contain user_id, item_id and rating");
  }
  std::vector<std::optional<std::size_t>> field_cols(schema.size());
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const auto& field = schema.fields()[f];
    if (field.id_field) continue;
    field_cols[f] = column(field.name);
    if (!field_cols[f]) throw FormatError(path + ": missing feature column '" + field.name + "'");
  }

  std::unordered_map<std::string, std::uint32_t> user_map, item_map;
  if (vocabulary) {
    if (vocabulary->schema.size() != schema.size()) {
      throw SchemaError(path + ": vocabulary dataset has a different schema");
    }
    ds.user_names = vocabulary->user_names;
    ds.item_names = vocabulary->item_names;
    ds.user_categories = vocabulary->user_categories;
    ds.item_categories = vocabulary->item_categories;
    for (std::size_t i = 0; i < ds.user_names.size(); ++i) user_map[ds.user_names[i]] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 0; i < ds.item_names.size(); ++i) item_map[ds.item_names[i]] = static_cast<std::uint32_t>(i);
  }
  // Category per (id, field); UINT32_MAX marks "not yet seen".
  constexpr std::uint32_t kUnset = std::numeric_limits<std::uint32_t>::max();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_line(line, delim);
    if (cells.size() < header.size()) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " columns");
    }
    Interaction it;
    it.user = detail::intern(user_map, ds.user_names, cells[*user_col]);
    it.item = detail::intern(item_map, ds.item_names, cells[*item_col]);
    try {
      std::size_t used = 0;
      it.rating = std::stod(cells[*rating_col], &used);
      if (used != cells[*rating_col].size() || !std::isfinite(it.rating)) {
        throw std::invalid_argument("trailing");
      }
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": unparsable rating '" +
                        cells[*rating_col] + "'");
    }
    ds.user_categories.resize(ds.user_names.size() * schema.size(), kUnset);
    ds.item_categories.resize(ds.item_names.size() * schema.size(), kUnset);
    for (std::size_t f = 0; f < schema.size(); ++f) {
      if (!field_cols[f]) continue;
      const auto& field = schema.fields()[f];
      const std::uint32_t cat = schema.category_index(f, cells[*field_cols[f]]);
      auto& table = field.side == Side::user ? ds.user_categories : ds.item_categories;
      const std::uint32_t id = field.side == Side::user ? it.user : it.item;
      auto& slot = table[static_cast<std::size_t>(id) * schema.size() + f];
      if (slot != kUnset && slot != cat) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": inconsistent '" +
                          field.name + "' for " + to_string(field.side) + " '" +
                          cells[field.side == Side::user ? *user_col : *item_col] + "'");
      }
      slot = cat;
    }
    ds.interactions.push_back(it);
  }
  for (auto& v : ds.user_categories) if (v == kUnset) v = 0;
  for (auto& v : ds.item_categories) if (v == kUnset) v = 0;
  ds.n_users = ds.user_names.size();
  ds.n_items = ds.item_names.size();
  ds.schema.bind(ds.n_users, ds.n_items);
  return ds;
}

// Replaces the id vocabulary of `ds` by that of `wider`, whose names must
// extend the ones of `ds`.
inline void adopt_vocabulary(Dataset& ds, const Dataset& wider) {
  auto is_prefix = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    return a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin());
  };
  if (!is_prefix(ds.user_names, wider.user_names) || !is_prefix(ds.item_names, wider.item_names)) {
    throw ArgumentError("vocabularies are not nested");
  }
  ds.user_names = wider.user_names;
  ds.item_names = wider.item_names;
  ds.user_categories = wider.user_categories;
  ds.item_categories = wider.item_categories;
  ds.n_users = wider.n_users;
  ds.n_items = wider.n_items;
  ds.schema.bind(ds.n_users, ds.n_items);
}

inline void write_interactions(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path);
  out << "user_id,item_id,rating";
  for (const auto& f : ds.schema.fields()) {
    if (!f.id_field) out << ',' << f.name;
  }
  out << '\n';
  std::ostringstream rating;
  rating.precision(17);
  for (const auto& it : ds.interactions) {
    rating.str("");
    rating << it.rating;
    out << ds.user_names.at(it.user) << ',' << ds.item_names.at(it.item) << ','
        << rating.str();
    for (std::size_t f = 0; f < ds.schema.size(); ++f) {
      const auto& field = ds.schema.fields()[f];
      if (field.id_field) continue;
      out << ',' << field.categories.at(ds.category(f, it.user, it.item));
    }
    out << '\n';
  }
}

// label = 1 iff rating >= threshold.
inline Dataset binarize(Dataset ds, double threshold) {
  for (auto& it : ds.interactions) it.label = it.rating >= threshold ? 1 : 0;
  return ds;
}

// Global uniform split; |test| = round(fraction * |D|).
inline Split split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ArgumentError("test fraction must lie in (0, 1)");
  }
  if (ds.empty()) throw ArgumentError("cannot split an empty dataset");
  const std::size_t n = ds.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  Split s;
  s.seed = seed;
  s.test_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(s.test_indices.begin(), s.test_indices.end());
  std::sort(s.train_indices.begin(), s.train_indices.end());
  s.train = ds.subset(s.train_indices);
  s.test = ds.subset(s.test_indices);
  return s;
}

inline json split_manifest(const Split& s, double test_fraction) {
  return {{"seed", s.seed},
          {"test_fraction", test_fraction},
          {"train", s.train_indices},
          {"test", s.test_indices}};
}

// One active index per schema field, in schema order. Values are implicitly 1.
inline std::vector<std::uint32_t> encode_pair(const Dataset& ds, std::uint32_t user,
                                              std::uint32_t item) {
  if (user >= ds.n_users || item >= ds.n_items) {
    throw LookupError("id out of range in encode");
  }
  std::vector<std::uint32_t> active(ds.schema.size());
  for (std::size_t f = 0; f < ds.schema.size(); ++f) {
    active[f] = static_cast<std::uint32_t>(ds.schema.offset(f) + ds.category(f, user, item));
  }
  return active;
}

inline std::vector<std::uint32_t> encode(const Interaction& it, const Dataset& ds) {
  return encode_pair(ds, it.user, it.item);
}

// Equal-frequency bin edges (interior cut points) for a continuous column.
inline std::vector<double> equal_frequency_edges(std::vector<double> values,
                                                 std::size_t bins = 10) {
  if (values.empty() || bins < 2) return {};
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  for (std::size_t b = 1; b < bins; ++b) {
    const std::size_t pos = b * values.size() / bins;
    const double edge = values[std::min(pos, values.size() - 1)];
    if (edges.empty() || edge > edges.back()) edges.push_back(edge);
  }
  return edges;
}

inline std::uint32_t assign_bin(std::span<const double> edges, double value) {
  return static_cast<std::uint32_t>(std::upper_bound(edges.begin(), edges.end(), value) -
                                    edges.begin());
}

// For implicit feedback: `ratio` uniformly drawn non-interacted items per
// positive, appended as label-0 samples with rating 0.
inline Dataset sample_negatives(const Dataset& ds, std::size_t ratio, std::uint64_t seed) {
  Dataset out = ds;
  std::vector<std::unordered_set<std::uint32_t>> seen(ds.n_users);
  for (const auto& it : ds.interactions) seen[it.user].insert(it.item);
  Rng rng(seed);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& it = ds.interactions[i];
    if (it.label != 1) continue;
    if (seen[it.user].size() >= ds.n_items) continue;
    for (std::size_t k = 0; k < ratio; ++k) {
      std::uint32_t item;
      do {
        item = static_cast<std::uint32_t>(rng.uniform_int(ds.n_items));
      } while (seen[it.user].contains(item));
      Interaction neg;
      neg.user = it.user;
      neg.item = item;
      neg.rating = 0.0;
      neg.label = 0;
      out.interactions.push_back(neg);
      if (out.ground_truth) out.ground_truth->push_back((*ds.ground_truth)[i]);
    }
  }
  return out;
}

}  // namespace bhe

#endif  // BHE_DATA_HPP_

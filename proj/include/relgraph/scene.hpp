#pragma once

// Scene-graph data model: images with boxed, labelled entities and
// (subject, predicate, object) triples over them, plus the JSON annotation
// format and dataset splitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relgraph/error.hpp"
#include "relgraph/random.hpp"

namespace relgraph {

inline constexpr int kDefaultObjectClasses = 150;
inline constexpr int kDefaultPredicates = 50;

/// Axis-aligned box, top-left origin, pixel units.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Entity {
  std::int64_t entity_id = 0;
  int class_id = 0;
  BoundingBox box;

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct Triple {
  std::int64_t subject_id = 0;
  int predicate_id = 0;
  std::int64_t object_id = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple& a, const Triple& b) {
    return std::tie(a.subject_id, a.predicate_id, a.object_id) <=>
           std::tie(b.subject_id, b.predicate_id, b.object_id);
  }
};

struct SceneImage {
  std::int64_t image_id = 0;
  int width = 0;
  int height = 0;
  std::vector<Entity> entities;
  std::vector<Triple> triples;

  const Entity* find_entity(std::int64_t id) const {
    for (const auto& e : entities) {
      if (e.entity_id == id) return &e;
    }
    return nullptr;
  }

  friend bool operator==(const SceneImage&, const SceneImage&) = default;
};

struct SceneDataset {
  std::vector<std::string> object_class_names;
  std::vector<std::string> predicate_names;
  std::vector<SceneImage> images;

  int num_object_classes() const { return static_cast<int>(object_class_names.size()); }
  int num_predicates() const { return static_cast<int>(predicate_names.size()); }

  std::size_t num_triples() const {
    std::size_t n = 0;
    for (const auto& img : images) n += img.triples.size();
    return n;
  }

  const SceneImage* find_image(std::int64_t id) const {
    for (const auto& img : images) {
      if (img.image_id == id) return &img;
    }
    return nullptr;
  }

  friend bool operator==(const SceneDataset&, const SceneDataset&) = default;
};

/// Returns every invariant violation in the dataset; empty means valid.
inline std::vector<std::string> validation_errors(const SceneDataset& ds) {
  std::vector<std::string> errs;
  const int nc = ds.num_object_classes();
  const int np = ds.num_predicates();
  std::set<std::int64_t> image_ids;
  for (std::size_t ii = 0; ii < ds.images.size(); ++ii) {
    const auto& img = ds.images[ii];
    const std::string where = "image " + std::to_string(img.image_id);
    if (!image_ids.insert(img.image_id).second) errs.push_back(where + ": duplicate image id");
    if (img.width <= 0 || img.height <= 0) errs.push_back(where + ": non-positive image size");
    std::set<std::int64_t> ids;
    for (std::size_t ei = 0; ei < img.entities.size(); ++ei) {
      const auto& e = img.entities[ei];
      const std::string ew = where + " entity " + std::to_string(e.entity_id);
      if (!ids.insert(e.entity_id).second) errs.push_back(ew + ": duplicate entity id");
      if (e.class_id < 0 || e.class_id >= nc) {
        errs.push_back(ew + ": class id " + std::to_string(e.class_id) + " out of range [0," +
                       std::to_string(nc) + ")");
      }
      const auto& b = e.box;
      if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) || !std::isfinite(b.h)) {
        errs.push_back(ew + ": non-finite box");
        continue;
      }
      if (b.w <= 0.0 || b.h <= 0.0) {
        errs.push_back(ew + ": non-positive box extent");
      } else if (b.x < 0.0 || b.y < 0.0 || b.x + b.w > img.width || b.y + b.h > img.height) {
        errs.push_back(ew + ": box outside image bounds");
      }
    }
    for (std::size_t ti = 0; ti < img.triples.size(); ++ti) {
      const auto& t = img.triples[ti];
      const std::string tw = where + " triple " + std::to_string(ti);
      if (!ids.contains(t.subject_id)) {
        errs.push_back(tw + ": subject entity " + std::to_string(t.subject_id) + " not found");
      }
      if (!ids.contains(t.object_id)) {
        errs.push_back(tw + ": object entity " + std::to_string(t.object_id) + " not found");
      }
      if (t.subject_id == t.object_id) errs.push_back(tw + ": subject equals object");
      if (t.predicate_id < 0 || t.predicate_id >= np) {
        errs.push_back(tw + ": predicate id " + std::to_string(t.predicate_id) +
                       " out of range [0," + std::to_string(np) + ")");
      }
    }
  }
  return errs;
}

inline void validate(const SceneDataset& ds) {
  const auto errs = validation_errors(ds);
  if (errs.empty()) return;
  std::string msg = std::to_string(errs.size()) + " violation(s)";
  for (const auto& e : errs) msg += "\n  " + e;
  fail(ErrorCode::kValidation, msg);
}

/// Removes repeated identical triples, keeping first occurrences. Returns
/// one warning line per removed duplicate.
inline std::vector<std::string> deduplicate_triples(SceneDataset& ds) {
  std::vector<std::string> warnings;
  for (auto& img : ds.images) {
    std::set<Triple> seen;
    std::vector<Triple> kept;
    kept.reserve(img.triples.size());
    for (std::size_t ti = 0; ti < img.triples.size(); ++ti) {
      if (seen.insert(img.triples[ti]).second) {
        kept.push_back(img.triples[ti]);
      } else {
        warnings.push_back("image " + std::to_string(img.image_id) + " triple " +
                           std::to_string(ti) + ": duplicate removed");
      }
    }
    img.triples = std::move(kept);
  }
  return warnings;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                                     const std::string& where) {
  if (!obj.is_object()) fail(ErrorCode::kParse, where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorCode::kParse, where + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T as_number(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) fail(ErrorCode::kParse, where + ": expected a number");
  if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) fail(ErrorCode::kParse, where + ": expected an integer");
  }
  return j.get<T>();
}

inline std::vector<std::string> as_strings(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorCode::kParse, where + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& s : j) {
    if (!s.is_string()) fail(ErrorCode::kParse, where + ": expected an array of strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

}  // namespace detail

/// Parses and validates an annotation document. Duplicate triples are
/// dropped; a line per duplicate goes to `warnings` when provided.
inline SceneDataset parse_annotations(std::string_view text,
                                      std::vector<std::string>* warnings = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kParse, "byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  using detail::as_number;
  using detail::require;
  SceneDataset ds;
  ds.object_class_names = detail::as_strings(require(doc, "object_classes", "document"), "object_classes");
  ds.predicate_names = detail::as_strings(require(doc, "predicates", "document"), "predicates");
  const auto& images = require(doc, "images", "document");
  if (!images.is_array()) fail(ErrorCode::kParse, "images: expected an array");
  for (std::size_t ii = 0; ii < images.size(); ++ii) {
    const auto& ji = images[ii];
    const std::string where = "images[" + std::to_string(ii) + "]";
    SceneImage img;
    img.image_id = as_number<std::int64_t>(require(ji, "id", where), where + ".id");
    img.width = as_number<int>(require(ji, "width", where), where + ".width");
    img.height = as_number<int>(require(ji, "height", where), where + ".height");
    const auto& ents = require(ji, "entities", where);
    if (!ents.is_array()) fail(ErrorCode::kParse, where + ".entities: expected an array");
    for (std::size_t ei = 0; ei < ents.size(); ++ei) {
      const std::string ew = where + ".entities[" + std::to_string(ei) + "]";
      const auto& je = ents[ei];
      Entity e;
      e.entity_id = as_number<std::int64_t>(require(je, "id", ew), ew + ".id");
      e.class_id = as_number<int>(require(je, "class", ew), ew + ".class");
      const auto& jb = require(je, "box", ew);
      if (!jb.is_array() || jb.size() != 4) fail(ErrorCode::kParse, ew + ".box: expected [x,y,w,h]");
      e.box = {as_number<double>(jb[0], ew + ".box"), as_number<double>(jb[1], ew + ".box"),
               as_number<double>(jb[2], ew + ".box"), as_number<double>(jb[3], ew + ".box")};
      img.entities.push_back(e);
    }
    const auto& trips = require(ji, "triples", where);
    if (!trips.is_array()) fail(ErrorCode::kParse, where + ".triples: expected an array");
    for (std::size_t ti = 0; ti < trips.size(); ++ti) {
      const std::string tw = where + ".triples[" + std::to_string(ti) + "]";
      const auto& jt = trips[ti];
      if (!jt.is_array() || jt.size() != 3) {
        fail(ErrorCode::kParse, tw + ": expected [subject_id, predicate_id, object_id]");
      }
      img.triples.push_back({as_number<std::int64_t>(jt[0], tw), as_number<int>(jt[1], tw),
                             as_number<std::int64_t>(jt[2], tw)});
    }
    ds.images.push_back(std::move(img));
  }
  auto dups = deduplicate_triples(ds);
  if (warnings) warnings->insert(warnings->end(), dups.begin(), dups.end());
  validate(ds);
  return ds;
}

/// Canonical annotation document (stable field order, one image per line).
inline std::string serialize_annotations(const SceneDataset& ds) {
  using nlohmann::ordered_json;
  std::ostringstream out;
  out << "{\n\"object_classes\": " << ordered_json(ds.object_class_names).dump() << ",\n";
  out << "\"predicates\": " << ordered_json(ds.predicate_names).dump() << ",\n";
  out << "\"images\": [";
  for (std::size_t ii = 0; ii < ds.images.size(); ++ii) {
    const auto& img = ds.images[ii];
    ordered_json ji;
    ji["id"] = img.image_id;
    ji["width"] = img.width;
    ji["height"] = img.height;
    ji["entities"] = ordered_json::array();
    for (const auto& e : img.entities) {
      ordered_json je;
      je["id"] = e.entity_id;
      je["class"] = e.class_id;
      je["box"] = {e.box.x, e.box.y, e.box.w, e.box.h};
      ji["entities"].push_back(std::move(je));
    }
    ji["triples"] = ordered_json::array();
    for (const auto& t : img.triples) {
      ji["triples"].push_back({t.subject_id, t.predicate_id, t.object_id});
    }
    out << (ii ? ",\n" : "\n") << ji.dump();
  }
  out << "\n]\n}\n";
  return out.str();
}

/// Image-level random partition; train gets round(fraction * n) images and
/// both halves keep the input's image order.
inline std::pair<SceneDataset, SceneDataset> split_dataset(const SceneDataset& ds,
                                                           double train_fraction,
                                                           std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "train fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.images.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  SceneDataset train{ds.object_class_names, ds.predicate_names, {}};
  SceneDataset test{ds.object_class_names, ds.predicate_names, {}};
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? train : test).images.push_back(ds.images[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace relgraph

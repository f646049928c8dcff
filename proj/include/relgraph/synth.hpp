#pragma once

// Desk-scale synthetic scenes. Each entity gets a box, a class and a scalar
// depth; predicates are assigned to ordered pairs by geometric rules, so a
// model's ability to recover them depends on which feature sources it sees.
//
// Rules for an ordered pair (s, o), noise-free:
//   depth rules (spatial-3d, mixed): depth bins differ by >= 2 ->
//       "behind" if s is farther, "in front of" otherwise;
//       bins differ by exactly 1 -> no triple (ambiguous band).
//   planar rules (all sets, when no depth rule fired):
//       u = (cx_s - cx_o) / w_o, v = (cy_s - cy_o) / h_o
//       |v| >= r|u| -> "above" (v < 0) or "below";
//       |u| >= r|v| -> "left of" (u < 0) or "right of";
//       otherwise no triple. r = kPlanarDominance.
//   mixed only: a planar predicate becomes "near" when
//       (class_s + class_o) % 3 == 0.
// Both u and v are functions of the subject's location feature, and the
// depth bin is recoverable from the depth embedding, so with zero noise the
// predicate is a deterministic function of (l, d) (plus c for mixed).

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "relgraph/error.hpp"
#include "relgraph/features.hpp"
#include "relgraph/random.hpp"
#include "relgraph/scene.hpp"

namespace relgraph {

enum class RuleSet { kSpatial2d, kSpatial3d, kMixed };

inline std::string_view to_string(RuleSet r) {
  switch (r) {
    case RuleSet::kSpatial2d: return "spatial-2d";
    case RuleSet::kSpatial3d: return "spatial-3d";
    case RuleSet::kMixed: return "mixed";
  }
  return "?";
}

inline RuleSet parse_rule_set(std::string_view s) {
  if (s == "spatial-2d") return RuleSet::kSpatial2d;
  if (s == "spatial-3d") return RuleSet::kSpatial3d;
  if (s == "mixed") return RuleSet::kMixed;
  fail(ErrorCode::kInvalidArgument, "unknown rule set '" + std::string(s) + "'");
}

enum SynthPredicate : int { kAbove = 0, kBelow, kLeftOf, kRightOf, kBehind, kInFrontOf, kNear };

inline std::vector<std::string> synth_predicate_names(RuleSet rules) {
  std::vector<std::string> names = {"above", "below", "left of", "right of"};
  if (rules != RuleSet::kSpatial2d) {
    names.push_back("behind");
    names.push_back("in front of");
  }
  if (rules == RuleSet::kMixed) names.push_back("near");
  return names;
}

inline constexpr double kPlanarDominance = 1.25;
inline constexpr int kDepthBinGap = 2;

struct SynthConfig {
  int num_images = 200;
  int min_entities = 3;
  int max_entities = 6;
  double min_depth = 1.0;
  double max_depth = 10.0;
  RuleSet rules = RuleSet::kSpatial2d;
  double noise_level = 0.0;
  std::uint64_t seed = 0;

  int num_object_classes = 20;
  bool background_class = false;  // prepend a zero "background" entry to c
  int rgb_dim = 32;
  int depth_dim = 16;
  int depth_bins = 16;
  int image_width = 640;
  int image_height = 480;
  double min_box_side = 32.0;
  double max_box_side = 192.0;
};

inline void check(const SynthConfig& c) {
  auto bad = [](const std::string& m) { fail(ErrorCode::kInvalidArgument, "synth config: " + m); };
  if (c.num_images < 1) bad("need at least one image");
  if (c.min_entities < 2 || c.max_entities < c.min_entities) bad("entity range must be nonempty and >= 2");
  if (!(c.min_depth < c.max_depth)) bad("depth range must be nonempty");
  if (!(c.noise_level >= 0.0 && c.noise_level <= 1.0)) bad("noise level must lie in [0, 1]");
  if (c.num_object_classes < 1 || c.rgb_dim < 1 || c.depth_dim < 1 || c.depth_bins < 2) {
    bad("class count and feature dims must be positive");
  }
  if (!(c.min_box_side > 0.0 && c.min_box_side <= c.max_box_side) ||
      c.max_box_side > std::min(c.image_width, c.image_height)) {
    bad("box side range must be positive and fit the image");
  }
}

inline int depth_bin(const SynthConfig& c, double depth) {
  const double t = (depth - c.min_depth) / (c.max_depth - c.min_depth);
  const int b = static_cast<int>(std::floor(t * c.depth_bins));
  return std::clamp(b, 0, c.depth_bins - 1);
}

/// Noise-free predicate for an ordered pair, or nothing if the pair falls in
/// an ambiguous band.
inline std::optional<int> synth_rule(RuleSet rules, const Entity& s, int depth_bin_s,
                                     const Entity& o, int depth_bin_o) {
  if (rules != RuleSet::kSpatial2d) {
    const int gap = depth_bin_s - depth_bin_o;
    if (gap >= kDepthBinGap) return kBehind;
    if (gap <= -kDepthBinGap) return kInFrontOf;
    if (gap != 0) return std::nullopt;
  }
  const double u = (s.box.center_x() - o.box.center_x()) / o.box.w;
  const double v = (s.box.center_y() - o.box.center_y()) / o.box.h;
  std::optional<int> planar;
  if (std::abs(v) >= kPlanarDominance * std::abs(u) && v != 0.0) {
    planar = v < 0.0 ? kAbove : kBelow;
  } else if (std::abs(u) >= kPlanarDominance * std::abs(v) && u != 0.0) {
    planar = u < 0.0 ? kLeftOf : kRightOf;
  }
  if (planar && rules == RuleSet::kMixed && (s.class_id + o.class_id) % 3 == 0) return kNear;
  return planar;
}

struct SynthOutput {
  SceneDataset dataset;
  FeatureStore features;
  std::map<FeatureStore::Key, double> depth;  // scalar depth per (image, entity)
};

inline SynthOutput synth_generate(const SynthConfig& cfg) {
  check(cfg);
  Rng rng(cfg.seed);
  // Fixed tables drawn first so they do not depend on image count.
  Rng table_rng = rng.fork();
  std::vector<std::vector<double>> class_embedding(cfg.num_object_classes,
                                                   std::vector<double>(cfg.rgb_dim));
  for (auto& row : class_embedding) {
    for (auto& x : row) x = table_rng.normal();
  }
  // Thermometer code of the depth bin through a fixed Gaussian projection:
  // depth ordering stays linearly readable from the embedding.
  std::vector<std::vector<double>> projection(cfg.depth_dim, std::vector<double>(cfg.depth_bins));
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(cfg.depth_bins));
  for (auto& row : projection) {
    for (auto& x : row) x = table_rng.normal() * proj_scale;
  }

  SynthOutput out;
  auto& ds = out.dataset;
  ds.predicate_names = synth_predicate_names(cfg.rules);
  for (int k = 0; k < cfg.num_object_classes; ++k) ds.object_class_names.push_back("class_" + std::to_string(k));
  const int class_dim = cfg.num_object_classes + (cfg.background_class ? 1 : 0);
  const int class_offset = cfg.background_class ? 1 : 0;
  out.features = FeatureStore(FeatureDims{static_cast<std::uint32_t>(class_dim),
                                          static_cast<std::uint32_t>(cfg.rgb_dim),
                                          static_cast<std::uint32_t>(cfg.depth_dim)});
  const int num_predicates = ds.num_predicates();

  for (int ii = 0; ii < cfg.num_images; ++ii) {
    SceneImage img;
    img.image_id = ii;
    img.width = cfg.image_width;
    img.height = cfg.image_height;
    const auto n = rng.uniform_int(cfg.min_entities, cfg.max_entities);
    std::vector<int> bins;
    for (std::int64_t ei = 0; ei < n; ++ei) {
      Entity e;
      e.entity_id = ei;
      e.class_id = static_cast<int>(rng.uniform_int(0, cfg.num_object_classes - 1));
      e.box.w = std::round(rng.uniform(cfg.min_box_side, cfg.max_box_side));
      e.box.h = std::round(rng.uniform(cfg.min_box_side, cfg.max_box_side));
      e.box.x = std::round(rng.uniform(0.0, cfg.image_width - e.box.w));
      e.box.y = std::round(rng.uniform(0.0, cfg.image_height - e.box.h));
      const double depth = rng.uniform(cfg.min_depth, cfg.max_depth);
      const int bin = depth_bin(cfg, depth);
      bins.push_back(bin);
      out.depth[{img.image_id, e.entity_id}] = depth;

      FeatureRecord rec;
      rec.image_id = img.image_id;
      rec.entity_id = e.entity_id;
      rec.c.assign(class_dim, 0.0f);
      rec.c[e.class_id + class_offset] = 1.0f;
      rec.v.resize(cfg.rgb_dim);
      for (int k = 0; k < cfg.rgb_dim; ++k) {
        const double noise = cfg.noise_level > 0.0 ? cfg.noise_level * rng.normal() : 0.0;
        rec.v[k] = static_cast<float>(class_embedding[e.class_id][k] + noise);
      }
      rec.d.resize(cfg.depth_dim);
      for (int k = 0; k < cfg.depth_dim; ++k) {
        double acc = 0.0;
        for (int b = 0; b <= bin; ++b) acc += projection[k][b];
        rec.d[k] = static_cast<float>(acc);
      }
      out.features.insert(std::move(rec));
      img.entities.push_back(e);
    }
    for (std::size_t si = 0; si < img.entities.size(); ++si) {
      for (std::size_t oi = 0; oi < img.entities.size(); ++oi) {
        if (si == oi) continue;
        auto p = synth_rule(cfg.rules, img.entities[si], bins[si], img.entities[oi], bins[oi]);
        if (!p) continue;
        int pred = *p;
        if (cfg.noise_level > 0.0 && rng.bernoulli(cfg.noise_level)) {
          pred = static_cast<int>(rng.uniform_int(0, num_predicates - 1));
        }
        img.triples.push_back({img.entities[si].entity_id, pred, img.entities[oi].entity_id});
      }
    }
    ds.images.push_back(std::move(img));
  }
  validate(ds);
  return out;
}

}  // namespace relgraph

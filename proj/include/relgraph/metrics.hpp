#pragma once

// Recall@K for predicate prediction.
//
// Micro: fraction of an image's ground-truth triples found in its top-K
// list, averaged over images that have ground truth.
// Macro: per predicate p, hits over all ground-truth triples with predicate
// p (pooled across images, each image judged by its own top-K list),
// averaged without weights over predicates with support.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relgraph/error.hpp"
#include "relgraph/model.hpp"
#include "relgraph/scene.hpp"

namespace relgraph {

inline const std::vector<int> kDefaultRecallKs = {20, 50, 100};

/// Ranked candidates per image id, as produced by predict_image.
using PredictionSet = std::map<std::int64_t, std::vector<ScoredTriple>>;

enum class MicroAveraging { kPerImage, kPooled };

struct PredicateRecall {
  double recall = 0.0;
  std::size_t hits = 0;
  std::size_t support = 0;

  friend bool operator==(const PredicateRecall&, const PredicateRecall&) = default;
};

namespace detail {

inline void check_k(int k) {
  if (k < 1) fail(ErrorCode::kInvalidArgument, "K must be at least 1");
}

/// Ground-truth triples of `img` found among the first K candidates.
inline std::vector<bool> hit_flags(const PredictionSet& preds, const SceneImage& img, int k) {
  std::set<Triple> top;
  if (auto it = preds.find(img.image_id); it != preds.end()) {
    const auto& ranked = it->second;
    const std::size_t n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
      top.insert({ranked[i].subject_id, ranked[i].predicate_id, ranked[i].object_id});
    }
  }
  std::vector<bool> flags;
  flags.reserve(img.triples.size());
  for (const auto& t : img.triples) flags.push_back(top.contains(t));
  return flags;
}

inline void check_predictions(const PredictionSet& preds, const SceneDataset& gt) {
  for (const auto& [image_id, _] : preds) {
    if (!gt.find_image(image_id)) {
      fail(ErrorCode::kLookup, "prediction for image " + std::to_string(image_id) +
                                   " has no ground-truth image");
    }
  }
}

}  // namespace detail

inline double micro_recall_at_k(const PredictionSet& preds, const SceneDataset& gt, int k,
                                MicroAveraging averaging = MicroAveraging::kPerImage) {
  detail::check_k(k);
  detail::check_predictions(preds, gt);
  double sum = 0.0;
  std::size_t images = 0, hits = 0, total = 0;
  for (const auto& img : gt.images) {
    if (img.triples.empty()) continue;
    const auto flags = detail::hit_flags(preds, img, k);
    const auto h = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
    sum += static_cast<double>(h) / static_cast<double>(flags.size());
    hits += h;
    total += flags.size();
    ++images;
  }
  if (images == 0) fail(ErrorCode::kInvalidArgument, "no image has ground-truth triples");
  if (averaging == MicroAveraging::kPooled) return static_cast<double>(hits) / static_cast<double>(total);
  return sum / static_cast<double>(images);
}

/// Recall and support for every predicate that occurs in the ground truth.
inline std::map<int, PredicateRecall> per_predicate_recall(const PredictionSet& preds,
                                                           const SceneDataset& gt, int k) {
  detail::check_k(k);
  detail::check_predictions(preds, gt);
  std::map<int, PredicateRecall> out;
  for (const auto& img : gt.images) {
    const auto flags = detail::hit_flags(preds, img, k);
    for (std::size_t i = 0; i < img.triples.size(); ++i) {
      auto& pr = out[img.triples[i].predicate_id];
      ++pr.support;
      if (flags[i]) ++pr.hits;
    }
  }
  for (auto& [_, pr] : out) pr.recall = static_cast<double>(pr.hits) / static_cast<double>(pr.support);
  return out;
}

inline double macro_recall_at_k(const PredictionSet& preds, const SceneDataset& gt, int k) {
  const auto per = per_predicate_recall(preds, gt, k);
  if (per.empty()) fail(ErrorCode::kInvalidArgument, "no image has ground-truth triples");
  double sum = 0.0;
  for (const auto& [_, pr] : per) sum += pr.recall;
  return sum / static_cast<double>(per.size());
}

struct RecallReport {
  std::vector<int> ks;
  std::map<int, double> micro;
  std::map<int, double> macro;
  std::map<int, std::map<int, PredicateRecall>> per_predicate;  // K -> predicate -> recall
  std::map<int, std::size_t> support;                            // predicate -> |T_p|

  friend bool operator==(const RecallReport&, const RecallReport&) = default;
};

inline RecallReport compute_report(const PredictionSet& preds, const SceneDataset& gt,
                                   const std::vector<int>& ks = kDefaultRecallKs,
                                   MicroAveraging averaging = MicroAveraging::kPerImage) {
  if (ks.empty()) fail(ErrorCode::kInvalidArgument, "need at least one K");
  RecallReport rep;
  rep.ks = ks;
  for (int k : ks) {
    rep.micro[k] = micro_recall_at_k(preds, gt, k, averaging);
    rep.per_predicate[k] = per_predicate_recall(preds, gt, k);
    double sum = 0.0;
    for (const auto& [p, pr] : rep.per_predicate[k]) {
      sum += pr.recall;
      rep.support[p] = pr.support;
    }
    rep.macro[k] = sum / static_cast<double>(rep.per_predicate[k].size());
  }
  return rep;
}

/// Runs predict_image over every image of `gt`.
inline PredictionSet predict_dataset(ErmlpEModel& model, const SceneDataset& gt, const FeatureStore& store,
                                     bool graph_constraint) {
  PredictionSet preds;
  for (const auto& img : gt.images) preds[img.image_id] = predict_image(model, img, store, graph_constraint);
  return preds;
}

// ---------------------------------------------------------------------------
// Per-predicate change report

struct DeltaRow {
  int predicate_id = 0;
  double delta = 0.0;
  std::size_t support = 0;

  friend bool operator==(const DeltaRow&, const DeltaRow&) = default;
};

/// after - before per predicate; zero changes omitted; sorted by delta
/// descending, then predicate id.
inline std::vector<DeltaRow> delta_report(const std::map<int, PredicateRecall>& before,
                                          const std::map<int, PredicateRecall>& after) {
  if (before.size() != after.size()) fail(ErrorCode::kInvalidArgument, "predicate sets differ");
  std::vector<DeltaRow> rows;
  for (const auto& [p, b] : before) {
    auto it = after.find(p);
    if (it == after.end()) {
      fail(ErrorCode::kInvalidArgument, "predicate " + std::to_string(p) + " missing from 'after'");
    }
    const double d = it->second.recall - b.recall;
    if (d != 0.0) rows.push_back({p, d, std::max(b.support, it->second.support)});
  }
  std::sort(rows.begin(), rows.end(), [](const DeltaRow& a, const DeltaRow& b) {
    if (a.delta != b.delta) return a.delta > b.delta;
    return a.predicate_id < b.predicate_id;
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Emission

inline std::string format_percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

/// Macro | Micro blocks, R@K columns in descending K.
inline std::string format_recall_table(const std::vector<std::pair<std::string, const RecallReport*>>& rows,
                                       const std::vector<int>& ks) {
  auto desc = ks;
  std::sort(desc.rbegin(), desc.rend());
  std::size_t label_w = 8;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
  constexpr int col_w = 8;
  const int block_w = col_w * static_cast<int>(desc.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_w)) << "" << " | " << std::setw(block_w) << "Macro"
     << " | " << "Micro" << "\n";
  os << std::setw(static_cast<int>(label_w)) << "Metric" << " |";
  for (int k : desc) os << std::right << std::setw(col_w) << ("R@" + std::to_string(k));
  os << " |";
  for (int k : desc) os << std::right << std::setw(col_w) << ("R@" + std::to_string(k));
  os << "\n" << std::string(label_w + 5 + 2 * block_w, '-') << "\n";
  for (const auto& [label, rep] : rows) {
    os << std::left << std::setw(static_cast<int>(label_w)) << label << " |";
    for (int k : desc) {
      os << std::right << std::setw(col_w) << (rep ? format_percent(rep->macro.at(k)) : std::string("failed"));
    }
    os << " |";
    for (int k : desc) {
      os << std::right << std::setw(col_w) << (rep ? format_percent(rep->micro.at(k)) : std::string("failed"));
    }
    os << "\n";
  }
  return os.str();
}

inline nlohmann::ordered_json report_to_json(const RecallReport& rep,
                                             const std::vector<std::string>& predicate_names) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["k"] = rep.ks;
  auto by_k = [&](const std::map<int, double>& m) {
    ordered_json o = ordered_json::object();
    for (int k : rep.ks) o[std::to_string(k)] = m.at(k);
    return o;
  };
  j["micro"] = by_k(rep.micro);
  j["macro"] = by_k(rep.macro);
  j["per_predicate"] = ordered_json::array();
  for (const auto& [p, support] : rep.support) {
    ordered_json row;
    row["id"] = p;
    row["name"] = p < static_cast<int>(predicate_names.size()) ? predicate_names[p] : std::to_string(p);
    ordered_json recall = ordered_json::object();
    for (int k : rep.ks) recall[std::to_string(k)] = rep.per_predicate.at(k).at(p).recall;
    row["recall"] = std::move(recall);
    row["support"] = support;
    j["per_predicate"].push_back(std::move(row));
  }
  return j;
}

/// Inverse of report_to_json; also returns the predicate names by id.
inline RecallReport report_from_json(const nlohmann::json& j, std::map<int, std::string>* names = nullptr) {
  RecallReport rep;
  try {
    rep.ks = j.at("k").get<std::vector<int>>();
    for (int k : rep.ks) {
      const auto key = std::to_string(k);
      rep.micro[k] = j.at("micro").at(key).get<double>();
      rep.macro[k] = j.at("macro").at(key).get<double>();
    }
    for (const auto& row : j.at("per_predicate")) {
      const int p = row.at("id").get<int>();
      const auto support = row.at("support").get<std::size_t>();
      rep.support[p] = support;
      if (names) (*names)[p] = row.at("name").get<std::string>();
      for (int k : rep.ks) {
        PredicateRecall pr;
        pr.recall = row.at("recall").at(std::to_string(k)).get<double>();
        pr.support = support;
        pr.hits = static_cast<std::size_t>(std::llround(pr.recall * static_cast<double>(support)));
        rep.per_predicate[k][p] = pr;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("recall report: ") + e.what());
  }
  return rep;
}

}  // namespace relgraph

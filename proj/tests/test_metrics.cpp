#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "relgraph/metrics.hpp"

using namespace relgraph;

namespace {

SceneImage image_with(std::int64_t id, int entities, std::vector<Triple> triples) {
  SceneImage img;
  img.image_id = id;
  img.width = img.height = 100;
  for (int e = 0; e < entities; ++e) img.entities.push_back({e, 0, {double(e), double(e), 5, 5}});
  img.triples = std::move(triples);
  return img;
}

SceneDataset dataset_of(int predicates, std::vector<SceneImage> images) {
  SceneDataset ds;
  ds.object_class_names = {"thing"};
  for (int p = 0; p < predicates; ++p) ds.predicate_names.push_back("p" + std::to_string(p));
  ds.images = std::move(images);
  return ds;
}

std::vector<ScoredTriple> ranked(std::vector<Triple> triples) {
  std::vector<ScoredTriple> out;
  double score = 1.0;
  for (const auto& t : triples) {
    out.push_back({t.subject_id, t.predicate_id, t.object_id, score});
    score *= 0.9;
  }
  return out;
}

// Random instance: each image ranks every (s, p, o) candidate by a random
// score, ties allowed.
std::pair<SceneDataset, PredictionSet> random_instance(Rng& rng) {
  const int predicates = int(rng.uniform_int(1, 8));
  const int images = int(rng.uniform_int(1, 5));
  SceneDataset ds = dataset_of(predicates, {});
  PredictionSet preds;
  for (int i = 0; i < images; ++i) {
    const int n = int(rng.uniform_int(2, 6));
    std::set<Triple> gt;
    const int want = int(rng.uniform_int(i == 0 ? 1 : 0, 6));
    for (int k = 0; k < want; ++k) {
      const auto s = rng.uniform_int(0, n - 1);
      auto o = rng.uniform_int(0, n - 1);
      if (o == s) o = (o + 1) % n;
      gt.insert({s, int(rng.uniform_int(0, predicates - 1)), o});
    }
    ds.images.push_back(image_with(100 + i, n, {gt.begin(), gt.end()}));
    std::vector<ScoredTriple> cands;
    for (int s = 0; s < n; ++s) {
      for (int o = 0; o < n; ++o) {
        if (s == o) continue;
        for (int p = 0; p < predicates; ++p) {
          cands.push_back({s, p, o, double(rng.uniform_int(0, 9)) / 10.0});
        }
      }
    }
    std::sort(cands.begin(), cands.end(), ranks_before);
    preds[100 + i] = cands;
  }
  return {ds, preds};
}

}  // namespace

TEST(MicroRecall, PerfectPredictor) {
  const std::vector<Triple> t0 = {{0, 1, 1}, {1, 0, 2}};
  const std::vector<Triple> t1 = {{2, 2, 0}};
  const auto gt = dataset_of(3, {image_with(1, 3, t0), image_with(2, 3, t1)});
  PredictionSet preds{{1, ranked(t0)}, {2, ranked(t1)}};
  for (int k : {2, 20}) {
    EXPECT_EQ(micro_recall_at_k(preds, gt, k), 1.0);
    EXPECT_EQ(macro_recall_at_k(preds, gt, k), 1.0);
  }
}

TEST(MicroRecall, HandCount) {
  const std::vector<Triple> gt_t = {{0, 0, 1}, {1, 0, 0}, {0, 1, 2}, {2, 1, 0}};
  const auto gt = dataset_of(2, {image_with(1, 3, gt_t)});
  PredictionSet preds{{1, ranked({{0, 0, 1}, {1, 1, 2}, {1, 0, 0}, {0, 1, 2}, {2, 1, 0}})}};
  EXPECT_DOUBLE_EQ(micro_recall_at_k(preds, gt, 4), 0.75);
  EXPECT_DOUBLE_EQ(micro_recall_at_k(preds, gt, 5), 1.0);
  EXPECT_DOUBLE_EQ(micro_recall_at_k(preds, gt, 1), 0.25);
}

TEST(MicroRecall, AveragesPerImageNotPerTriple) {
  const auto gt = dataset_of(1, {image_with(1, 3, {{0, 0, 1}}),
                                 image_with(2, 3, {{0, 0, 1}, {1, 0, 2}, {2, 0, 0}, {0, 0, 2}}),
                                 image_with(3, 2, {})});
  PredictionSet preds{{1, ranked({{0, 0, 1}})}, {2, ranked({{0, 0, 1}, {1, 0, 2}})}};
  EXPECT_DOUBLE_EQ(micro_recall_at_k(preds, gt, 10), 0.75);
  EXPECT_DOUBLE_EQ(micro_recall_at_k(preds, gt, 10, MicroAveraging::kPooled), 3.0 / 5.0);
}

TEST(MicroRecall, Errors) {
  const auto empty = dataset_of(1, {image_with(1, 2, {})});
  EXPECT_THROW(micro_recall_at_k({}, empty, 5), Error);
  const auto gt = dataset_of(1, {image_with(1, 2, {{0, 0, 1}})});
  EXPECT_THROW(micro_recall_at_k({{9, {}}}, gt, 5), Error);
  EXPECT_THROW(micro_recall_at_k({}, gt, 0), Error);
  EXPECT_EQ(micro_recall_at_k({}, gt, 5), 0.0);
}

TEST(MacroRecall, SinglePredicateEqualsItsRecall) {
  const auto gt = dataset_of(5, {image_with(1, 3, {{0, 3, 1}, {1, 3, 2}})});
  PredictionSet preds{{1, ranked({{0, 3, 1}, {2, 3, 1}})}};
  const auto per = per_predicate_recall(preds, gt, 10);
  ASSERT_EQ(per.size(), 1u);
  EXPECT_DOUBLE_EQ(per.at(3).recall, 0.5);
  EXPECT_DOUBLE_EQ(macro_recall_at_k(preds, gt, 10), 0.5);
}

// p0: three triples, all hit; p1: one triple, missed.
TEST(MacroRecall, ImbalanceFixture) {
  const auto gt = dataset_of(2, {image_with(1, 4, {{0, 0, 1}, {1, 0, 2}, {2, 0, 3}, {3, 1, 0}})});
  PredictionSet preds{{1, ranked({{0, 0, 1}, {1, 0, 2}, {2, 0, 3}, {3, 0, 0}})}};
  EXPECT_DOUBLE_EQ(macro_recall_at_k(preds, gt, 50), 0.5);
  EXPECT_DOUBLE_EQ(micro_recall_at_k(preds, gt, 50, MicroAveraging::kPooled), 0.75);
  EXPECT_DOUBLE_EQ(micro_recall_at_k(preds, gt, 50), 0.75);
}

TEST(PerPredicateRecall, AbsentPredicatesAndTallyIdentity) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto [gt, preds] = random_instance(rng);
    const auto per = per_predicate_recall(preds, gt, 3);
    std::set<int> present;
    std::size_t hits = 0, total = 0;
    for (const auto& img : gt.images) {
      for (const auto& t : img.triples) {
        present.insert(t.predicate_id);
        ++total;
        hits += oracle::in_top_k(preds.at(img.image_id), 3, t);
      }
    }
    EXPECT_EQ(per.size(), present.size());
    double weighted = 0.0;
    std::size_t support = 0;
    for (const auto& [p, pr] : per) {
      EXPECT_TRUE(present.contains(p));
      weighted += pr.recall * double(pr.support);
      support += pr.support;
    }
    EXPECT_EQ(support, total);
    EXPECT_NEAR(weighted / double(support), double(hits) / double(total), 1e-12);
  }
}

TEST(RecallOracle, MatchesBruteForceOnRandomInstances) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [gt, preds] = random_instance(rng);
    for (int k : {1, 3, 10}) {
      EXPECT_EQ(micro_recall_at_k(preds, gt, k), oracle::micro(preds, gt, k)) << trial;
      EXPECT_EQ(macro_recall_at_k(preds, gt, k), oracle::macro(preds, gt, k)) << trial;
    }
  }
}

TEST(RecallOracle, MonotoneInKAndBounded) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [gt, preds] = random_instance(rng);
    double prev_micro = 0.0, prev_macro = 0.0;
    for (int k = 1; k <= 40; ++k) {
      const double mi = micro_recall_at_k(preds, gt, k);
      const double ma = macro_recall_at_k(preds, gt, k);
      EXPECT_GE(mi, prev_micro);
      EXPECT_GE(ma, prev_macro);
      EXPECT_LE(mi, 1.0);
      EXPECT_LE(ma, 1.0);
      prev_micro = mi;
      prev_macro = ma;
    }
  }
}

TEST(MacroRecall, InvariantUnderTriplePermutation) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto [gt, preds] = random_instance(rng);
    const double before = macro_recall_at_k(preds, gt, 3);
    for (auto& img : gt.images) rng.shuffle(std::span<Triple>(img.triples));
    rng.shuffle(std::span<SceneImage>(gt.images));
    EXPECT_EQ(macro_recall_at_k(preds, gt, 3), before);
  }
}

TEST(DeltaReport, IdenticalInputsGiveNothing) {
  std::map<int, PredicateRecall> m{{0, {0.5, 1, 2}}, {3, {1.0, 4, 4}}};
  EXPECT_TRUE(delta_report(m, m).empty());
}

TEST(DeltaReport, SingleChange) {
  std::map<int, PredicateRecall> before{{2, {0.4, 2, 5}}, {4, {0.1, 1, 10}}};
  auto after = before;
  after[2].recall = 0.6;
  const auto rows = delta_report(before, after);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].predicate_id, 2);
  EXPECT_NEAR(rows[0].delta, 0.2, 1e-12);
  EXPECT_EQ(rows[0].support, 5u);
}

TEST(DeltaReport, SwappingArgumentsNegatesDeltas) {
  Rng rng(5);
  std::map<int, PredicateRecall> a, b;
  for (int p = 0; p < 12; ++p) {
    a[p] = {double(rng.uniform_int(0, 4)) / 4.0, 0, std::size_t(p + 1)};
    b[p] = {double(rng.uniform_int(0, 4)) / 4.0, 0, std::size_t(p + 1)};
  }
  const auto fwd = delta_report(a, b);
  const auto rev = delta_report(b, a);
  ASSERT_EQ(fwd.size(), rev.size());
  EXPECT_LE(fwd.size(), 12u);
  for (std::size_t i = 0; i < fwd.size(); ++i) {
    EXPECT_GE(i == 0 ? fwd[0].delta : fwd[i - 1].delta, fwd[i].delta);
    auto it = std::find_if(rev.begin(), rev.end(), [&](const DeltaRow& r) { return r.predicate_id == fwd[i].predicate_id; });
    ASSERT_NE(it, rev.end());
    EXPECT_EQ(it->delta, -fwd[i].delta);
  }
}

TEST(DeltaReport, KeyMismatch) {
  std::map<int, PredicateRecall> a{{0, {}}}, b{{1, {}}};
  EXPECT_THROW(delta_report(a, b), Error);
}

TEST(Report, JsonRoundTripAndTable) {
  Rng rng(31);
  const auto [gt, preds] = random_instance(rng);
  const auto rep = compute_report(preds, gt, {1, 3, 10});
  const auto j = report_to_json(rep, gt.predicate_names);
  EXPECT_TRUE(j.contains("k") && j.contains("micro") && j.contains("macro") && j.contains("per_predicate"));
  std::map<int, std::string> names;
  const auto back = report_from_json(nlohmann::json::parse(j.dump()), &names);
  EXPECT_EQ(back, rep);
  const auto table = format_recall_table({{"l,d", &rep}, {"l", nullptr}}, rep.ks);
  EXPECT_NE(table.find("R@10     R@3     R@1"), std::string::npos) << table;
  EXPECT_NE(table.find("Macro"), std::string::npos);
  EXPECT_NE(table.find("failed"), std::string::npos);
}

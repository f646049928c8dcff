// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "relgraph/cli.hpp"
#include "relgraph/features.hpp"
#include "relgraph/metrics.hpp"
#include "relgraph/model.hpp"
#include "relgraph/nn.hpp"
#include "relgraph/synth.hpp"

using namespace relgraph;
using nn::Matrix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (auto& x : m.data()) x = rng.uniform(lo, hi);
  return m;
}

double dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  Timer timer;
  Rng rng(1);
  double worst_layer = 0.0;
  constexpr double eps = 1e-6;

  // Linear: L = <R, xW + b>.
  {
    const auto x = random_matrix(rng, 5, 7), w = random_matrix(rng, 7, 3), b = random_matrix(rng, 1, 3);
    const auto r = random_matrix(rng, 5, 3);
    const auto g = nn::linear_backward(r, x, w);
    auto f_w = [&](const Matrix& m) { return dot(r, oracle::naive_matmul_bias(x, m, b)); };
    auto f_b = [&](const Matrix& m) { return dot(r, oracle::naive_matmul_bias(x, w, m)); };
    auto f_x = [&](const Matrix& m) { return dot(r, oracle::naive_matmul_bias(m, w, b)); };
    worst_layer = std::max({worst_layer, oracle::max_rel_error(g.grad_weight, oracle::numeric_gradient(f_w, w, eps)),
                            oracle::max_rel_error(g.grad_bias, oracle::numeric_gradient(f_b, b, eps)),
                            oracle::max_rel_error(g.grad_input, oracle::numeric_gradient(f_x, x, eps))});
  }
  // ReLU, inputs kept away from the kink.
  {
    auto x = random_matrix(rng, 4, 6);
    for (auto& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
    const auto r = random_matrix(rng, 4, 6);
    auto f = [&](const Matrix& m) { return dot(r, nn::relu_forward(m)); };
    worst_layer = std::max(worst_layer, oracle::max_rel_error(nn::relu_backward(r, x),
                                                              oracle::numeric_gradient(f, x, eps)));
  }
  // Dropout with a frozen mask.
  {
    const auto x = random_matrix(rng, 4, 6);
    const auto r = random_matrix(rng, 4, 6);
    auto f = [&](const Matrix& m) {
      Rng fixed(5);
      return dot(r, nn::dropout_forward(m, 0.5, nn::Mode::kTrain, fixed).output);
    };
    Rng fixed(5);
    const auto d = nn::dropout_forward(x, 0.5, nn::Mode::kTrain, fixed);
    worst_layer = std::max(worst_layer, oracle::max_rel_error(nn::dropout_backward(r, d.mask),
                                                              oracle::numeric_gradient(f, x, eps)));
  }
  // Softmax cross-entropy.
  {
    const auto logits = random_matrix(rng, 6, 5, -3, 3);
    const std::vector<int> targets = {0, 1, 2, 3, 4, 2};
    auto f = [&](const Matrix& m) { return nn::softmax_cross_entropy(m, targets).loss; };
    worst_layer = std::max(worst_layer, oracle::max_rel_error(nn::softmax_cross_entropy(logits, targets).grad_logits,
                                                              oracle::numeric_gradient(f, logits, eps)));
  }

  // Composed model under every mask.
  double worst_model = 0.0;
  std::string worst_mask;
  for (const auto& mask_text : cli::ablation_row_order()) {
    ModelConfig c;
    c.dims = {6, 8, 8};
    c.width(Source::kC) = 4;
    c.width(Source::kV) = 8;
    c.width(Source::kD) = 8;
    c.width(Source::kL) = 4;
    c.fusion_width = 16;
    c.num_predicates = 5;
    c.mask = parse_mask(mask_text);
    auto m = build_model(c, rng);
    // Nonzero biases keep fully dropped rows off the ReLU kink.
    for (auto* p : m.parameters()) {
      if (p->value.rows() == 1) {
        for (auto& v : p->value.data()) v = rng.uniform(-0.1, 0.1);
      }
    }
    std::vector<PairInput> batch(4);
    for (auto& in : batch) {
      in.mask = c.mask;
      for (Source s : kFusionOrder) {
        if (!c.mask.uses(s)) continue;
        auto& v = s == Source::kL ? in.l_pair : s == Source::kC ? in.c_pair : s == Source::kV ? in.v_pair : in.d_pair;
        v.resize(c.input_width(s));
        for (auto& x : v) x = rng.normal();
      }
    }
    const std::vector<int> targets = {0, 4, 2, 1};
    auto loss = [&] {
      Rng fixed(99);
      return nn::softmax_cross_entropy(m.forward(batch, nn::Mode::kTrain, fixed), targets).loss;
    };
    m.zero_grad();
    Rng fixed(99);
    m.backward(nn::softmax_cross_entropy(m.forward(batch, nn::Mode::kTrain, fixed), targets).grad_logits);
    auto params = m.parameters();
    const double err = nn::finite_difference_check(loss, params, eps, 1'000'000);
    if (err > worst_model) {
      worst_model = err;
      worst_mask = mask_text;
    }
  }
  const double t = timer.seconds();
  Outcome o;
  o.pass = worst_layer < 1e-5 && worst_model < 1e-5 && t < 10.0;
  o.detail = "layers max rel err " + fmt(worst_layer) + ", model (15 masks) max rel err " + fmt(worst_model) +
             (worst_mask.empty() ? "" : " [" + worst_mask + "]") + ", " + fmt(t) + " s (limit 10 s)";
  return o;
}

// ---------------------------------------------------------------------------

std::pair<SceneDataset, PredictionSet> random_recall_instance(Rng& rng) {
  const int predicates = int(rng.uniform_int(1, 8));
  const int images = int(rng.uniform_int(1, 5));
  SceneDataset ds;
  ds.object_class_names = {"thing"};
  for (int p = 0; p < predicates; ++p) ds.predicate_names.push_back("p" + std::to_string(p));
  PredictionSet preds;
  for (int i = 0; i < images; ++i) {
    const int n = int(rng.uniform_int(2, 6));
    SceneImage img;
    img.image_id = 100 + i;
    img.width = img.height = 100;
    for (int e = 0; e < n; ++e) img.entities.push_back({e, 0, {double(e), double(e), 5, 5}});
    std::set<Triple> gt;
    const int want = int(rng.uniform_int(i == 0 ? 1 : 0, 6));
    for (int k = 0; k < want; ++k) {
      const auto s = rng.uniform_int(0, n - 1);
      auto o = rng.uniform_int(0, n - 1);
      if (o == s) o = (o + 1) % n;
      gt.insert({s, int(rng.uniform_int(0, predicates - 1)), o});
    }
    img.triples.assign(gt.begin(), gt.end());
    ds.images.push_back(img);
    std::vector<ScoredTriple> cands;
    for (int s = 0; s < n; ++s) {
      for (int o = 0; o < n; ++o) {
        if (s == o) continue;
        for (int p = 0; p < predicates; ++p) cands.push_back({s, p, o, double(rng.uniform_int(0, 9)) / 10.0});
      }
    }
    std::sort(cands.begin(), cands.end(), ranks_before);
    preds[img.image_id] = cands;
  }
  return {ds, preds};
}

Outcome metric_oracle() {
  Timer timer;
  Rng rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto [gt, preds] = random_recall_instance(rng);
    for (int k : {1, 3, 10}) {
      mismatches += micro_recall_at_k(preds, gt, k) != oracle::micro(preds, gt, k);
      mismatches += macro_recall_at_k(preds, gt, k) != oracle::macro(preds, gt, k);
    }
  }
  const double t = timer.seconds();
  return {mismatches == 0 && t < 10.0,
          std::to_string(mismatches) + " mismatches over 100 instances x K in {1,3,10}, " + fmt(t) +
              " s (limit 10 s)"};
}

// ---------------------------------------------------------------------------

Outcome location_properties() {
  Timer timer;
  const auto l = location_features({2, 4, 10, 20}, {1, 2, 5, 10});
  const std::array<double, 4> want = {0.2, 0.2, std::log(2.0), std::log(2.0)};
  double hand = 0.0;
  for (int k = 0; k < 4; ++k) hand = std::max(hand, std::abs(l[k] - want[k]));

  Rng rng(5);
  double invariance = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto box = [&] {
      return BoundingBox{rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(1, 300), rng.uniform(1, 300)};
    };
    const auto s = box(), o = box();
    const double dx = rng.uniform(-1000, 1000), dy = rng.uniform(-1000, 1000);
    const double alpha = std::exp(rng.uniform(std::log(0.01), std::log(100.0)));
    auto move = [&](const BoundingBox& b) {
      return BoundingBox{alpha * (b.x + dx), alpha * (b.y + dy), alpha * b.w, alpha * b.h};
    };
    const auto a = location_features(s, o), b = location_features(move(s), move(o));
    for (int k = 0; k < 4; ++k) invariance = std::max(invariance, std::abs(a[k] - b[k]));
  }
  const double t = timer.seconds();
  return {hand <= 1e-12 && invariance <= 1e-9 && t < 5.0,
          "hand example err " + fmt(hand) + " (tol 1e-12), invariance err " + fmt(invariance) +
              " over 1000 pairs (tol 1e-9), " + fmt(t) + " s (limit 5 s)"};
}

// ---------------------------------------------------------------------------

Outcome convergence() {
  SynthConfig sc;
  sc.num_images = 500;
  sc.rules = RuleSet::kSpatial2d;
  sc.noise_level = 0.0;
  sc.seed = 1;
  const auto data = synth_generate(sc);

  ModelConfig mc;
  mc.mask = parse_mask("l");
  mc.dims = data.features.dims();
  mc.num_predicates = data.dataset.num_predicates();
  TrainConfig tc;  // default optimiser, batch 16, 30 epochs

  Rng rng(10);
  auto model = build_model(mc, rng);
  Timer timer;
  const auto rep = train(model, data.dataset, data.features, tc);
  const double t = timer.seconds();

  // lr = 0 control on a fresh model.
  Rng rng0(11);
  auto control = build_model(mc, rng0);
  std::vector<Matrix> before;
  for (const auto* p : control.parameters()) before.push_back(p->value);
  auto tc0 = tc;
  tc0.adam.learning_rate = 0.0;
  tc0.epochs = 2;
  train(control, data.dataset, data.features, tc0);
  bool identical = true;
  const auto after = control.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) {
    identical = identical && std::memcmp(before[i].data().data(), after[i]->value.data().data(),
                                         before[i].size() * sizeof(double)) == 0;
  }
  return {rep.final_train_accuracy >= 0.95 && t < 300.0 && identical,
          "l-only accuracy " + fmt(100 * rep.final_train_accuracy, 4) + "% after " + std::to_string(tc.epochs) +
              " epochs (need >= 95%), " + fmt(t) + " s (limit 300 s), lr=0 parameters " +
              (identical ? "bit-identical" : "CHANGED")};
}

// ---------------------------------------------------------------------------

Outcome depth_ablation() {
  SynthConfig sc;
  sc.num_images = 300;
  sc.rules = RuleSet::kSpatial3d;
  sc.seed = 3;
  const auto data = synth_generate(sc);
  const auto [train_ds, test_ds] = split_dataset(data.dataset, 0.8, 3);
  const auto& names = data.dataset.predicate_names;
  const int behind = int(std::find(names.begin(), names.end(), "behind") - names.begin());
  const int front = int(std::find(names.begin(), names.end(), "in front of") - names.begin());

  auto depth_recall = [&](const char* mask) {
    ModelConfig mc;
    mc.mask = parse_mask(mask);
    mc.dims = data.features.dims();
    mc.num_predicates = data.dataset.num_predicates();
    mc.width(Source::kV) = 64;
    mc.width(Source::kD) = 64;
    mc.fusion_width = 256;
    TrainConfig tc;
    tc.adam.learning_rate = 1e-3;
    tc.seed = 3;
    Rng rng(3);
    auto model = build_model(mc, rng);
    train(model, train_ds, data.features, tc);
    const auto rep = compute_report(predict_dataset(model, test_ds, data.features, true), test_ds);
    std::map<int, double> out;
    for (int k : rep.ks) {
      const auto& per = rep.per_predicate.at(k);
      out[k] = (per.at(behind).recall + per.at(front).recall) / 2.0;
    }
    return out;
  };
  const auto l = depth_recall("l");
  const auto ld = depth_recall("l,d");
  bool pass = true;
  std::string detail = "behind/in-front-of macro recall, graph constraint on:";
  for (const auto& [k, v] : l) {
    const double gain = ld.at(k) - v;
    pass = pass && gain >= 0.2;
    detail += " R@" + std::to_string(k) + " l " + fmt(v) + " -> l,d " + fmt(ld.at(k)) + " (+" + fmt(gain) + ");";
  }
  detail += " need +0.2 at every K";
  return {pass, detail};
}

// ---------------------------------------------------------------------------

Outcome macro_micro_fixture() {
  SceneDataset gt;
  gt.object_class_names = {"thing"};
  gt.predicate_names = {"common", "rare"};
  SceneImage img;
  img.image_id = 1;
  img.width = img.height = 100;
  for (int e = 0; e < 4; ++e) img.entities.push_back({e, 0, {double(e), double(e), 5, 5}});
  img.triples = {{0, 0, 1}, {1, 0, 2}, {2, 0, 3}, {3, 1, 0}};
  gt.images = {img};
  // Every "common" triple ranked, the "rare" one predicted with the wrong predicate.
  const PredictionSet preds{{1, {{0, 0, 1, 0.9}, {1, 0, 2, 0.8}, {2, 0, 3, 0.7}, {3, 0, 0, 0.6}}}};
  const double micro = micro_recall_at_k(preds, gt, 50, MicroAveraging::kPooled);
  const double macro = macro_recall_at_k(preds, gt, 50);
  return {micro == 0.75 && macro == 0.5, "micro " + fmt(micro) + " (want 0.75), macro " + fmt(macro) + " (want 0.5)"};
}

// ---------------------------------------------------------------------------

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<fs::path> ra, rb;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) ra.insert(fs::relative(e.path(), a));
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) rb.insert(fs::relative(e.path(), b));
  }
  if (ra != rb) {
    why = "file sets differ under " + a.string();
    return false;
  }
  for (const auto& r : ra) {
    if (binary::read_file((a / r).string()) != binary::read_file((b / r).string())) {
      why = (a / r).string() + " differs";
      return false;
    }
  }
  return true;
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "relgraph_acceptance_determinism";
  fs::remove_all(root);
  auto p = [&](const std::string& s) { return (root / s).string(); };
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  const std::vector<std::string> model_flags = {"--width-v", "8", "--width-d", "8", "--width-c", "8",
                                                "--fusion-width", "32", "--epochs", "3", "--lr", "1e-3"};
  auto with = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  struct Step {
    std::string name;
    std::vector<std::string> args;
  };
  const std::vector<Step> steps = {
      {"synth", {"synth", "--out", p("synth"), "--images", "40", "--rules", "mixed", "--noise", "0.1", "--seed",
                 "9", "--classes", "5", "--rgb-dim", "6", "--depth-dim", "6", "--train-fraction", "0.7"}},
      {"train", with({"train", "--out", p("train"), "--dataset", p("synth/train.json"), "--features",
                      p("synth/features.rfb"), "--mask", "l,c,v,d", "--seed", "4"},
                     model_flags)},
      {"eval", {"eval", "--out", p("eval"), "--checkpoint", p("train/model.rck"), "--dataset", p("synth/test.json"),
                "--features", p("synth/features.rfb"), "--graph-constraint", "off"}},
      {"ablate", with({"ablate", "--out", p("ablate"), "--dataset", p("synth/train.json"), "--eval-dataset",
                       p("synth/test.json"), "--features", p("synth/features.rfb"), "--masks", "v;v,d;l,c,v,d",
                       "--jobs", "2", "--seed", "4"},
                      model_flags)},
      {"report", {"report", "--out", p("report"), "--before", p("ablate/runs/v/eval.json"), "--after",
                  p("ablate/runs/vd/eval.json")}},
  };
  std::vector<std::string> checked;
  for (const auto& step : steps) {
    if (const int code = run(step.args); code != 0) {
      return {false, step.name + " exited with " + std::to_string(code)};
    }
    const auto rerun = step.name + "_rerun";
    if (const int code = run({step.name, "--config", p(step.name + "/config.ini"), "--out", p(rerun)}); code != 0) {
      return {false, step.name + " rerun from config.ini exited with " + std::to_string(code)};
    }
    std::string why;
    if (!same_tree(root / step.name, root / rerun, why)) return {false, why};
    checked.push_back(step.name);
  }
  fs::remove_all(root);
  std::string list;
  for (const auto& c : checked) list += (list.empty() ? "" : ", ") + c;
  return {true, "reruns from echoed config.ini byte-identical for " + list};
}

// ---------------------------------------------------------------------------

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;  // no error raised
}

Outcome format_round_trips() {
  Rng rng(77);
  int failures = 0;
  std::vector<std::string> notes;
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureDims dims{std::uint32_t(rng.uniform_int(1, 12)), std::uint32_t(rng.uniform_int(1, 40)),
                           std::uint32_t(rng.uniform_int(1, 20))};
    FeatureStore store(dims);
    const int n = int(rng.uniform_int(0, 60));
    for (int i = 0; i < n; ++i) {
      FeatureRecord r{rng.uniform_int(-3, 9), rng.uniform_int(0, 1 << 20), {}, {}, {}};
      for (std::uint32_t k = 0; k < dims.c; ++k) r.c.push_back(float(rng.uniform()));
      for (std::uint32_t k = 0; k < dims.v; ++k) r.v.push_back(float(rng.normal(0, 100)));
      for (std::uint32_t k = 0; k < dims.d; ++k) r.d.push_back(float(rng.normal()));
      if (!store.find(r.image_id, r.entity_id)) store.insert(r);
    }
    const auto bytes = encode_features(store);
    const auto back = decode_features(bytes);
    failures += !(back == store) || encode_features(back) != bytes;
  }
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig mc;
    mc.dims = {std::uint32_t(rng.uniform_int(1, 6)), std::uint32_t(rng.uniform_int(1, 6)),
               std::uint32_t(rng.uniform_int(1, 6))};
    for (Source s : kFusionOrder) {
      mc.width(s) = int(rng.uniform_int(1, 5));
      mc.dropout(s) = rng.uniform(0, 0.9);
    }
    mc.fusion_width = int(rng.uniform_int(1, 9));
    mc.num_predicates = int(rng.uniform_int(1, 7));
    mc.mask = parse_mask(cli::ablation_row_order()[rng.uniform_int(0, 14)]);
    auto m = build_model(mc, rng);
    for (auto* p : m.parameters()) {
      for (auto& v : p->value.data()) v = rng.normal(0, 1e3) * std::pow(10.0, double(rng.uniform_int(-20, 20)));
    }
    const auto bytes = encode_checkpoint(m);
    const auto back = decode_checkpoint(bytes);
    failures += encode_checkpoint(back) != bytes || !(back.config() == mc);
  }
  if (failures) notes.push_back(std::to_string(failures) + " round-trip mismatches");

  FeatureStore small(FeatureDims{2, 2, 2});
  small.insert({1, 1, {0.5f, 0.5f}, {1, 2}, {3, 4}});
  const auto f = encode_features(small);
  Rng mrng(1);
  auto m = build_model([] {
    ModelConfig c;
    c.dims = {2, 2, 2};
    c.branch_width = {2, 2, 2, 2};
    c.fusion_width = 3;
    c.num_predicates = 2;
    return c;
  }(), mrng);
  const auto ck = encode_checkpoint(m);
  auto corrupt = [](std::string s, std::size_t at, char c) {
    s[at] = c;
    return s;
  };
  const std::vector<std::tuple<std::string, ErrorCode, ErrorCode>> fixtures = {
      {"features bad magic", code_of([&] { decode_features(corrupt(f, 0, 'X')); }), ErrorCode::kMagicMismatch},
      {"features bad version", code_of([&] { decode_features(corrupt(f, 4, 7)); }), ErrorCode::kVersionMismatch},
      {"features truncated", code_of([&] { decode_features(f.substr(0, f.size() - 2)); }), ErrorCode::kTruncated},
      {"features short header", code_of([&] { decode_features(f.substr(0, 10)); }), ErrorCode::kTruncated},
      {"checkpoint bad magic", code_of([&] { decode_checkpoint(corrupt(ck, 0, 'X')); }), ErrorCode::kMagicMismatch},
      {"checkpoint bad version", code_of([&] { decode_checkpoint(corrupt(ck, 4, 7)); }), ErrorCode::kVersionMismatch},
      {"checkpoint truncated", code_of([&] { decode_checkpoint(ck.substr(0, ck.size() - 1)); }), ErrorCode::kTruncated},
  };
  for (const auto& [name, got, want] : fixtures) {
    if (got != want) notes.push_back(name + " raised " + std::string(to_string(got)) + ", want " + std::string(to_string(want)));
  }
  if (notes.empty()) {
    return {true, "20 feature stores and 10 checkpoints bit-exact; 7 corruption fixtures raise the expected errors"};
  }
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {false, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient-correctness", gradient_correctness},
      {"metric-oracle-equivalence", metric_oracle},
      {"location-feature-properties", location_properties},
      {"convergence", convergence},
      {"depth-ablation-direction", depth_ablation},
      {"macro-vs-micro-fixture", macro_micro_fixture},
      {"determinism", determinism},
      {"format-round-trips", format_round_trips},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

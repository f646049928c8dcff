#pragma once

// ERMLP-E relation model: one dense ReLU/dropout branch per feature source,
// a fused hidden layer e_p = f(W [v_so; l_so; c_so; d_so]) and a linear
// classifier over predicates, trained with softmax cross-entropy on observed
// triples (the softmax supplies the negatives).

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "relgraph/binary_io.hpp"
#include "relgraph/error.hpp"
#include "relgraph/features.hpp"
#include "relgraph/nn.hpp"
#include "relgraph/random.hpp"
#include "relgraph/scene.hpp"

namespace relgraph {

/// Per-source values indexed by Source (v, l, c, d).
template <typename T>
using PerSource = std::array<T, 4>;

struct ModelConfig {
  FeatureDims dims;
  PerSource<int> branch_width = {512, 20, 64, 4096};
  PerSource<double> branch_dropout = {0.8, 0.1, 0.1, 0.6};
  int fusion_width = 4096;
  double fusion_dropout = 0.1;
  int num_predicates = kDefaultPredicates;
  AblationMask mask = AblationMask::all();

  int& width(Source s) { return branch_width[static_cast<int>(s)]; }
  int width(Source s) const { return branch_width[static_cast<int>(s)]; }
  double& dropout(Source s) { return branch_dropout[static_cast<int>(s)]; }
  double dropout(Source s) const { return branch_dropout[static_cast<int>(s)]; }

  /// Width of the concatenated subject/object input for a source.
  std::size_t input_width(Source s) const {
    switch (s) {
      case Source::kV: return 2ull * dims.v;
      case Source::kL: return 8;
      case Source::kC: return 2ull * dims.c;
      case Source::kD: return 2ull * dims.d;
    }
    return 0;
  }

  std::size_t fusion_input_width() const {
    std::size_t w = 0;
    for (Source s : kFusionOrder) {
      if (mask.uses(s)) w += static_cast<std::size_t>(width(s));
    }
    return w;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void check(const ModelConfig& c) {
  auto bad = [](const std::string& m) { fail(ErrorCode::kInvalidArgument, "model config: " + m); };
  if (c.mask.empty()) bad("mask enables no feature source");
  for (Source s : kFusionOrder) {
    if (c.width(s) < 1) bad(std::string("branch width for '") + source_letter(s) + "' must be positive");
    if (!(c.dropout(s) >= 0.0 && c.dropout(s) < 1.0)) bad("dropout rates must lie in [0, 1)");
    if (c.mask.uses(s) && c.input_width(s) == 0) bad(std::string("source '") + source_letter(s) + "' has zero input width");
  }
  if (c.fusion_width < 1) bad("fusion width must be positive");
  if (!(c.fusion_dropout >= 0.0 && c.fusion_dropout < 1.0)) bad("dropout rates must lie in [0, 1)");
  if (c.num_predicates < 1) bad("need at least one predicate");
}

namespace detail {

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Canonical "key=value" text, one entry per line in fixed order.
inline std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "dims.c=" << c.dims.c << "\n"
     << "dims.v=" << c.dims.v << "\n"
     << "dims.d=" << c.dims.d << "\n";
  for (Source s : kFusionOrder) os << "width." << source_letter(s) << "=" << c.width(s) << "\n";
  for (Source s : kFusionOrder) {
    os << "dropout." << source_letter(s) << "=" << detail::format_real(c.dropout(s)) << "\n";
  }
  os << "fusion.width=" << c.fusion_width << "\n"
     << "fusion.dropout=" << detail::format_real(c.fusion_dropout) << "\n"
     << "num_predicates=" << c.num_predicates << "\n"
     << "mask=" << to_string(c.mask) << "\n";
  return os.str();
}

inline ModelConfig model_config_from_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kConfigShape, "malformed config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorCode::kConfigShape, "config lacks '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.dims.c = static_cast<std::uint32_t>(std::stoul(get("dims.c")));
    c.dims.v = static_cast<std::uint32_t>(std::stoul(get("dims.v")));
    c.dims.d = static_cast<std::uint32_t>(std::stoul(get("dims.d")));
    for (Source s : kFusionOrder) {
      const std::string letter(1, source_letter(s));
      c.width(s) = std::stoi(get("width." + letter));
      c.dropout(s) = std::stod(get("dropout." + letter));
    }
    c.fusion_width = std::stoi(get("fusion.width"));
    c.fusion_dropout = std::stod(get("fusion.dropout"));
    c.num_predicates = std::stoi(get("num_predicates"));
    c.mask = parse_mask(get("mask"));
  } catch (const std::logic_error& e) {
    fail(ErrorCode::kConfigShape, std::string("bad config value: ") + e.what());
  }
  try {
    check(c);
  } catch (const Error& e) {
    fail(ErrorCode::kConfigShape, e.what());
  }
  return c;
}

struct ForwardTrace {
  PerSource<nn::Matrix> branch_input;
  PerSource<nn::Matrix> branch_pre;     // before ReLU
  PerSource<nn::Matrix> branch_mask;    // dropout multipliers
  PerSource<nn::Matrix> branch_output;  // v_so, l_so, c_so, d_so
  nn::Matrix fusion_input;
  nn::Matrix fusion_pre;
  nn::Matrix fusion_mask;
  nn::Matrix embedding;  // e_p
};

class ErmlpEModel {
 public:
  struct Branch {
    nn::Parameter weight;
    nn::Parameter bias;
  };

  /// Xavier-initialised weights, zero biases.
  ErmlpEModel(const ModelConfig& config, Rng& rng) : config_(config) {
    check(config_);
    for (Source s : kFusionOrder) {
      if (!config_.mask.uses(s)) continue;
      auto& b = branches_[index(s)];
      b.weight = nn::Parameter(nn::xavier_init(config_.input_width(s), config_.width(s), rng));
      b.bias = nn::Parameter(nn::Matrix(1, config_.width(s)));
    }
    fusion_.weight = nn::Parameter(
        nn::xavier_init(config_.fusion_input_width(), config_.fusion_width, rng));
    fusion_.bias = nn::Parameter(nn::Matrix(1, config_.fusion_width));
    classifier_.weight = nn::Parameter(
        nn::xavier_init(config_.fusion_width, config_.num_predicates, rng));
    classifier_.bias = nn::Parameter(nn::Matrix(1, config_.num_predicates));
  }

  const ModelConfig& config() const { return config_; }
  const AblationMask& mask() const { return config_.mask; }

  Branch& branch(Source s) { return branches_[index(s)]; }
  const Branch& branch(Source s) const { return branches_[index(s)]; }
  Branch& fusion() { return fusion_; }
  const Branch& fusion() const { return fusion_; }
  Branch& classifier() { return classifier_; }
  const Branch& classifier() const { return classifier_; }

  /// Declaration order: masked-in branches (v, l, c, d), fusion, classifier;
  /// weight before bias.
  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> out;
    for (Source s : kFusionOrder) {
      if (!config_.mask.uses(s)) continue;
      out.push_back(&branch(s).weight);
      out.push_back(&branch(s).bias);
    }
    for (Branch* b : {&fusion_, &classifier_}) {
      out.push_back(&b->weight);
      out.push_back(&b->bias);
    }
    return out;
  }

  std::vector<const nn::Parameter*> parameters() const {
    std::vector<const nn::Parameter*> out;
    for (auto* p : const_cast<ErmlpEModel*>(this)->parameters()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
  }

  /// Stacks one source of a batch into a [B x input_width] matrix.
  nn::Matrix stack(std::span<const PairInput> batch, Source s) const {
    const std::size_t width = config_.input_width(s);
    nn::Matrix m(batch.size(), width);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto& src = batch[r].source(s);
      if (src.size() != width) {
        fail(ErrorCode::kDimMismatch, std::string("source '") + source_letter(s) + "' has width " +
                                          std::to_string(src.size()) + ", model expects " +
                                          std::to_string(width));
      }
      std::copy(src.begin(), src.end(), m.row(r).begin());
    }
    return m;
  }

  nn::Matrix forward(std::span<const PairInput> batch, nn::Mode mode, Rng& rng) {
    for (const auto& in : batch) {
      if (!(in.mask == config_.mask)) {
        fail(ErrorCode::kMaskMismatch, "pair input mask '" + to_string(in.mask) +
                                           "' does not match model mask '" +
                                           to_string(config_.mask) + "'");
      }
    }
    ForwardTrace& t = trace_;
    std::vector<const nn::Matrix*> parts;
    for (Source s : kFusionOrder) {
      if (!config_.mask.uses(s)) continue;
      const int i = index(s);
      t.branch_input[i] = stack(batch, s);
      t.branch_pre[i] = nn::linear_forward(t.branch_input[i], branches_[i].weight, branches_[i].bias);
      auto drop = nn::dropout_forward(nn::relu_forward(t.branch_pre[i]), config_.dropout(s), mode, rng);
      t.branch_output[i] = std::move(drop.output);
      t.branch_mask[i] = std::move(drop.mask);
      parts.push_back(&t.branch_output[i]);
    }
    t.fusion_input = nn::hconcat(parts);
    t.fusion_pre = nn::linear_forward(t.fusion_input, fusion_.weight, fusion_.bias);
    auto drop = nn::dropout_forward(nn::relu_forward(t.fusion_pre), config_.fusion_dropout, mode, rng);
    t.embedding = std::move(drop.output);
    t.fusion_mask = std::move(drop.mask);
    return nn::linear_forward(t.embedding, classifier_.weight, classifier_.bias);
  }

  /// Accumulates parameter gradients for the most recent forward().
  void backward(const nn::Matrix& grad_logits) {
    ForwardTrace& t = trace_;
    auto gc = nn::linear_backward(grad_logits, t.embedding, classifier_.weight.value);
    accumulate(classifier_, gc);
    auto g_pre = nn::relu_backward(nn::dropout_backward(gc.grad_input, t.fusion_mask), t.fusion_pre);
    auto gf = nn::linear_backward(g_pre, t.fusion_input, fusion_.weight.value);
    accumulate(fusion_, gf);
    std::size_t offset = 0;
    for (Source s : kFusionOrder) {
      if (!config_.mask.uses(s)) continue;
      const int i = index(s);
      const auto width = static_cast<std::size_t>(config_.width(s));
      auto g_out = nn::column_slice(gf.grad_input, offset, width);
      offset += width;
      auto g_branch_pre = nn::relu_backward(nn::dropout_backward(g_out, t.branch_mask[i]), t.branch_pre[i]);
      auto gb = nn::linear_backward(g_branch_pre, t.branch_input[i], branches_[i].weight.value, false);
      accumulate(branches_[i], gb);
    }
  }

  const ForwardTrace& last_trace() const { return trace_; }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

 private:
  static int index(Source s) { return static_cast<int>(s); }

  static void accumulate(Branch& b, const nn::LinearGrads& g) {
    auto add = [](nn::Matrix& dst, const nn::Matrix& src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
    };
    add(b.weight.grad, g.grad_weight);
    add(b.bias.grad, g.grad_bias);
  }

  ModelConfig config_;
  PerSource<Branch> branches_;
  Branch fusion_;
  Branch classifier_;
  ForwardTrace trace_;
};

inline ErmlpEModel build_model(const ModelConfig& config, Rng& rng) { return ErmlpEModel(config, rng); }

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  nn::AdamConfig adam;
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // eval-mode mean loss over the training set, after each epoch
  std::vector<double> train_loss;  // running mean of dropout-mode batch losses per epoch
  double final_train_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::size_t num_examples = 0;
  std::int64_t steps = 0;
};

struct ExampleRef {
  std::size_t image;
  std::size_t triple;
};

inline std::vector<ExampleRef> collect_examples(const SceneDataset& ds) {
  std::vector<ExampleRef> out;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    for (std::size_t t = 0; t < ds.images[i].triples.size(); ++t) out.push_back({i, t});
  }
  return out;
}

namespace detail {

inline void assemble_batch(const SceneDataset& ds, const FeatureStore& store, const AblationMask& mask,
                           std::span<const ExampleRef> refs, std::vector<PairInput>& inputs,
                           std::vector<int>& targets) {
  inputs.clear();
  targets.clear();
  for (const auto& ref : refs) {
    const auto& img = ds.images[ref.image];
    const auto& tr = img.triples[ref.triple];
    inputs.push_back(assemble_pair(store, img, tr.subject_id, tr.object_id, mask));
    targets.push_back(tr.predicate_id);
  }
}

struct EvalStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

inline EvalStats evaluate_examples(ErmlpEModel& model, const SceneDataset& ds, const FeatureStore& store,
                                   std::span<const ExampleRef> refs) {
  constexpr std::size_t kChunk = 256;
  Rng unused(0);
  std::vector<PairInput> inputs;
  std::vector<int> targets;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < refs.size(); begin += kChunk) {
    const auto chunk = refs.subspan(begin, std::min(kChunk, refs.size() - begin));
    assemble_batch(ds, store, model.mask(), chunk, inputs, targets);
    const auto logits = model.forward(inputs, nn::Mode::kEval, unused);
    loss_sum += nn::softmax_cross_entropy(logits, targets).loss * static_cast<double>(chunk.size());
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      auto row = logits.row(r);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == targets[r]) ++correct;
    }
  }
  if (refs.empty()) return {};
  const double n = static_cast<double>(refs.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

}  // namespace detail

inline void check_training_inputs(const ErmlpEModel& model, const SceneDataset& ds, const FeatureStore& store) {
  const auto& mc = model.config();
  if (ds.num_predicates() != mc.num_predicates) {
    fail(ErrorCode::kDimMismatch, "dataset has " + std::to_string(ds.num_predicates()) +
                                      " predicates, model expects " + std::to_string(mc.num_predicates));
  }
  if (mc.mask.use_c || mc.mask.use_v || mc.mask.use_d) {
    if (!(store.dims() == mc.dims)) {
      fail(ErrorCode::kDimMismatch, "feature dims " + to_string(store.dims()) +
                                        ", model expects " + to_string(mc.dims));
    }
    check_coverage(store, ds);
  }
}

/// Trains on every observed triple as a (pair -> predicate) example.
inline TrainReport train(ErmlpEModel& model, const SceneDataset& ds, const FeatureStore& store,
                         const TrainConfig& cfg) {
  if (cfg.batch_size < 1 || cfg.epochs < 1) {
    fail(ErrorCode::kInvalidArgument, "batch size and epoch count must be at least 1");
  }
  nn::check(cfg.adam);
  check_training_inputs(model, ds, store);
  const auto start = std::chrono::steady_clock::now();

  const auto canonical = collect_examples(ds);
  auto order = canonical;
  Rng rng(cfg.seed);
  auto params = model.parameters();
  model.zero_grad();

  TrainReport report;
  report.num_examples = canonical.size();
  std::vector<PairInput> inputs;
  std::vector<int> targets;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(std::span<ExampleRef>(order));
    double running = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const auto refs = std::span<const ExampleRef>(order).subspan(begin, std::min(batch, order.size() - begin));
      detail::assemble_batch(ds, store, model.mask(), refs, inputs, targets);
      const auto logits = model.forward(inputs, nn::Mode::kTrain, rng);
      const auto loss = nn::softmax_cross_entropy(logits, targets);
      running += loss.loss * static_cast<double>(refs.size());
      model.backward(loss.grad_logits);
      nn::adam_step(params, cfg.adam, ++report.steps);
    }
    report.train_loss.push_back(order.empty() ? 0.0 : running / static_cast<double>(order.size()));
    const auto stats = detail::evaluate_examples(model, ds, store, canonical);
    report.epoch_loss.push_back(stats.mean_loss);
    report.final_train_accuracy = stats.accuracy;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Prediction

struct ScoredTriple {
  std::int64_t subject_id = 0;
  int predicate_id = 0;
  std::int64_t object_id = 0;
  double score = 0.0;

  friend bool operator==(const ScoredTriple&, const ScoredTriple&) = default;
};

/// Descending score; ties by (subject, object, predicate) ascending.
inline bool ranks_before(const ScoredTriple& a, const ScoredTriple& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.subject_id, a.object_id, a.predicate_id) <
         std::tie(b.subject_id, b.object_id, b.predicate_id);
}

/// Softmax-scored predicates for every ordered entity pair of an image,
/// ranked. With the graph constraint only each pair's best predicate is kept.
inline std::vector<ScoredTriple> predict_image(ErmlpEModel& model, const SceneImage& image,
                                               const FeatureStore& store, bool graph_constraint) {
  std::vector<ScoredTriple> out;
  if (image.entities.size() < 2) return out;
  std::vector<PairInput> inputs;
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  for (const auto& s : image.entities) {
    for (const auto& o : image.entities) {
      if (s.entity_id == o.entity_id) continue;
      inputs.push_back(assemble_pair(store, image, s.entity_id, o.entity_id, model.mask()));
      pairs.emplace_back(s.entity_id, o.entity_id);
    }
  }
  Rng unused(0);
  const auto probs = nn::softmax_rows(model.forward(inputs, nn::Mode::kEval, unused));
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    auto row = probs.row(r);
    if (graph_constraint) {
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      out.push_back({pairs[r].first, best, pairs[r].second, row[best]});
    } else {
      for (std::size_t p = 0; p < row.size(); ++p) {
        out.push_back({pairs[r].first, static_cast<int>(p), pairs[r].second, row[p]});
      }
    }
  }
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "RCK1", u32 version, u32-length-prefixed config text, then
// each parameter in declaration order as u32 rows, u32 cols, f64 values.

inline constexpr std::string_view kCheckpointMagic = "RCK1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ErmlpEModel& model) {
  binary::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto text = to_text(model.config());
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto* p : model.parameters()) {
    w.u32(static_cast<std::uint32_t>(p->value.rows()));
    w.u32(static_cast<std::uint32_t>(p->value.cols()));
    for (double v : p->value.data()) w.f64(v);
  }
  return w.release();
}

inline ErmlpEModel decode_checkpoint(std::string_view bytes) {
  binary::Reader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || r.bytes(4, "magic") != kCheckpointMagic) {
    fail(ErrorCode::kMagicMismatch, "not an RCK1 checkpoint");
  }
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) +
                                          ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto text_len = r.u32("config length");
  const auto config = model_config_from_text(r.bytes(text_len, "config text"));
  Rng rng(0);
  ErmlpEModel model(config, rng);
  std::size_t index = 0;
  for (auto* p : model.parameters()) {
    const auto rows = r.u32("tensor rows");
    const auto cols = r.u32("tensor cols");
    if (rows != p->value.rows() || cols != p->value.cols()) {
      fail(ErrorCode::kConfigShape, "tensor " + std::to_string(index) + " is [" + std::to_string(rows) +
                                        "x" + std::to_string(cols) + "], config implies " +
                                        p->value.shape_string());
    }
    for (auto& v : p->value.data()) v = r.f64("tensor values");
    ++index;
  }
  if (r.remaining() != 0) {
    fail(ErrorCode::kConfigShape, std::to_string(r.remaining()) + " trailing byte(s) after last tensor");
  }
  return model;
}

inline void save_checkpoint(const ErmlpEModel& model, const std::string& path) {
  binary::write_file(path, encode_checkpoint(model));
}

inline ErmlpEModel load_checkpoint(const std::string& path) {
  return decode_checkpoint(binary::read_file(path));
}

}  // namespace relgraph

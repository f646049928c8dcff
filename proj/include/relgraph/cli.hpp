#pragma once

// Command-line driver: synth, train, eval, ablate and report.
//
// Every command resolves its settings as defaults < --config file < flags and
// writes the effective settings to <out>/config.ini. The output directory is
// not part of the echo, so rerunning from the echoed file into a fresh
// directory reproduces the same bytes.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relgraph/binary_io.hpp"
#include "relgraph/error.hpp"
#include "relgraph/features.hpp"
#include "relgraph/metrics.hpp"
#include "relgraph/model.hpp"
#include "relgraph/scene.hpp"
#include "relgraph/synth.hpp"

namespace relgraph::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

inline int exit_code_for(ErrorCode code) {
  return code == ErrorCode::kInvalidArgument ? kExitUsage : kExitData;
}

enum Command : unsigned { kSynth = 1, kTrain = 2, kEval = 4, kAblate = 8, kReport = 16 };

struct Settings {
  std::string dataset;
  std::string features;
  std::string eval_dataset;  // ablate: evaluation split, defaults to the training set
  std::string checkpoint;
  std::string before;
  std::string after;
  std::uint64_t seed = 0;

  SynthConfig synth;
  double train_fraction = 0.0;  // 0 writes no split

  ModelConfig model;
  std::string mask;  // empty: all sources for train, the checkpoint's mask for eval
  TrainConfig train;

  std::vector<int> ks = kDefaultRecallKs;
  bool graph_constraint = true;

  std::string masks = "all";
  int jobs = 0;  // 0: one per mask, capped at hardware concurrency
};

// ---------------------------------------------------------------------------
// Ablation row order: singletons d, c, v, l, then pairs, triples, full model.

inline const std::vector<std::string>& ablation_row_order() {
  static const std::vector<std::string> order = {
      "d",     "c",     "v",     "l",     "v,d",   "l,d",   "c,d",     "l,c",
      "l,v",   "c,v",   "l,v,d", "c,v,d", "l,c,d", "l,c,v", "l,c,v,d"};
  return order;
}

inline std::size_t ablation_rank(const AblationMask& m) {
  const auto& order = ablation_row_order();
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), to_string(m)) - order.begin());
}

/// "d;l;l,d" or "all" -> masks in table order.
inline std::vector<AblationMask> parse_mask_list(const std::string& text) {
  std::vector<AblationMask> out;
  if (text == "all") {
    for (const auto& s : ablation_row_order()) out.push_back(parse_mask(s));
    return out;
  }
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto m = parse_mask(item);
    if (!seen.insert(to_string(m)).second) {
      fail(ErrorCode::kInvalidArgument, "mask '" + to_string(m) + "' listed twice");
    }
    out.push_back(m);
  }
  if (out.empty()) fail(ErrorCode::kInvalidArgument, "ablation list is empty");
  std::sort(out.begin(), out.end(),
            [](const AblationMask& a, const AblationMask& b) { return ablation_rank(a) < ablation_rank(b); });
  return out;
}

inline std::string format_mask_list(const std::vector<AblationMask>& masks) {
  std::string s;
  for (const auto& m : masks) s += (s.empty() ? "" : ";") + to_string(m);
  return s;
}

inline std::string run_directory_name(const AblationMask& m) {
  auto s = to_string(m);
  std::erase(s, ',');
  return s;
}

// ---------------------------------------------------------------------------
// Value parsing and formatting

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    fail(ErrorCode::kInvalidArgument, key + ": cannot parse '" + text + "'");
  }
  return v;
}

/// Shortest text that round-trips.
template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline bool parse_switch(const std::string& key, const std::string& text) {
  if (text == "on") return true;
  if (text == "off") return false;
  fail(ErrorCode::kInvalidArgument, key + ": expected on or off, got '" + text + "'");
}

inline std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const int k = parse_number<int>("eval.k", trim(item));
    if (k < 1) fail(ErrorCode::kInvalidArgument, "eval.k: K must be at least 1");
    if (std::find(ks.begin(), ks.end(), k) != ks.end()) {
      fail(ErrorCode::kInvalidArgument, "eval.k: K=" + std::to_string(k) + " listed twice");
    }
    ks.push_back(k);
  }
  if (ks.empty()) fail(ErrorCode::kInvalidArgument, "eval.k: need at least one K");
  return ks;
}

inline std::string format_k_list(const std::vector<int>& ks) {
  std::string s;
  for (int k : ks) s += (s.empty() ? "" : ",") + std::to_string(k);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Settings registry. Each entry owns one "section.key" of the config file and
// optionally one command-line flag.

struct Field {
  std::string key;
  std::string flag;
  std::string help;
  unsigned commands;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

namespace detail {

template <typename T, typename Access>
Field number_field(std::string key, std::string flag, std::string help, unsigned commands, Access access) {
  return {key, std::move(flag), std::move(help), commands,
          [access, key](Settings& s, const std::string& v) { access(s) = parse_number<T>(key, v); },
          [access](const Settings& s) { return format_number<T>(access(const_cast<Settings&>(s))); }};
}

template <typename Access>
Field string_field(std::string key, std::string flag, std::string help, unsigned commands, Access access) {
  return {key, std::move(flag), std::move(help), commands,
          [access](Settings& s, const std::string& v) { access(s) = v; },
          [access](const Settings& s) { return access(const_cast<Settings&>(s)); }};
}

template <typename Access>
Field switch_field(std::string key, std::string flag, std::string help, unsigned commands, Access access) {
  return {key, std::move(flag), std::move(help), commands,
          [access, key](Settings& s, const std::string& v) { access(s) = parse_switch(key, v); },
          [access](const Settings& s) { return std::string(access(const_cast<Settings&>(s)) ? "on" : "off"); }};
}

}  // namespace detail

inline const std::vector<Field>& fields() {
  using detail::number_field;
  using detail::string_field;
  using detail::switch_field;
  constexpr unsigned kModel = kTrain | kAblate;
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(string_field("data.dataset", "--dataset", "annotation file", kTrain | kEval | kAblate,
                             [](Settings& s) -> std::string& { return s.dataset; }));
    f.push_back(string_field("data.features", "--features", "feature file", kTrain | kEval | kAblate,
                             [](Settings& s) -> std::string& { return s.features; }));
    f.push_back(string_field("data.eval_dataset", "--eval-dataset",
                             "annotation file to evaluate on (default: --dataset)", kAblate,
                             [](Settings& s) -> std::string& { return s.eval_dataset; }));
    f.push_back(string_field("data.checkpoint", "--checkpoint", "model checkpoint", kEval,
                             [](Settings& s) -> std::string& { return s.checkpoint; }));
    f.push_back(string_field("report.before", "--before", "baseline eval.json", kReport,
                             [](Settings& s) -> std::string& { return s.before; }));
    f.push_back(string_field("report.after", "--after", "comparison eval.json", kReport,
                             [](Settings& s) -> std::string& { return s.after; }));
    f.push_back(number_field<std::uint64_t>("run.seed", "--seed", "random seed", kSynth | kTrain | kAblate,
                                            [](Settings& s) -> std::uint64_t& { return s.seed; }));

    f.push_back(number_field<int>("synth.images", "--images", "number of images", kSynth,
                                  [](Settings& s) -> int& { return s.synth.num_images; }));
    f.push_back({"synth.rules", "--rules", "spatial-2d, spatial-3d or mixed", kSynth,
                 [](Settings& s, const std::string& v) { s.synth.rules = parse_rule_set(v); },
                 [](const Settings& s) { return std::string(to_string(s.synth.rules)); }});
    f.push_back(number_field<double>("synth.noise", "--noise", "label flip probability", kSynth,
                                     [](Settings& s) -> double& { return s.synth.noise_level; }));
    f.push_back(number_field<double>("synth.train_fraction", "--train-fraction",
                                     "also write train.json/test.json with this share of images", kSynth,
                                     [](Settings& s) -> double& { return s.train_fraction; }));
    f.push_back(number_field<int>("synth.classes", "--classes", "object class count", kSynth,
                                  [](Settings& s) -> int& { return s.synth.num_object_classes; }));
    f.push_back(switch_field("synth.background_class", "--background-class", "prepend a background entry to c",
                             kSynth, [](Settings& s) -> bool& { return s.synth.background_class; }));
    f.push_back(number_field<int>("synth.rgb_dim", "--rgb-dim", "visual embedding width", kSynth,
                                  [](Settings& s) -> int& { return s.synth.rgb_dim; }));
    f.push_back(number_field<int>("synth.depth_dim", "--depth-dim", "depth embedding width", kSynth,
                                  [](Settings& s) -> int& { return s.synth.depth_dim; }));
    f.push_back(number_field<int>("synth.min_entities", "--min-entities", "entities per image, lower bound",
                                  kSynth, [](Settings& s) -> int& { return s.synth.min_entities; }));
    f.push_back(number_field<int>("synth.max_entities", "--max-entities", "entities per image, upper bound",
                                  kSynth, [](Settings& s) -> int& { return s.synth.max_entities; }));

    f.push_back(string_field("model.mask", "--mask", "feature sources, e.g. l,c,v,d", kTrain | kEval,
                             [](Settings& s) -> std::string& { return s.mask; }));
    for (Source src : kFusionOrder) {
      const std::string letter(1, source_letter(src));
      f.push_back(number_field<int>("model.width_" + letter, "--width-" + letter, "branch width", kModel,
                                    [src](Settings& s) -> int& { return s.model.width(src); }));
      f.push_back(number_field<double>("model.dropout_" + letter, "--dropout-" + letter, "branch dropout",
                                       kModel, [src](Settings& s) -> double& { return s.model.dropout(src); }));
    }
    f.push_back(number_field<int>("model.fusion_width", "--fusion-width", "fusion layer width", kModel,
                                  [](Settings& s) -> int& { return s.model.fusion_width; }));
    f.push_back(number_field<double>("model.fusion_dropout", "--fusion-dropout", "fusion dropout", kModel,
                                     [](Settings& s) -> double& { return s.model.fusion_dropout; }));

    f.push_back(number_field<double>("train.lr", "--lr", "Adam learning rate", kModel,
                                     [](Settings& s) -> double& { return s.train.adam.learning_rate; }));
    f.push_back(number_field<double>("train.beta1", "--beta1", "Adam beta1", kModel,
                                     [](Settings& s) -> double& { return s.train.adam.beta1; }));
    f.push_back(number_field<double>("train.beta2", "--beta2", "Adam beta2", kModel,
                                     [](Settings& s) -> double& { return s.train.adam.beta2; }));
    f.push_back(number_field<double>("train.epsilon", "--epsilon", "Adam epsilon", kModel,
                                     [](Settings& s) -> double& { return s.train.adam.epsilon; }));
    f.push_back(number_field<int>("train.batch_size", "--batch-size", "minibatch size", kModel,
                                  [](Settings& s) -> int& { return s.train.batch_size; }));
    f.push_back(number_field<int>("train.epochs", "--epochs", "training epochs", kModel,
                                  [](Settings& s) -> int& { return s.train.epochs; }));
    f.push_back(switch_field("train.shuffle", "--shuffle", "shuffle examples each epoch", kModel,
                             [](Settings& s) -> bool& { return s.train.shuffle; }));

    f.push_back({"eval.k", "--k", "comma-separated recall cutoffs", kEval | kAblate | kReport,
                 [](Settings& s, const std::string& v) { s.ks = detail::parse_k_list(v); },
                 [](const Settings& s) { return detail::format_k_list(s.ks); }});
    f.push_back(switch_field("eval.graph_constraint", "--graph-constraint", "one predicate per pair (on|off)",
                             kEval | kAblate, [](Settings& s) -> bool& { return s.graph_constraint; }));

    f.push_back(string_field("ablate.masks", "--masks", "';'-separated masks, or all", kAblate,
                             [](Settings& s) -> std::string& { return s.masks; }));
    f.push_back(number_field<int>("ablate.jobs", "--jobs", "parallel training runs", kAblate,
                                  [](Settings& s) -> int& { return s.jobs; }));
    return f;
  }();
  return all;
}

inline const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

/// Reads "[section]" headers and "key = value" lines; '#' and ';' start comments.
inline std::vector<std::pair<std::string, std::string>> parse_ini(std::string_view text,
                                                                  const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string section;
  std::istringstream is{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto line = detail::trim(raw);
    const auto where = origin + ":" + std::to_string(line_no);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorCode::kInvalidArgument, where + ": unterminated section header");
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kInvalidArgument, where + ": expected key = value");
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    const auto full = section.empty() ? key : section + "." + key;
    if (!find_field(full)) fail(ErrorCode::kInvalidArgument, where + ": unknown setting '" + full + "'");
    out.emplace_back(full, detail::trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

/// Canonical config text holding every setting relevant to `command`.
inline std::string to_ini(const Settings& s, Command command) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (!(f.commands & command)) continue;
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(s) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Shared helpers

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline void make_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create output directory '" + dir + "': " + ec.message());
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) fail(ErrorCode::kInvalidArgument, flag + " is required");
}

inline SceneDataset load_dataset(const std::string& path, std::ostream& err) {
  std::vector<std::string> warnings;
  try {
    auto ds = parse_annotations(binary::read_file(path), &warnings);
    for (const auto& w : warnings) err << "warning: " << path << ": " << w << "\n";
    return ds;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    fail(e.code(), path + ": " + e.what());
  }
}

inline FeatureStore load_features(const std::string& path) {
  try {
    return read_feature_file(path);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    fail(e.code(), path + ": " + e.what());
  }
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Commands

inline int cmd_synth(Settings& s, const std::string& out, std::ostream& os) {
  s.synth.seed = s.seed;
  check(s.synth);
  if (s.train_fraction != 0.0 && !(s.train_fraction > 0.0 && s.train_fraction < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "--train-fraction must lie in (0, 1), or 0 for no split");
  }
  make_directory(out);
  const auto gen = synth_generate(s.synth);
  std::vector<std::pair<std::string, std::string>> files = {
      {"dataset.json", serialize_annotations(gen.dataset)}, {"features.rfb", encode_features(gen.features)}};
  if (s.train_fraction > 0.0) {
    const auto [tr, te] = split_dataset(gen.dataset, s.train_fraction, s.seed);
    files.emplace_back("train.json", serialize_annotations(tr));
    files.emplace_back("test.json", serialize_annotations(te));
  }
  files.emplace_back("config.ini", to_ini(s, kSynth));

  std::size_t entities = 0;
  for (const auto& img : gen.dataset.images) entities += img.entities.size();
  os << "images " << gen.dataset.images.size() << ", entities " << entities << ", triples "
     << gen.dataset.num_triples() << ", predicates " << gen.dataset.num_predicates() << "\n";
  for (const auto& [name, bytes] : files) {
    binary::write_file(join_path(out, name), bytes);
    os << name << " fnv1a64 " << hex64(fnv1a64(bytes)) << "\n";
  }
  return kExitOk;
}

inline ModelConfig resolve_model_config(const Settings& s, const AblationMask& mask, const SceneDataset& ds,
                                        const FeatureStore& store) {
  auto mc = s.model;
  mc.mask = mask;
  mc.dims = store.dims();
  mc.num_predicates = ds.num_predicates();
  check(mc);
  return mc;
}

inline nlohmann::ordered_json train_report_json(const TrainReport& rep, const ModelConfig& mc,
                                                const Settings& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["mask"] = to_string(mc.mask);
  j["epochs"] = s.train.epochs;
  j["num_examples"] = rep.num_examples;
  j["steps"] = rep.steps;
  j["epoch_loss"] = rep.epoch_loss;
  j["train_loss"] = rep.train_loss;
  j["final_train_accuracy"] = rep.final_train_accuracy;
  return j;
}

struct TrainedRun {
  ErmlpEModel model;
  TrainReport report;
};

inline TrainedRun train_one(const Settings& s, const AblationMask& mask, const SceneDataset& ds,
                            const FeatureStore& store) {
  const auto mc = resolve_model_config(s, mask, ds, store);
  Rng rng(s.seed);
  auto model = build_model(mc, rng);
  auto tc = s.train;
  tc.seed = s.seed;
  auto report = train(model, ds, store, tc);
  return {std::move(model), std::move(report)};
}

inline int cmd_train(Settings& s, const std::string& out, std::ostream& os, std::ostream& err) {
  require_path(s.dataset, "--dataset");
  require_path(s.features, "--features");
  const auto mask = s.mask.empty() ? AblationMask::all() : parse_mask(s.mask);
  s.mask = to_string(mask);
  const auto ds = load_dataset(s.dataset, err);
  const auto store = load_features(s.features);
  make_directory(out);
  binary::write_file(join_path(out, "config.ini"), to_ini(s, kTrain));

  auto run = train_one(s, mask, ds, store);
  save_checkpoint(run.model, join_path(out, "model.rck"));
  binary::write_file(join_path(out, "train_report.json"), dump(train_report_json(run.report, run.model.config(), s)));
  os << "mask " << s.mask << ", examples " << run.report.num_examples << ", epochs " << s.train.epochs
     << ", final loss " << run.report.epoch_loss.back() << ", train accuracy "
     << format_percent(run.report.final_train_accuracy) << "%\n";
  err << "wall time " << run.report.wall_seconds << " s\n";
  return kExitOk;
}

inline void check_eval_inputs(const ErmlpEModel& model, const SceneDataset& ds, const FeatureStore& store) {
  const auto& mc = model.config();
  if (ds.num_predicates() != mc.num_predicates) {
    fail(ErrorCode::kDimMismatch, "dataset has " + std::to_string(ds.num_predicates()) +
                                      " predicates, checkpoint expects " + std::to_string(mc.num_predicates));
  }
  if ((mc.mask.use_c || mc.mask.use_v || mc.mask.use_d) && !(store.dims() == mc.dims)) {
    fail(ErrorCode::kDimMismatch,
         "feature dims " + to_string(store.dims()) + ", checkpoint expects " + to_string(mc.dims));
  }
}

inline RecallReport evaluate(ErmlpEModel& model, const SceneDataset& ds, const FeatureStore& store,
                             const std::vector<int>& ks, bool graph_constraint) {
  check_eval_inputs(model, ds, store);
  return compute_report(predict_dataset(model, ds, store, graph_constraint), ds, ks);
}

inline nlohmann::ordered_json eval_json(const RecallReport& rep, const SceneDataset& ds, bool graph_constraint) {
  auto j = report_to_json(rep, ds.predicate_names);
  j["graph_constraint"] = graph_constraint;
  return j;
}

inline int cmd_eval(Settings& s, const std::string& out, std::ostream& os, std::ostream& err) {
  require_path(s.checkpoint, "--checkpoint");
  require_path(s.dataset, "--dataset");
  require_path(s.features, "--features");
  auto model = load_checkpoint(s.checkpoint);
  if (!s.mask.empty() && !(parse_mask(s.mask) == model.mask())) {
    fail(ErrorCode::kMaskMismatch, "requested mask " + to_string(parse_mask(s.mask)) +
                                       " but checkpoint was trained with " + to_string(model.mask()));
  }
  s.mask = to_string(model.mask());
  const auto ds = load_dataset(s.dataset, err);
  const auto store = load_features(s.features);
  make_directory(out);
  binary::write_file(join_path(out, "config.ini"), to_ini(s, kEval));

  const auto on = evaluate(model, ds, store, s.ks, true);
  const auto off = evaluate(model, ds, store, s.ks, false);
  const auto& chosen = s.graph_constraint ? on : off;
  binary::write_file(join_path(out, "eval.json"), dump(eval_json(chosen, ds, s.graph_constraint)));
  const auto table = format_recall_table({{"constraint on", &on}, {"constraint off", &off}}, s.ks);
  binary::write_file(join_path(out, "eval.txt"), table);
  os << table;
  return kExitOk;
}

struct AblationRow {
  AblationMask mask;
  std::optional<RecallReport> report;
  std::string error;
  int exit_code = kExitOk;
};

inline int cmd_ablate(Settings& s, const std::string& out, std::ostream& os, std::ostream& err) {
  require_path(s.dataset, "--dataset");
  require_path(s.features, "--features");
  const auto masks = parse_mask_list(s.masks);
  s.masks = format_mask_list(masks);
  const auto ds = load_dataset(s.dataset, err);
  const auto eval_ds = s.eval_dataset.empty() ? ds : load_dataset(s.eval_dataset, err);
  const auto store = load_features(s.features);
  make_directory(out);
  binary::write_file(join_path(out, "config.ini"), to_ini(s, kAblate));

  make_directory(join_path(out, "runs"));

  std::vector<AblationRow> rows(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) rows[i].mask = masks[i];
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      auto& row = rows[i];
      try {
        const auto dir = join_path(join_path(out, "runs"), run_directory_name(row.mask));
        make_directory(dir);
        auto run = train_one(s, row.mask, ds, store);
        save_checkpoint(run.model, join_path(dir, "model.rck"));
        binary::write_file(join_path(dir, "train_report.json"),
                           dump(train_report_json(run.report, run.model.config(), s)));
        row.report = evaluate(run.model, eval_ds, store, s.ks, s.graph_constraint);
        binary::write_file(join_path(dir, "eval.json"), dump(eval_json(*row.report, eval_ds, s.graph_constraint)));
      } catch (const Error& e) {
        row.error = e.what();
        row.exit_code = exit_code_for(e.code());
      } catch (const std::exception& e) {
        row.error = e.what();
        row.exit_code = kExitInternal;
      }
    }
  };
  std::size_t jobs = s.jobs > 0 ? static_cast<std::size_t>(s.jobs)
                                : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, rows.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }

  int code = kExitOk;
  std::vector<std::pair<std::string, const RecallReport*>> table_rows;
  nlohmann::ordered_json j;
  j["k"] = s.ks;
  j["graph_constraint"] = s.graph_constraint;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    const auto label = to_string(row.mask);
    table_rows.emplace_back(label, row.report ? &*row.report : nullptr);
    nlohmann::ordered_json r;
    r["mask"] = label;
    if (row.report) {
      r["status"] = "ok";
      r["report"] = report_to_json(*row.report, eval_ds.predicate_names);
    } else {
      r["status"] = "failed";
      r["error"] = row.error;
      err << "error: run " << label << ": " << row.error << "\n";
      code = std::max(code, row.exit_code);
    }
    j["rows"].push_back(std::move(r));
  }
  const auto table = format_recall_table(table_rows, s.ks);
  binary::write_file(join_path(out, "ablation.txt"), table);
  binary::write_file(join_path(out, "ablation.json"), dump(j));
  os << table;
  return code;
}

inline int cmd_report(Settings& s, const std::string& out, std::ostream& os) {
  require_path(s.before, "--before");
  require_path(s.after, "--after");
  auto load = [](const std::string& path, std::map<int, std::string>& names) {
    try {
      return report_from_json(nlohmann::json::parse(binary::read_file(path)), &names);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, path + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kIo) throw;
      fail(e.code(), path + ": " + e.what());
    }
  };
  std::map<int, std::string> names_before, names_after;
  const auto before = load(s.before, names_before);
  const auto after = load(s.after, names_after);
  if (names_before != names_after) fail(ErrorCode::kValidation, "predicate vocabularies differ");
  for (int k : s.ks) {
    if (!before.per_predicate.contains(k) || !after.per_predicate.contains(k)) {
      fail(ErrorCode::kValidation, "R@" + std::to_string(k) + " missing from an input report");
    }
  }
  make_directory(out);
  binary::write_file(join_path(out, "config.ini"), to_ini(s, kReport));

  nlohmann::ordered_json j;
  j["k"] = s.ks;
  j["deltas"] = nlohmann::ordered_json::object();
  std::ostringstream text;
  for (int k : s.ks) {
    const auto rows = delta_report(before.per_predicate.at(k), after.per_predicate.at(k));
    auto& arr = j["deltas"][std::to_string(k)] = nlohmann::ordered_json::array();
    text << "R@" << k << "\n" << std::left << std::setw(24) << "predicate" << std::right << std::setw(10)
         << "delta" << std::setw(10) << "support" << "\n";
    for (const auto& r : rows) {
      arr.push_back({{"id", r.predicate_id}, {"name", names_after.at(r.predicate_id)}, {"delta", r.delta},
                     {"support", r.support}});
      text << std::left << std::setw(24) << names_after.at(r.predicate_id) << std::right << std::setw(10)
           << format_percent(r.delta) << std::setw(10) << r.support << "\n";
    }
    if (rows.empty()) text << "(no changes)\n";
    text << "\n";
  }
  binary::write_file(join_path(out, "delta.json"), dump(j));
  binary::write_file(join_path(out, "delta.txt"), text.str());
  os << text.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(const std::vector<std::string>& args, std::ostream& os = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Visual relation prediction: synthesis, training, evaluation and ablation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  struct CommandEntry {
    Command command = kSynth;
    const char* name = nullptr;
    const char* help = nullptr;
    CLI::App* app = nullptr;
    std::string out;
    std::string config;
    std::map<std::string, std::string> raw;
    std::vector<std::pair<const Field*, CLI::Option*>> options;
  };
  const std::tuple<Command, const char*, const char*> commands[] = {
      {kSynth, "synth", "Generate a synthetic dataset and feature file"},
      {kTrain, "train", "Train a model and write a checkpoint"},
      {kEval, "eval", "Evaluate a checkpoint"},
      {kAblate, "ablate", "Train and evaluate one model per feature mask"},
      {kReport, "report", "Per-predicate recall change between two evaluations"},
  };
  std::vector<CommandEntry> entries(std::size(commands));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::tie(entries[i].command, entries[i].name, entries[i].help) = commands[i];
  }
  for (auto& entry : entries) {
    entry.app = app.add_subcommand(entry.name, entry.help);
    entry.app->add_option("--out", entry.out, "output directory")->required();
    entry.app->add_option("--config", entry.config, "settings file ([section] key = value)");
    for (const auto& f : fields()) {
      if (!(f.commands & entry.command) || f.flag.empty()) continue;
      auto* opt = entry.app->add_option(f.flag, entry.raw[f.key], f.help);
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      entry.options.emplace_back(&f, opt);
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, os, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto& entry = *std::find_if(entries.begin(), entries.end(), [](const CommandEntry& c) { return c.app->parsed(); });
  try {
    Settings s;
    if (!entry.config.empty()) {
      for (const auto& [key, value] : parse_ini(binary::read_file(entry.config), entry.config)) {
        find_field(key)->set(s, value);
      }
    }
    for (const auto& [field, opt] : entry.options) {
      if (opt->count() > 0) field->set(s, entry.raw.at(field->key));
    }
    switch (entry.command) {
      case kSynth: return cmd_synth(s, entry.out, os);
      case kTrain: return cmd_train(s, entry.out, os, err);
      case kEval: return cmd_eval(s, entry.out, os, err);
      case kAblate: return cmd_ablate(s, entry.out, os, err);
      case kReport: return cmd_report(s, entry.out, os);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace relgraph::cli

#pragma once

// Per-entity feature vectors, the binary "RFB1" feature file, pairwise
// location features, and assembly of the model's pair inputs.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "relgraph/binary_io.hpp"
#include "relgraph/error.hpp"
#include "relgraph/scene.hpp"

namespace relgraph {

inline constexpr int kDefaultRgbDim = 4096;
inline constexpr int kDefaultDepthDim = 512;

struct FeatureDims {
  std::uint32_t c = kDefaultObjectClasses;
  std::uint32_t v = kDefaultRgbDim;
  std::uint32_t d = kDefaultDepthDim;

  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

inline std::string to_string(const FeatureDims& dims) {
  return "(C=" + std::to_string(dims.c) + ", V=" + std::to_string(dims.v) +
         ", D=" + std::to_string(dims.d) + ")";
}

/// Feature sources; bit order is the fusion order [v; l; c; d].
enum class Source : int { kV = 0, kL = 1, kC = 2, kD = 3 };
inline constexpr std::array<Source, 4> kFusionOrder = {Source::kV, Source::kL, Source::kC, Source::kD};

inline char source_letter(Source s) {
  constexpr char letters[] = {'v', 'l', 'c', 'd'};
  return letters[static_cast<int>(s)];
}

struct AblationMask {
  bool use_l = false;
  bool use_c = false;
  bool use_v = false;
  bool use_d = false;

  static AblationMask all() { return {true, true, true, true}; }

  bool uses(Source s) const {
    switch (s) {
      case Source::kV: return use_v;
      case Source::kL: return use_l;
      case Source::kC: return use_c;
      case Source::kD: return use_d;
    }
    return false;
  }
  int count() const { return int(use_l) + int(use_c) + int(use_v) + int(use_d); }
  bool empty() const { return count() == 0; }

  // Bits ordered l, c, v, d.
  int bits() const { return int(use_l) | int(use_c) << 1 | int(use_v) << 2 | int(use_d) << 3; }

  friend bool operator==(const AblationMask&, const AblationMask&) = default;
};

/// Canonical label, e.g. "l,c,v,d" or "v,d".
inline std::string to_string(const AblationMask& m) {
  std::string out;
  auto add = [&](bool on, char c) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += c;
  };
  add(m.use_l, 'l');
  add(m.use_c, 'c');
  add(m.use_v, 'v');
  add(m.use_d, 'd');
  return out;
}

inline AblationMask parse_mask(std::string_view text) {
  AblationMask m;
  for (char ch : text) {
    switch (ch) {
      case 'l': m.use_l = true; break;
      case 'c': m.use_c = true; break;
      case 'v': m.use_v = true; break;
      case 'd': m.use_d = true; break;
      case ',': case ' ': case '+': break;
      default:
        fail(ErrorCode::kInvalidArgument, "unknown feature source '" + std::string(1, ch) +
                                              "' in mask '" + std::string(text) + "'");
    }
  }
  if (m.empty()) fail(ErrorCode::kInvalidArgument, "mask must enable at least one source");
  return m;
}

struct FeatureRecord {
  std::int64_t image_id = 0;
  std::int64_t entity_id = 0;
  std::vector<float> c;
  std::vector<float> v;
  std::vector<float> d;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

/// Feature vectors keyed by (image, entity). Values are held at the on-disk
/// 32-bit precision and widened when pair inputs are assembled.
class FeatureStore {
 public:
  using Key = std::pair<std::int64_t, std::int64_t>;

  FeatureStore() = default;
  explicit FeatureStore(FeatureDims dims) : dims_(dims) {}

  const FeatureDims& dims() const { return dims_; }
  std::size_t size() const { return records_.size(); }
  const std::map<Key, FeatureRecord>& records() const { return records_; }

  void insert(FeatureRecord rec) {
    check(rec);
    Key key{rec.image_id, rec.entity_id};
    records_.insert_or_assign(key, std::move(rec));
  }

  const FeatureRecord* find(std::int64_t image_id, std::int64_t entity_id) const {
    auto it = records_.find({image_id, entity_id});
    return it == records_.end() ? nullptr : &it->second;
  }

  const FeatureRecord& at(std::int64_t image_id, std::int64_t entity_id) const {
    const auto* rec = find(image_id, entity_id);
    if (!rec) {
      fail(ErrorCode::kLookup, "no feature record for (image " + std::to_string(image_id) +
                                   ", entity " + std::to_string(entity_id) + ")");
    }
    return *rec;
  }

  friend bool operator==(const FeatureStore&, const FeatureStore&) = default;

 private:
  void check(const FeatureRecord& rec) const {
    const std::string who = "record (image " + std::to_string(rec.image_id) + ", entity " +
                            std::to_string(rec.entity_id) + ")";
    if (rec.c.size() != dims_.c || rec.v.size() != dims_.v || rec.d.size() != dims_.d) {
      fail(ErrorCode::kDimMismatch, who + " has dims (" + std::to_string(rec.c.size()) + ", " +
                                        std::to_string(rec.v.size()) + ", " +
                                        std::to_string(rec.d.size()) + "), store expects " +
                                        to_string(dims_));
    }
    auto finite = [](const std::vector<float>& xs) {
      for (float x : xs) {
        if (!std::isfinite(x)) return false;
      }
      return true;
    };
    if (!finite(rec.c) || !finite(rec.v) || !finite(rec.d)) {
      fail(ErrorCode::kValidation, who + " contains a non-finite value");
    }
    for (float x : rec.c) {
      if (x < 0.0f) fail(ErrorCode::kValidation, who + " has a negative class probability");
    }
  }

  FeatureDims dims_;
  std::map<Key, FeatureRecord> records_;
};

/// Fails with a lookup error naming the first entity lacking features.
inline void check_coverage(const FeatureStore& store, const SceneDataset& ds) {
  for (const auto& img : ds.images) {
    for (const auto& e : img.entities) (void)store.at(img.image_id, e.entity_id);
  }
}

// ---------------------------------------------------------------------------
// RFB1 file format

inline constexpr std::string_view kFeatureMagic = "RFB1";
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 28;

inline std::string encode_features(const FeatureStore& store) {
  binary::Writer w;
  w.bytes(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(store.dims().c);
  w.u32(store.dims().v);
  w.u32(store.dims().d);
  w.u64(store.size());
  for (const auto& [key, rec] : store.records()) {
    w.u64(static_cast<std::uint64_t>(rec.image_id));
    w.u64(static_cast<std::uint64_t>(rec.entity_id));
    for (float x : rec.c) w.f32(x);
    for (float x : rec.v) w.f32(x);
    for (float x : rec.d) w.f32(x);
  }
  return w.release();
}

inline FeatureStore decode_features(std::string_view bytes) {
  binary::Reader r(bytes);
  if (bytes.size() < kFeatureMagic.size() || r.bytes(4, "magic") != kFeatureMagic) {
    fail(ErrorCode::kMagicMismatch, "not an RFB1 feature file");
  }
  const auto version = r.u32("version");
  if (version != kFeatureVersion) {
    fail(ErrorCode::kVersionMismatch, "feature file version " + std::to_string(version) +
                                          ", expected " + std::to_string(kFeatureVersion));
  }
  FeatureDims dims;
  dims.c = r.u32("C");
  dims.v = r.u32("V");
  dims.d = r.u32("D");
  const auto count = r.u64("record count");
  const std::uint64_t record_bytes = 16 + 4ull * (std::uint64_t(dims.c) + dims.v + dims.d);
  const std::uint64_t payload = r.remaining();
  if (count != 0 && payload / count < record_bytes) {
    fail(ErrorCode::kTruncated, "payload of " + std::to_string(payload) + " bytes cannot hold " +
                                    std::to_string(count) + " records of " +
                                    std::to_string(record_bytes) + " bytes");
  }
  if (payload != count * record_bytes) {
    fail(ErrorCode::kDimMismatch, "payload of " + std::to_string(payload) +
                                      " bytes disagrees with header dims " + to_string(dims) +
                                      " and " + std::to_string(count) + " records");
  }
  FeatureStore store(dims);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord rec;
    rec.image_id = static_cast<std::int64_t>(r.u64("image id"));
    rec.entity_id = static_cast<std::int64_t>(r.u64("entity id"));
    rec.c.resize(dims.c);
    rec.v.resize(dims.v);
    rec.d.resize(dims.d);
    for (auto& x : rec.c) x = r.f32("c");
    for (auto& x : rec.v) x = r.f32("v");
    for (auto& x : rec.d) x = r.f32("d");
    if (store.find(rec.image_id, rec.entity_id)) {
      fail(ErrorCode::kValidation, "duplicate record (image " + std::to_string(rec.image_id) +
                                       ", entity " + std::to_string(rec.entity_id) + ")");
    }
    store.insert(std::move(rec));
  }
  return store;
}

inline void write_feature_file(const FeatureStore& store, const std::string& path) {
  binary::write_file(path, encode_features(store));
}

inline FeatureStore read_feature_file(const std::string& path) {
  return decode_features(binary::read_file(path));
}

// ---------------------------------------------------------------------------
// Pair features

/// Scale-invariant offset of the subject box relative to the object box:
/// [(xs-xo)/wo, (ys-yo)/ho, ln(ws/wo), ln(hs/ho)].
inline std::array<double, 4> location_features(const BoundingBox& s, const BoundingBox& o) {
  if (!(s.w > 0.0 && s.h > 0.0 && o.w > 0.0 && o.h > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "location features need boxes with positive extent");
  }
  return {(s.x - o.x) / o.w, (s.y - o.y) / o.h, std::log(s.w / o.w), std::log(s.h / o.h)};
}

/// Concatenated subject/object inputs for one ordered pair. Sources outside
/// the mask are left empty.
struct PairInput {
  std::vector<double> l_pair;
  std::vector<double> c_pair;
  std::vector<double> v_pair;
  std::vector<double> d_pair;
  AblationMask mask;

  const std::vector<double>& source(Source s) const {
    switch (s) {
      case Source::kV: return v_pair;
      case Source::kL: return l_pair;
      case Source::kC: return c_pair;
      case Source::kD: return d_pair;
    }
    return l_pair;
  }
};

inline PairInput assemble_pair(const FeatureStore& store, const SceneImage& image,
                               std::int64_t subject_id, std::int64_t object_id,
                               const AblationMask& mask) {
  const Entity* s = image.find_entity(subject_id);
  const Entity* o = image.find_entity(object_id);
  if (!s || !o) {
    fail(ErrorCode::kLookup, "image " + std::to_string(image.image_id) + " has no entity " +
                                 std::to_string(s ? object_id : subject_id));
  }
  PairInput in;
  in.mask = mask;
  if (mask.use_l) {
    const auto ls = location_features(s->box, o->box);
    const auto lo = location_features(o->box, s->box);
    in.l_pair.assign(ls.begin(), ls.end());
    in.l_pair.insert(in.l_pair.end(), lo.begin(), lo.end());
  }
  if (!mask.use_c && !mask.use_v && !mask.use_d) return in;
  const auto& fs = store.at(image.image_id, subject_id);
  const auto& fo = store.at(image.image_id, object_id);
  auto concat = [](const std::vector<float>& a, const std::vector<float>& b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  if (mask.use_c) in.c_pair = concat(fs.c, fo.c);
  if (mask.use_v) in.v_pair = concat(fs.v, fo.v);
  if (mask.use_d) in.d_pair = concat(fs.d, fo.d);
  return in;
}

}  // namespace relgraph

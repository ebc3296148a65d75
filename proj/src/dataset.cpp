#include "alood/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include <json.hpp>

#include "alood/error.hpp"
#include "binary_io.hpp"

namespace alood {

namespace {

constexpr char kDatasetMagic[4] = {'A', 'L', 'D', 'S'};

constexpr std::uint8_t kFlagOod = 1;
constexpr std::uint8_t kFlagGroundTruth = 2;

void check_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw DataError(what + " contains non-finite values");
  }
}

}  // namespace

std::string to_string(DatasetMode mode) {
  return mode == DatasetMode::kFeatureMaps ? "feature-maps" : "per-object-features";
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "val"; }

DatasetMode dataset_mode_from_string(const std::string& s) {
  if (s == "feature-maps") return DatasetMode::kFeatureMaps;
  if (s == "per-object-features") return DatasetMode::kObjectFeatures;
  throw ConfigError("unknown dataset mode '" + s + "'");
}

void DatasetHeader::validate() const {
  if (version != kDatasetVersion) {
    throw DataError("unsupported dataset version " + std::to_string(version));
  }
  if (channels < 1) throw DataError("dataset channel count must be positive");
  if (classes.empty()) throw DataError("dataset declares no classes");
  if (mode == DatasetMode::kFeatureMaps && !grid) {
    throw DataError("feature-maps dataset needs a grid");
  }
  if (grid) grid->validate();
}

std::string header_to_json(const DatasetHeader& h) {
  nlohmann::json j;
  j["format_version"] = h.version;
  j["mode"] = to_string(h.mode);
  j["channels"] = h.channels;
  j["embed_dim"] = h.embed_dim;
  j["classes"] = h.classes;
  if (h.grid) {
    j["grid"] = {{"x_min", h.grid->x_min},   {"y_min", h.grid->y_min},
                 {"cell_size", h.grid->cell_size}, {"height", h.grid->height},
                 {"width", h.grid->width}};
  } else {
    j["grid"] = nullptr;
  }
  j["split"] = to_string(h.split);
  j["scene_count"] = h.scene_count;
  j["id_objects"] = h.id_objects;
  j["ood_objects"] = h.ood_objects;
  return j.dump(2);
}

DatasetHeader header_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetHeader h;
    h.version = j.at("format_version").get<std::uint32_t>();
    h.mode = dataset_mode_from_string(j.at("mode").get<std::string>());
    h.channels = j.at("channels").get<std::size_t>();
    h.embed_dim = j.at("embed_dim").get<std::size_t>();
    h.classes = j.at("classes").get<std::vector<std::string>>();
    if (!j.at("grid").is_null()) {
      const auto& g = j.at("grid");
      h.grid = GridMeta{g.at("x_min").get<double>(), g.at("y_min").get<double>(),
                        g.at("cell_size").get<double>(), g.at("height").get<std::size_t>(),
                        g.at("width").get<std::size_t>()};
    }
    const auto split = j.at("split").get<std::string>();
    if (split != "train" && split != "val") throw DataError("unknown split '" + split + "'");
    h.split = split == "train" ? Split::kTrain : Split::kVal;
    h.scene_count = j.at("scene_count").get<std::size_t>();
    h.id_objects = j.at("id_objects").get<std::size_t>();
    h.ood_objects = j.at("ood_objects").get<std::size_t>();
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset header: ") + e.what());
  }
}

std::optional<std::size_t> class_index(const DatasetHeader& header, const std::string& label) {
  for (std::size_t k = 0; k < header.classes.size(); ++k) {
    if (header.classes[k] == label) return k;
  }
  return std::nullopt;
}

void validate_scene(const DatasetHeader& h, const SceneRecord& scene) {
  const std::string where = "scene " + std::to_string(scene.id);
  const std::size_t c = h.channels;
  if (h.mode == DatasetMode::kFeatureMaps) {
    if (!scene.map) throw DataError(where + ": feature-maps dataset scene has no map");
    if (scene.map->shape() != Shape{c, h.grid->height, h.grid->width}) {
      throw DataError(where + ": map shape " + shape_to_string(scene.map->shape()) +
                      " does not match header");
    }
    if (scene.scene_feature) {
      throw DataError(where + ": feature-maps scenes derive the scene feature from the map");
    }
    check_finite(*scene.map, where + " map");
  } else {
    if (scene.map) throw DataError(where + ": per-object dataset scene carries a map");
    if (!scene.scene_feature || scene.scene_feature->shape() != Shape{c}) {
      throw DataError(where + ": missing or mis-shaped scene feature");
    }
    check_finite(*scene.scene_feature, where + " scene feature");
  }

  for (const auto& obj : scene.objects) {
    const std::string what = where + " object " + std::to_string(obj.id);
    if (obj.split != h.split) throw DataError(what + ": split differs from file split");
    if (h.split == Split::kTrain) {
      if (obj.is_ood) throw DataError(what + ": train split contains an OOD object");
      if (!obj.is_ground_truth) throw DataError(what + ": train objects must be ground truth");
    }
    const bool known = class_index(h, obj.label).has_value();
    if (!obj.is_ood && !known) {
      throw DataError(what + ": label '" + obj.label + "' is not a declared class");
    }
    if (obj.is_ood && known) {
      throw DataError(what + ": OOD object uses ID class label '" + obj.label + "'");
    }
    if (!(obj.box.l > 0.0 && obj.box.w > 0.0 && obj.box.h > 0.0)) {
      throw DataError(what + ": box extents must be positive");
    }
    if (!(obj.box.theta > -std::numbers::pi && obj.box.theta <= std::numbers::pi)) {
      throw DataError(what + ": orientation outside (-pi, pi]");
    }
    if (obj.feature) {
      if (obj.feature->shape() != Shape{c}) {
        throw DataError(what + ": feature shape " + shape_to_string(obj.feature->shape()));
      }
      check_finite(*obj.feature, what + " feature");
      if (scene.map) {
        const Tensor pooled = center_pool(*scene.map, obj.box, *h.grid);
        for (std::size_t ch = 0; ch < c; ++ch) {
          if (std::abs(pooled[ch] - (*obj.feature)[ch]) > 1e-9) {
            throw DataError(what + ": stored feature disagrees with the map at its center");
          }
        }
      }
    } else if (h.mode == DatasetMode::kObjectFeatures) {
      throw DataError(what + ": per-object dataset object has no feature");
    }
  }
}

namespace {

void write_tensor(detail::ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f64s(t.data().data(), t.size());
}

Tensor read_tensor(detail::BinaryReader& r, const char* what) {
  const auto rank = r.u32(what);
  if (rank == 0 || rank > 4) r.fail(std::string("bad rank for ") + what);
  Shape shape(rank);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = r.u32(what);
    if (d == 0) r.fail(std::string("zero dimension in ") + what);
    numel *= d;
  }
  if (numel > (std::size_t{1} << 30)) r.fail(std::string("implausible size for ") + what);
  std::vector<double> data(numel);
  r.f64s(data.data(), numel, what);
  return Tensor(std::move(shape), std::move(data));
}

std::string encode_scene(const SceneRecord& scene) {
  detail::ByteWriter w;
  w.u64(scene.id);
  w.u8(scene.map ? 1 : 0);
  if (scene.map) write_tensor(w, *scene.map);
  w.u8(scene.scene_feature ? 1 : 0);
  if (scene.scene_feature) write_tensor(w, *scene.scene_feature);
  w.u32(static_cast<std::uint32_t>(scene.objects.size()));
  for (const auto& o : scene.objects) {
    w.u64(o.id);
    w.u8(o.feature ? 1 : 0);
    if (o.feature) write_tensor(w, *o.feature);
    const auto box = o.box.as_vector();
    w.f64s(box.data(), box.size());
    w.str(o.label);
    w.u8(static_cast<std::uint8_t>((o.is_ood ? kFlagOod : 0) |
                                   (o.is_ground_truth ? kFlagGroundTruth : 0)));
    w.u8(o.split == Split::kTrain ? 0 : 1);
  }
  return w.buffer();
}

SceneRecord decode_scene(detail::BinaryReader& r) {
  SceneRecord s;
  s.id = r.u64("scene id");
  const auto has_map = r.u8("map flag");
  if (has_map > 1) r.fail("bad map flag");
  if (has_map) s.map = read_tensor(r, "feature map");
  const auto has_scene = r.u8("scene feature flag");
  if (has_scene > 1) r.fail("bad scene feature flag");
  if (has_scene) s.scene_feature = read_tensor(r, "scene feature");
  const auto n = r.u32("object count");
  if (n > (1u << 24)) r.fail("implausible object count");
  s.objects.resize(n);
  for (auto& o : s.objects) {
    o.id = r.u64("object id");
    const auto has_feature = r.u8("feature flag");
    if (has_feature > 1) r.fail("bad feature flag");
    if (has_feature) o.feature = read_tensor(r, "object feature");
    double box[7];
    r.f64s(box, 7, "box");
    o.box = Box7{box[0], box[1], box[2], box[3], box[4], box[5], box[6]};
    if (!(o.box.l > 0.0 && o.box.w > 0.0 && o.box.h > 0.0)) r.fail("non-positive box extent");
    o.box = o.box.canonical();
    o.label = r.str("label", 4096);
    const auto flags = r.u8("object flags");
    if (flags & ~(kFlagOod | kFlagGroundTruth)) r.fail("unknown object flags");
    o.is_ood = flags & kFlagOod;
    o.is_ground_truth = flags & kFlagGroundTruth;
    const auto split = r.u8("split");
    if (split > 1) r.fail("bad split tag");
    o.split = split == 0 ? Split::kTrain : Split::kVal;
  }
  return s;
}

}  // namespace

void write_dataset(const std::string& path, DatasetHeader header,
                   const std::vector<SceneRecord>& scenes) {
  header.scene_count = scenes.size();
  header.id_objects = header.ood_objects = 0;
  for (const auto& s : scenes) {
    for (const auto& o : s.objects) ++(o.is_ood ? header.ood_objects : header.id_objects);
  }
  header.validate();
  for (const auto& s : scenes) validate_scene(header, s);

  const std::string header_json = header_to_json(header);
  detail::ByteWriter w;
  w.bytes(kDatasetMagic, 4);
  w.u32(header.version);
  w.str(header_json);
  for (const auto& s : scenes) {
    const std::string section = encode_scene(s);
    w.u64(section.size());
    w.bytes(section.data(), section.size());
  }
  w.save(path);

  detail::ByteWriter sidecar;
  sidecar.bytes(header_json.data(), header_json.size());
  sidecar.bytes("\n", 1);
  sidecar.save(path + ".json");
}

struct DatasetReader::Impl {
  explicit Impl(const std::string& path) : reader(path) {}
  detail::BinaryReader reader;
  std::size_t remaining = 0;
  std::size_t index = 0;
};

DatasetReader::DatasetReader(const std::string& path)
    : impl_(std::make_unique<Impl>(path)) {
  auto& r = impl_->reader;
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) r.fail("bad dataset magic");
  const auto version = r.u32("version");
  if (version != kDatasetVersion) r.fail("unsupported dataset version " + std::to_string(version));
  try {
    header_ = header_from_json(r.str("header"));
    header_.validate();
  } catch (const DataError& e) {
    r.fail(e.what());
  }
  if (header_.version != version) r.fail("header version disagrees with container version");
  impl_->remaining = header_.scene_count;
}

DatasetReader::~DatasetReader() = default;
DatasetReader::DatasetReader(DatasetReader&&) noexcept = default;
DatasetReader& DatasetReader::operator=(DatasetReader&&) noexcept = default;

std::optional<SceneRecord> DatasetReader::next() {
  auto& r = impl_->reader;
  if (impl_->remaining == 0) {
    if (!r.at_end()) r.fail("trailing bytes after last scene");
    return std::nullopt;
  }
  const auto start = r.offset();
  const auto length = r.u64("scene section length");
  SceneRecord scene = decode_scene(r);
  if (r.offset() - start - 8 != length) r.fail("scene section length mismatch");
  try {
    validate_scene(header_, scene);
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + " (section at byte offset " +
                    std::to_string(start) + ")");
  }
  --impl_->remaining;
  ++impl_->index;
  return scene;
}

Dataset read_dataset(const std::string& path) {
  DatasetReader reader(path);
  Dataset ds{reader.header(), {}};
  std::size_t id = 0, ood = 0;
  while (auto scene = reader.next()) {
    for (const auto& o : scene->objects) ++(o.is_ood ? ood : id);
    ds.scenes.push_back(std::move(*scene));
  }
  if (id != ds.header.id_objects || ood != ds.header.ood_objects) {
    throw DataError(path + ": object counts disagree with header");
  }
  return ds;
}

SceneFeatures scene_features(const DatasetHeader& header, const SceneRecord& scene) {
  if (scene.objects.empty()) {
    throw DataError("scene " + std::to_string(scene.id) + " has no objects");
  }
  SceneFeatures f;
  if (header.mode == DatasetMode::kFeatureMaps) {
    f.map = scene.map;
    f.grid = header.grid;
    return f;
  }
  return precomputed_features(header, scene);
}

SceneFeatures precomputed_features(const DatasetHeader& header, const SceneRecord& scene) {
  if (scene.objects.empty()) {
    throw DataError("scene " + std::to_string(scene.id) + " has no objects");
  }
  const std::size_t c = header.channels;
  Tensor feats({scene.objects.size(), c});
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& fi = scene.objects[i].feature;
    if (!fi) {
      throw DataError("scene " + std::to_string(scene.id) + " object " +
                      std::to_string(scene.objects[i].id) + " has no stored feature");
    }
    for (std::size_t ch = 0; ch < c; ++ch) feats.at(i, ch) = (*fi)[ch];
  }
  SceneFeatures f;
  f.object_features = std::move(feats);
  if (scene.scene_feature) {
    f.scene_feature = scene.scene_feature;
  } else if (scene.map) {
    const Tensor& m = *scene.map;
    const std::size_t cells = m.dim(1) * m.dim(2);
    Tensor s({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto plane = m.data().subspan(ch * cells, cells);
      s[ch] = *std::max_element(plane.begin(), plane.end());
    }
    f.scene_feature = std::move(s);
  }
  return f;
}

std::vector<Box7> scene_boxes(const SceneRecord& scene) {
  std::vector<Box7> boxes;
  boxes.reserve(scene.objects.size());
  for (const auto& o : scene.objects) boxes.push_back(o.box);
  return boxes;
}

}  // namespace alood

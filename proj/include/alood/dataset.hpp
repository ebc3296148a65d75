#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "alood/model.hpp"
#include "alood/tensor.hpp"

namespace alood {

enum class DatasetMode { kObjectFeatures, kFeatureMaps };
enum class Split { kTrain, kVal };

std::string to_string(DatasetMode mode);
std::string to_string(Split split);
DatasetMode dataset_mode_from_string(const std::string& s);

struct ObjectRecord {
  std::uint64_t id = 0;
  std::optional<Tensor> feature;  // precomputed f_j [C]
  Box7 box;
  std::string label;  // ID class name, or an opaque OOD tag
  bool is_ood = false;
  bool is_ground_truth = true;
  Split split = Split::kTrain;

  friend bool operator==(const ObjectRecord&, const ObjectRecord&) = default;
};

struct SceneRecord {
  std::uint64_t id = 0;
  std::optional<Tensor> map;            // [C x H x W]
  std::optional<Tensor> scene_feature;  // [C]
  std::vector<ObjectRecord> objects;

  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetHeader {
  std::uint32_t version = kDatasetVersion;
  DatasetMode mode = DatasetMode::kObjectFeatures;
  std::size_t channels = 0;   // C
  std::size_t embed_dim = 0;  // D
  std::vector<std::string> classes;
  std::optional<GridMeta> grid;
  Split split = Split::kTrain;
  std::size_t scene_count = 0;
  std::size_t id_objects = 0;
  std::size_t ood_objects = 0;

  void validate() const;
  std::size_t num_classes() const { return classes.size(); }
};

std::string header_to_json(const DatasetHeader& header);
DatasetHeader header_from_json(const std::string& text);

/// Checks one scene against the header: fields demanded by the mode,
/// dimensions, labels, split rules, and map/feature consistency.
void validate_scene(const DatasetHeader& header, const SceneRecord& scene);

/// "ALDS" container: magic, u32 version, u32 header length + header JSON,
/// then one length-prefixed section per scene. Also writes `<path>.json`
/// with the same header. Counts in the header are recomputed from `scenes`.
void write_dataset(const std::string& path, DatasetHeader header,
                   const std::vector<SceneRecord>& scenes);

/// Streaming reader; validates every scene as it is read.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);
  ~DatasetReader();
  DatasetReader(DatasetReader&&) noexcept;
  DatasetReader& operator=(DatasetReader&&) noexcept;

  const DatasetHeader& header() const { return header_; }
  /// Next scene in file order, or nullopt after the last one.
  std::optional<SceneRecord> next();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  DatasetHeader header_;
};

struct Dataset {
  DatasetHeader header;
  std::vector<SceneRecord> scenes;
};

Dataset read_dataset(const std::string& path);

/// Inputs for forward_scene according to the header mode.
SceneFeatures scene_features(const DatasetHeader& header, const SceneRecord& scene);
/// Precomputed-mode inputs from any scene: stored object features, and the
/// stored scene feature or, for map scenes, the channel max of the raw map.
/// Throws DataError if an object has no stored feature.
SceneFeatures precomputed_features(const DatasetHeader& header, const SceneRecord& scene);
std::vector<Box7> scene_boxes(const SceneRecord& scene);

/// Index of `label` in the header classes, or nullopt.
std::optional<std::size_t> class_index(const DatasetHeader& header, const std::string& label);

}  // namespace alood

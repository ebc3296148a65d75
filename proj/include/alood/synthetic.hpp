#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alood/dataset.hpp"
#include "alood/tensor.hpp"

namespace alood {

/// Per-class box size distribution (Gaussian per extent, truncated at a
/// small positive floor).
struct BoxDistribution {
  double l_mean = 4.0, w_mean = 1.8, h_mean = 1.6;
  double rel_std = 0.1;  // std as a fraction of the mean
};

/// Seeded Gaussian-mixture benchmark standing in for a real detection set.
/// Every object is a point around its class center; OOD objects come from
/// separate clusters that keep `margin_degrees` away from every ID center.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t num_classes = 5;  // K
  std::size_t n_train = 2000;
  std::size_t n_val_id = 500;
  std::size_t n_val_ood = 500;
  std::size_t channels = 32;    // C
  std::size_t embed_dim = 64;   // D
  double margin_degrees = 60.0;
  double sigma = 0.3;
  double center_norm = 6.0;
  double ood_norm_scale = 0.7;  // OOD center norm relative to ID centers
  std::size_t ood_clusters = 3;
  std::size_t objects_per_scene = 8;
  DatasetMode mode = DatasetMode::kFeatureMaps;
  GridMeta grid{-4.0, -4.0, 1.0, 8, 8};
  double background_noise = 0.1;     // map cells without an object
  double scene_feature_noise = 0.1;  // added to the per-scene max
  std::size_t max_center_attempts = 20000;

  void validate() const;
};

struct SyntheticData {
  Dataset train;
  Dataset val;
  Tensor id_centers;   // [K x C]
  Tensor ood_centers;  // [ood_clusters x C]
  std::vector<BoxDistribution> id_boxes;
  std::vector<BoxDistribution> ood_boxes;
};

std::string synthetic_class_name(std::size_t k);

/// Builds both splits in memory. Throws ConfigError("cannot place centers
/// ...") when the margin cannot be met.
SyntheticData synthesize(const SyntheticSpec& spec);

/// Writes `train.alds`, `val.alds` (each with a JSON sidecar) and
/// `classes.txt` into `out_dir`, creating it if needed.
SyntheticData generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace alood

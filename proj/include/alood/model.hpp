#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "alood/ops.hpp"
#include "alood/tensor.hpp"

namespace alood {

inline constexpr std::size_t kBoxParams = 7;
inline constexpr std::size_t kBoxEmbedDim = 64;

/// Placement of the BEV grid in world coordinates.
struct GridMeta {
  double x_min = 0.0;
  double y_min = 0.0;
  double cell_size = 1.0;  // meters per cell
  std::size_t height = 1;
  std::size_t width = 1;

  void validate() const;
};

/// 7-DoF box (x_c, y_c, z_c, l, w, h, theta).
struct Box7 {
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double theta = 0.0;

  /// Validates extents and maps theta into (-pi, pi].
  Box7 canonical() const;
  std::vector<double> as_vector() const { return {x, y, z, l, w, h, theta}; }

  friend bool operator==(const Box7&, const Box7&) = default;
};

double normalize_angle(double theta);

struct FusionConfig {
  double lambda = 0.1;

  void validate() const;
};

/// Architecture switches. The feature-only baseline disables the adapter,
/// the box branch, and uses lambda = 0.
struct HeadConfig {
  std::size_t channels = 32;   // C
  std::size_t embed_dim = 512;  // D
  bool use_adapter = true;
  bool use_box = true;

  std::size_t align_inputs() const { return channels + (use_box ? kBoxEmbedDim : 0); }
};

inline constexpr double kMinLogitScale = 1.0;
inline constexpr double kMaxLogitScale = 100.0;

struct HeadParams {
  HeadConfig config;

  Parameter conv1_weight, conv1_bias, bn1_gamma, bn1_beta;
  Parameter conv2_weight, conv2_bias, bn2_gamma, bn2_beta;
  RunningStats bn1, bn2;

  Parameter box_weight, box_bias;      // [7 x 64], [64]
  Parameter align_weight, align_bias;  // [(C + 64) x D], [D]
  Parameter log_scale;                 // [1], logit multiplier exp(log_scale)

  double logit_scale() const;
  /// Keeps exp(log_scale) inside [1, 100].
  void clamp_log_scale();

  struct Entry {
    std::string name;
    Parameter* param;
    bool decay;
  };
  /// Trainable parameters in a fixed order, with their weight-decay flag.
  std::vector<Entry> trainable();
};

/// Seeded initialization: Kaiming-uniform conv kernels, uniform
/// +-1/sqrt(fan_in) for biases and affine layers, gamma = 1, beta = 0,
/// temperature 0.07.
HeadParams init_head_params(const HeadConfig& config, std::uint64_t seed);

/// Parameters of one head bound as leaves on a tape.
struct HeadVars {
  Var conv1_weight, conv1_bias, bn1_gamma, bn1_beta;
  Var conv2_weight, conv2_bias, bn2_gamma, bn2_beta;
  Var box_weight, box_bias, align_weight, align_bias, log_scale;
};

HeadVars bind_params(Tape& tape, const HeadParams& params);

/// F' = relu(BN2(conv2(relu(BN1(conv1(F))))) + F).
Var adapt_features(Tape& tape, const HeadVars& vars, HeadParams& params, Var map,
                   NormMode mode);

struct PooledCell {
  Cell cell;
  bool clamped = false;
};

/// Grid cell holding the box center; centers outside the grid clamp to the
/// border cell and report `clamped`.
PooledCell locate_cell(const Box7& box, const GridMeta& grid);

/// Feature vector F'[:, r, c] at the box center.
Tensor center_pool(const Tensor& adapted_map, const Box7& box, const GridMeta& grid,
                   bool* clamped = nullptr);

/// Affine projection of the raw box parameters: [N x 7] -> [N x 64].
Var encode_boxes(Tape& tape, const HeadVars& vars, const std::vector<Box7>& boxes);
Tensor encode_box(const Box7& box, const HeadParams& params);

/// Inputs for one scene. Exactly one of `map` (with `grid`) or
/// `object_features` must be set; precomputed mode also needs
/// `scene_feature`.
struct SceneFeatures {
  std::optional<Tensor> map;              // [C x H x W]
  std::optional<GridMeta> grid;
  std::optional<Tensor> object_features;  // [N x C]
  std::optional<Tensor> scene_feature;    // [C]
};

struct SceneForward {
  Var embeddings;                // [N x D], unnormalized
  std::vector<bool> clamped;     // per object, map mode only
};

SceneForward forward_scene(Tape& tape, const HeadVars& vars, HeadParams& params,
                           const SceneFeatures& features,
                           const std::vector<Box7>& boxes,
                           const FusionConfig& fusion, NormMode mode);

/// Single-object convenience wrapper around forward_scene.
Tensor forward_object(HeadParams& params, const SceneFeatures& features,
                      const Box7& box, const FusionConfig& fusion,
                      NormMode mode = NormMode::kEval);

// ---------------------------------------------------------------------------
// Checkpoint container: "ALOD" magic, u32 version, u32 count, then
// (u32 name length, name, u32 rank, u32 dims..., f64 payload) per tensor.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

void write_tensor_archive(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_archive(const std::string& path);

std::vector<NamedTensor> head_to_tensors(const HeadParams& params);
/// Rebuilds a head from archive entries, ignoring unrelated names.
HeadParams head_from_tensors(const std::vector<NamedTensor>& tensors);

}  // namespace alood

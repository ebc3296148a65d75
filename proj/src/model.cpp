#include "alood/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "alood/error.hpp"
#include "binary_io.hpp"

namespace alood {

void GridMeta::validate() const {
  if (!(cell_size > 0.0)) throw ConfigError("grid cell_size must be positive");
  if (height < 1 || width < 1) throw ConfigError("grid must have at least one cell");
}

double normalize_angle(double theta) {
  if (!std::isfinite(theta)) throw DataError("box orientation is not finite");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double t = std::fmod(theta, kTwoPi);  // (-2pi, 2pi)
  if (t > std::numbers::pi) t -= kTwoPi;
  if (t <= -std::numbers::pi) t += kTwoPi;
  return t;
}

Box7 Box7::canonical() const {
  if (!(l > 0.0) || !(w > 0.0) || !(h > 0.0)) {
    throw DataError("box extents must be positive");
  }
  Box7 out = *this;
  out.theta = normalize_angle(theta);
  return out;
}

void FusionConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("fusion lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
}

double HeadParams::logit_scale() const { return std::exp(log_scale.value().item()); }

void HeadParams::clamp_log_scale() {
  const double lo = std::log(kMinLogitScale), hi = std::log(kMaxLogitScale);
  const double v = log_scale.value().item();
  if (v < lo || v > hi) log_scale.assign(Tensor::scalar(std::clamp(v, lo, hi)));
}

std::vector<HeadParams::Entry> HeadParams::trainable() {
  std::vector<Entry> out;
  if (config.use_adapter) {
    out.push_back({"adapter.conv1.weight", &conv1_weight, true});
    out.push_back({"adapter.conv1.bias", &conv1_bias, true});
    out.push_back({"adapter.bn1.gamma", &bn1_gamma, false});
    out.push_back({"adapter.bn1.beta", &bn1_beta, false});
    out.push_back({"adapter.conv2.weight", &conv2_weight, true});
    out.push_back({"adapter.conv2.bias", &conv2_bias, true});
    out.push_back({"adapter.bn2.gamma", &bn2_gamma, false});
    out.push_back({"adapter.bn2.beta", &bn2_beta, false});
  }
  if (config.use_box) {
    out.push_back({"box.weight", &box_weight, true});
    out.push_back({"box.bias", &box_bias, true});
  }
  out.push_back({"align.weight", &align_weight, true});
  out.push_back({"align.bias", &align_bias, true});
  out.push_back({"log_scale", &log_scale, false});
  return out;
}

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

HeadParams init_head_params(const HeadConfig& config, std::uint64_t seed) {
  if (config.channels < 1 || config.embed_dim < 1) {
    throw ConfigError("head dimensions must be positive");
  }
  const std::size_t c = config.channels, d = config.embed_dim;
  std::mt19937_64 rng(seed);
  HeadParams p;
  p.config = config;

  const double conv_fan_in = static_cast<double>(c * 9);
  const double kaiming = std::sqrt(6.0 / conv_fan_in);
  const double conv_bias = 1.0 / std::sqrt(conv_fan_in);
  p.conv1_weight = Parameter(uniform({c, c, 3, 3}, kaiming, rng));
  p.conv1_bias = Parameter(uniform({c}, conv_bias, rng));
  p.conv2_weight = Parameter(uniform({c, c, 3, 3}, kaiming, rng));
  p.conv2_bias = Parameter(uniform({c}, conv_bias, rng));
  p.bn1_gamma = Parameter(Tensor::filled({c}, 1.0));
  p.bn1_beta = Parameter(Tensor({c}));
  p.bn2_gamma = Parameter(Tensor::filled({c}, 1.0));
  p.bn2_beta = Parameter(Tensor({c}));
  p.bn1 = RunningStats::fresh(c);
  p.bn2 = RunningStats::fresh(c);

  const double box_bound = 1.0 / std::sqrt(static_cast<double>(kBoxParams));
  p.box_weight = Parameter(uniform({kBoxParams, kBoxEmbedDim}, box_bound, rng));
  p.box_bias = Parameter(uniform({kBoxEmbedDim}, box_bound, rng));

  const std::size_t in = config.align_inputs();
  const double align_bound = 1.0 / std::sqrt(static_cast<double>(in));
  p.align_weight = Parameter(uniform({in, d}, align_bound, rng));
  p.align_bias = Parameter(uniform({d}, align_bound, rng));
  p.log_scale = Parameter(Tensor::scalar(std::log(1.0 / 0.07)));
  return p;
}

HeadVars bind_params(Tape& tape, const HeadParams& p) {
  return HeadVars{
      tape.parameter(p.conv1_weight), tape.parameter(p.conv1_bias),
      tape.parameter(p.bn1_gamma),    tape.parameter(p.bn1_beta),
      tape.parameter(p.conv2_weight), tape.parameter(p.conv2_bias),
      tape.parameter(p.bn2_gamma),    tape.parameter(p.bn2_beta),
      tape.parameter(p.box_weight),   tape.parameter(p.box_bias),
      tape.parameter(p.align_weight), tape.parameter(p.align_bias),
      tape.parameter(p.log_scale)};
}

Var adapt_features(Tape& tape, const HeadVars& v, HeadParams& params, Var map,
                   NormMode mode) {
  const Tensor& f = tape.value(map);
  if (f.rank() != 3 || f.dim(0) != params.config.channels) {
    throw DimensionError("adapter expects " + std::to_string(params.config.channels) +
                         " channels, got map " + shape_to_string(f.shape()));
  }
  Var h = conv3x3_same(tape, map, v.conv1_weight, v.conv1_bias);
  h = batchnorm2d(tape, h, v.bn1_gamma, v.bn1_beta, params.bn1, mode);
  h = relu(tape, h);
  h = conv3x3_same(tape, h, v.conv2_weight, v.conv2_bias);
  h = batchnorm2d(tape, h, v.bn2_gamma, v.bn2_beta, params.bn2, mode);
  return relu(tape, add(tape, h, map));
}

PooledCell locate_cell(const Box7& box, const GridMeta& grid) {
  auto index = [](double coord, double origin, double cell, std::size_t n, bool& clamped) {
    const double raw = std::floor((coord - origin) / cell);
    if (raw < 0.0) {
      clamped = true;
      return std::size_t{0};
    }
    if (raw > static_cast<double>(n - 1)) {
      clamped = true;
      return n - 1;
    }
    return static_cast<std::size_t>(raw);
  };
  PooledCell out;
  out.cell.row = index(box.y, grid.y_min, grid.cell_size, grid.height, out.clamped);
  out.cell.col = index(box.x, grid.x_min, grid.cell_size, grid.width, out.clamped);
  return out;
}

Tensor center_pool(const Tensor& adapted_map, const Box7& box, const GridMeta& grid,
                   bool* clamped) {
  if (adapted_map.rank() != 3 || adapted_map.dim(1) != grid.height ||
      adapted_map.dim(2) != grid.width) {
    throw DimensionError("center_pool: map " + shape_to_string(adapted_map.shape()) +
                         " does not match grid " + std::to_string(grid.height) + "x" +
                         std::to_string(grid.width));
  }
  const auto located = locate_cell(box, grid);
  if (clamped) *clamped = located.clamped;
  const std::size_t c = adapted_map.dim(0);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    out[ch] = adapted_map.at(ch, located.cell.row, located.cell.col);
  }
  return out;
}

Var encode_boxes(Tape& tape, const HeadVars& vars, const std::vector<Box7>& boxes) {
  if (boxes.empty()) throw DimensionError("encode_boxes: no boxes");
  std::vector<double> raw;
  raw.reserve(boxes.size() * kBoxParams);
  for (const auto& b : boxes) {
    const auto v = b.as_vector();
    raw.insert(raw.end(), v.begin(), v.end());
  }
  Var x = tape.constant(Tensor({boxes.size(), kBoxParams}, std::move(raw)));
  return affine(tape, x, vars.box_weight, vars.box_bias);
}

Tensor encode_box(const Box7& box, const HeadParams& params) {
  Tape tape;
  const HeadVars vars = bind_params(tape, params);
  return tape.value(encode_boxes(tape, vars, {box})).reshaped({kBoxEmbedDim});
}

SceneForward forward_scene(Tape& tape, const HeadVars& vars, HeadParams& params,
                           const SceneFeatures& features,
                           const std::vector<Box7>& boxes,
                           const FusionConfig& fusion, NormMode mode) {
  fusion.validate();
  if (boxes.empty()) throw DimensionError("forward_scene: scene has no objects");
  const bool map_mode = features.map.has_value();
  if (map_mode == features.object_features.has_value()) {
    throw DataError(
        "forward_scene: provide either a feature map or precomputed object features");
  }
  const std::size_t c = params.config.channels;

  SceneForward out;
  Var fobj{}, scene{};
  if (map_mode) {
    if (!features.grid) throw DataError("forward_scene: feature map without grid");
    Var map = tape.constant(*features.map);
    Var adapted = params.config.use_adapter ? adapt_features(tape, vars, params, map, mode)
                                            : map;
    const Tensor& fv = tape.value(adapted);
    if (fv.dim(0) != c || fv.dim(1) != features.grid->height ||
        fv.dim(2) != features.grid->width) {
      throw DimensionError("forward_scene: map " + shape_to_string(fv.shape()) +
                           " inconsistent with head channels and grid");
    }
    std::vector<Cell> cells;
    cells.reserve(boxes.size());
    for (const auto& b : boxes) {
      const auto located = locate_cell(b, *features.grid);
      cells.push_back(located.cell);
      out.clamped.push_back(located.clamped);
    }
    fobj = gather_cells(tape, adapted, cells);
    scene = adaptive_max_pool_global(tape, adapted);
  } else {
    if (!features.scene_feature) {
      throw DataError("forward_scene: missing scene feature in precomputed mode");
    }
    const Tensor& of = *features.object_features;
    if (of.rank() != 2 || of.dim(0) != boxes.size() || of.dim(1) != c) {
      throw DimensionError("forward_scene: object features " + shape_to_string(of.shape()) +
                           " do not match " + std::to_string(boxes.size()) + " boxes of " +
                           std::to_string(c) + " channels");
    }
    fobj = tape.constant(of);
    scene = tape.constant(*features.scene_feature);
    out.clamped.assign(boxes.size(), false);
  }

  Var u = fuse(tape, fobj, scene, fusion.lambda);
  if (params.config.use_box) u = concat_cols(tape, u, encode_boxes(tape, vars, boxes));
  out.embeddings = affine(tape, u, vars.align_weight, vars.align_bias);
  return out;
}

Tensor forward_object(HeadParams& params, const SceneFeatures& features,
                      const Box7& box, const FusionConfig& fusion, NormMode mode) {
  Tape tape;
  const HeadVars vars = bind_params(tape, params);
  SceneFeatures single = features;
  if (single.object_features) {
    const Tensor& of = *single.object_features;
    if (of.rank() == 1) single.object_features = of.reshaped({1, of.dim(0)});
  }
  const auto fwd = forward_scene(tape, vars, params, single, {box}, fusion, mode);
  return tape.value(fwd.embeddings).reshaped({params.config.embed_dim});
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'L', 'O', 'D'};

}  // namespace

void write_tensor_archive(const std::string& path, const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f64s(t.data().data(), t.size());
  }
  w.save(path);
}

std::vector<NamedTensor> read_tensor_archive(const std::string& path) {
  detail::BinaryReader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) r.fail("bad checkpoint magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str("tensor name");
    const auto rank = r.u32("rank");
    if (rank > 8) r.fail("implausible rank for " + nt.name);
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.u32("dimension");
      if (d == 0) r.fail("zero dimension in " + nt.name);
      numel *= d;
    }
    if (numel > (std::size_t{1} << 32)) r.fail("implausible size for " + nt.name);
    std::vector<double> data(numel);
    r.f64s(data.data(), numel, "tensor payload");
    nt.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  return out;
}

std::vector<NamedTensor> head_to_tensors(const HeadParams& p) {
  const auto flag = [](bool b) { return Tensor::scalar(b ? 1.0 : 0.0); };
  return {
      {"config.channels", Tensor::scalar(static_cast<double>(p.config.channels))},
      {"config.embed_dim", Tensor::scalar(static_cast<double>(p.config.embed_dim))},
      {"config.use_adapter", flag(p.config.use_adapter)},
      {"config.use_box", flag(p.config.use_box)},
      {"adapter.conv1.weight", p.conv1_weight.value()},
      {"adapter.conv1.bias", p.conv1_bias.value()},
      {"adapter.bn1.gamma", p.bn1_gamma.value()},
      {"adapter.bn1.beta", p.bn1_beta.value()},
      {"adapter.bn1.running_mean", p.bn1.mean},
      {"adapter.bn1.running_var", p.bn1.var},
      {"adapter.conv2.weight", p.conv2_weight.value()},
      {"adapter.conv2.bias", p.conv2_bias.value()},
      {"adapter.bn2.gamma", p.bn2_gamma.value()},
      {"adapter.bn2.beta", p.bn2_beta.value()},
      {"adapter.bn2.running_mean", p.bn2.mean},
      {"adapter.bn2.running_var", p.bn2.var},
      {"box.weight", p.box_weight.value()},
      {"box.bias", p.box_bias.value()},
      {"align.weight", p.align_weight.value()},
      {"align.bias", p.align_bias.value()},
      {"log_scale", p.log_scale.value()},
  };
}

HeadParams head_from_tensors(const std::vector<NamedTensor>& tensors) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& nt : tensors) {
      if (nt.name == name) return nt.value;
    }
    throw DataError("checkpoint is missing tensor " + name);
  };
  HeadConfig config;
  config.channels = static_cast<std::size_t>(find("config.channels").item());
  config.embed_dim = static_cast<std::size_t>(find("config.embed_dim").item());
  config.use_adapter = find("config.use_adapter").item() != 0.0;
  config.use_box = find("config.use_box").item() != 0.0;

  HeadParams p = init_head_params(config, 0);
  auto load = [&](const std::string& name, Parameter& param) {
    const Tensor& t = find(name);
    if (!t.same_shape(param.value())) {
      throw DataError("checkpoint tensor " + name + " has shape " +
                      shape_to_string(t.shape()) + ", expected " +
                      shape_to_string(param.value().shape()));
    }
    param.assign(t);
  };
  auto load_stats = [&](const std::string& prefix, RunningStats& stats) {
    stats.mean = find(prefix + ".running_mean");
    stats.var = find(prefix + ".running_var");
    if (stats.mean.shape() != Shape{config.channels} ||
        stats.var.shape() != Shape{config.channels}) {
      throw DataError("checkpoint running statistics " + prefix + " have wrong shape");
    }
    stats.initialized = true;
  };
  load("adapter.conv1.weight", p.conv1_weight);
  load("adapter.conv1.bias", p.conv1_bias);
  load("adapter.bn1.gamma", p.bn1_gamma);
  load("adapter.bn1.beta", p.bn1_beta);
  load_stats("adapter.bn1", p.bn1);
  load("adapter.conv2.weight", p.conv2_weight);
  load("adapter.conv2.bias", p.conv2_bias);
  load("adapter.bn2.gamma", p.bn2_gamma);
  load("adapter.bn2.beta", p.bn2_beta);
  load_stats("adapter.bn2", p.bn2);
  load("box.weight", p.box_weight);
  load("box.bias", p.box_bias);
  load("align.weight", p.align_weight);
  load("align.bias", p.align_bias);
  load("log_scale", p.log_scale);
  return p;
}

}  // namespace alood

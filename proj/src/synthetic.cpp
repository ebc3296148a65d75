#include "alood/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "alood/error.hpp"
#include "alood/prompts.hpp"
#include "alood/random.hpp"

namespace alood {

namespace {

constexpr std::uint64_t kCenterStream = 0x63656e74;  // "cent"
constexpr std::uint64_t kBoxStream = 0x626f7873;     // "boxs"
constexpr std::uint64_t kTrainStream = 0x7472616e;   // "tran"
constexpr std::uint64_t kValStream = 0x76616c73;     // "vals"

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Nonnegative directions, like post-ReLU detector features. Each new center
// is redrawn until it clears the margin against everything already placed.
std::vector<std::vector<double>> place_centers(std::size_t count, std::size_t channels,
                                               double norm, double max_cos,
                                               const std::vector<std::vector<double>>& avoid,
                                               std::size_t max_attempts, std::mt19937_64& rng,
                                               const char* what) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> placed;
  for (std::size_t k = 0; k < count; ++k) {
    bool ok = false;
    std::vector<double> v(channels);
    for (std::size_t attempt = 0; attempt < max_attempts && !ok; ++attempt) {
      double sq = 0.0;
      for (auto& x : v) {
        x = std::max(0.0, gauss(rng));
        sq += x * x;
      }
      if (!(sq > 0.0)) continue;
      ok = true;
      for (const auto& u : placed) ok = ok && cosine(u, v) <= max_cos;
      for (const auto& u : avoid) ok = ok && cosine(u, v) <= max_cos;
      if (ok) {
        const double scale = norm / std::sqrt(sq);
        for (auto& x : v) x *= scale;
      }
    }
    if (!ok) {
      throw ConfigError("cannot place centers: no " + std::string(what) + " center " +
                        std::to_string(k) + " found at the requested margin");
    }
    placed.push_back(v);
  }
  return placed;
}

std::vector<BoxDistribution> draw_box_distributions(std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> length(0.5, 5.0), width(0.5, 2.5), height(0.5, 3.0);
  std::vector<BoxDistribution> out(count);
  for (auto& b : out) {
    b.l_mean = length(rng);
    b.w_mean = width(rng);
    b.h_mean = height(rng);
  }
  return out;
}

Tensor to_matrix(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  Tensor t({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) = rows[i][j];
  }
  return t;
}

struct Source {
  const std::vector<double>* center;
  const BoxDistribution* box;
  std::string label;
  bool is_ood;
};

class SplitBuilder {
 public:
  SplitBuilder(const SyntheticSpec& spec, std::uint64_t stream)
      : spec_(spec), rng_(derive_key({spec.seed, stream})) {}

  // `sources` lists one entry per object; order is shuffled here.
  std::vector<SceneRecord> build(std::vector<Source> sources, Split split,
                                 std::uint64_t& next_scene, std::uint64_t& next_object) {
    std::shuffle(sources.begin(), sources.end(), rng_);
    std::vector<SceneRecord> scenes;
    const std::size_t per = spec_.objects_per_scene;
    for (std::size_t start = 0; start < sources.size(); start += per) {
      const std::size_t end = std::min(sources.size(), start + per);
      scenes.push_back(make_scene(sources, start, end, split, next_scene++, next_object));
    }
    return scenes;
  }

 private:
  SceneRecord make_scene(const std::vector<Source>& sources, std::size_t begin, std::size_t end,
                         Split split, std::uint64_t scene_id, std::uint64_t& next_object) {
    const auto& g = spec_.grid;
    const std::size_t c = spec_.channels;
    std::vector<std::size_t> cells(g.height * g.width);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    std::shuffle(cells.begin(), cells.end(), rng_);

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(0.1, 0.9), angle(-std::numbers::pi,
                                                                   std::numbers::pi);
    SceneRecord scene;
    scene.id = scene_id;
    for (std::size_t j = begin; j < end; ++j) {
      const Source& src = sources[j];
      ObjectRecord o;
      o.id = next_object++;
      o.label = src.label;
      o.is_ood = src.is_ood;
      o.is_ground_truth = true;
      o.split = split;

      std::vector<double> f(c);
      for (std::size_t ch = 0; ch < c; ++ch) f[ch] = (*src.center)[ch] + spec_.sigma * gauss(rng_);
      o.feature = Tensor::vector(std::move(f));

      const std::size_t cell = cells[j - begin];
      const std::size_t row = cell / g.width, col = cell % g.width;
      auto extent = [&](double mean) {
        return std::max(0.05 * mean, mean * (1.0 + src.box->rel_std * gauss(rng_)));
      };
      o.box.x = g.x_min + (static_cast<double>(col) + jitter(rng_)) * g.cell_size;
      o.box.y = g.y_min + (static_cast<double>(row) + jitter(rng_)) * g.cell_size;
      o.box.z = -1.0 + 0.5 * gauss(rng_);
      o.box.l = extent(src.box->l_mean);
      o.box.w = extent(src.box->w_mean);
      o.box.h = extent(src.box->h_mean);
      o.box.theta = normalize_angle(angle(rng_));
      scene.objects.push_back(std::move(o));
    }

    if (spec_.mode == DatasetMode::kFeatureMaps) {
      Tensor map({c, g.height, g.width});
      for (auto& v : map.data()) v = spec_.background_noise * gauss(rng_);
      for (const auto& o : scene.objects) {
        const auto cell = locate_cell(o.box, g).cell;
        for (std::size_t ch = 0; ch < c; ++ch) map.at(ch, cell.row, cell.col) = (*o.feature)[ch];
      }
      scene.map = std::move(map);
    } else {
      Tensor s({c});
      for (std::size_t ch = 0; ch < c; ++ch) {
        double m = -INFINITY;
        for (const auto& o : scene.objects) m = std::max(m, (*o.feature)[ch]);
        s[ch] = m + spec_.scene_feature_noise * gauss(rng_);
      }
      scene.scene_feature = std::move(s);
    }
    return scene;
  }

  const SyntheticSpec& spec_;
  std::mt19937_64 rng_;
};

DatasetHeader make_header(const SyntheticSpec& spec, Split split,
                          const std::vector<std::string>& classes) {
  DatasetHeader h;
  h.mode = spec.mode;
  h.channels = spec.channels;
  h.embed_dim = spec.embed_dim;
  h.classes = classes;
  h.grid = spec.grid;
  h.split = split;
  return h;
}

void fill_counts(Dataset& ds) {
  ds.header.scene_count = ds.scenes.size();
  ds.header.id_objects = ds.header.ood_objects = 0;
  for (const auto& s : ds.scenes) {
    for (const auto& o : s.objects) ++(o.is_ood ? ds.header.ood_objects : ds.header.id_objects);
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 1) throw ConfigError("synthetic spec needs at least one class");
  if (n_train < 1 || n_val_id < 1 || n_val_ood < 1) {
    throw ConfigError("synthetic spec counts must all be at least 1");
  }
  if (channels < 1 || embed_dim < 2) throw ConfigError("synthetic spec dimensions too small");
  if (!(margin_degrees > 0.0)) throw ConfigError("synthetic margin must be positive");
  if (!(sigma > 0.0)) throw ConfigError("synthetic sigma must be positive");
  if (!(center_norm > 0.0) || !(ood_norm_scale > 0.0)) {
    throw ConfigError("synthetic center norms must be positive");
  }
  if (ood_clusters < 1) throw ConfigError("synthetic spec needs at least one OOD cluster");
  if (objects_per_scene < 1) throw ConfigError("objects_per_scene must be at least 1");
  grid.validate();
  if (objects_per_scene > grid.height * grid.width) {
    throw ConfigError("objects_per_scene exceeds the number of grid cells");
  }
  if (!(background_noise >= 0.0) || !(scene_feature_noise >= 0.0)) {
    throw ConfigError("synthetic noise levels must be non-negative");
  }
}

std::string synthetic_class_name(std::size_t k) { return "class_" + std::to_string(k); }

SyntheticData synthesize(const SyntheticSpec& spec) {
  spec.validate();
  // Nonnegative vectors are never more than 90 degrees apart.
  const bool multiple = spec.num_classes + spec.ood_clusters > 1;
  if (spec.margin_degrees >= 90.0 && multiple) {
    throw ConfigError("cannot place centers: nonnegative centers cannot be " +
                      std::to_string(spec.margin_degrees) + " degrees apart");
  }
  const double max_cos = std::cos(spec.margin_degrees * std::numbers::pi / 180.0);

  std::mt19937_64 center_rng(derive_key({spec.seed, kCenterStream}));
  const auto id_centers =
      place_centers(spec.num_classes, spec.channels, spec.center_norm, max_cos, {},
                    spec.max_center_attempts, center_rng, "ID");
  const auto ood_centers =
      place_centers(spec.ood_clusters, spec.channels, spec.center_norm * spec.ood_norm_scale,
                    max_cos, id_centers, spec.max_center_attempts, center_rng, "OOD");

  std::mt19937_64 box_rng(derive_key({spec.seed, kBoxStream}));
  SyntheticData out;
  out.id_boxes = draw_box_distributions(spec.num_classes, box_rng);
  out.ood_boxes = draw_box_distributions(spec.ood_clusters, box_rng);
  out.id_centers = to_matrix(id_centers, spec.channels);
  out.ood_centers = to_matrix(ood_centers, spec.channels);

  std::vector<std::string> classes;
  for (std::size_t k = 0; k < spec.num_classes; ++k) classes.push_back(synthetic_class_name(k));

  // Labels cycle through the classes so every class gets floor or ceil of n/K.
  auto id_sources = [&](std::size_t n) {
    std::vector<Source> s;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i % spec.num_classes;
      s.push_back({&id_centers[k], &out.id_boxes[k], classes[k], false});
    }
    return s;
  };

  std::uint64_t next_scene = 0, next_object = 0;
  out.train.header = make_header(spec, Split::kTrain, classes);
  out.train.scenes = SplitBuilder(spec, kTrainStream)
                         .build(id_sources(spec.n_train), Split::kTrain, next_scene, next_object);
  fill_counts(out.train);

  auto val_sources = id_sources(spec.n_val_id);
  for (std::size_t i = 0; i < spec.n_val_ood; ++i) {
    const std::size_t m = i % spec.ood_clusters;
    val_sources.push_back({&ood_centers[m], &out.ood_boxes[m], "ood_" + std::to_string(m), true});
  }
  out.val.header = make_header(spec, Split::kVal, classes);
  out.val.scenes = SplitBuilder(spec, kValStream)
                       .build(std::move(val_sources), Split::kVal, next_scene, next_object);
  fill_counts(out.val);

  return out;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  SyntheticData data = synthesize(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir + ": " + ec.message());
  const std::filesystem::path dir(out_dir);
  write_dataset((dir / "train.alds").string(), data.train.header, data.train.scenes);
  write_dataset((dir / "val.alds").string(), data.val.header, data.val.scenes);
  write_class_list((dir / "classes.txt").string(), data.train.header.classes);
  return data;
}

}  // namespace alood

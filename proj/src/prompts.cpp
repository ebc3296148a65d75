#include "alood/prompts.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "alood/error.hpp"
#include "alood/random.hpp"

namespace alood {

namespace {

std::string fixed2(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

void normalize_in_place(std::vector<double>& v, const char* what) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw NumericError(std::string("zero-norm ") + what);
  for (double& x : v) x /= norm;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::string render_prompt(const PromptTemplate& prompt) {
  std::string out = "This object is a " + prompt.class_token;
  if (prompt.kind == PromptKind::kSimple) return out + ".";
  if (!prompt.box) throw ConfigError("spatial prompt for '" + prompt.class_token + "' needs a box");
  const Box7& b = *prompt.box;
  out += " located at (" + fixed2(b.x) + ", " + fixed2(b.y) + ", " + fixed2(b.z) + ")";
  out += ", with dimensions (" + fixed2(b.w) + "m, " + fixed2(b.l) + "m, " + fixed2(b.h) + "m)";
  out += " and orientation " + fixed2(b.theta) + " rad.";
  return out;
}

PromptKind choose_prompt_kind(std::uint64_t seed, std::uint64_t epoch, std::uint64_t scene,
                              std::uint64_t object_index) {
  const std::uint64_t key = derive_key({seed, 0x70726f6d7074ULL, epoch, scene, object_index});
  return (key >> 63) ? PromptKind::kSpatial : PromptKind::kSimple;
}

void SyntheticEncoderConfig::validate() const {
  if (dim < 2) throw ConfigError("synthetic encoder dimension must be at least 2");
  if (!(box_sensitivity >= 0.0)) throw ConfigError("box_sensitivity must be non-negative");
}

std::vector<double> normalize_box(const Box7& box) {
  return {box.x / 50.0, box.y / 50.0, box.z / 5.0,           box.l / 5.0,
          box.w / 5.0,  box.h / 5.0,  box.theta / std::numbers::pi};
}

Tensor synth_text_encode(const std::string& class_name, const std::optional<Box7>& box,
                         const SyntheticEncoderConfig& config) {
  config.validate();
  const std::size_t d = config.dim;
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::mt19937_64 class_rng(derive_key({config.seed, fnv1a(class_name)}));
  std::vector<double> e(d);
  for (auto& x : e) x = gauss(class_rng);
  normalize_in_place(e, "class direction");

  if (box && config.box_sensitivity > 0.0) {
    std::mt19937_64 proj_rng(derive_key({config.seed, 0x626f7850ULL}));
    const double scale = config.box_sensitivity / std::sqrt(static_cast<double>(d));
    const auto nb = normalize_box(*box);
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kBoxParams; ++k) acc += gauss(proj_rng) * nb[k];
      e[i] += scale * acc;
    }
    normalize_in_place(e, "text embedding");
  }
  return Tensor::vector(std::move(e));
}

// ---------------------------------------------------------------------------

void EmbeddingCache::validate() const {
  if (dim < 1) throw DataError("embedding cache dimension must be positive");
  for (const auto& [name, v] : entries) {
    if (v.size() != dim) {
      throw DataError("embedding for '" + name + "' has length " + std::to_string(v.size()) +
                      ", cache dimension is " + std::to_string(dim));
    }
    for (double x : v) {
      if (!std::isfinite(x)) throw DataError("embedding for '" + name + "' is not finite");
    }
    if (normalized && std::abs(l2_norm(v) - 1.0) > 1e-9) {
      throw DataError("embedding for '" + name + "' is not unit norm");
    }
  }
}

EmbeddingCache read_embedding_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding cache " + path);
  EmbeddingCache cache;
  try {
    const auto j = nlohmann::json::parse(in);
    cache.model_name = j.at("model_name").get<std::string>();
    cache.dim = j.at("dim").get<std::size_t>();
    cache.normalized = j.at("normalized").get<bool>();
    cache.prompt_format_id = j.at("prompt_format_id").get<std::string>();
    for (const auto& [name, values] : j.at("entries").items()) {
      cache.entries[name] = values.get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed embedding cache " + path + ": " + e.what());
  }
  // Exporters working in single precision produce norms that are only
  // accurate to ~1e-7; bring those back to unit norm in double.
  if (cache.normalized) {
    for (auto& [name, v] : cache.entries) {
      const double norm = l2_norm(v);
      if (std::abs(norm - 1.0) > 1e-6) {
        throw DataError("embedding for '" + name + "' is flagged normalized but has norm " +
                        std::to_string(norm));
      }
      if (std::abs(norm - 1.0) > 1e-9) {
        for (double& x : v) x /= norm;
      }
    }
  }
  cache.validate();
  return cache;
}

void write_embedding_cache(const std::string& path, const EmbeddingCache& cache) {
  cache.validate();
  nlohmann::json j;
  j["model_name"] = cache.model_name;
  j["dim"] = cache.dim;
  j["normalized"] = cache.normalized;
  j["prompt_format_id"] = cache.prompt_format_id;
  j["entries"] = nlohmann::json::object();
  for (const auto& [name, v] : cache.entries) j["entries"][name] = v;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding cache " + path);
  out << j.dump() << '\n';
}

std::size_t text_dim(const TextSource& source) {
  return std::visit([](const auto& s) -> std::size_t { return s.dim; }, source);
}

Tensor embed_prompt(const TextSource& source, const PromptTemplate& prompt) {
  if (const auto* synth = std::get_if<SyntheticEncoderConfig>(&source)) {
    if (prompt.kind == PromptKind::kSpatial && !prompt.box) render_prompt(prompt);  // throws
    return synth_text_encode(prompt.class_token,
                             prompt.kind == PromptKind::kSpatial ? prompt.box : std::nullopt,
                             *synth);
  }
  const auto& cache = std::get<EmbeddingCache>(source);
  const std::string key =
      prompt.kind == PromptKind::kSimple ? prompt.class_token : render_prompt(prompt);
  const auto it = cache.entries.find(key);
  if (it == cache.entries.end()) {
    throw DataError("embedding cache has no entry for '" + key + "'");
  }
  return Tensor::vector(it->second);
}

IdBank build_id_bank(const std::vector<std::string>& classes, const TextSource& source) {
  if (classes.empty()) throw ConfigError("ID bank needs at least one class");
  for (std::size_t k = 0; k < classes.size(); ++k) {
    for (std::size_t m = 0; m < k; ++m) {
      if (classes[k] == classes[m]) throw ConfigError("duplicate class '" + classes[k] + "'");
    }
  }
  const std::size_t d = text_dim(source);
  IdBank bank{classes, Tensor({classes.size(), d})};
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const Tensor e = embed_prompt(source, {PromptKind::kSimple, classes[k], std::nullopt});
    for (std::size_t i = 0; i < d; ++i) bank.embeddings.at(k, i) = e[i];
  }
  return bank;
}

void write_id_bank(const std::string& path, const IdBank& bank) {
  nlohmann::json j;
  j["classes"] = bank.classes;
  j["dim"] = bank.embeddings.dim(1);
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < bank.classes.size(); ++k) {
    const auto row = bank.embeddings.data().subspan(k * bank.embeddings.dim(1),
                                                    bank.embeddings.dim(1));
    rows.emplace_back(row.begin(), row.end());
  }
  j["embeddings"] = rows;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ID bank " + path);
  out << j.dump() << '\n';
}

IdBank read_id_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ID bank " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    IdBank bank;
    bank.classes = j.at("classes").get<std::vector<std::string>>();
    const auto dim = j.at("dim").get<std::size_t>();
    const auto rows = j.at("embeddings").get<std::vector<std::vector<double>>>();
    if (rows.size() != bank.classes.size() || bank.classes.empty()) {
      throw DataError("ID bank " + path + " has mismatched class and row counts");
    }
    std::vector<double> flat;
    for (const auto& r : rows) {
      if (r.size() != dim) throw DataError("ID bank " + path + " has a row of wrong length");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    bank.embeddings = Tensor({rows.size(), dim}, std::move(flat));
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed ID bank " + path + ": " + e.what());
  }
}

std::vector<std::string> read_class_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open class list " + path);
  std::vector<std::string> classes;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    classes.push_back(line);
  }
  if (classes.empty()) throw DataError("class list " + path + " is empty");
  return classes;
}

void write_class_list(const std::string& path, const std::vector<std::string>& classes) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write class list " + path);
  for (const auto& c : classes) out << c << '\n';
}

}  // namespace alood

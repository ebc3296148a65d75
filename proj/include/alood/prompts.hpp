#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "alood/model.hpp"
#include "alood/tensor.hpp"

namespace alood {

enum class PromptKind { kSimple, kSpatial };

struct PromptTemplate {
  PromptKind kind = PromptKind::kSimple;
  std::string class_token;
  std::optional<Box7> box;
};

/// Simple:  "This object is a {cls}."
/// Spatial: "This object is a {cls} located at ({x}, {y}, {z}), with
///           dimensions ({w}m, {l}m, {h}m) and orientation {yaw} rad."
/// All numbers use two fixed decimals.
std::string render_prompt(const PromptTemplate& prompt);

/// Identifier stored in embedding caches produced with this renderer.
inline constexpr const char* kPromptFormatId = "alood-prompt-v1";

/// Fair coin per (seed, epoch, scene, object) from a counter-based hash.
PromptKind choose_prompt_kind(std::uint64_t seed, std::uint64_t epoch, std::uint64_t scene,
                              std::uint64_t object_index);

/// Deterministic stand-in for a frozen text encoder.
struct SyntheticEncoderConfig {
  std::uint64_t seed = 11;
  std::size_t dim = 512;
  double box_sensitivity = 0.25;

  void validate() const;
};

/// L2normalize(base(class) + box_sensitivity * P * normalize_box(box)).
/// base(class) is a unit Gaussian direction keyed by (seed, class string);
/// P is a fixed D x 7 Gaussian matrix with N(0, 1/D) entries.
Tensor synth_text_encode(const std::string& class_name, const std::optional<Box7>& box,
                         const SyntheticEncoderConfig& config);

/// Box parameters scaled to roughly unit range before projection.
std::vector<double> normalize_box(const Box7& box);

struct EmbeddingCache {
  std::string model_name;
  std::size_t dim = 0;
  bool normalized = false;
  std::string prompt_format_id;
  std::map<std::string, std::vector<double>> entries;

  void validate() const;
};

EmbeddingCache read_embedding_cache(const std::string& path);
void write_embedding_cache(const std::string& path, const EmbeddingCache& cache);

/// Where text embeddings come from: a cache exported from a real encoder or
/// the synthetic encoder.
using TextSource = std::variant<EmbeddingCache, SyntheticEncoderConfig>;

std::size_t text_dim(const TextSource& source);

/// Embedding of one rendered prompt. Cache lookups use the class name for
/// Simple prompts and the full rendered string for Spatial prompts.
Tensor embed_prompt(const TextSource& source, const PromptTemplate& prompt);

/// Simple-prompt embeddings of the ID classes, one row per class.
struct IdBank {
  std::vector<std::string> classes;
  Tensor embeddings;  // [K x D]
};

IdBank build_id_bank(const std::vector<std::string>& classes, const TextSource& source);
void write_id_bank(const std::string& path, const IdBank& bank);
IdBank read_id_bank(const std::string& path);

/// Plain-text class list, one class per line, order significant.
std::vector<std::string> read_class_list(const std::string& path);
void write_class_list(const std::string& path, const std::vector<std::string>& classes);

}  // namespace alood

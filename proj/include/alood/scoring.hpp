#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "alood/tensor.hpp"

namespace alood {

enum class ScoreMethod { kMaxLogit, kMsp, kEnergy };
enum class Decision { kId, kOod };

inline constexpr std::array<ScoreMethod, 3> kScoreMethods = {
    ScoreMethod::kMaxLogit, ScoreMethod::kMsp, ScoreMethod::kEnergy};

std::string to_string(ScoreMethod method);
std::string to_string(Decision decision);
ScoreMethod score_method_from_string(const std::string& s);

/// Method plus norm-scaling flag, e.g. "maxlogit_norm" or "energy".
std::string variant_name(ScoreMethod method, bool norm_scaling);

struct Variant {
  ScoreMethod method = ScoreMethod::kMaxLogit;
  bool norm_scaling = true;

  std::string name() const { return variant_name(method, norm_scaling); }
};

/// Every method, norm-scaled first, then plain.
std::vector<Variant> all_variants();

struct DecisionConfig {
  ScoreMethod method = ScoreMethod::kMaxLogit;
  double threshold = 0.0;
  bool norm_scaling = true;
};

/// Cosine similarity of `v` [D] with every row of `bank` [K x D].
Tensor similarity_logits(const Tensor& v, const Tensor& bank);

/// Higher means more ID for every method. MaxLogit uses the raw cosines;
/// MSP and Energy use cosines times exp(log_scale). With norm scaling the
/// result is multiplied by v_norm.
double score(const Tensor& logits, double v_norm, ScoreMethod method, bool norm_scaling,
             double log_scale);

/// ID iff score >= threshold.
Decision decide(double score, double threshold);

/// Largest threshold such that at least `target_tpr` of `id_scores` are
/// >= threshold. target_tpr must lie in (0, 1].
double calibrate_threshold(const std::vector<double>& id_scores, double target_tpr = 0.95);

struct ScoreRecord {
  std::uint64_t object_id = 0;
  bool is_ood = false;
  Tensor logits;  // [K]
  double v_norm = 0.0;
  std::size_t argmax = 0;
  /// scores[method][norm_scaling]
  std::array<std::array<double, 2>, 3> scores{};

  double value(ScoreMethod method, bool norm_scaling) const {
    return scores[static_cast<std::size_t>(method)][norm_scaling ? 1 : 0];
  }
};

/// All six score variants for one object embedding `v` [D].
ScoreRecord score_embedding(const Tensor& v, const Tensor& bank, double log_scale);

/// Calibrated thresholds per variant, indexed like ScoreRecord::scores.
using VariantThresholds = std::array<std::array<double, 2>, 3>;

VariantThresholds calibrate_variants(const std::vector<ScoreRecord>& records,
                                     double target_tpr = 0.95);

/// Long-format dump: one row per object and variant with header
/// object_id,is_ood_ground_truth,argmax_class,v_norm,s_1..s_K,score_method,score_value,decision
void write_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records,
                      const VariantThresholds& thresholds,
                      const std::vector<Variant>& variants = all_variants());

}  // namespace alood

#include "alood/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "alood/error.hpp"

namespace alood {

std::string to_string(ScoreMethod method) {
  switch (method) {
    case ScoreMethod::kMaxLogit:
      return "maxlogit";
    case ScoreMethod::kMsp:
      return "msp";
    case ScoreMethod::kEnergy:
      return "energy";
  }
  return "unknown";
}

std::string to_string(Decision decision) { return decision == Decision::kId ? "ID" : "OOD"; }

ScoreMethod score_method_from_string(const std::string& s) {
  for (auto m : kScoreMethods) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown score method '" + s + "' (expected maxlogit, msp or energy)");
}

std::string variant_name(ScoreMethod method, bool norm_scaling) {
  return to_string(method) + (norm_scaling ? "_norm" : "");
}

Tensor similarity_logits(const Tensor& v, const Tensor& bank) {
  if (v.rank() != 1 || bank.rank() != 2 || bank.dim(1) != v.dim(0)) {
    throw DimensionError("similarity_logits: v " + shape_to_string(v.shape()) + " vs bank " +
                         shape_to_string(bank.shape()));
  }
  const std::size_t k = bank.dim(0), d = v.dim(0);
  if (k == 0) throw DimensionError("similarity_logits: empty bank");
  double vn = 0.0;
  for (double x : v.data()) vn += x * x;
  vn = std::sqrt(vn);
  if (!(vn > 0.0)) throw NumericError("similarity_logits: zero-norm embedding");
  Tensor out({k});
  for (std::size_t i = 0; i < k; ++i) {
    double dot = 0.0, tn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += v[j] * bank.at(i, j);
      tn += bank.at(i, j) * bank.at(i, j);
    }
    if (!(tn > 0.0)) throw NumericError("similarity_logits: zero-norm bank row " + std::to_string(i));
    out[i] = std::clamp(dot / (vn * std::sqrt(tn)), -1.0, 1.0);
  }
  return out;
}

double score(const Tensor& logits, double v_norm, ScoreMethod method, bool norm_scaling,
             double log_scale) {
  if (logits.empty()) throw DimensionError("score: no logits");
  const auto s = logits.data();
  const double smax = *std::max_element(s.begin(), s.end());
  const double scale = std::exp(log_scale);
  double base = smax;
  if (method != ScoreMethod::kMaxLogit) {
    double denom = 0.0;
    for (double x : s) denom += std::exp(scale * (x - smax));
    if (method == ScoreMethod::kMsp) {
      base = 1.0 / denom;
    } else {
      base = (scale * smax + std::log(denom)) / scale;
    }
  }
  return norm_scaling ? v_norm * base : base;
}

Decision decide(double score, double threshold) {
  return score >= threshold ? Decision::kId : Decision::kOod;
}

double calibrate_threshold(const std::vector<double>& id_scores, double target_tpr) {
  if (id_scores.empty()) throw DataError("calibrate_threshold: no ID scores");
  if (!(target_tpr > 0.0 && target_tpr <= 1.0)) {
    throw ConfigError("target TPR must lie in (0, 1]");
  }
  std::vector<double> sorted = id_scores;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    if (static_cast<double>(k) / n >= target_tpr) return sorted[k - 1];
  }
  return sorted.back();
}

ScoreRecord score_embedding(const Tensor& v, const Tensor& bank, double log_scale) {
  ScoreRecord r;
  r.logits = similarity_logits(v, bank);
  double sq = 0.0;
  for (double x : v.data()) sq += x * x;
  r.v_norm = std::sqrt(sq);
  const auto s = r.logits.data();
  r.argmax = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  for (auto m : kScoreMethods) {
    for (bool norm : {false, true}) {
      r.scores[static_cast<std::size_t>(m)][norm ? 1 : 0] =
          score(r.logits, r.v_norm, m, norm, log_scale);
    }
  }
  return r;
}

VariantThresholds calibrate_variants(const std::vector<ScoreRecord>& records, double target_tpr) {
  VariantThresholds out{};
  for (auto m : kScoreMethods) {
    for (bool norm : {false, true}) {
      std::vector<double> id;
      for (const auto& r : records) {
        if (!r.is_ood) id.push_back(r.value(m, norm));
      }
      out[static_cast<std::size_t>(m)][norm ? 1 : 0] = calibrate_threshold(id, target_tpr);
    }
  }
  return out;
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (auto m : kScoreMethods) {
    for (bool norm : {true, false}) out.push_back({m, norm});
  }
  return out;
}

void write_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records,
                      const VariantThresholds& thresholds, const std::vector<Variant>& variants) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scores " + path);
  const std::size_t k = records.empty() ? 0 : records.front().logits.size();
  out << "object_id,is_ood_ground_truth,argmax_class,v_norm";
  for (std::size_t i = 1; i <= k; ++i) out << ",s_" << i;
  out << ",score_method,score_value,decision\n";
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  for (const auto& r : records) {
    std::string prefix = std::to_string(r.object_id) + "," + (r.is_ood ? "1" : "0") + "," +
                         std::to_string(r.argmax) + "," + num(r.v_norm);
    for (double s : r.logits.data()) prefix += "," + num(s);
    for (const auto& var : variants) {
      const double value = r.value(var.method, var.norm_scaling);
      const double delta = thresholds[static_cast<std::size_t>(var.method)][var.norm_scaling];
      out << prefix << ',' << var.name() << ',' << num(value) << ','
          << to_string(decide(value, delta)) << '\n';
    }
  }
}

}  // namespace alood

#pragma once

// Slow reference implementations written directly from the definitions.
// They share no code with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <vector>

#include "alood/metrics.hpp"
#include "alood/tensor.hpp"

namespace alood::oracles {

inline double cosine_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.dim(1); ++k) {
    ab += a.at(i, k) * b.at(j, k);
    aa += a.at(i, k) * a.at(i, k);
    bb += b.at(j, k) * b.at(j, k);
  }
  return ab / std::sqrt(aa * bb);
}

// Literal double loop over the multi-positive formula (no max-shift,
// explicit positive sets).
inline double multi_positive_loss(const Tensor& v, const Tensor& t,
                                  const std::vector<std::size_t>& labels, double log_scale) {
  const std::size_t n = v.dim(0);
  const double s = std::exp(log_scale);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t r = 0; r < n; ++r) denom += std::exp(s * cosine_rows(v, i, t, r));
    std::vector<std::size_t> positives;
    for (std::size_t j = 0; j < n; ++j) {
      if (labels[j] == labels[i]) positives.push_back(j);
    }
    double inner = 0.0;
    for (std::size_t j : positives) inner += std::log(std::exp(s * cosine_rows(v, i, t, j)) / denom);
    total += inner / static_cast<double>(positives.size());
  }
  return -total / static_cast<double>(n);
}

// Textbook single-positive InfoNCE: cross entropy of row i against target i.
inline double standard_infonce(const Tensor& v, const Tensor& t, double log_scale) {
  const std::size_t n = v.dim(0);
  const double s = std::exp(log_scale);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(n);
    for (std::size_t r = 0; r < n; ++r) logits[r] = s * cosine_rows(v, i, t, r);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    total += -(logits[i] - m - std::log(z));
  }
  return total / static_cast<double>(n);
}

// Fraction of (ID, OOD) pairs ordered correctly, ties counting one half.
inline double pairwise_auroc(const LabeledScores& ls) {
  double total = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    if (!ls.is_id[i]) continue;
    for (std::size_t j = 0; j < ls.scores.size(); ++j) {
      if (ls.is_id[j]) continue;
      pairs += 1.0;
      if (ls.scores[i] > ls.scores[j]) total += 1.0;
      if (ls.scores[i] == ls.scores[j]) total += 0.5;
    }
  }
  return total / pairs;
}

// Sweep over unique thresholds, descending: sum of recall increments times
// the precision of everything scoring at or above the threshold. OOD as the
// positive class ranks by negated score.
inline double sweep_ap(const LabeledScores& ls, bool id_positive) {
  std::vector<double> s;
  std::vector<bool> pos;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    s.push_back(id_positive ? ls.scores[i] : -ls.scores[i]);
    pos.push_back(ls.is_id[i] == id_positive);
  }
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double total_pos = 0.0;
  for (bool p : pos) total_pos += p;
  double prev = 0.0, ap = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (pos[i] ? tp : fp) += 1.0;
    }
    ap += (tp / total_pos - prev) * tp / (tp + fp);
    prev = tp / total_pos;
  }
  return ap;
}

// Largest candidate threshold (ID scores plus -inf) keeping at least `tpr`
// of the ID scores at or above it.
inline double sweep_threshold(const std::vector<double>& id, double tpr) {
  std::set<double> candidates(id.begin(), id.end());
  candidates.insert(-std::numeric_limits<double>::infinity());
  double delta = -std::numeric_limits<double>::infinity();
  for (double d : candidates) {
    double kept = 0.0;
    for (double s : id) kept += s >= d;
    if (kept / static_cast<double>(id.size()) >= tpr) delta = std::max(delta, d);
  }
  return delta;
}

inline double sweep_fpr(const LabeledScores& ls, double tpr) {
  std::vector<double> id, ood;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    (ls.is_id[i] ? id : ood).push_back(ls.scores[i]);
  }
  const double delta = sweep_threshold(id, tpr);
  double accepted = 0.0;
  for (double s : ood) accepted += s >= delta;
  return accepted / static_cast<double>(ood.size());
}

}  // namespace alood::oracles

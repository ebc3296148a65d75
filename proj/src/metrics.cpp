#include "alood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "alood/error.hpp"
#include "alood/scoring.hpp"

namespace alood {

namespace {

void check(const LabeledScores& ls, bool need_both) {
  if (ls.scores.size() != ls.is_id.size()) {
    throw DimensionError("labeled scores: " + std::to_string(ls.scores.size()) + " scores, " +
                         std::to_string(ls.is_id.size()) + " labels");
  }
  if (ls.scores.empty()) throw DataError("labeled scores are empty");
  for (double s : ls.scores) {
    if (std::isnan(s)) throw NumericError("labeled scores contain NaN");
  }
  if (need_both && (ls.id_count() == 0 || ls.ood_count() == 0)) {
    throw DataError("metric needs both ID and OOD samples");
  }
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::size_t LabeledScores::id_count() const {
  return static_cast<std::size_t>(std::count(is_id.begin(), is_id.end(), true));
}

std::size_t LabeledScores::ood_count() const { return is_id.size() - id_count(); }

double fpr_at_tpr(const LabeledScores& ls, double tpr) {
  check(ls, true);
  std::vector<double> id;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    if (ls.is_id[i]) id.push_back(ls.scores[i]);
  }
  const double delta = calibrate_threshold(id, tpr);
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    if (!ls.is_id[i] && decide(ls.scores[i], delta) == Decision::kId) ++accepted;
  }
  return static_cast<double>(accepted) / static_cast<double>(ls.ood_count());
}

double auroc(const LabeledScores& ls) {
  check(ls, true);
  const std::size_t n = ls.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ls.scores[a] < ls.scores[b]; });
  double id_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && ls.scores[order[j]] == ls.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (ls.is_id[order[k]]) id_rank_sum += midrank;
    }
    i = j;
  }
  const double n_id = static_cast<double>(ls.id_count());
  const double n_ood = static_cast<double>(ls.ood_count());
  return (id_rank_sum - n_id * (n_id + 1.0) / 2.0) / (n_id * n_ood);
}

double aupr(const LabeledScores& ls, Positive positive) {
  check(ls, false);
  const bool pos_id = positive == Positive::kId;
  const std::size_t n = ls.scores.size();
  std::vector<double> s(n);
  std::vector<bool> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = pos_id ? ls.scores[i] : -ls.scores[i];
    pos[i] = ls.is_id[i] == pos_id;
  }
  const double total = static_cast<double>(std::count(pos.begin(), pos.end(), true));
  if (total == 0.0) throw DataError("aupr: no positive samples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double tp = 0.0, fp = 0.0, recall_prev = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && s[order[j]] == s[order[i]]) {
      (pos[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total;
    ap += (recall - recall_prev) * (tp / (tp + fp));
    recall_prev = recall;
    i = j;
  }
  return ap;
}

MetricReport evaluate(const LabeledScores& ls) {
  return {100.0 * fpr_at_tpr(ls, 0.95), 100.0 * auroc(ls), 100.0 * aupr(ls, Positive::kId),
          100.0 * aupr(ls, Positive::kOod)};
}

std::string reports_to_json(const std::vector<NamedReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, r] : reports) {
    j[name] = {{"fpr95", r.fpr95}, {"auroc", r.auroc}, {"aupr_s", r.aupr_s},
               {"aupr_e", r.aupr_e}};
  }
  return j.dump(2);
}

std::string reports_to_table(const std::vector<NamedReport>& reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.name.size());
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-*s  %8s  %8s  %8s  %8s\n", static_cast<int>(width), "method",
                "FPR-95", "AUROC", "AUPR-S", "AUPR-E");
  out += buf;
  for (const auto& [name, r] : reports) {
    std::snprintf(buf, sizeof(buf), "%-*s  %8s  %8s  %8s  %8s\n", static_cast<int>(width),
                  name.c_str(), fixed2(r.fpr95).c_str(), fixed2(r.auroc).c_str(),
                  fixed2(r.aupr_s).c_str(), fixed2(r.aupr_e).c_str());
    out += buf;
  }
  return out;
}

Histogram histogram(const LabeledScores& ls, std::size_t bins) {
  check(ls, false);
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(ls.scores.begin(), ls.scores.end());
  const double lo = *lo_it, hi = *hi_it;
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  }
  h.edges.back() = hi;
  h.id_counts.assign(bins, 0);
  h.ood_counts.assign(bins, 0);
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    std::size_t b = 0;
    if (hi > lo) {
      const double pos = (ls.scores[i] - lo) / (hi - lo) * static_cast<double>(bins);
      b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(pos))));
    }
    ++(ls.is_id[i] ? h.id_counts : h.ood_counts)[b];
  }
  auto density = [](const std::vector<std::size_t>& counts) {
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(),
                                                             std::size_t{0}));
    std::vector<double> d(counts.size(), 0.0);
    if (total > 0.0) {
      for (std::size_t b = 0; b < counts.size(); ++b) d[b] = static_cast<double>(counts[b]) / total;
    }
    return d;
  };
  h.id_density = density(h.id_counts);
  h.ood_density = density(h.ood_counts);
  return h;
}

void write_histogram_csv(const std::string& path, const Histogram& h) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write histogram " + path);
  out << "bin_left,bin_right,id_density,ood_density\n";
  char buf[160];
  for (std::size_t b = 0; b < h.id_density.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", h.edges[b], h.edges[b + 1],
                  h.id_density[b], h.ood_density[b]);
    out << buf;
  }
}

}  // namespace alood

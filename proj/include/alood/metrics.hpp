#pragma once

#include <string>
#include <vector>

namespace alood {

/// Parallel arrays; higher score means more ID.
struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> is_id;

  std::size_t id_count() const;
  std::size_t ood_count() const;
};

enum class Positive { kId, kOod };

/// Fraction of OOD scores at or above the threshold that keeps `tpr` of
/// the ID scores.
double fpr_at_tpr(const LabeledScores& ls, double tpr = 0.95);

/// Mann-Whitney statistic with midranks: P(id > ood) + P(id == ood) / 2.
double auroc(const LabeledScores& ls);

/// Step-interpolated average precision; equal scores enter as one group.
/// For Positive::kOod the scores are negated first.
double aupr(const LabeledScores& ls, Positive positive);

/// All values in percent.
struct MetricReport {
  double fpr95 = 0.0;
  double auroc = 0.0;
  double aupr_s = 0.0;
  double aupr_e = 0.0;
};

MetricReport evaluate(const LabeledScores& ls);

struct NamedReport {
  std::string name;
  MetricReport report;
};

/// {"<name>": {"fpr95": .., "auroc": .., "aupr_s": .., "aupr_e": ..}, ...}
std::string reports_to_json(const std::vector<NamedReport>& reports);
/// Aligned table with columns FPR-95, AUROC, AUPR-S, AUPR-E (2 decimals).
std::string reports_to_table(const std::vector<NamedReport>& reports);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> id_counts, ood_counts;
  std::vector<double> id_density, ood_density;  // each sums to 1 (or is all 0)
};

/// Equal-width bins over the combined score range.
Histogram histogram(const LabeledScores& ls, std::size_t bins);

/// CSV with columns bin_left,bin_right,id_density,ood_density.
void write_histogram_csv(const std::string& path, const Histogram& h);

}  // namespace alood

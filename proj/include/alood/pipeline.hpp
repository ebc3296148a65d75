#pragma once

#include <string>
#include <vector>

#include "alood/dataset.hpp"
#include "alood/metrics.hpp"
#include "alood/model.hpp"
#include "alood/prompts.hpp"
#include "alood/scoring.hpp"
#include "alood/synthetic.hpp"
#include "alood/training.hpp"

namespace alood {

/// Embeds every object of `data` in eval mode and scores it against the
/// bank. Records follow file order.
std::vector<ScoreRecord> score_dataset(HeadParams& params, const Dataset& data,
                                       const IdBank& bank, const FusionConfig& fusion);

/// Scores of one variant, labeled ID / OOD by ground truth.
LabeledScores labeled_scores(const std::vector<ScoreRecord>& records, ScoreMethod method,
                             bool norm_scaling);

/// One report per variant, named like variant_name().
std::vector<NamedReport> evaluate_variants(const std::vector<ScoreRecord>& records,
                                           const std::vector<Variant>& variants = all_variants());

const MetricReport& find_report(const std::vector<NamedReport>& reports, const std::string& name);

/// Synthetic benchmark run: generate data, train from a seeded init with a
/// synthetic text encoder, score the val split.
struct Experiment {
  SyntheticSpec data;
  HeadConfig head;
  TrainConfig train;
  std::uint64_t text_seed = 11;
  double box_sensitivity = 0.25;
};

struct ExperimentResult {
  HeadParams params;
  TrainResult training;
  std::vector<ScoreRecord> records;
  std::vector<NamedReport> reports;
  double seconds = 0.0;
};

ExperimentResult run_experiment(const Experiment& experiment);

}  // namespace alood

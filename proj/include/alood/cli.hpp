#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "alood/model.hpp"
#include "alood/pipeline.hpp"
#include "alood/prompts.hpp"
#include "alood/scoring.hpp"
#include "alood/synthetic.hpp"
#include "alood/training.hpp"

namespace alood {

/// Everything a command needs. Loaded from one JSON file; flags override
/// individual fields afterwards. `seed` drives the synthetic data and
/// training; the synthetic text encoder keeps its own identity seed.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::string checkpoint;  // eval/score input; empty means the last epoch

  std::string embedding_cache;  // empty selects the synthetic encoder
  SyntheticEncoderConfig encoder{11, 64, 0.25};

  SyntheticSpec synthetic;
  HeadConfig head;  // channels and embed_dim come from the data and text
  FusionConfig fusion;
  TrainConfig train;

  std::vector<ScoreMethod> methods{kScoreMethods.begin(), kScoreMethods.end()};
  std::vector<bool> norm_scaling{true, false};
  double target_tpr = 0.95;
  std::size_t histogram_bins = 50;

  /// Applies `seed` to the synthetic spec and training and checks ranges.
  void finalize();
  std::vector<Variant> variants() const;
};

/// Unknown keys are a ConfigError so typos do not pass silently.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

/// Fixed file names below the output directory.
std::string checkpoint_path(const RunConfig& config, std::size_t epoch);  // 1-based
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kScoresFile = "scores.csv";
inline constexpr const char* kLossFile = "loss.csv";
inline constexpr const char* kBankFile = "bank.json";

/// Writes the synthetic dataset into data_dir and prints a manifest.
void cmd_synth(const RunConfig& config, std::ostream& log);

/// Trains on data_dir/train.alds, writing one checkpoint per epoch and the
/// loss log. With `resume`, continues from config.checkpoint and keeps the
/// earlier rows of an existing loss log. Returns the final checkpoint path.
std::string cmd_train(const RunConfig& config, bool resume, std::ostream& log);

/// Scores data_dir/val.alds, calibrates one threshold per variant on the ID
/// scores and writes the report, score dump and histograms.
std::vector<NamedReport> cmd_eval(const RunConfig& config, std::ostream& log);

/// Prints prompts, logits, score and decision for one validation object
/// under the first configured variant. Without `threshold` the variant is
/// calibrated on the validation ID scores.
void cmd_score(const RunConfig& config, std::uint64_t object_id,
               std::optional<double> threshold, std::ostream& log);

/// Writes the Simple prompt of each class in `classes_path`, one per line.
void cmd_prompts(const std::string& classes_path, std::ostream& out);

/// 2 config, 3 data, 4 numeric or dimension, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace alood

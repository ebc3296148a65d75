// Command-line entry point: synth, train, eval, score, prompts.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "alood/cli.hpp"
#include "alood/error.hpp"

namespace {

// Flag values that override the config file when given.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir, out_dir, checkpoint, cache, mode, method;
  std::optional<std::size_t> epochs;
  std::optional<double> margin, lambda;
  bool no_norm = false;
  bool norm_only = false;
};

void add_common(CLI::App* cmd, std::string& config_path, Overrides& o) {
  cmd->add_option("-c,--config", config_path, "JSON run config");
  cmd->add_option("--seed", o.seed, "Seed for data generation and training");
  cmd->add_option("--data-dir", o.data_dir, "Dataset directory");
  cmd->add_option("--out-dir", o.out_dir, "Output directory");
}

alood::RunConfig resolve(const std::string& config_path, const Overrides& o) {
  alood::RunConfig c =
      config_path.empty() ? alood::RunConfig{} : alood::load_run_config(config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.data_dir) c.data_dir = *o.data_dir;
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.cache) c.embedding_cache = *o.cache;
  if (o.mode) c.synthetic.mode = alood::dataset_mode_from_string(*o.mode);
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.margin) c.synthetic.margin_degrees = *o.margin;
  if (o.lambda) c.fusion.lambda = *o.lambda;
  if (o.method) c.methods = {alood::score_method_from_string(*o.method)};
  if (o.no_norm && o.norm_only) throw alood::ConfigError("--no-norm and --norm conflict");
  if (o.no_norm) c.norm_scaling = {false};
  if (o.norm_only) c.norm_scaling = {true};
  c.finalize();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc OOD detection head: data, training, scoring, evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;
  bool print_config = false;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic benchmark dataset");
  add_common(synth, config_path, o);
  synth->add_option("--margin", o.margin, "Minimum angle between centers in degrees");
  synth->add_option("--mode", o.mode, "feature_maps or object_features");

  auto* train = app.add_subcommand("train", "Train the head and write per-epoch checkpoints");
  add_common(train, config_path, o);
  train->add_option("--epochs", o.epochs, "Number of epochs");
  train->add_option("--lambda", o.lambda, "Scene feature weight");
  train->add_option("--cache", o.cache, "Text embedding cache (JSON)");
  train->add_option("--resume", o.checkpoint, "Continue from this checkpoint");
  train->add_flag("--print-config", print_config, "Print the resolved config and exit");

  auto* eval = app.add_subcommand("eval", "Score the validation split and write the report");
  add_common(eval, config_path, o);
  eval->add_option("--checkpoint", o.checkpoint, "Head checkpoint (default: last epoch)");
  eval->add_option("--cache", o.cache, "Text embedding cache (JSON)");
  eval->add_option("--method", o.method, "Only this method: maxlogit, msp or energy");
  eval->add_flag("--no-norm", o.no_norm, "Only the plain scores");
  eval->add_flag("--norm", o.norm_only, "Only the norm-scaled scores");

  std::uint64_t object_id = 0;
  std::optional<double> threshold;
  auto* score = app.add_subcommand("score", "Explain the decision for one validation object");
  add_common(score, config_path, o);
  score->add_option("--object-id", object_id, "Object id in the validation split")->required();
  score->add_option("--checkpoint", o.checkpoint, "Head checkpoint (default: last epoch)");
  score->add_option("--cache", o.cache, "Text embedding cache (JSON)");
  score->add_option("--method", o.method, "maxlogit, msp or energy");
  score->add_flag("--no-norm", o.no_norm, "Use the plain score");
  score->add_option("--threshold", threshold, "Decision threshold (default: calibrated)");

  std::string classes_path;
  auto* prompts = app.add_subcommand("prompts", "Print the Simple prompt for each class");
  prompts->add_option("classes", classes_path, "Class list, one per line")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*prompts) {
      alood::cmd_prompts(classes_path, std::cout);
      return 0;
    }
    const alood::RunConfig config = resolve(config_path, o);
    if (*synth) {
      alood::cmd_synth(config, std::cout);
    } else if (*train) {
      if (print_config) {
        std::cout << alood::run_config_to_json(config);
        return 0;
      }
      alood::cmd_train(config, o.checkpoint.has_value(), std::cout);
    } else if (*eval) {
      alood::cmd_eval(config, std::cout);
    } else if (*score) {
      alood::cmd_score(config, object_id, threshold, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return alood::exit_code_for(e);
  }
  return 0;
}

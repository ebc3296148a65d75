#include "alood/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "alood/error.hpp"

namespace alood {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const ordered_json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where_ + key + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + where_ + key + "' has the wrong type");
    }
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return std::optional<Section>(std::in_place, j_.at(key), where_ + key + ".");
  }

 private:
  const ordered_json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

TextSource text_source(const RunConfig& c) {
  if (c.embedding_cache.empty()) return c.encoder;
  require_file(c.embedding_cache, "embedding cache");
  return read_embedding_cache(c.embedding_cache);
}

// The class list next to the data must match the header when present.
void check_class_list(const RunConfig& c, const DatasetHeader& header) {
  const std::string path = join(c.data_dir, "classes.txt");
  if (!fs::exists(path)) return;
  if (read_class_list(path) != header.classes) {
    throw DataError("classes.txt in " + c.data_dir + " does not match the dataset header");
  }
}

Dataset load_split(const RunConfig& c, const char* file) {
  const std::string path = join(c.data_dir, file);
  require_file(path, "dataset");
  Dataset d = read_dataset(path);
  check_class_list(c, d.header);
  return d;
}

HeadParams load_head(const RunConfig& c, const Dataset& data, std::size_t dim) {
  std::string path = c.checkpoint;
  if (path.empty()) path = checkpoint_path(c, c.train.epochs);
  require_file(path, "checkpoint");
  HeadParams p = read_checkpoint(path).params;
  if (p.config.channels != data.header.channels || p.config.embed_dim != dim) {
    throw DimensionError("checkpoint " + path + " has C=" + std::to_string(p.config.channels) +
                         ", D=" + std::to_string(p.config.embed_dim) + " but the data has C=" +
                         std::to_string(data.header.channels) + " and the text source D=" +
                         std::to_string(dim));
  }
  return p;
}

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<ScoreRecord> score_val(const RunConfig& c, const TextSource& text,
                                   const Dataset& val) {
  HeadParams params = load_head(c, val, text_dim(text));
  const IdBank bank = build_id_bank(val.header.classes, text);
  return score_dataset(params, val, bank, c.fusion);
}

}  // namespace

void RunConfig::finalize() {
  synthetic.seed = seed;
  train.seed = seed;
  train.lambda = fusion.lambda;
  synthetic.embed_dim = encoder.dim;
  if (data_dir.empty() || out_dir.empty()) throw ConfigError("data_dir and out_dir must be set");
  encoder.validate();
  fusion.validate();
  train.validate();
  synthetic.validate();
  if (methods.empty() || norm_scaling.empty()) {
    throw ConfigError("at least one score method and norm-scaling variant is required");
  }
  if (!(target_tpr > 0.0 && target_tpr <= 1.0)) throw ConfigError("target_tpr must be in (0, 1]");
  if (histogram_bins < 1) throw ConfigError("histogram_bins must be at least 1");
}

std::vector<Variant> RunConfig::variants() const {
  std::vector<Variant> out;
  for (auto m : methods) {
    for (bool n : norm_scaling) out.push_back({m, n});
  }
  return out;
}

RunConfig parse_run_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("data_dir", c.data_dir);
  root.get("out_dir", c.out_dir);
  root.get("checkpoint", c.checkpoint);
  if (auto s = root.sub("text")) {
    s->get("cache", c.embedding_cache);
    s->get("encoder_seed", c.encoder.seed);
    s->get("embed_dim", c.encoder.dim);
    s->get("box_sensitivity", c.encoder.box_sensitivity);
    s->done();
  }
  if (auto s = root.sub("synthetic")) {
    SyntheticSpec& d = c.synthetic;
    s->get("num_classes", d.num_classes);
    s->get("n_train", d.n_train);
    s->get("n_val_id", d.n_val_id);
    s->get("n_val_ood", d.n_val_ood);
    s->get("channels", d.channels);
    s->get("margin_degrees", d.margin_degrees);
    s->get("sigma", d.sigma);
    s->get("center_norm", d.center_norm);
    s->get("ood_norm_scale", d.ood_norm_scale);
    s->get("ood_clusters", d.ood_clusters);
    s->get("objects_per_scene", d.objects_per_scene);
    std::string mode = to_string(d.mode);
    s->get("mode", mode);
    try {
      d.mode = dataset_mode_from_string(mode);
    } catch (const Error&) {
      throw ConfigError("unknown dataset mode '" + mode + "'");
    }
    if (auto g = s->sub("grid")) {
      g->get("x_min", d.grid.x_min);
      g->get("y_min", d.grid.y_min);
      g->get("cell_size", d.grid.cell_size);
      g->get("height", d.grid.height);
      g->get("width", d.grid.width);
      g->done();
    }
    s->get("background_noise", d.background_noise);
    s->get("scene_feature_noise", d.scene_feature_noise);
    s->get("max_center_attempts", d.max_center_attempts);
    s->done();
  }
  if (auto s = root.sub("head")) {
    s->get("use_adapter", c.head.use_adapter);
    s->get("use_box", c.head.use_box);
    s->done();
  }
  if (auto s = root.sub("fusion")) {
    s->get("lambda", c.fusion.lambda);
    s->done();
  }
  if (auto s = root.sub("train")) {
    TrainConfig& t = c.train;
    s->get("epochs", t.epochs);
    s->get("batch_size", t.batch_size);
    s->get("base_lr", t.base_lr);
    s->get("lr_halving_period", t.lr_halving_period);
    s->get("weight_decay", t.weight_decay);
    std::string prompts = to_string(t.prompts);
    s->get("prompts", prompts);
    t.prompts = prompt_mode_from_string(prompts);
    s->get("align_only", t.align_only);
    s->done();
  }
  if (auto s = root.sub("eval")) {
    std::vector<std::string> methods;
    s->get("methods", methods);
    if (!methods.empty()) {
      c.methods.clear();
      for (const auto& m : methods) c.methods.push_back(score_method_from_string(m));
    }
    s->get("norm_scaling", c.norm_scaling);
    s->get("target_tpr", c.target_tpr);
    s->get("histogram_bins", c.histogram_bins);
    s->done();
  }
  root.done();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["checkpoint"] = c.checkpoint;
  j["text"] = {{"cache", c.embedding_cache},
               {"encoder_seed", c.encoder.seed},
               {"embed_dim", c.encoder.dim},
               {"box_sensitivity", c.encoder.box_sensitivity}};
  const SyntheticSpec& d = c.synthetic;
  j["synthetic"] = {{"num_classes", d.num_classes},
                    {"n_train", d.n_train},
                    {"n_val_id", d.n_val_id},
                    {"n_val_ood", d.n_val_ood},
                    {"channels", d.channels},
                    {"margin_degrees", d.margin_degrees},
                    {"sigma", d.sigma},
                    {"center_norm", d.center_norm},
                    {"ood_norm_scale", d.ood_norm_scale},
                    {"ood_clusters", d.ood_clusters},
                    {"objects_per_scene", d.objects_per_scene},
                    {"mode", to_string(d.mode)},
                    {"grid",
                     {{"x_min", d.grid.x_min},
                      {"y_min", d.grid.y_min},
                      {"cell_size", d.grid.cell_size},
                      {"height", d.grid.height},
                      {"width", d.grid.width}}},
                    {"background_noise", d.background_noise},
                    {"scene_feature_noise", d.scene_feature_noise},
                    {"max_center_attempts", d.max_center_attempts}};
  j["head"] = {{"use_adapter", c.head.use_adapter}, {"use_box", c.head.use_box}};
  j["fusion"] = {{"lambda", c.fusion.lambda}};
  const TrainConfig& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"base_lr", t.base_lr},
                {"lr_halving_period", t.lr_halving_period},
                {"weight_decay", t.weight_decay},
                {"prompts", to_string(t.prompts)},
                {"align_only", t.align_only}};
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.push_back(to_string(m));
  j["eval"] = {{"methods", methods},
               {"norm_scaling", c.norm_scaling},
               {"target_tpr", c.target_tpr},
               {"histogram_bins", c.histogram_bins}};
  return j.dump(2) + "\n";
}

std::string checkpoint_path(const RunConfig& c, std::size_t epoch) {
  return (fs::path(c.out_dir) / "checkpoints" / ("epoch_" + std::to_string(epoch) + ".alod"))
      .string();
}

void cmd_synth(const RunConfig& c, std::ostream& log) {
  generate_synthetic(c.synthetic, c.data_dir);
  for (const char* name : {"train.alds", "train.alds.json", "val.alds", "val.alds.json",
                           "classes.txt"}) {
    const std::string path = join(c.data_dir, name);
    log << path << "  " << fs::file_size(path) << " bytes\n";
  }
}

std::string cmd_train(const RunConfig& c, bool resume, std::ostream& log) {
  const Dataset data = load_split(c, "train.alds");
  const TextSource text = text_source(c);

  HeadParams params;
  OptimState state;
  std::size_t start = 0;
  std::vector<LossRow> rows;
  if (resume) {
    if (c.checkpoint.empty()) throw ConfigError("resuming needs a checkpoint path");
    Checkpoint ck = [&] {
      require_file(c.checkpoint, "checkpoint");
      return read_checkpoint(c.checkpoint);
    }();
    params = std::move(ck.params);
    state = std::move(ck.state);
    start = ck.completed_epochs;
    if (params.config.use_adapter != c.head.use_adapter ||
        params.config.use_box != c.head.use_box) {
      throw ConfigError("checkpoint " + c.checkpoint + " was trained with a different head");
    }
    const std::string old_log = join(c.out_dir, kLossFile);
    if (fs::exists(old_log)) {
      for (const auto& r : read_loss_csv(old_log)) {
        if (r.epoch < start) rows.push_back(r);
      }
    }
  } else {
    HeadConfig head = c.head;
    head.channels = data.header.channels;
    head.embed_dim = text_dim(text);
    params = init_head_params(head, c.train.seed);
  }

  fs::create_directories(fs::path(c.out_dir) / "checkpoints");
  const auto hook = [&](std::size_t epoch, const HeadParams& p, const OptimState& s) {
    const std::string path = checkpoint_path(c, epoch + 1);
    write_checkpoint(path, p, s, epoch + 1);
    log << "epoch " << epoch + 1 << " -> " << path << "\n";
  };
  const TrainResult result = train(data, params, state, c.train, text, hook, start);
  for (std::size_t e = 0; e < result.epoch_mean.size(); ++e) {
    log << "epoch " << start + e + 1 << " mean loss " << num(result.epoch_mean[e]) << "\n";
  }
  rows.insert(rows.end(), result.log.begin(), result.log.end());
  write_loss_csv(join(c.out_dir, kLossFile), rows);
  write_id_bank(join(c.out_dir, kBankFile), build_id_bank(data.header.classes, text));

  const std::string final_path = checkpoint_path(c, c.train.epochs);
  if (!fs::exists(final_path)) write_checkpoint(final_path, params, state, c.train.epochs);
  log << "final checkpoint " << final_path << "\n";
  return final_path;
}

std::vector<NamedReport> cmd_eval(const RunConfig& c, std::ostream& log) {
  const Dataset val = load_split(c, "val.alds");
  const TextSource text = text_source(c);
  const std::vector<ScoreRecord> records = score_val(c, text, val);
  const std::vector<Variant> variants = c.variants();
  const VariantThresholds thresholds = calibrate_variants(records, c.target_tpr);
  const std::vector<NamedReport> reports = evaluate_variants(records, variants);

  fs::create_directories(c.out_dir);
  ordered_json report = ordered_json::parse(reports_to_json(reports));
  for (const auto& v : variants) {
    report[v.name()]["threshold"] = thresholds[static_cast<std::size_t>(v.method)][v.norm_scaling];
  }
  {
    std::ofstream out(join(c.out_dir, kReportFile));
    if (!out) throw DataError("cannot write report in " + c.out_dir);
    out << report.dump(2) << "\n";
  }
  write_scores_csv(join(c.out_dir, kScoresFile), records, thresholds, variants);
  for (const auto& v : variants) {
    write_histogram_csv(join(c.out_dir, "hist_" + v.name() + ".csv"),
                        histogram(labeled_scores(records, v.method, v.norm_scaling),
                                  c.histogram_bins));
  }
  log << reports_to_table(reports);
  return reports;
}

void cmd_score(const RunConfig& c, std::uint64_t object_id, std::optional<double> threshold,
               std::ostream& log) {
  const Dataset val = load_split(c, "val.alds");
  const TextSource text = text_source(c);
  const std::vector<ScoreRecord> records = score_val(c, text, val);
  const Variant v = c.variants().front();

  const ScoreRecord* rec = nullptr;
  for (const auto& r : records) {
    if (r.object_id == object_id) rec = &r;
  }
  if (!rec) throw DataError("no validation object with id " + std::to_string(object_id));
  if (!threshold) {
    threshold = calibrate_variants(records, c.target_tpr)[static_cast<std::size_t>(v.method)]
                                                        [v.norm_scaling];
  }

  log << "object " << object_id << (rec->is_ood ? " (OOD ground truth)" : " (ID ground truth)")
      << "\n";
  for (std::size_t k = 0; k < val.header.classes.size(); ++k) {
    log << "  s_" << k + 1 << " = " << num(rec->logits[k]) << "  \""
        << render_prompt({PromptKind::kSimple, val.header.classes[k], std::nullopt}) << "\"\n";
  }
  const double value = rec->value(v.method, v.norm_scaling);
  log << "predicted class " << val.header.classes[rec->argmax] << "\n"
      << "feature norm " << num(rec->v_norm) << "\n"
      << v.name() << " score " << num(value) << ", threshold " << num(*threshold) << "\n"
      << "decision " << to_string(decide(value, *threshold)) << "\n";
}

void cmd_prompts(const std::string& classes_path, std::ostream& out) {
  require_file(classes_path, "class list");
  for (const auto& cls : read_class_list(classes_path)) {
    out << render_prompt({PromptKind::kSimple, cls, std::nullopt}) << '\n';
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return 4;
  return 1;
}

}  // namespace alood

#include "alood/pipeline.hpp"

#include <chrono>

#include "alood/error.hpp"

namespace alood {

std::vector<ScoreRecord> score_dataset(HeadParams& params, const Dataset& data,
                                       const IdBank& bank, const FusionConfig& fusion) {
  if (bank.embeddings.dim(1) != params.config.embed_dim) {
    throw DimensionError("ID bank dimension " + std::to_string(bank.embeddings.dim(1)) +
                         " differs from the head's " + std::to_string(params.config.embed_dim));
  }
  const double log_scale = params.log_scale.value().item();
  std::vector<ScoreRecord> out;
  for (const auto& scene : data.scenes) {
    if (scene.objects.empty()) continue;
    Tape tape;
    const HeadVars vars = bind_params(tape, params);
    const auto fwd = forward_scene(tape, vars, params, model_inputs(data.header, scene, params.config),
                                   scene_boxes(scene), fusion, NormMode::kEval);
    const Tensor& v = tape.value(fwd.embeddings);
    const std::size_t d = v.dim(1);
    for (std::size_t j = 0; j < scene.objects.size(); ++j) {
      const auto row = v.data().subspan(j * d, d);
      ScoreRecord r = score_embedding(Tensor({d}, {row.begin(), row.end()}), bank.embeddings,
                                      log_scale);
      r.object_id = scene.objects[j].id;
      r.is_ood = scene.objects[j].is_ood;
      out.push_back(std::move(r));
    }
  }
  return out;
}

LabeledScores labeled_scores(const std::vector<ScoreRecord>& records, ScoreMethod method,
                             bool norm_scaling) {
  LabeledScores ls;
  for (const auto& r : records) {
    ls.scores.push_back(r.value(method, norm_scaling));
    ls.is_id.push_back(!r.is_ood);
  }
  return ls;
}

std::vector<NamedReport> evaluate_variants(const std::vector<ScoreRecord>& records,
                                           const std::vector<Variant>& variants) {
  std::vector<NamedReport> out;
  for (const auto& v : variants) {
    out.push_back({v.name(), evaluate(labeled_scores(records, v.method, v.norm_scaling))});
  }
  return out;
}

const MetricReport& find_report(const std::vector<NamedReport>& reports, const std::string& name) {
  for (const auto& r : reports) {
    if (r.name == name) return r.report;
  }
  throw ConfigError("no report named '" + name + "'");
}

ExperimentResult run_experiment(const Experiment& e) {
  const auto start = std::chrono::steady_clock::now();
  const SyntheticData data = synthesize(e.data);
  const TextSource text = SyntheticEncoderConfig{e.text_seed, e.data.embed_dim, e.box_sensitivity};

  ExperimentResult result;
  HeadConfig head = e.head;
  head.channels = e.data.channels;
  head.embed_dim = e.data.embed_dim;
  result.params = init_head_params(head, e.train.seed);
  OptimState state;
  result.training = train(data.train, result.params, state, e.train, text);

  const IdBank bank = build_id_bank(data.train.header.classes, text);
  result.records = score_dataset(result.params, data.val, bank, FusionConfig{e.train.lambda});
  result.reports = evaluate_variants(result.records);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace alood

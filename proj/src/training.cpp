#include "alood/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include "alood/error.hpp"
#include "alood/ops.hpp"
#include "alood/random.hpp"

namespace alood {

namespace {

double row_norm(const Tensor& m, std::size_t i) {
  const std::size_t d = m.dim(1);
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += m.at(i, k) * m.at(i, k);
  return std::sqrt(s);
}

}  // namespace

Var multi_positive_infonce(Tape& tape, Var v, const Tensor& t,
                           const std::vector<std::size_t>& labels, Var log_scale) {
  const Tensor& vv = tape.value(v);
  if (vv.rank() != 2 || t.rank() != 2 || vv.shape() != t.shape()) {
    throw DimensionError("multi_positive_infonce: V " + shape_to_string(vv.shape()) +
                         " and T " + shape_to_string(t.shape()) + " must both be N x D");
  }
  const std::size_t n = vv.dim(0), d = vv.dim(1);
  if (n == 0) throw DimensionError("multi_positive_infonce: empty batch");
  if (labels.size() != n) {
    throw DimensionError("multi_positive_infonce: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " embeddings");
  }
  if (tape.value(log_scale).size() != 1) {
    throw DimensionError("multi_positive_infonce: log_scale must hold one value");
  }
  const double s = std::exp(tape.value(log_scale)[0]);

  // Unit rows of V and T.
  struct Saved {
    Tensor vhat, that, cos, coef;  // coef = (p - q) / N
    std::vector<double> vnorm;
    double scale = 0.0;
  };
  auto saved = std::make_shared<Saved>();
  saved->vhat = vv;
  saved->that = t;
  saved->vnorm.resize(n);
  saved->scale = s;
  for (std::size_t i = 0; i < n; ++i) {
    const double nv = row_norm(vv, i), nt = row_norm(t, i);
    if (!(nv > 0.0) || !(nt > 0.0) || !std::isfinite(nv) || !std::isfinite(nt)) {
      throw NumericError("degenerate embedding at row " + std::to_string(i));
    }
    saved->vnorm[i] = nv;
    for (std::size_t k = 0; k < d; ++k) {
      saved->vhat.at(i, k) /= nv;
      saved->that.at(i, k) /= nt;
    }
  }

  Tensor& cos = saved->cos = Tensor({n, n});
  Tensor& coef = saved->coef = Tensor({n, n});
  double loss = 0.0;
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = -INFINITY;
    for (std::size_t r = 0; r < n; ++r) {
      double c = 0.0;
      for (std::size_t k = 0; k < d; ++k) c += saved->vhat.at(i, k) * saved->that.at(r, k);
      cos.at(i, r) = c;
      z[r] = s * c;
      zmax = std::max(zmax, z[r]);
    }
    double denom = 0.0;
    for (std::size_t r = 0; r < n; ++r) denom += std::exp(z[r] - zmax);
    const double lse = zmax + std::log(denom);

    std::size_t positives = 0;
    for (std::size_t r = 0; r < n; ++r) positives += labels[r] == labels[i];
    double term = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const bool pos = labels[r] == labels[i];
      if (pos) term += z[r] - lse;
      const double p = std::exp(z[r] - lse);
      const double q = pos ? 1.0 / static_cast<double>(positives) : 0.0;
      coef.at(i, r) = (p - q) / static_cast<double>(n);
    }
    loss -= term / static_cast<double>(positives);
  }
  loss /= static_cast<double>(n);

  return tape.record(
      Tensor::scalar(loss), {v, log_scale}, [saved, n, d](const Tensor& gy, std::span<Tensor> g) {
        const double up = gy[0];
        const double s = saved->scale;
        double dlog = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t r = 0; r < n; ++r) {
            const double gc = up * s * saved->coef.at(i, r);  // dL/dcos
            dlog += gc * saved->cos.at(i, r);
            if (gc == 0.0) continue;
            const double inv = gc / saved->vnorm[i];
            const double c = saved->cos.at(i, r);
            for (std::size_t k = 0; k < d; ++k) {
              g[0].at(i, k) += inv * (saved->that.at(r, k) - c * saved->vhat.at(i, k));
            }
          }
        }
        g[1][0] = dlog;
      });
}

void adamw_step(const std::vector<HeadParams::Entry>& entries, const std::vector<Tensor>& grads,
                OptimState& state, double lr) {
  if (grads.size() != entries.size()) {
    throw DimensionError("adamw_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Tensor& p = entries[i].param->value();
    if (!grads[i].same_shape(p)) {
      throw DimensionError("adamw_step: gradient for " + entries[i].name + " has shape " +
                           shape_to_string(grads[i].shape()) + ", parameter is " +
                           shape_to_string(p.shape()));
    }
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient for parameter " + entries[i].name);
      }
    }
  }

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const Tensor& g = grads[i];
    auto [mit, m_new] = state.m.try_emplace(e.name, g.shape());
    auto [vit, v_new] = state.v.try_emplace(e.name, g.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!m.same_shape(g) || !v.same_shape(g)) {
      throw DimensionError("adamw_step: moment buffers for " + e.name + " have the wrong shape");
    }
    const double wd = e.decay ? c.weight_decay : 0.0;
    Tensor& p = e.param->mutable_value();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] = p[k] - lr * wd * p[k] - lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

std::string to_string(PromptMode mode) { return mode == PromptMode::kMixed ? "mixed" : "simple"; }

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "mixed") return PromptMode::kMixed;
  if (s == "simple") return PromptMode::kSimple;
  throw ConfigError("unknown prompt mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (lr_halving_period < 1) throw ConfigError("lr_halving_period must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  FusionConfig{lambda}.validate();
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  return config.base_lr *
         std::pow(0.5, static_cast<double>(epoch / config.lr_halving_period));
}

SceneFeatures model_inputs(const DatasetHeader& header, const SceneRecord& scene,
                           const HeadConfig& config) {
  if (config.use_adapter) {
    if (header.mode != DatasetMode::kFeatureMaps) {
      throw ConfigError("the adapter needs a feature-maps dataset; this one is " +
                        to_string(header.mode));
    }
    return scene_features(header, scene);
  }
  return precomputed_features(header, scene);
}

namespace {

Var var_for(const HeadParams& params, const HeadVars& vars, const Parameter* p) {
  const std::pair<const Parameter*, Var> table[] = {
      {&params.conv1_weight, vars.conv1_weight}, {&params.conv1_bias, vars.conv1_bias},
      {&params.bn1_gamma, vars.bn1_gamma},       {&params.bn1_beta, vars.bn1_beta},
      {&params.conv2_weight, vars.conv2_weight}, {&params.conv2_bias, vars.conv2_bias},
      {&params.bn2_gamma, vars.bn2_gamma},       {&params.bn2_beta, vars.bn2_beta},
      {&params.box_weight, vars.box_weight},     {&params.box_bias, vars.box_bias},
      {&params.align_weight, vars.align_weight}, {&params.align_bias, vars.align_bias},
      {&params.log_scale, vars.log_scale}};
  for (const auto& [param, var] : table) {
    if (param == p) return var;
  }
  throw ConfigError("parameter is not part of this head");
}

constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"

}  // namespace

TrainResult train(const Dataset& data, HeadParams& params, OptimState& state,
                  const TrainConfig& config, const TextSource& text, const EpochHook& on_epoch,
                  std::size_t start_epoch) {
  config.validate();
  const auto& header = data.header;
  if (header.split != Split::kTrain) throw DataError("training needs the train split");
  if (header.channels != params.config.channels) {
    throw DimensionError("dataset has " + std::to_string(header.channels) +
                         " channels, head expects " + std::to_string(params.config.channels));
  }
  if (text_dim(text) != params.config.embed_dim) {
    throw DimensionError("text embeddings have dimension " + std::to_string(text_dim(text)) +
                         ", head produces " + std::to_string(params.config.embed_dim));
  }

  std::vector<std::size_t> usable;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    for (const auto& o : data.scenes[s].objects) {
      if (o.is_ood) throw DataError("training data contains an OOD object");
    }
    if (!data.scenes[s].objects.empty()) usable.push_back(s);
  }
  if (usable.empty()) throw DataError("empty training dataset");

  // Simple prompts depend only on the class; embedding them up front also
  // surfaces classes the text source does not know before any step runs.
  std::vector<Tensor> simple;
  for (const auto& cls : header.classes) {
    simple.push_back(embed_prompt(text, {PromptKind::kSimple, cls, std::nullopt}));
  }

  std::vector<HeadParams::Entry> entries = params.trainable();
  if (config.align_only) {
    std::erase_if(entries, [](const auto& e) { return e.name.rfind("align.", 0) != 0; });
  }
  state.config.weight_decay = config.weight_decay;
  const FusionConfig fusion{config.lambda};
  const std::size_t d = params.config.embed_dim;

  TrainResult result;
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    std::mt19937_64 rng(derive_key({config.seed, kShuffleStream, epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(epoch, config);

    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      const HeadVars vars = bind_params(tape, params);
      std::vector<Var> parts;
      std::vector<std::size_t> labels;
      std::vector<double> prompt_rows;
      for (std::size_t b = start; b < end; ++b) {
        const SceneRecord& scene = data.scenes[order[b]];
        parts.push_back(forward_scene(tape, vars, params,
                                      model_inputs(header, scene, params.config),
                                      scene_boxes(scene), fusion, NormMode::kTrain)
                            .embeddings);
        for (std::size_t j = 0; j < scene.objects.size(); ++j) {
          const auto& o = scene.objects[j];
          const auto k = class_index(header, o.label);
          if (!k) throw DataError("object label '" + o.label + "' is not a declared class");
          labels.push_back(*k);
          const PromptKind kind = config.prompts == PromptMode::kSimple
                                      ? PromptKind::kSimple
                                      : choose_prompt_kind(config.seed, epoch, scene.id, j);
          const Tensor e = kind == PromptKind::kSimple
                               ? simple[*k]
                               : embed_prompt(text, {kind, o.label, o.box});
          prompt_rows.insert(prompt_rows.end(), e.data().begin(), e.data().end());
        }
      }
      const Var v = parts.size() == 1 ? parts.front() : concat_rows(tape, parts);
      const Tensor t({labels.size(), d}, std::move(prompt_rows));
      const Var loss = multi_positive_infonce(tape, v, t, labels, vars.log_scale);
      tape.backward(loss);

      std::vector<Tensor> grads;
      grads.reserve(entries.size());
      for (const auto& e : entries) grads.push_back(tape.grad(var_for(params, vars, e.param)));
      const double value = tape.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batches));
      }
      adamw_step(entries, grads, state, lr);
      params.clamp_log_scale();

      result.log.push_back({epoch, batches, lr, value});
      epoch_total += value;
      ++batches;
    }
    result.epoch_mean.push_back(epoch_total / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, params, state);
  }
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write loss log " + path);
  out << "epoch,batch,lr,loss\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g\n", r.epoch, r.batch, r.lr, r.loss);
    out << buf;
  }
}

std::vector<LossRow> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open loss log " + path);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,batch,lr,loss") {
    throw DataError(path + ": missing loss log header");
  }
  std::vector<LossRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRow r;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf", &r.epoch, &r.batch, &r.lr, &r.loss) != 4) {
      throw DataError(path + ": malformed loss row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

void write_checkpoint(const std::string& path, const HeadParams& params, const OptimState& state,
                      std::size_t completed_epochs) {
  auto tensors = head_to_tensors(params);
  const auto& c = state.config;
  tensors.push_back({"optim.config", Tensor::vector({c.beta1, c.beta2, c.eps, c.weight_decay})});
  tensors.push_back({"optim.step", Tensor::scalar(static_cast<double>(state.step))});
  tensors.push_back(
      {"train.completed_epochs", Tensor::scalar(static_cast<double>(completed_epochs))});
  for (const auto& [name, m] : state.m) tensors.push_back({"optim.m." + name, m});
  for (const auto& [name, v] : state.v) tensors.push_back({"optim.v." + name, v});
  write_tensor_archive(path, tensors);
}

Checkpoint read_checkpoint(const std::string& path) {
  const auto tensors = read_tensor_archive(path);
  Checkpoint ck{head_from_tensors(tensors), {}, 0};
  auto count = [&](const Tensor& t, const char* what) {
    const double x = t.item();
    if (!(x >= 0.0) || x != std::floor(x) || x > 9.0e15) {
      throw DataError(path + ": invalid " + what);
    }
    return static_cast<std::uint64_t>(x);
  };
  for (const auto& [name, value] : tensors) {
    if (name == "optim.config") {
      if (value.size() != 4) throw DataError(path + ": invalid optim.config");
      ck.state.config = {value[0], value[1], value[2], value[3]};
    } else if (name == "optim.step") {
      ck.state.step = count(value, "optimizer step");
    } else if (name == "train.completed_epochs") {
      ck.completed_epochs = count(value, "epoch count");
    } else if (name.rfind("optim.m.", 0) == 0) {
      ck.state.m[name.substr(8)] = value;
    } else if (name.rfind("optim.v.", 0) == 0) {
      ck.state.v[name.substr(8)] = value;
    }
  }
  if (ck.state.m.size() != ck.state.v.size()) {
    throw DataError(path + ": optimizer moments are incomplete");
  }
  for (const auto& e : ck.params.trainable()) {
    const auto it = ck.state.m.find(e.name);
    if (it != ck.state.m.end() && !it->second.same_shape(e.param->value())) {
      throw DataError(path + ": optimizer moment for " + e.name + " has the wrong shape");
    }
  }
  return ck;
}

}  // namespace alood

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "alood/dataset.hpp"
#include "alood/model.hpp"
#include "alood/prompts.hpp"
#include "alood/tensor.hpp"

namespace alood {

/// Multi-positive contrastive loss of object embeddings V [N x D] against
/// prompt embeddings T [N x D] (constants). Objects sharing a label are all
/// positives for each other; logits are exp(log_scale) * cosine.
Var multi_positive_infonce(Tape& tape, Var v, const Tensor& t,
                           const std::vector<std::size_t>& labels, Var log_scale);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;  // first moments, keyed by parameter name
  std::map<std::string, Tensor> v;  // second moments
};

/// One decoupled-weight-decay Adam update over `entries`; grads[i] belongs
/// to entries[i]. Entries with decay == false skip weight decay. All grads
/// are checked before anything is modified.
void adamw_step(const std::vector<HeadParams::Entry>& entries, const std::vector<Tensor>& grads,
                OptimState& state, double lr);

enum class PromptMode { kMixed, kSimple };

std::string to_string(PromptMode mode);
PromptMode prompt_mode_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 1;  // scenes per optimizer step
  double base_lr = 1.5e-4;
  std::size_t lr_halving_period = 2;
  std::uint64_t seed = 0;
  double lambda = 0.1;
  double weight_decay = 0.01;
  PromptMode prompts = PromptMode::kMixed;
  bool align_only = false;  // freeze everything except the align layer

  void validate() const;
};

/// base_lr * 0.5^floor(epoch / lr_halving_period).
double lr_at(std::size_t epoch, const TrainConfig& config);

struct LossRow {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossRow> log;
  std::vector<double> epoch_mean;  // unweighted mean of batch losses
};

/// Called after each completed epoch (0-based) with the current state.
using EpochHook = std::function<void(std::size_t epoch, const HeadParams&, const OptimState&)>;

/// Model inputs for a scene: feature maps when the head has the adapter,
/// stored per-object features otherwise.
SceneFeatures model_inputs(const DatasetHeader& header, const SceneRecord& scene,
                           const HeadConfig& config);

/// Trains `params` in place on the ID-only split `data`, starting at
/// `start_epoch` (for resuming). Scene order and prompt choices derive from
/// config.seed and the epoch, so a resumed run matches an uninterrupted one.
TrainResult train(const Dataset& data, HeadParams& params, OptimState& state,
                  const TrainConfig& config, const TextSource& text,
                  const EpochHook& on_epoch = {}, std::size_t start_epoch = 0);

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows);
std::vector<LossRow> read_loss_csv(const std::string& path);

/// Full training checkpoint: head tensors plus optimizer moments, step
/// counter and the number of completed epochs.
void write_checkpoint(const std::string& path, const HeadParams& params, const OptimState& state,
                      std::size_t completed_epochs);

struct Checkpoint {
  HeadParams params;
  OptimState state;
  std::size_t completed_epochs = 0;
};

/// Reads either a full training checkpoint or a bare head archive (then the
/// optimizer state is empty and completed_epochs is 0).
Checkpoint read_checkpoint(const std::string& path);

}  // namespace alood

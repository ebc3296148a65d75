#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "alood/error.hpp"
#include "alood/synthetic.hpp"
#include "alood/training.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace alood;
using alood::testing::gradient_error;
using alood::testing::random_tensor;
using alood::oracles::standard_infonce;

namespace {

double loss_value(const Tensor& v, const Tensor& t, const std::vector<std::size_t>& labels,
                  double log_scale) {
  Tape tape;
  return tape
      .value(multi_positive_infonce(tape, tape.constant(v), t, labels,
                                    tape.constant(Tensor::vector({log_scale}))))
      .item();
}

Tensor row_permute(const Tensor& m, const std::vector<std::size_t>& perm) {
  Tensor out(m.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t k = 0; k < m.dim(1); ++k) out.at(i, k) = m.at(perm[i], k);
  }
  return out;
}

Parameter scalar_param(double v) {
  Parameter p;
  p.assign(Tensor::vector({v}));
  return p;
}

SyntheticSpec tiny_spec(DatasetMode mode) {
  SyntheticSpec s;
  s.seed = 5;
  s.num_classes = 3;
  s.n_train = 48;
  s.n_val_id = 6;
  s.n_val_ood = 6;
  s.channels = 4;
  s.embed_dim = 8;
  s.margin_degrees = 40.0;
  s.objects_per_scene = 6;
  s.mode = mode;
  return s;
}

HeadConfig head_for(const SyntheticSpec& s, bool adapter) {
  HeadConfig h;
  h.channels = s.channels;
  h.embed_dim = s.embed_dim;
  h.use_adapter = adapter;
  return h;
}

TextSource synth_text(std::size_t dim) { return SyntheticEncoderConfig{11, dim, 0.25}; }

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("alood_test_training_" + name);
}

}  // namespace

TEST(Loss, SingleObjectIsZero) {
  std::mt19937_64 rng(1);
  const Tensor v = random_tensor({1, 5}, rng);
  const Tensor t = random_tensor({1, 5}, rng);
  EXPECT_EQ(loss_value(v, t, {0}, 2.3), 0.0);
}

TEST(Loss, TwoAlignedObjectsClosedForm) {
  const Tensor v({2, 2}, {1.0, 0.0, 0.0, 1.0});
  EXPECT_NEAR(loss_value(v, v, {0, 1}, 0.0), std::log(1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(loss_value(v, v, {0, 1}, 0.0), 0.31326168751822286, 1e-15);
}

TEST(Loss, AllSameLabelMatchesDoubleLoop) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + trial % 6;
    const Tensor v = random_tensor({n, 7}, rng);
    const Tensor t = random_tensor({n, 7}, rng);
    const std::vector<std::size_t> labels(n, 3);
    EXPECT_NEAR(loss_value(v, t, labels, 1.2), oracles::multi_positive_loss(v, t, labels, 1.2), 1e-12);
  }
}

TEST(Loss, MixedLabelsMatchDoubleLoop) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> label(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + trial % 8;
    const Tensor v = random_tensor({n, 6}, rng);
    const Tensor t = random_tensor({n, 6}, rng);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = label(rng);
    EXPECT_NEAR(loss_value(v, t, labels, 2.0), oracles::multi_positive_loss(v, t, labels, 2.0), 1e-12);
  }
}

TEST(Loss, DistinctLabelsEqualStandardInfoNce) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + trial % 8;
    const Tensor v = random_tensor({n, 9}, rng);
    const Tensor t = random_tensor({n, 9}, rng);
    std::vector<std::size_t> labels(n);
    std::iota(labels.begin(), labels.end(), 0);
    EXPECT_NEAR(loss_value(v, t, labels, 2.65), standard_infonce(v, t, 2.65), 1e-12);
  }
}

TEST(Loss, InvariantToRowRescaling) {
  std::mt19937_64 rng(5);
  const Tensor v = random_tensor({6, 8}, rng);
  const Tensor t = random_tensor({6, 8}, rng);
  const std::vector<std::size_t> labels = {0, 1, 0, 2, 1, 1};
  const double base = loss_value(v, t, labels, 1.7);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    for (std::size_t i = 0; i < 6; ++i) {
      Tensor scaled = v;
      for (std::size_t k = 0; k < 8; ++k) scaled.at(i, k) *= c;
      EXPECT_NEAR(loss_value(scaled, t, labels, 1.7), base, 1e-9);
    }
  }
}

TEST(Loss, InvariantToBatchPermutation) {
  std::mt19937_64 rng(6);
  const Tensor v = random_tensor({7, 5}, rng);
  const Tensor t = random_tensor({7, 5}, rng);
  const std::vector<std::size_t> labels = {0, 1, 0, 2, 1, 1, 3};
  const double base = loss_value(v, t, labels, 0.9);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> plabels(7);
    for (std::size_t i = 0; i < 7; ++i) plabels[i] = labels[perm[i]];
    EXPECT_NEAR(loss_value(row_permute(v, perm), row_permute(t, perm), plabels, 0.9), base,
                1e-12);
  }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> label(0, 3);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 1 + trial % 8;
    const std::size_t d = 2 + (3 * trial) % 15;
    const Tensor v = random_tensor({n, d}, rng);
    const Tensor t = random_tensor({n, d}, rng);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = label(rng);
    const Tensor log_scale = Tensor::vector({std::uniform_real_distribution<double>(0.0, 3.0)(rng)});
    const double err = gradient_error(
        [&](Tape& tape, const std::vector<Var>& in) {
          return multi_positive_infonce(tape, in[0], t, labels, in[1]);
        },
        {v, log_scale});
    EXPECT_LT(err, 1e-5) << "n=" << n << " d=" << d;
  }
}

TEST(Loss, DegenerateInputsRejected) {
  Tensor v({2, 3}, {1.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  const Tensor t({2, 3}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
  try {
    loss_value(v, t, {0, 1}, 0.0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate embedding"), std::string::npos);
  }
  EXPECT_THROW(loss_value(t, Tensor({2, 3}), {0, 1}, 0.0), NumericError);
  EXPECT_THROW(loss_value(t, t, {0}, 0.0), DimensionError);

  // An empty batch cannot even be formed: zero-sized tensors are rejected.
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
}

TEST(AdamW, ZeroGradientWithoutDecayIsNoOp) {
  Parameter p = scalar_param(1.25);
  OptimState state;
  state.config.weight_decay = 0.0;
  adamw_step({{"p", &p, true}}, {Tensor::vector({0.0})}, state, 0.1);
  EXPECT_EQ(p.value()[0], 1.25);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Parameter p = scalar_param(1.0);
  OptimState state;
  state.config.weight_decay = 0.0;
  adamw_step({{"p", &p, true}}, {Tensor::vector({1.0})}, state, 0.1);
  EXPECT_NEAR(p.value()[0], 0.9, 1e-8);
}

TEST(AdamW, TwoStepsMatchScriptedTrace) {
  Parameter p = scalar_param(2.0);
  OptimState state;  // defaults: betas 0.9/0.999, eps 1e-8, wd 0.01
  const std::vector<HeadParams::Entry> entries = {{"p", &p, true}};
  adamw_step(entries, {Tensor::vector({0.5})}, state, 0.01);
  EXPECT_NEAR(state.m.at("p")[0], 0.04999999999999999, 1e-12);
  EXPECT_NEAR(state.v.at("p")[0], 0.0002500000000000002, 1e-12);
  EXPECT_NEAR(p.value()[0], 1.9898000002, 1e-12);
  adamw_step(entries, {Tensor::vector({0.5})}, state, 0.01);
  EXPECT_NEAR(state.m.at("p")[0], 0.09499999999999997, 1e-12);
  EXPECT_NEAR(state.v.at("p")[0], 0.0004997500000000004, 1e-12);
  EXPECT_NEAR(p.value()[0], 1.97960102039998, 1e-12);
}

TEST(AdamW, DecayFlagSkipsWeightDecay) {
  Parameter decayed = scalar_param(3.0), kept = scalar_param(3.0);
  OptimState state;
  state.config.weight_decay = 0.5;
  adamw_step({{"a", &decayed, true}, {"b", &kept, false}},
             {Tensor::vector({0.0}), Tensor::vector({0.0})}, state, 0.1);
  EXPECT_NEAR(decayed.value()[0], 3.0 - 0.1 * 0.5 * 3.0, 1e-15);
  EXPECT_EQ(kept.value()[0], 3.0);
}

TEST(AdamW, NonFiniteGradientNamesParameterAndChangesNothing) {
  Parameter a = scalar_param(1.0), b = scalar_param(2.0);
  OptimState state;
  try {
    adamw_step({{"first", &a, true}, {"second", &b, true}},
               {Tensor::vector({0.3}), Tensor::vector({std::nan("")})}, state, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
  }
  EXPECT_EQ(a.value()[0], 1.0);
  EXPECT_EQ(b.value()[0], 2.0);
  EXPECT_EQ(state.step, 0u);
  EXPECT_TRUE(state.m.empty());
}

TEST(AdamW, ShapeMismatchRejected) {
  Parameter a = scalar_param(1.0);
  OptimState state;
  EXPECT_THROW(adamw_step({{"a", &a, true}}, {Tensor::vector({1.0, 2.0})}, state, 0.1),
               DimensionError);
  EXPECT_THROW(adamw_step({{"a", &a, true}}, {}, state, 0.1), DimensionError);
}

TEST(Schedule, HalvesEveryTwoEpochs) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 1.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(1, c), 1.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(2, c), 7.5e-5);
  EXPECT_DOUBLE_EQ(lr_at(3, c), 7.5e-5);
  EXPECT_DOUBLE_EQ(lr_at(4, c), 3.75e-5);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(prompt_mode_from_string(to_string(PromptMode::kSimple)), PromptMode::kSimple);
  EXPECT_THROW(prompt_mode_from_string("fancy"), ConfigError);
}

TEST(Train, DeterministicAndDecreasing) {
  const auto spec = tiny_spec(DatasetMode::kFeatureMaps);
  const auto data = synthesize(spec);
  TrainConfig cfg;
  cfg.base_lr = 3e-3;
  cfg.seed = 9;
  auto run = [&] {
    HeadParams p = init_head_params(head_for(spec, true), cfg.seed);
    OptimState s;
    return train(data.train, p, s, cfg, synth_text(spec.embed_dim));
  };
  const TrainResult a = run();
  const TrainResult b = run();
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);  // bit-identical
    EXPECT_EQ(a.log[i].lr, b.log[i].lr);
  }
  ASSERT_EQ(a.epoch_mean.size(), 5u);
  EXPECT_LT(a.epoch_mean[4], a.epoch_mean[0]);
  EXPECT_EQ(a.log.size(), 5 * data.train.scenes.size());
  EXPECT_EQ(a.log.back().epoch, 4u);
  EXPECT_EQ(a.log.back().lr, lr_at(4, cfg));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto spec = tiny_spec(DatasetMode::kFeatureMaps);
  const auto data = synthesize(spec);
  TrainConfig cfg;
  cfg.base_lr = 3e-3;
  cfg.seed = 4;
  cfg.epochs = 3;
  const TextSource text = synth_text(spec.embed_dim);
  const auto path = temp_path("resume.alod");

  HeadParams full = init_head_params(head_for(spec, true), cfg.seed);
  OptimState full_state;
  const TrainResult uninterrupted = train(
      data.train, full, full_state, cfg, text,
      [&](std::size_t epoch, const HeadParams& p, const OptimState& s) {
        if (epoch == 0) write_checkpoint(path.string(), p, s, epoch + 1);
      });

  Checkpoint ck = read_checkpoint(path.string());
  EXPECT_EQ(ck.completed_epochs, 1u);
  const TrainResult rest = train(data.train, ck.params, ck.state, cfg, text, {}, 1);
  const std::size_t per_epoch = data.train.scenes.size();
  ASSERT_EQ(rest.log.size(), 2 * per_epoch);
  for (std::size_t i = 0; i < rest.log.size(); ++i) {
    EXPECT_EQ(rest.log[i].loss, uninterrupted.log[per_epoch + i].loss);
  }
  EXPECT_EQ(head_to_tensors(ck.params), head_to_tensors(full));
  std::filesystem::remove(path);
}

TEST(Train, AlignOnlyUpdatesOnlyAlignLayer) {
  const auto spec = tiny_spec(DatasetMode::kObjectFeatures);
  const auto data = synthesize(spec);
  TrainConfig cfg;
  cfg.base_lr = 3e-3;
  cfg.align_only = true;
  cfg.epochs = 1;
  HeadParams p = init_head_params(head_for(spec, false), 0);
  const HeadParams before = p;
  OptimState s;
  train(data.train, p, s, cfg, synth_text(spec.embed_dim));
  EXPECT_EQ(p.box_weight.value(), before.box_weight.value());
  EXPECT_EQ(p.log_scale.value(), before.log_scale.value());
  EXPECT_NE(p.align_weight.value(), before.align_weight.value());
  EXPECT_EQ(s.m.size(), 2u);
}

TEST(Train, RejectsUnusableInputs) {
  const auto spec = tiny_spec(DatasetMode::kObjectFeatures);
  const auto data = synthesize(spec);
  TrainConfig cfg;
  HeadParams p = init_head_params(head_for(spec, false), 0);
  OptimState s;

  Dataset empty{data.train.header, {}};
  EXPECT_THROW(train(empty, p, s, cfg, synth_text(spec.embed_dim)), DataError);
  EXPECT_THROW(train(data.val, p, s, cfg, synth_text(spec.embed_dim)), DataError);
  EXPECT_THROW(train(data.train, p, s, cfg, synth_text(spec.embed_dim + 1)), DimensionError);

  // The adapter needs maps.
  HeadParams with_adapter = init_head_params(head_for(spec, true), 0);
  EXPECT_THROW(train(data.train, with_adapter, s, cfg, synth_text(spec.embed_dim)), ConfigError);

  // A cache that lacks one of the classes.
  EmbeddingCache cache;
  cache.model_name = "test";
  cache.dim = spec.embed_dim;
  cache.prompt_format_id = kPromptFormatId;
  cache.entries["class_0"] = std::vector<double>(spec.embed_dim, 0.5);
  cfg.prompts = PromptMode::kSimple;
  try {
    train(data.train, p, s, cfg, cache);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("class_1"), std::string::npos);
  }
}

TEST(Train, SimplePromptsWorkWithCache) {
  const auto spec = tiny_spec(DatasetMode::kObjectFeatures);
  const auto data = synthesize(spec);
  EmbeddingCache cache;
  cache.model_name = "test";
  cache.dim = spec.embed_dim;
  cache.prompt_format_id = kPromptFormatId;
  for (const auto& cls : data.train.header.classes) {
    const Tensor e = synth_text_encode(cls, std::nullopt, {3, spec.embed_dim, 0.0});
    cache.entries[cls] = {e.data().begin(), e.data().end()};
  }
  TrainConfig cfg;
  cfg.prompts = PromptMode::kSimple;
  cfg.epochs = 1;
  HeadParams p = init_head_params(head_for(spec, false), 0);
  OptimState s;
  const auto r = train(data.train, p, s, cfg, cache);
  EXPECT_EQ(r.epoch_mean.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.epoch_mean[0]));
}

TEST(Checkpoint, RoundTripWithOptimizerState) {
  const auto spec = tiny_spec(DatasetMode::kObjectFeatures);
  const auto data = synthesize(spec);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.weight_decay = 0.02;
  HeadParams p = init_head_params(head_for(spec, false), 0);
  OptimState s;
  train(data.train, p, s, cfg, synth_text(spec.embed_dim));
  const auto path = temp_path("ckpt.alod");
  write_checkpoint(path.string(), p, s, 1);
  const Checkpoint ck = read_checkpoint(path.string());
  EXPECT_EQ(head_to_tensors(ck.params), head_to_tensors(p));
  EXPECT_EQ(ck.state.step, s.step);
  EXPECT_EQ(ck.state.config.weight_decay, 0.02);
  EXPECT_EQ(ck.state.m, s.m);
  EXPECT_EQ(ck.state.v, s.v);

  // A bare head archive loads with empty optimizer state.
  write_tensor_archive(path.string(), head_to_tensors(p));
  const Checkpoint bare = read_checkpoint(path.string());
  EXPECT_EQ(bare.state.step, 0u);
  EXPECT_TRUE(bare.state.m.empty());
  EXPECT_EQ(bare.completed_epochs, 0u);
  std::filesystem::remove(path);
}

TEST(LossLog, CsvRoundTrip) {
  const std::vector<LossRow> rows = {{0, 0, 1.5e-4, 2.0794415416798357},
                                     {0, 1, 1.5e-4, 1.0 / 3.0},
                                     {4, 7, 3.75e-5, 0.1}};
  const auto path = temp_path("loss.csv");
  write_loss_csv(path.string(), rows);
  const auto back = read_loss_csv(path.string());
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].epoch, rows[i].epoch);
    EXPECT_EQ(back[i].batch, rows[i].batch);
    EXPECT_EQ(back[i].lr, rows[i].lr);
    EXPECT_EQ(back[i].loss, rows[i].loss);
  }
  std::filesystem::remove(path);
}

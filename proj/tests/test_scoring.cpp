#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "alood/error.hpp"
#include "alood/metrics.hpp"
#include "alood/pipeline.hpp"
#include "alood/scoring.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace alood;
using alood::testing::random_tensor;

namespace {

Tensor row(const Tensor& m, std::size_t i) {
  const auto r = m.data().subspan(i * m.dim(1), m.dim(1));
  return Tensor({m.dim(1)}, {r.begin(), r.end()});
}

}  // namespace

TEST(Similarity, MatchesBankRow) {
  std::mt19937_64 rng(1);
  const Tensor bank = random_tensor({5, 12}, rng);
  const Tensor logits = similarity_logits(row(bank, 3), bank);
  EXPECT_DOUBLE_EQ(logits[3], 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_LE(logits[i], 1.0);
    EXPECT_GE(logits[i], -1.0);
  }
}

TEST(Similarity, OrthogonalGivesZeros) {
  const Tensor bank({3, 4}, {1, 0, 0, 0, 0, 2, 0, 0, 0, 0, -3, 0});
  const Tensor logits = similarity_logits(Tensor::vector({0, 0, 0, 5}), bank);
  for (double s : logits.data()) EXPECT_EQ(s, 0.0);
}

TEST(Similarity, MatchesNaiveLoop) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor bank = random_tensor({10, 64}, rng);
    const Tensor v = random_tensor({64}, rng);
    const Tensor logits = similarity_logits(v, bank);
    for (std::size_t i = 0; i < 10; ++i) {
      double dot = 0.0, nv = 0.0, nt = 0.0;
      for (std::size_t k = 0; k < 64; ++k) {
        dot += v[k] * bank.at(i, k);
        nv += v[k] * v[k];
        nt += bank.at(i, k) * bank.at(i, k);
      }
      EXPECT_NEAR(logits[i], dot / std::sqrt(nv) / std::sqrt(nt), 1e-12);
    }
  }
}

TEST(Similarity, RejectsDegenerateInputs) {
  const Tensor bank({2, 2}, {1, 0, 0, 0});
  EXPECT_THROW(similarity_logits(Tensor::vector({0, 0}), Tensor({1, 2}, {1, 0})), NumericError);
  EXPECT_THROW(similarity_logits(Tensor::vector({1, 0}), bank), NumericError);
  EXPECT_THROW(similarity_logits(Tensor::vector({1, 0, 0}), bank), DimensionError);
}

TEST(Score, WorkedExamples) {
  const Tensor logits = Tensor::vector({0.9, 0.1});
  EXPECT_DOUBLE_EQ(score(logits, 2.0, ScoreMethod::kMaxLogit, false, 2.0), 0.9);
  EXPECT_DOUBLE_EQ(score(logits, 2.0, ScoreMethod::kMaxLogit, true, 2.0), 1.8);
  for (double s : {-0.7, 0.0, 0.4, 1.0}) {
    EXPECT_DOUBLE_EQ(score(Tensor::vector({s}), 1.0, ScoreMethod::kMsp, false, 3.0), 1.0);
  }
}

TEST(Score, MspAndEnergyMatchDirectFormulas) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = random_tensor({6}, rng);
    const double log_scale = std::uniform_real_distribution<double>(0.0, 4.6)(rng);
    const double s = std::exp(log_scale);
    double z = 0.0, best = -1.0;
    for (double x : logits.data()) z += std::exp(s * x);
    for (double x : logits.data()) best = std::max(best, std::exp(s * x) / z);
    EXPECT_NEAR(score(logits, 1.0, ScoreMethod::kMsp, false, log_scale), best, 1e-12);
    EXPECT_NEAR(score(logits, 1.0, ScoreMethod::kEnergy, false, log_scale), std::log(z) / s,
                1e-12);
    EXPECT_NEAR(score(logits, 3.5, ScoreMethod::kEnergy, true, log_scale), 3.5 * std::log(z) / s,
                1e-12);
  }
}

TEST(Score, MaxLogitIsMonotoneInEachLogit) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_tensor({5}, rng);
    const double before = score(logits, 1.3, ScoreMethod::kMaxLogit, true, 1.0);
    logits[trial % 5] += 0.1;
    EXPECT_GE(score(logits, 1.3, ScoreMethod::kMaxLogit, true, 1.0), before);
  }
}

TEST(Score, MspScaleBehavior) {
  std::mt19937_64 rng(5);
  const Tensor bank = random_tensor({4, 8}, rng);
  const Tensor v = random_tensor({8}, rng);
  Tensor v3 = v;
  for (auto& x : v3.data()) x *= 3.0;
  const double a = score(similarity_logits(v, bank), 1.0, ScoreMethod::kMsp, false, 2.0);
  const double b = score(similarity_logits(v3, bank), 1.0, ScoreMethod::kMsp, false, 2.0);
  EXPECT_NEAR(a, b, 1e-12);
  EXPECT_GT(std::abs(score(similarity_logits(v, bank), 1.0, ScoreMethod::kMsp, false, 3.0) - a),
            1e-6);
}

TEST(Score, ArgmaxInvariantToRescaling) {
  std::mt19937_64 rng(6);
  const Tensor bank = random_tensor({7, 10}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor v = random_tensor({10}, rng);
    Tensor scaled = v;
    for (auto& x : scaled.data()) x *= 0.01 + trial;
    const ScoreRecord a = score_embedding(v, bank, 2.0);
    const ScoreRecord b = score_embedding(scaled, bank, 2.0);
    EXPECT_EQ(a.argmax, b.argmax);
    EXPECT_NEAR(b.v_norm, a.v_norm * (0.01 + trial), 1e-9);
  }
}

TEST(Score, RecordHoldsAllVariants) {
  std::mt19937_64 rng(7);
  const Tensor bank = random_tensor({3, 6}, rng);
  const Tensor v = random_tensor({6}, rng);
  const ScoreRecord r = score_embedding(v, bank, 1.5);
  for (auto m : kScoreMethods) {
    EXPECT_DOUBLE_EQ(r.value(m, false), score(r.logits, r.v_norm, m, false, 1.5));
    EXPECT_DOUBLE_EQ(r.value(m, true), r.v_norm * r.value(m, false));
  }
  EXPECT_EQ(score_method_from_string("energy"), ScoreMethod::kEnergy);
  EXPECT_EQ(variant_name(ScoreMethod::kMsp, true), "msp_norm");
  EXPECT_THROW(score_method_from_string("odin"), ConfigError);
}

TEST(Decide, BoundaryIsInclusive) {
  EXPECT_EQ(decide(0.5, 0.5), Decision::kId);
  EXPECT_EQ(decide(std::nextafter(0.5, 0.0), 0.5), Decision::kOod);
  EXPECT_EQ(decide(0.5 - 1e-9, 0.5), Decision::kOod);
}

TEST(Calibrate, WorkedExamples) {
  std::vector<double> scores;
  for (int i = 1; i <= 100; ++i) scores.push_back(i);
  std::shuffle(scores.begin(), scores.end(), std::mt19937_64(8));
  EXPECT_EQ(calibrate_threshold(scores, 0.95), 6.0);
  EXPECT_EQ(calibrate_threshold(std::vector<double>(17, 0.25), 0.95), 0.25);
  EXPECT_EQ(calibrate_threshold(scores, 1.0), 1.0);
  EXPECT_THROW(calibrate_threshold({}, 0.95), DataError);
  EXPECT_THROW(calibrate_threshold(scores, 0.0), ConfigError);
}

TEST(Calibrate, MatchesThresholdSweep) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> coarse(0, 20);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 60;
    std::vector<double> scores(n);
    for (auto& s : scores) s = coarse(rng) * 0.1;  // plenty of ties
    for (double tpr : {0.5, 0.9, 0.95, 1.0}) {
      const double delta = calibrate_threshold(scores, tpr);
      EXPECT_EQ(delta, oracles::sweep_threshold(scores, tpr));
      std::size_t recalled = 0;
      for (double s : scores) recalled += decide(s, delta) == Decision::kId;
      EXPECT_GE(static_cast<double>(recalled) / static_cast<double>(n), tpr);
    }
  }
}

TEST(Calibrate, DecideAgreesWithMetricFpr) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    LabeledScores ls;
    std::vector<double> id;
    for (int i = 0; i < 150; ++i) {
      const bool is_id = i % 3 != 0;
      const double s = std::round((gauss(rng) + (is_id ? 1.0 : 0.0)) * 20.0) / 20.0;
      ls.scores.push_back(s);
      ls.is_id.push_back(is_id);
      if (is_id) id.push_back(s);
    }
    const double delta = calibrate_threshold(id, 0.95);
    double accepted = 0.0, ood = 0.0;
    for (std::size_t i = 0; i < ls.scores.size(); ++i) {
      if (ls.is_id[i]) continue;
      ood += 1.0;
      accepted += decide(ls.scores[i], delta) == Decision::kId;
    }
    EXPECT_NEAR(accepted / ood, fpr_at_tpr(ls, 0.95), 1e-12);
  }
}

TEST(ScoreDataset, ReadOnlyOnParams) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.n_train = 24;
  spec.n_val_id = 9;
  spec.n_val_ood = 6;
  spec.channels = 4;
  spec.embed_dim = 8;
  spec.margin_degrees = 40.0;
  const auto data = synthesize(spec);
  HeadConfig head;
  head.channels = 4;
  head.embed_dim = 8;
  HeadParams params = init_head_params(head, 1);
  const TextSource text = SyntheticEncoderConfig{11, 8, 0.25};
  OptimState state;
  TrainConfig cfg;
  cfg.epochs = 1;
  train(data.train, params, state, cfg, text);

  const IdBank bank = build_id_bank(data.train.header.classes, text);
  const auto before = head_to_tensors(params);
  const Tensor bank_before = bank.embeddings;
  const auto records = score_dataset(params, data.val, bank, FusionConfig{0.1});
  EXPECT_EQ(head_to_tensors(params), before);
  EXPECT_EQ(bank.embeddings, bank_before);
  ASSERT_EQ(records.size(), 15u);
  std::size_t ood = 0;
  for (const auto& r : records) ood += r.is_ood;
  EXPECT_EQ(ood, 6u);

  // Same inputs, same scores.
  const auto again = score_dataset(params, data.val, bank, FusionConfig{0.1});
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].scores, again[i].scores);

  const auto path = std::filesystem::temp_directory_path() / "alood_test_scores.csv";
  write_scores_csv(path.string(), records, calibrate_variants(records));
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header,
            "object_id,is_ood_ground_truth,argmax_class,v_norm,s_1,s_2,s_3,score_method,"
            "score_value,decision");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 6 * records.size());
  std::filesystem::remove(path);
}

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "advgrid/checkpoint.hpp"
#include "advgrid/dataset.hpp"
#include "advgrid/train.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace advgrid;
using testing_support::TempDir;

namespace {

CnnModel zero_model() { return CnnModel{Architecture{}, Parameters::zeros(Architecture{}), 0, {}}; }

LabeledDataset subset(const LabeledDataset& ds, std::size_t stride) {
  LabeledDataset out;
  out.class_names = ds.class_names;
  for (std::size_t i = 0; i < ds.size(); i += stride) out.examples.push_back(ds.examples[i]);
  return out;
}

TEST(InitModel, ShapesFollowTheArchitecture) {
  auto m = init_model(1);
  ASSERT_EQ(m.params.convs.size(), 3u);
  EXPECT_EQ(m.params.convs[0].filters.shape(), (Shape{14, 14, 1, 64}));
  EXPECT_EQ(m.params.convs[1].filters.shape(), (Shape{5, 5, 64, 128}));
  EXPECT_EQ(m.params.convs[2].filters.shape(), (Shape{1, 1, 128, 128}));
  EXPECT_EQ(m.params.dense_weights.shape(), (Shape{15488, 25}));
  EXPECT_EQ(m.params.dense_bias.shape(), (Shape{25}));
  EXPECT_EQ(m.arch.flatten_size(), 11u * 11u * 128u);
}

TEST(InitModel, DeterministicZeroBiasBoundedWeights) {
  auto a = init_model(3), b = init_model(3), c = init_model(4);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_FALSE(a.params == c.params);
  for (const auto& conv : a.params.convs)
    for (double v : conv.bias.values()) EXPECT_EQ(v, 0.0);
  for (double v : a.params.dense_bias.values()) EXPECT_EQ(v, 0.0);

  // conv1: fan_in 14*14*1 = 196, fan_out 14*14*64 = 12544.
  const double bound = std::sqrt(6.0 / (196.0 + 12544.0));
  EXPECT_DOUBLE_EQ(glorot_bound(196, 12544), bound);
  double peak = 0.0, mean = 0.0;
  for (double v : a.params.convs[0].filters.values()) {
    peak = std::max(peak, std::abs(v));
    mean += v / a.params.convs[0].filters.size();
  }
  EXPECT_LE(peak, bound);
  EXPECT_GT(peak, 0.95 * bound);
  EXPECT_LT(std::abs(mean), 0.05 * bound);
}

TEST(Predict, ZeroModelIsUniformAndPicksClassZero) {
  auto p = predict(zero_model(), GrayImage::from_pixels(std::vector<double>(784, 0.3)));
  EXPECT_EQ(p.label, 0u);
  for (double v : p.probs.values()) EXPECT_NEAR(v, 1.0 / 25.0, 1e-15);
}

TEST(Predict, ProbabilitiesAndRepeatability) {
  auto m = init_model(2);
  std::mt19937_64 rng(5);
  for (int n = 0; n < 5; ++n) {
    auto x = oracle::random_tensor({28, 28, 1}, rng, 0.0, 1.0);
    auto a = predict(m, x), b = predict(m, x);
    EXPECT_EQ(a.probs, b.probs);
    EXPECT_EQ(a.label, b.label);
    double s = 0.0;
    for (double v : a.probs.values()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Predict, RejectsOutOfRangeInputs) {
  auto m = zero_model();
  Tensor x({28, 28, 1}, 0.5);
  x[10] = 1.0000001;
  EXPECT_THROW(predict(m, x), std::domain_error);
  x[10] = -1e-12;
  EXPECT_THROW(predict(m, x), std::domain_error);
  x[10] = std::nan("");
  EXPECT_THROW(predict(m, x), std::domain_error);
  EXPECT_THROW(predict(m, Tensor({27, 28, 1}, 0.5)), ShapeError);
}

TEST(Argmax, TiesGoLow) {
  EXPECT_EQ(argmax(Tensor({4}, {0.1, 0.4, 0.4, 0.1})), 1u);
  EXPECT_EQ(argmax(Tensor({3}, {0.5, 0.5, 0.5})), 0u);
}

TEST(Train, MemorizesASingleExample) {
  auto ds = synth_corpus(7, 2);
  LabeledDataset one;
  one.class_names = ds.class_names;
  one.examples = {ds.examples[17]};
  auto m = init_model(1);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.01;
  auto trace = train(m, one, cfg);
  ASSERT_EQ(trace.size(), 200u);
  EXPECT_LT(trace.back().mean_loss, 0.01);
  EXPECT_EQ(evaluate(m, one), 1.0);
}

TEST(Train, IdenticalSeedsGiveIdenticalModels) {
  auto data = subset(synth_corpus(7, 2), 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.01;
  cfg.shuffle_seed = 9;
  auto a = init_model(5), b = init_model(5);
  auto ta = train(a, data, cfg), tb = train(b, data, cfg);
  EXPECT_TRUE(a.params == b.params);
  for (std::size_t e = 0; e < ta.size(); ++e) EXPECT_EQ(ta[e].mean_loss, tb[e].mean_loss);

  cfg.shuffle_seed = 10;
  auto c = init_model(5);
  train(c, data, cfg);
  EXPECT_FALSE(a.params == c.params);
}

TEST(Train, PlainSgdOptionAndValidation) {
  auto data = subset(synth_corpus(7, 2), 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 3;
  cfg.optimizer = OptimizerKind::sgd;
  auto m = init_model(1, oracle::small_arch());
  const auto before = m.params;
  train(m, data, cfg);
  EXPECT_FALSE(m.params == before);

  cfg.epochs = 0;
  EXPECT_THROW(train(m, data, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(m, data, cfg), std::invalid_argument);
  cfg.learning_rate = 0.01;
  EXPECT_THROW(train(m, LabeledDataset{}, cfg), std::invalid_argument);
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  auto data = subset(synth_corpus(7, 2), 2);
  auto m = init_model(1, oracle::small_arch());
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  cfg.learning_rate = 1e200;
  try {
    train(m, data, cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Train, LossWindowsDoNotIncrease) {
  auto parts = split(synth_corpus(7, 12), 0.7, 1);
  auto m = init_model(1);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.01;
  cfg.shuffle_seed = 3;
  auto trace = train(m, parts.train, cfg);
  ASSERT_EQ(trace.size(), 10u);
  double prev = INFINITY;
  for (std::size_t e = 0; e + 3 <= trace.size(); ++e) {
    const double w = (trace[e].mean_loss + trace[e + 1].mean_loss + trace[e + 2].mean_loss) / 3.0;
    EXPECT_LE(w, prev) << "window starting at epoch " << e + 1;
    prev = w;
  }
}

TEST(Evaluate, ZeroModelScoresTheClassZeroShare) {
  auto ds = synth_corpus(7, 4);
  EXPECT_DOUBLE_EQ(evaluate(zero_model(), ds), 4.0 / 100.0);
  EXPECT_THROW(evaluate(zero_model(), LabeledDataset{}), std::invalid_argument);
}

TEST(Evaluate, AdditiveOverDisjointSets) {
  auto m = init_model(8, oracle::small_arch());
  auto parts = split(synth_corpus(7, 4), 0.7, 2);
  LabeledDataset all = parts.train;
  all.examples.insert(all.examples.end(), parts.test.examples.begin(), parts.test.examples.end());
  const double lhs = evaluate(m, all) * all.size();
  const double rhs = evaluate(m, parts.train) * parts.train.size() +
                     evaluate(m, parts.test) * parts.test.size();
  EXPECT_NEAR(lhs, rhs, 1e-9);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  auto m = init_model(11);
  m.metadata["epochs"] = "10";
  m.metadata["note"] = "with spaces and = signs";
  save_model(m, dir / "a.ckpt");
  auto back = load_model(dir / "a.ckpt");
  EXPECT_TRUE(back.params == m.params);
  EXPECT_EQ(back.arch, m.arch);
  EXPECT_EQ(back.init_seed, 11u);
  EXPECT_EQ(back.metadata, m.metadata);
  save_model(back, dir / "b.ckpt");
  EXPECT_EQ(read_bytes((dir / "a.ckpt").string()), read_bytes((dir / "b.ckpt").string()));

  std::mt19937_64 rng(3);
  for (int n = 0; n < 3; ++n) {
    auto x = oracle::random_tensor({28, 28, 1}, rng, 0.0, 1.0);
    EXPECT_EQ(predict(m, x).probs, predict(back, x).probs);
  }
}

TEST(Checkpoint, SmallArchitecturesRoundTrip) {
  auto m = oracle::random_model(4, oracle::tiny_arch());
  auto back = decode_checkpoint(encode_checkpoint(m));
  EXPECT_EQ(back.arch, m.arch);
  EXPECT_TRUE(back.params == m.params);
}

TEST(Checkpoint, RejectsDamage) {
  const auto bytes = encode_checkpoint(init_model(1, oracle::small_arch()));
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{40}, bytes.size() / 2,
                          bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(decode_checkpoint(t), CheckpointError) << "cut at " << cut;
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  EXPECT_THROW(decode_checkpoint(bad_version), CheckpointError);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), CheckpointError);

  TempDir dir("ckpt-bad");
  std::ofstream(dir / "t.ckpt", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), 100);
  EXPECT_THROW(load_model(dir / "t.ckpt"), CheckpointError);
  EXPECT_THROW(load_model(dir / "missing.ckpt"), CheckpointError);
}

}  // namespace

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedpriv/data.hpp"
#include "fedpriv/errors.hpp"
#include "fedpriv/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fedpriv;

namespace {

EncoderConfig single_layer(std::size_t in, std::size_t out) { return {{in, out}, {}}; }

EncoderConfig two_layer(std::size_t in, std::size_t hidden, std::size_t out, Activation act) {
  return {{in, hidden, out}, {act}};
}

Dataset two_clusters(std::size_t n, double separation, double noise, std::uint64_t seed) {
  return gen_synthetic({n, 2, 2, separation, noise}, seed);
}

}  // namespace

TEST(EncoderConfig, ParamCountAndValidation) {
  EXPECT_EQ(two_layer(2, 3, 2, Activation::kRelu).param_count(), 2u * 3 + 3 + 3 * 2 + 2);
  EXPECT_THROW((EncoderConfig{{4}, {}}.validate()), ParameterError);
  EXPECT_THROW((EncoderConfig{{4, 0, 2}, {Activation::kRelu}}.validate()), ParameterError);
  EXPECT_THROW((EncoderConfig{{4, 3, 2}, {}}.validate()), ParameterError);
  EXPECT_NO_THROW(two_layer(4, 3, 2, Activation::kTanh).validate());
}

TEST(ParamVector, LayoutOrderAndArithmetic) {
  const auto cfg = two_layer(2, 3, 4, Activation::kRelu);
  ParamVector p = ParamVector::zeros(cfg);
  EXPECT_EQ(p.size(), cfg.param_count());
  EXPECT_EQ(p.weight_block(0), (Block{0, 3, 2}));
  EXPECT_EQ(p.bias_block(0), (Block{6, 3, 1}));
  EXPECT_EQ(p.weight_block(1), (Block{9, 4, 3}));
  EXPECT_EQ(p.bias_block(1), (Block{21, 4, 1}));

  ParamVector a = testkit::flat({1, 2, 2});
  ParamVector b = testkit::flat({0, 1, 0});
  EXPECT_DOUBLE_EQ(a.norm(), 3.0);
  EXPECT_DOUBLE_EQ(a.dot(b), 2.0);
  EXPECT_EQ((a - b), testkit::flat({1, 1, 2}));
  EXPECT_EQ((a * 2.0), testkit::flat({2, 4, 4}));
  a.axpy(-2.0, b);
  EXPECT_EQ(a, testkit::flat({1, 0, 2}));
  EXPECT_THROW(a += p, ShapeError);
  EXPECT_THROW(ParamVector({1.0, 2.0}, {Block{0, 3, 1}}), ShapeError);
}

TEST(ParamVector, GlorotIsDeterministicAndBounded) {
  const auto cfg = two_layer(5, 4, 3, Activation::kRelu);
  const ParamVector a = ParamVector::glorot(cfg, 9);
  EXPECT_EQ(a, ParamVector::glorot(cfg, 9));
  EXPECT_NE(a, ParamVector::glorot(cfg, 10));
  const double limit0 = std::sqrt(6.0 / (5 + 4));
  const Block w0 = a.weight_block(0);
  for (std::size_t i = 0; i < w0.size(); ++i) EXPECT_LE(std::abs(a[w0.offset + i]), limit0);
  const Block b0 = a.bias_block(0);
  for (std::size_t i = 0; i < b0.size(); ++i) EXPECT_EQ(a[b0.offset + i], 0.0);
}

TEST(ForwardEncode, IdentityCase) {
  EncoderConfig cfg = single_layer(2, 2);
  ParamVector p = ParamVector::zeros(cfg);
  p[0] = 1.0;  // W = I
  p[3] = 1.0;
  const std::vector<double> x{2, 3};
  const auto h = forward_encode(x, p, cfg);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0], (std::vector<double>{2, 3}));
}

TEST(ForwardEncode, ZeroWeightsGiveZeroActivations) {
  const auto cfg = two_layer(3, 4, 2, Activation::kRelu);
  const auto h = forward_encode(std::vector<double>{1.0, -7.0, 2.5}, ParamVector::zeros(cfg), cfg);
  for (const auto& layer : h) {
    for (double v : layer) EXPECT_EQ(v, 0.0);
  }
}

TEST(ForwardEncode, HandEvaluatedRelu) {
  // relu(2 - 3 + 1) = 0
  const auto cfg = two_layer(2, 1, 2, Activation::kRelu);
  ParamVector p = ParamVector::zeros(cfg);
  p[0] = 1.0;
  p[1] = -1.0;
  p[2] = 1.0;
  const auto h = forward_encode(std::vector<double>{2, 3}, p, cfg);
  EXPECT_EQ(h[0], (std::vector<double>{0.0}));
}

TEST(ForwardEncode, IdentityActivationMatchesMatrixAlgebra) {
  std::mt19937_64 rng(3);
  const auto cfg = two_layer(3, 4, 2, Activation::kIdentity);
  ParamVector p = ParamVector::zeros(cfg);
  for (double& v : p.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const std::vector<double> x = testkit::random_vector(rng, 3, -2, 2);
  // Explicit W2 (W1 x + b1) + b2.
  std::vector<double> h1(4), out(2);
  for (std::size_t r = 0; r < 4; ++r) {
    h1[r] = p[12 + r];  // b1 follows the 4x3 W1
    for (std::size_t c = 0; c < 3; ++c) h1[r] += p[r * 3 + c] * x[c];
  }
  for (std::size_t r = 0; r < 2; ++r) {
    out[r] = p[16 + 8 + r];
    for (std::size_t c = 0; c < 4; ++c) out[r] += p[16 + r * 4 + c] * h1[c];
  }
  const auto h = forward_encode(x, p, cfg);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(h[0][r], h1[r], 1e-12);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(h[1][r], out[r], 1e-12);
}

TEST(Gradient, MatchesCentralDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    EXPECT_LE(testkit::gradient_check(seed), 1e-4) << "seed " << seed;
  }
}

TEST(LocalTrain, ZeroEpochsOrZeroLearningRateGiveZeroDelta) {
  const Dataset data = two_clusters(40, 4.0, 1.0, 1);
  const auto cfg = two_layer(2, 4, 2, Activation::kTanh);
  const ParamVector p = ParamVector::glorot(cfg, 1);
  TrainOptions opts;
  opts.epochs = 0;
  EXPECT_EQ(local_train(data, p, cfg, opts).delta.norm(), 0.0);
  opts.epochs = 3;
  opts.lr = 0.0;
  EXPECT_EQ(local_train(data, p, cfg, opts).delta.norm(), 0.0);
}

TEST(LocalTrain, ClippingBoundsEveryUpdate) {
  const auto cfg = two_layer(2, 6, 2, Activation::kRelu);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset data = two_clusters(60, 3.0, 1.0, seed);
    TrainOptions opts{3, 8, 0.5, 1.0, seed};
    const ClientUpdate u = local_train(data, ParamVector::glorot(cfg, seed), cfg, opts);
    EXPECT_LE(u.delta.norm(), 1.0 + 1e-9);
  }
}

TEST(LocalTrain, BitReproducible) {
  const Dataset data = two_clusters(80, 3.0, 1.0, 4);
  const auto cfg = two_layer(2, 5, 2, Activation::kRelu);
  const ParamVector p = ParamVector::glorot(cfg, 2);
  TrainOptions opts{2, 16, 0.1, std::nullopt, 77};
  const ClientUpdate a = local_train(data, p, cfg, opts, 3);
  const ClientUpdate b = local_train(data, p, cfg, opts, 3);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.loss_delta, b.loss_delta);
  EXPECT_EQ(a.client_id, 3u);
  EXPECT_EQ(a.sample_count, data.size());
  opts.seed = 78;
  EXPECT_NE(local_train(data, p, cfg, opts, 3).delta, a.delta);
}

TEST(LocalTrain, LossDeltaIsNegativeWhenLearning) {
  const Dataset data = two_clusters(100, 4.0, 0.5, 8);
  const auto cfg = two_layer(2, 4, 2, Activation::kTanh);
  const ClientUpdate u = local_train(data, ParamVector::glorot(cfg, 8), cfg, {5, 10, 0.2, std::nullopt, 1});
  EXPECT_LT(u.loss_delta, 0.0);
}

TEST(LocalTrain, RejectsBadInputs) {
  const auto cfg = two_layer(2, 4, 2, Activation::kTanh);
  const ParamVector p = ParamVector::glorot(cfg, 1);
  EXPECT_THROW(local_train(Dataset{2, 2, {}, {}}, p, cfg, {}), ParameterError);
  const Dataset data = two_clusters(10, 3.0, 1.0, 1);
  EXPECT_THROW(local_train(data, p, cfg, {1, 0, 0.1, std::nullopt, 0}), ParameterError);
  EXPECT_THROW(local_train(data, p, cfg, {1, 4, -0.1, std::nullopt, 0}), ParameterError);
  Dataset poisoned = data;
  poisoned.features[0] = std::nan("");
  EXPECT_THROW(local_train(poisoned, p, cfg, {1, 4, 0.1, std::nullopt, 0}), RangeError);
}

TEST(Evaluate, ConstantLogitsTieToClassZero) {
  Dataset data{1, 2, {}, {}};
  for (int i = 0; i < 10; ++i) data.push_back(std::vector<double>{static_cast<double>(i)}, i % 2);
  const auto cfg = single_layer(1, 2);
  EXPECT_DOUBLE_EQ(evaluate(ParamVector::zeros(cfg), cfg, data).accuracy, 0.5);
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1u);
}

TEST(Evaluate, SingleCorrectSample) {
  Dataset data{1, 2, {}, {}};
  data.push_back(std::vector<double>{1.0}, 1);
  const auto cfg = single_layer(1, 2);
  ParamVector p = ParamVector::zeros(cfg);
  p[1] = 1.0;  // logit_1 = x
  const EvalResult r = evaluate(p, cfg, data);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_NEAR(r.mean_loss, std::log(1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Evaluate, TrainedModelSeparatesTwoClusters) {
  const Dataset data = two_clusters(400, 6.0, 1.0, 21);
  const auto cfg = two_layer(2, 8, 2, Activation::kRelu);
  ParamVector p = ParamVector::glorot(cfg, 21);
  p += local_train(data, p, cfg, {20, 16, 0.1, std::nullopt, 21}).delta;
  EXPECT_GE(evaluate(p, cfg, data).accuracy, 0.9);
}

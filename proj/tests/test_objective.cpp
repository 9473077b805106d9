#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hemi/objective.hpp"
#include "test_util.hpp"

using namespace hemi;

namespace {

// Worst relative deviation between two gradient sets; denominators below
// `floor` are clamped so vanishing partials compare absolutely.
double worst_relative(const GradientSet& a, const GradientSet& b, double floor) {
  double worst = 0.0;
  auto cmp = [&](const std::vector<LinkGradient>& x, const std::vector<LinkGradient>& y) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      for (std::size_t i = 0; i < x[k].weight.size(); ++i) {
        const double d = std::abs(x[k].weight[i] - y[k].weight[i]);
        worst = std::max(worst, d / std::max({std::abs(x[k].weight[i]), std::abs(y[k].weight[i]), floor}));
      }
      for (std::size_t i = 0; i < x[k].bias.size(); ++i) {
        const double d = std::abs(x[k].bias[i] - y[k].bias[i]);
        worst = std::max(worst, d / std::max({std::abs(x[k].bias[i]), std::abs(y[k].bias[i]), floor}));
      }
    }
  };
  cmp(a.forward, b.forward);
  cmp(a.backward, b.backward);
  return worst;
}

}  // namespace

TEST(TrainingError, Examples) {
  const std::vector<std::vector<double>> p{{0.2, 0.4}};
  EXPECT_EQ(training_error(p, p), 0.0);
  const std::vector<std::vector<double>> a{{1.0, 0.0}};
  const std::vector<std::vector<double>> b{{0.0, 1.0}};
  EXPECT_DOUBLE_EQ(training_error(a, b), 1.0);
  const std::vector<std::vector<double>> a2{{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<std::vector<double>> b2{{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_DOUBLE_EQ(training_error(a2, b2), 2.0);
  EXPECT_THROW(training_error(a, b2), std::invalid_argument);
}

TEST(GenerationError, Examples) {
  std::vector<std::vector<double>> x{std::vector<double>(96, 0.5)};
  EXPECT_EQ(generation_error(x, x), 0.0);
  auto y = x;
  y[0][17] += 0.2;
  EXPECT_NEAR(generation_error(y, x), 0.02, 1e-15);
  auto xx = x;
  xx.push_back(x[0]);
  auto yy = y;
  yy.push_back(y[0]);
  EXPECT_NEAR(generation_error(yy, xx), 0.04, 1e-15);
}

TEST(Regularizer, Examples) {
  const std::vector<double> t{3.0, -4.0};
  EXPECT_DOUBLE_EQ(regularizer(t, 1), 7.0);
  EXPECT_DOUBLE_EQ(regularizer(t, 2), 5.0);
  const std::vector<double> z(5, 0.0);
  EXPECT_EQ(regularizer(z, 1), 0.0);
  EXPECT_EQ(regularizer(z, 2), 0.0);
  const std::vector<double> c{-2.5};
  EXPECT_DOUBLE_EQ(regularizer(c, 1), 2.5);
  EXPECT_DOUBLE_EQ(regularizer(c, 2), 2.5);
  EXPECT_THROW(regularizer(t, 0), std::invalid_argument);
}

TEST(Regularizer, AbsoluteHomogeneity) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> t(10);
    for (double& v : t) v = 2.0 * uniform01(rng) - 1.0;
    const double c = 6.0 * uniform01(rng) - 3.0;
    std::vector<double> s = t;
    for (double& v : s) v *= c;
    for (int q : {1, 2}) EXPECT_NEAR(regularizer(s, q), std::abs(c) * regularizer(t, q), 1e-12);
  }
}

TEST(Regularizer, ExcludesMaskedParameters) {
  SparseNet net = SparseNet::random(make_layers({3, 2}), Directionality::unidirectional, 4, 1);
  const std::size_t before = live_parameters(net).size();
  net.forward_link(0).remove(0, 0);
  EXPECT_EQ(live_parameters(net).size(), before - 1);
}

TEST(Cost, PaperLambdas) {
  const std::vector<double> t{3.0, -4.0};
  HyperParams hp;
  EXPECT_NEAR(cost(1.0, 2.0, t, hp), 3.00052, 1e-12);
  hp.lasso = 0.0;
  hp.ridge = 0.0;
  EXPECT_EQ(cost(1.0, 2.0, t, hp), 3.0);
  const std::vector<double> z(3, 0.0);
  EXPECT_EQ(cost(0.0, 0.0, z, HyperParams{}), 0.0);
}

TEST(Cost, DominatesParts) {
  const SparseNet net = SparseNet::random(make_layers({4, 3, 2}), Directionality::bidirectional, 8, 2);
  const auto batch = fixtures::random_samples(6, 4, 2, 9);
  const HyperParams hp;
  const LossTerms t = loss_terms(net, batch);
  const double c = evaluate(net, batch, Loss::cost, hp);
  EXPECT_GE(c, std::max(t.training, t.generation));
  EXPECT_NEAR(c, t.training + t.generation + hp.lasso * t.lasso_norm + hp.ridge * t.ridge_norm, 1e-12);
}

TEST(HyperParams, Validation) {
  HyperParams hp;
  EXPECT_NO_THROW(hp.validate());
  hp.learning_rate = 0.0;
  EXPECT_NO_THROW(hp.validate());
  hp.learning_rate = -0.1;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
  hp = HyperParams{};
  hp.lasso = -1.0;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
}

class BackpropOracle : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(BackpropOracle, MatchesCentralDifferences) {
  const std::uint64_t seed = GetParam();
  const SparseNet net = SparseNet::random(make_layers({6, 4, 3}), Directionality::bidirectional, 8, seed);
  const auto batch = fixtures::random_samples(5, 6, 3, seed + 100);
  for (Loss loss : {Loss::training, Loss::generation, Loss::cost}) {
    const HyperParams hp;
    const GradientSet g = backprop(net, batch, loss, hp);
    const GradientSet f = fd_gradient(net, batch, loss, hp, 1e-5);
    EXPECT_LT(worst_relative(g, f, 1e-8), 1e-4) << "loss " << static_cast<int>(loss);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, BackpropOracle, ::testing::Range<std::uint64_t>(0, 20));

TEST(Backprop, SparseAndDeepNets) {
  SparseNet net = SparseNet::random(make_layers({5, 4, 4, 2}), Directionality::bidirectional, 8, 31);
  net.forward_link(0).remove(1, 2);
  net.forward_link(1).remove(3, 0);
  net.backward_link(2).remove(0, 1);
  const auto batch = fixtures::random_samples(4, 5, 2, 55);
  for (Loss loss : {Loss::training, Loss::generation, Loss::cost}) {
    const GradientSet g = backprop(net, batch, loss, HyperParams{});
    EXPECT_LT(worst_relative(g, fd_gradient(net, batch, loss, HyperParams{}, 1e-5), 1e-8), 1e-4);
    EXPECT_EQ(g.forward[0].weight[1 * 5 + 2], 0.0);
    EXPECT_EQ(g.backward[2].weight[0 * 2 + 1], 0.0);
  }
}

TEST(Backprop, UnidirectionalCostOmitsGeneration) {
  const SparseNet net = SparseNet::random(make_layers({6, 4, 3}), Directionality::unidirectional, 8, 4);
  const auto batch = fixtures::random_samples(5, 6, 3, 8);
  const GradientSet g = backprop(net, batch, Loss::cost, HyperParams{});
  EXPECT_LT(worst_relative(g, fd_gradient(net, batch, Loss::cost, HyperParams{}, 1e-5), 1e-8), 1e-4);
  EXPECT_THROW(backprop(net, batch, Loss::generation, HyperParams{}), std::logic_error);
}

TEST(Backprop, StationaryAtPerfectFit) {
  SparseNet net(make_layers({3, 2}), Directionality::unidirectional, 8);
  Sample s;
  s.features = {0.1, 0.2, 0.3};
  s.target = {0.5, 0.5};
  const std::vector<Sample> batch{s};
  HyperParams hp;
  hp.lasso = 0.0;
  hp.ridge = 0.0;
  EXPECT_LT(backprop(net, batch, Loss::cost, hp).max_abs(), 1e-10);
}

TEST(Backprop, DuplicatedBatchDoublesGradient) {
  const SparseNet net = SparseNet::random(make_layers({6, 4, 3}), Directionality::unidirectional, 8, 12);
  auto batch = fixtures::random_samples(4, 6, 3, 2);
  GradientSet once = backprop(net, batch, Loss::training, HyperParams{});
  auto twice_batch = batch;
  twice_batch.insert(twice_batch.end(), batch.begin(), batch.end());
  const GradientSet twice = backprop(net, twice_batch, Loss::training, HyperParams{});
  once *= 2.0;
  EXPECT_LT(worst_relative(once, twice, 1e-12), 1e-12);
}

TEST(Backprop, LassoSubgradientAtZeroIsZero) {
  SparseNet net(make_layers({2, 1}), Directionality::unidirectional, 8);
  Sample s;
  s.features = {0.0, 0.0};
  s.target = {0.5};
  const std::vector<Sample> batch{s};
  HyperParams hp;
  hp.ridge = 0.0;
  EXPECT_EQ(backprop(net, batch, Loss::cost, hp).max_abs(), 0.0);
}

TEST(FdDerivative, Quadratic) {
  EXPECT_NEAR(fd_derivative([](double t) { return t * t; }, 3.0, 1e-5), 6.0, 1e-6);
  EXPECT_EQ(fd_derivative([](double) { return 4.2; }, 1.0, 1e-5), 0.0);
  EXPECT_THROW(fd_derivative([](double t) { return t; }, 0.0, 0.0), std::invalid_argument);
}

TEST(FdGradient, ConstantLossIsZero) {
  SparseNet net(make_layers({2, 1}), Directionality::unidirectional, 8);
  net.forward_link(0).remove(0, 0);
  net.forward_link(0).remove(0, 1);
  Sample s;
  s.features = {0.3, 0.4};
  s.target = {0.5};
  const std::vector<Sample> batch{s};
  HyperParams hp;
  hp.lasso = 0.0;
  hp.ridge = 0.0;
  EXPECT_EQ(fd_gradient(net, batch, Loss::training, hp, 1e-5).forward[0].weight[0], 0.0);
}

TEST(SgdStep, ZeroGradientIsNoOp) {
  SparseNet net = SparseNet::random(make_layers({3, 2}), Directionality::bidirectional, 8, 1);
  const SparseNet before = net;
  sgd_step(net, GradientSet::zeros_like(net), 0.01);
  EXPECT_EQ(net, before);
}

TEST(SgdStep, SingleParameterMovesByLearningRate) {
  SparseNet net = SparseNet::random(make_layers({3, 2}), Directionality::unidirectional, 8, 1);
  const double before = net.forward_link(0).w(1, 2);
  GradientSet g = GradientSet::zeros_like(net);
  g.forward[0].weight[1 * 3 + 2] = 1.0;
  sgd_step(net, g, 0.01);
  EXPECT_DOUBLE_EQ(net.forward_link(0).w(1, 2), before - 0.01);
}

TEST(SgdStep, MaskedParameterUnchanged) {
  SparseNet net = SparseNet::random(make_layers({3, 2}), Directionality::unidirectional, 8, 1);
  net.forward_link(0).remove(0, 1);
  GradientSet g = GradientSet::zeros_like(net);
  g.forward[0].weight[1] = 5.0;
  sgd_step(net, g, 0.01);
  EXPECT_EQ(net.forward_link(0).w(0, 1), 0.0);
  EXPECT_FALSE(net.forward_link(0).alive(0, 1));
}

TEST(SgdStep, SmallStepDoesNotIncreaseLoss) {
  int ok = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    SparseNet net = SparseNet::random(make_layers({4, 3, 2}), Directionality::bidirectional, 8, t);
    const auto batch = fixtures::random_samples(6, 4, 2, t + 1000);
    const Loss loss = t % 2 ? Loss::cost : Loss::training;
    const HyperParams hp;
    const double before = evaluate(net, batch, loss, hp);
    sgd_step(net, backprop(net, batch, loss, hp), 1e-4);
    if (evaluate(net, batch, loss, hp) <= before) ++ok;
  }
  EXPECT_GE(ok, 95);
}

TEST(TrainEpoch, ReducesTrainingError) {
  SparseNet net = SparseNet::random(make_layers({6, 5, 3}), Directionality::unidirectional, 8, 3);
  const auto data = fixtures::teacher_samples(200, 6, 3, 4);
  HyperParams hp;
  hp.learning_rate = 0.1;
  const double before = evaluate(net, data, Loss::training, hp);
  Rng rng(1);
  for (int e = 0; e < 30; ++e) train_epoch(net, data, Loss::training, hp, rng);
  EXPECT_LT(evaluate(net, data, Loss::training, hp), before);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "hemi/hemisphere.hpp"
#include "test_util.hpp"

using namespace hemi;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

DualHemisphere toy_pair(std::uint64_t seed, std::size_t in = 8, std::size_t hidden = 6, std::size_t out = 4) {
  DualHemisphere dh;
  dh.left = SparseNet::random(make_layers({in, hidden, out}), Directionality::unidirectional, 64, seed);
  dh.right = SparseNet::random(make_layers({in, hidden, out}), Directionality::bidirectional, 64, seed + 1);
  dh.role = Role::terminal_of(0);
  return dh;
}

HyperParams toy_hp() {
  HyperParams hp;
  hp.learning_rate = 0.1;
  hp.batch_size = 16;
  return hp;
}

Dataset toy_data(std::size_t n, std::uint64_t seed, std::size_t in = 8, std::size_t out = 4) {
  return Dataset(fixtures::teacher_samples(n, in, out, seed));
}

}  // namespace

TEST(LabelPrior, MomentsAndHistogram) {
  std::vector<Sample> s(3);
  s[0].target = {0.9, 0.1};
  s[1].target = {0.2, 0.6};
  s[2].target = {0.7, 0.3};
  const LabelPrior p = LabelPrior::from_samples(s);
  EXPECT_EQ(p.count, 3u);
  EXPECT_NEAR(p.mean[0], 0.6, 1e-15);
  EXPECT_NEAR(p.variance[1], ((0.1 - 1.0 / 3) * (0.1 - 1.0 / 3) + (0.6 - 1.0 / 3) * (0.6 - 1.0 / 3) +
                              (0.3 - 1.0 / 3) * (0.3 - 1.0 / 3)) / 3.0,
              1e-15);
  EXPECT_EQ(p.best_count, (std::vector<std::uint64_t>{2, 1}));
  EXPECT_NEAR(p.best_mean[0], 0.8, 1e-15);
  EXPECT_NEAR(p.best_variance[0], 0.01, 1e-15);
  EXPECT_EQ(p.min[0], 0.2);
  EXPECT_EQ(p.max[1], 0.6);
  EXPECT_EQ(p.classes(), (std::vector<std::size_t>{0, 1}));
}

TEST(LabelPrior, EncodingIsFixedSizeAndRoundTrips) {
  const auto small = LabelPrior::from_samples(fixtures::teacher_samples(10, 3, 8, 1));
  const auto large = LabelPrior::from_samples(fixtures::teacher_samples(5000, 3, 8, 2));
  const Bytes a = encode_label_prior(small);
  const Bytes b = encode_label_prior(large);
  EXPECT_EQ(a.size(), 16u + 56 * 8);
  EXPECT_EQ(a.size(), b.size());
  EXPECT_EQ(decode_label_prior(a), small);
  EXPECT_EQ(decode_label_prior(b), large);
  Bytes cut(a.begin(), a.end() - 1);
  EXPECT_THROW(decode_label_prior(cut), DecodeError);
}

TEST(LabelPrior, SamplesStayInOpenUnitInterval) {
  const auto p = LabelPrior::from_samples(fixtures::teacher_samples(200, 4, 8, 3));
  Rng a(5);
  Rng b(5);
  for (int i = 0; i < 500; ++i) {
    const auto y = p.sample(a);
    EXPECT_EQ(y, p.sample(b));
    ASSERT_EQ(y.size(), 8u);
    for (double v : y) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  EXPECT_THROW(LabelPrior{}.sample(a), std::logic_error);
}

TEST(LabelPrior, OneHotBranchFavorsFrequentSources) {
  std::vector<Sample> s(100);
  for (std::size_t i = 0; i < s.size(); ++i) s[i].target = i < 90 ? std::vector<double>{0.8, 0.2} : std::vector<double>{0.3, 0.7};
  const auto p = LabelPrior::from_samples(s);
  Rng rng(1);
  int first = 0;
  for (int i = 0; i < 2000; ++i) {
    if (argmax(p.sample(rng)) == 0) ++first;
  }
  EXPECT_GT(first, 1500);
}

TEST(LabelPrior, MergeMatchesPooledSamples) {
  auto all = fixtures::teacher_samples(300, 3, 5, 9);
  const std::vector<Sample> a(all.begin(), all.begin() + 120);
  const std::vector<Sample> b(all.begin() + 120, all.end());
  const auto merged = LabelPrior::merge(LabelPrior::from_samples(a), LabelPrior::from_samples(b));
  const auto direct = LabelPrior::from_samples(all);
  EXPECT_EQ(merged.count, direct.count);
  EXPECT_EQ(merged.best_count, direct.best_count);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_NEAR(merged.mean[j], direct.mean[j], 1e-12);
    EXPECT_NEAR(merged.variance[j], direct.variance[j], 1e-12);
    EXPECT_NEAR(merged.best_mean[j], direct.best_mean[j], 1e-12);
    EXPECT_NEAR(merged.best_variance[j], direct.best_variance[j], 1e-12);
  }
}

TEST(DualHemisphere, Validation) {
  DualHemisphere dh = toy_pair(1);
  EXPECT_NO_THROW(dh.validate());
  dh.right = SparseNet::random(make_layers({8, 6, 5}), Directionality::bidirectional, 64, 1);
  EXPECT_THROW(dh.validate(), std::invalid_argument);
  dh = toy_pair(1);
  std::swap(dh.left, dh.right);
  EXPECT_THROW(dh.validate(), std::invalid_argument);
}

TEST(LocalLeftEpoch, ZeroLearningRateIsNoOp) {
  DualHemisphere dh = toy_pair(2);
  const DualHemisphere before = dh;
  const Dataset data = toy_data(50, 1);
  HyperParams hp = toy_hp();
  hp.learning_rate = 0.0;
  hp.lasso = 0.0;
  Rng rng(1);
  const double et = local_left_epoch(dh, data, hp, rng);
  EXPECT_EQ(dh.left, before.left);
  EXPECT_DOUBLE_EQ(et, loss_terms(before.left, data.records()).training);
}

TEST(LocalLeftEpoch, ReducesTrainingErrorAndLeavesRightAlone) {
  std::vector<double> before;
  std::vector<double> after;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DualHemisphere dh = toy_pair(seed * 3);
    const SparseNet right = dh.right;
    const Dataset data = toy_data(100, seed);
    before.push_back(loss_terms(dh.left, data.records()).training);
    Rng rng(seed);
    double et = 0.0;
    for (int e = 0; e < 50; ++e) et = local_left_epoch(dh, data, toy_hp(), rng);
    after.push_back(et);
    EXPECT_EQ(dh.right, right);
  }
  EXPECT_LT(median(after), median(before));
}

TEST(LocalLeftEpoch, Contracts) {
  DualHemisphere dh = toy_pair(1);
  Rng rng(1);
  EXPECT_THROW(local_left_epoch(dh, Dataset{}, toy_hp(), rng), std::invalid_argument);
  dh.role = Role::core();
  EXPECT_THROW(local_left_epoch(dh, toy_data(5, 1), toy_hp(), rng), std::logic_error);
}

TEST(LocalRightEpoch, ZeroLearningRateIsNoOp) {
  DualHemisphere dh = toy_pair(2);
  const SparseNet right = dh.right;
  const Dataset data = toy_data(50, 1);
  HyperParams hp = toy_hp();
  hp.learning_rate = 0.0;
  Rng rng(1);
  const double er = local_right_epoch(dh, data, hp, rng);
  EXPECT_EQ(dh.right, right);
  EXPECT_DOUBLE_EQ(er, loss_terms(right, data.records()).generation);
  EXPECT_EQ(dh.prior, LabelPrior::from_samples(data.records()));
}

TEST(LocalRightEpoch, ReducesGenerationErrorAndLeavesLeftAlone) {
  std::vector<double> before;
  std::vector<double> after;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DualHemisphere dh = toy_pair(seed * 3 + 1);
    const SparseNet left = dh.left;
    const Dataset data = toy_data(100, seed + 20);
    before.push_back(loss_terms(dh.right, data.records()).generation);
    Rng rng(seed);
    double er = 0.0;
    for (int e = 0; e < 50; ++e) er = local_right_epoch(dh, data, toy_hp(), rng);
    after.push_back(er);
    EXPECT_EQ(dh.left, left);
  }
  EXPECT_LT(median(after), median(before));
}

TEST(DualLoop, ReadsNoData) {
  DualHemisphere dh = toy_pair(4);
  const Dataset data = toy_data(80, 2);
  Rng rng(1);
  local_right_epoch(dh, data, toy_hp(), rng);
  data.reset_reads();
  for (int e = 0; e < 5; ++e) dual_loop_epoch(dh, toy_hp(), 64, rng);
  EXPECT_EQ(data.reads(), 0u);
}

TEST(DualLoop, FrozenCostEqualsObjectiveCost) {
  DualHemisphere dh = toy_pair(5);
  const Dataset data = toy_data(80, 3);
  Rng rng(2);
  local_right_epoch(dh, data, toy_hp(), rng);
  const DualHemisphere frozen = dh;
  HyperParams hp = toy_hp();
  hp.learning_rate = 0.0;
  Rng a(9);
  const LoopResult r = dual_loop_epoch(dh, hp, 40, a);

  Rng b(9);
  std::vector<std::vector<double>> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(frozen.prior.sample(b));
  std::vector<std::vector<double>> xs;
  std::vector<std::vector<double>> preds;
  std::vector<std::vector<double>> recon;
  for (const auto& y : labels) {
    xs.push_back(generate(frozen.right, y));
    preds.push_back(forward(frozen.left, xs.back()).output());
    recon.push_back(generate(frozen.right, forward(frozen.right, xs.back()).output()));
  }
  auto theta = live_parameters(frozen.left);
  const auto rt = live_parameters(frozen.right);
  theta.insert(theta.end(), rt.begin(), rt.end());
  const double expected = cost(training_error(preds, labels), generation_error(recon, xs), theta, hp);
  EXPECT_NEAR(r.cost, expected, 1e-10);
  EXPECT_EQ(dh.left, frozen.left);
  EXPECT_EQ(dh.right, frozen.right);
}

TEST(DualLoop, GradientsMatchFiniteDifferences) {
  DualHemisphere dh = toy_pair(6, 5, 4, 3);
  const std::vector<std::vector<double>> labels{{0.2, 0.7, 0.4}, {0.9, 0.1, 0.3}, {0.5, 0.5, 0.8}};
  std::vector<Sample> batch;
  for (const auto& y : labels) {
    Sample s;
    s.target = y;
    batch.push_back(s);
  }
  const HyperParams hp = toy_hp();
  const LoopGradients g = loop_gradients(dh, batch, hp);
  const double h = 1e-6;
  double worst = 0.0;
  auto check = [&](double& w, double analytic) {
    const double o = w;
    w = o + h;
    const double up = loop_cost(dh, labels, hp).cost;
    w = o - h;
    const double down = loop_cost(dh, labels, hp).cost;
    w = o;
    worst = std::max(worst, std::abs((up - down) / (2 * h) - analytic));
  };
  for (std::size_t l = 0; l < 2; ++l) {
    auto& lf = dh.left.forward_link(l);
    for (std::size_t i = 0; i < lf.weight.size(); ++i) check(lf.weight[i], g.left.forward[l].weight[i]);
    auto& rf = dh.right.forward_link(l);
    for (std::size_t i = 0; i < rf.weight.size(); ++i) check(rf.weight[i], g.right.forward[l].weight[i]);
    auto& rb = dh.right.backward_link(l);
    for (std::size_t i = 0; i < rb.weight.size(); ++i) check(rb.weight[i], g.right.backward[l].weight[i]);
    for (std::size_t i = 0; i < rb.bias.size(); ++i) check(rb.bias[i], g.right.backward[l].bias[i]);
  }
  EXPECT_LT(worst, 1e-7);
}

TEST(DualLoop, CostDecreasesOnPretrainedPair) {
  std::vector<double> start;
  std::vector<double> end;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DualHemisphere dh = toy_pair(seed + 40);
    const Dataset data = toy_data(150, seed + 7);
    Rng rng(seed);
    for (int e = 0; e < 30; ++e) {
      local_left_epoch(dh, data, toy_hp(), rng);
      local_right_epoch(dh, data, toy_hp(), rng);
    }
    std::vector<std::vector<double>> probe;
    Rng pr(seed + 100);
    for (int i = 0; i < 256; ++i) probe.push_back(dh.prior.sample(pr));
    start.push_back(loop_cost(dh, probe, toy_hp()).cost);
    for (int e = 0; e < 100; ++e) dual_loop_epoch(dh, toy_hp(), 64, rng);
    end.push_back(loop_cost(dh, probe, toy_hp()).cost);
  }
  EXPECT_LT(median(end), median(start));
}

TEST(DualLoop, EmptyPriorRejected) {
  DualHemisphere dh = toy_pair(1);
  Rng rng(1);
  EXPECT_THROW(dual_loop_epoch(dh, toy_hp(), 8, rng), std::logic_error);
}

TEST(TerminalRound, InfiniteThresholdConvergesAfterOneEpoch) {
  DualHemisphere dh = toy_pair(6);
  const Dataset data = toy_data(60, 4);
  RoundConfig cfg;
  cfg.threshold = std::numeric_limits<double>::infinity();
  cfg.loop_batch = 32;
  Rng rng(3);
  const RoundOutcome out = terminal_round(dh, data, toy_hp(), cfg, rng);
  EXPECT_TRUE(out.converged);
  EXPECT_EQ(out.epochs.size(), 1u);
  ASSERT_TRUE(out.upload.has_value());
  EXPECT_EQ(deserialize(out.upload->checkpoint), dh.right);
  EXPECT_EQ(decode_label_prior(out.upload->label_summary), dh.prior);
  EXPECT_EQ(out.upload->sample_count, 60u);
}

TEST(TerminalRound, ZeroThresholdNeverConverges) {
  DualHemisphere dh = toy_pair(6);
  const Dataset data = toy_data(40, 4);
  RoundConfig cfg;
  cfg.threshold = 0.0;
  cfg.epoch_cap = 4;
  cfg.loop_batch = 16;
  Rng rng(3);
  const RoundOutcome out = terminal_round(dh, data, toy_hp(), cfg, rng);
  EXPECT_FALSE(out.converged);
  EXPECT_FALSE(out.upload.has_value());
  EXPECT_EQ(out.epochs.size(), 4u);
}

TEST(TerminalRound, PlateauNeedsFullWindow) {
  DualHemisphere dh = toy_pair(7);
  const Dataset data = toy_data(40, 5);
  RoundConfig cfg;
  cfg.loop_batch = 16;
  cfg.window = 3;
  Rng rng(3);
  std::vector<double> history;
  const RoundOutcome out = terminal_round(dh, data, toy_hp(), cfg, rng, history);
  EXPECT_GE(out.epochs.size(), 4u);
  EXPECT_EQ(history.size(), out.epochs.size());
  if (out.converged) {
    const std::size_t n = history.size();
    const double best = std::min({history[n - 2], history[n - 3], history[n - 4]});
    EXPECT_LT(history.back(), 1.05 * best);
  }
}

TEST(TerminalRound, UploadSizeIndependentOfDataSize) {
  RoundConfig cfg;
  cfg.threshold = std::numeric_limits<double>::infinity();
  cfg.loop_batch = 8;
  HyperParams hp = toy_hp();
  hp.batch_size = 256;
  std::size_t sizes[2];
  int i = 0;
  for (std::size_t n : {100u, 10000u}) {
    DualHemisphere dh = toy_pair(8, 4, 3, 2);
    const Dataset data = toy_data(n, 1, 4, 2);
    Rng rng(1);
    const RoundOutcome out = terminal_round(dh, data, hp, cfg, rng);
    ASSERT_TRUE(out.upload.has_value());
    sizes[i++] = out.upload->checkpoint.size() + out.upload->label_summary.size();
  }
  EXPECT_EQ(sizes[0], sizes[1]);
}

TEST(RoundMetrics, Csv) {
  RoundMetric m;
  m.round = 2;
  m.terminal = 1;
  m.epoch = 3;
  m.training = 0.5;
  m.generation = 0.25;
  m.cost = 0.75;
  m.converged = true;
  m.upload_bytes = 900;
  std::ostringstream out;
  write_round_metrics_csv(out, std::vector<RoundMetric>{m});
  EXPECT_EQ(out.str(), "round,terminal,epoch,training,generation,cost,converged,upload_bytes\n2,1,3,0.5,0.25,0.75,1,900\n");
}

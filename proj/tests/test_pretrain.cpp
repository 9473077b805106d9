#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "hemi/pretrain.hpp"
#include "test_util.hpp"

using namespace hemi;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

PruneConfig toy_config(std::size_t dmax) {
  PruneConfig cfg;
  cfg.max_degree = dmax;
  cfg.epochs_per_pass = 5;
  cfg.max_epochs = 60;
  cfg.prune_batch = 64;
  return cfg;
}

HyperParams toy_hp() {
  HyperParams hp;
  hp.learning_rate = 0.1;
  hp.batch_size = 16;
  return hp;
}

std::vector<Sample> unlabeled(std::vector<Sample> v) {
  for (auto& s : v) s.target.clear();
  return v;
}

}  // namespace

TEST(DeletionProbability, Examples) {
  EXPECT_EQ(deletion_probability(0.0, 2.0), 1.0);
  EXPECT_EQ(deletion_probability(-0.5, 2.0), 1.0);
  // e^-1 to 20 digits: 0.36787944117144232160
  EXPECT_NEAR(deletion_probability(3.0, 3.0), 0.36787944117144232160, 1e-15);
  EXPECT_THROW(deletion_probability(1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(deletion_probability(1.0, -1.0), std::invalid_argument);
}

TEST(DeletionProbability, MonotoneAndClamped) {
  double prev = 1.0;
  for (double de = -2.0; de <= 10.0; de += 0.25) {
    const double p = deletion_probability(de, 1.5);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_LE(p, prev);
    prev = p;
  }
}

TEST(DeletionProbability, EmpiricalRateAtUnitRatio) {
  Rng rng(2024);
  int deleted = 0;
  for (int i = 0; i < 10000; ++i) {
    if (uniform01(rng) < deletion_probability(1.7, 1.7)) ++deleted;
  }
  EXPECT_NEAR(deleted / 10000.0, std::exp(-1.0), 0.05);
}

TEST(PruneConfig, Validation) {
  PruneConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.max_degree = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = PruneConfig{};
  cfg.threshold = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

class IncrementalOracle : public ::testing::TestWithParam<int> {};

TEST_P(IncrementalOracle, TrialMatchesFullEvaluation) {
  const Loss loss = static_cast<Loss>(GetParam());
  SparseNet net = SparseNet::random(make_layers({5, 4, 3, 2}), Directionality::bidirectional, 8, 17);
  auto batch = fixtures::random_samples(7, 5, 2, 3);
  if (loss == Loss::generation) batch = unlabeled(batch);
  const HyperParams hp;
  IncrementalLoss inc(net, batch, loss, hp);
  EXPECT_NEAR(inc.value(), evaluate(net, batch, loss, hp), 1e-12);

  Rng rng(5);
  for (int step = 0; step < 25; ++step) {
    const Direction d = step % 2 ? Direction::negative : Direction::positive;
    const std::size_t k = rng() % net.link_count();
    const Link& l = net.link(d, k);
    const std::size_t r = rng() % l.rows;
    const std::size_t c = rng() % l.cols;
    SparseNet probe = net;
    probe.link(d, k).remove(r, c);
    const double oracle = loss == Loss::training && d == Direction::negative ? evaluate(net, batch, loss, hp)
                                                                           : evaluate(probe, batch, loss, hp);
    EXPECT_NEAR(inc.trial(d, k, r, c), oracle, 1e-10);
    inc.commit(d, k, r, c);
    EXPECT_FALSE(net.link(d, k).alive(r, c));
    EXPECT_NEAR(inc.value(), evaluate(net, batch, loss, hp), 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(Losses, IncrementalOracle, ::testing::Values(0, 1, 2));

TEST(IncrementalLoss, UnidirectionalCost) {
  SparseNet net = SparseNet::random(make_layers({4, 3, 2}), Directionality::unidirectional, 8, 2);
  const auto batch = fixtures::random_samples(5, 4, 2, 1);
  const HyperParams hp;
  IncrementalLoss inc(net, batch, Loss::cost, hp);
  SparseNet probe = net;
  probe.forward_link(1).remove(1, 2);
  EXPECT_NEAR(inc.trial(Direction::positive, 1, 1, 2), evaluate(probe, batch, Loss::cost, hp), 1e-12);
}

TEST(PrunePass, ZeroThresholdLeavesNetUnchanged) {
  SparseNet net = SparseNet::random(make_layers({6, 5, 3}), Directionality::unidirectional, 2, 4);
  const SparseNet before = net;
  const auto batch = fixtures::random_samples(10, 6, 3, 2);
  PruneConfig cfg = toy_config(2);
  cfg.threshold = 0.0;
  Rng rng(1);
  const auto events = prune_pass(net, batch, Loss::training, cfg, HyperParams{}, rng);
  EXPECT_TRUE(events.empty());
  EXPECT_EQ(net, before);
}

TEST(PrunePass, DeadInputDeletedOnFirstVisit) {
  SparseNet net = SparseNet::random(make_layers({4, 3}), Directionality::unidirectional, 3, 8);
  auto batch = fixtures::random_samples(12, 4, 3, 6);
  for (auto& s : batch) s.features[0] = 0.0;
  PruneConfig cfg = toy_config(3);
  cfg.threshold = std::numeric_limits<double>::infinity();
  Rng rng(3);
  const auto events = prune_pass(net, batch, Loss::training, cfg, HyperParams{}, rng);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_FALSE(net.forward_link(0).alive(r, 0));
  for (const auto& e : events) {
    if (e.col == 0) {
      EXPECT_EQ(e.delta_e, 0.0);
      EXPECT_EQ(e.probability, 1.0);
      EXPECT_EQ(e.outcome, PruneOutcome::deleted);
    }
  }
}

TEST(PrunePass, UnboundedThresholdMeetsDegreeBound) {
  SparseNet net = SparseNet::random(make_layers({10, 7, 5}), Directionality::bidirectional, 4, 12);
  const auto batch = fixtures::random_samples(20, 10, 5, 7);
  PruneConfig cfg = toy_config(4);
  cfg.threshold = std::numeric_limits<double>::infinity();
  Rng rng(8);
  prune_pass(net, batch, Loss::cost, cfg, HyperParams{}, rng);
  EXPECT_TRUE(net.degrees_within());
  EXPECT_NO_THROW(net.validate());
}

TEST(PrunePass, EventsAreConsistent) {
  SparseNet net = SparseNet::random(make_layers({8, 6, 3}), Directionality::unidirectional, 3, 3);
  const SparseNet before = net;
  const auto batch = fixtures::random_samples(16, 8, 3, 4);
  PruneConfig cfg = toy_config(3);
  Rng rng(11);
  const auto events = prune_pass(net, batch, Loss::training, cfg, HyperParams{}, rng, 7);
  ASSERT_FALSE(events.empty());
  double prev_base = -1.0;
  for (const auto& e : events) {
    EXPECT_EQ(e.epoch, 7u);
    EXPECT_EQ(e.batch_size, 16u);
    EXPECT_NEAR(e.probability, std::min(1.0, std::exp(-e.delta_e / e.base_e)), 1e-15);
    EXPECT_DOUBLE_EQ(e.magnitude, std::abs(before.link(e.direction, e.link).w(e.row, e.col)));
    const bool gone = !net.link(e.direction, e.link).alive(e.row, e.col);
    EXPECT_EQ(gone, e.outcome != PruneOutcome::kept);
    prev_base = e.base_e;
  }
  EXPECT_GT(prev_base, 0.0);
}

TEST(PrunePass, NeverResurrects) {
  SparseNet net = SparseNet::random(make_layers({8, 6, 3}), Directionality::bidirectional, 3, 9);
  const auto batch = unlabeled(fixtures::random_samples(16, 8, 3, 4));
  Rng rng(2);
  PruneConfig cfg = toy_config(5);
  prune_pass(net, batch, Loss::generation, cfg, HyperParams{}, rng);
  const SparseNet mid = net;
  cfg.max_degree = 3;
  prune_pass(net, batch, Loss::generation, cfg, HyperParams{}, rng);
  auto check = [](const std::vector<Link>& a, const std::vector<Link>& b) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      for (std::size_t i = 0; i < a[k].live.size(); ++i) {
        if (!a[k].live[i]) EXPECT_FALSE(b[k].live[i]);
      }
    }
  };
  check(mid.forward_links(), net.forward_links());
  check(mid.backward_links(), net.backward_links());
}

TEST(PrunePass, TrainingLossPrunesForwardOnly) {
  SparseNet net = SparseNet::random(make_layers({8, 6, 3}), Directionality::bidirectional, 3, 9);
  const SparseNet before = net;
  const auto batch = fixtures::random_samples(16, 8, 3, 4);
  Rng rng(2);
  PruneConfig cfg = toy_config(3);
  cfg.threshold = std::numeric_limits<double>::infinity();
  prune_pass(net, batch, Loss::training, cfg, HyperParams{}, rng);
  EXPECT_EQ(net.backward_links(), before.backward_links());
  EXPECT_TRUE(net.degrees_within(Direction::positive));
  EXPECT_FALSE(net.degrees_within(Direction::negative));
}

TEST(PruneEventsCsv, HeaderAndRows) {
  PruneEvent e;
  e.epoch = 3;
  e.link = 1;
  e.row = 2;
  e.col = 4;
  e.magnitude = 0.125;
  e.delta_e = -0.5;
  e.base_e = 2.0;
  e.probability = 1.0;
  e.outcome = PruneOutcome::deleted;
  e.batch_size = 64;
  std::ostringstream out;
  write_prune_events_csv(out, std::vector<PruneEvent>{e});
  EXPECT_EQ(out.str(),
            "epoch,direction,link,row,col,magnitude,delta_e,base_e,probability,outcome,batch\n"
            "3,positive,1,2,4,0.125,-0.5,2,1,deleted,64\n");
}

TEST(PruneSubsample, DeterministicAndBounded) {
  const auto data = fixtures::random_samples(50, 2, 1, 1);
  const auto a = prune_subsample(data, 10, 4);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a, prune_subsample(data, 10, 4));
  EXPECT_EQ(prune_subsample(data, 100, 4).size(), 50u);
}

TEST(ProcedureUnidirectional, VacuousBoundNoDeletions) {
  SparseNet net = SparseNet::random(make_layers({12, 8, 4}), Directionality::unidirectional, 12, 1);
  const auto data = fixtures::teacher_samples(80, 12, 4, 2);
  const PretrainReport r = pretrain_unidirectional(net, data, toy_hp(), toy_config(12));
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(r.epochs, 5u);
  EXPECT_FALSE(r.capped);
  EXPECT_EQ(net.forward_link(0).degree_sum(), 96u);
}

TEST(ProcedureUnidirectional, DegreeBoundHolds) {
  SparseNet net = SparseNet::random(make_layers({12, 16, 4}), Directionality::unidirectional, 8, 2);
  const auto data = fixtures::teacher_samples(120, 12, 4, 3);
  const PretrainReport r = pretrain_unidirectional(net, data, toy_hp(), toy_config(8));
  EXPECT_TRUE(net.degrees_within(Direction::positive));
  for (const auto& l : net.forward_links()) EXPECT_LE(l.max_in_degree(), 8u);
  EXPECT_EQ(r.degree_sums.size(), 2u);
  EXPECT_NO_THROW(net.validate());
}

TEST(ProcedureUnidirectional, ReducesTrainingError) {
  std::vector<double> before;
  std::vector<double> after;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SparseNet net = SparseNet::random(make_layers({12, 8, 4}), Directionality::unidirectional, 6, seed);
    const auto data = fixtures::teacher_samples(150, 12, 4, seed + 50);
    before.push_back(evaluate(net, data, Loss::training, HyperParams{}));
    PruneConfig cfg = toy_config(6);
    cfg.seed = seed;
    pretrain_unidirectional(net, data, toy_hp(), cfg);
    after.push_back(evaluate(net, data, Loss::training, HyperParams{}));
  }
  EXPECT_LT(median(after), median(before));
}

TEST(ProcedureUnidirectional, RejectsBidirectional) {
  SparseNet net = SparseNet::random(make_layers({3, 2}), Directionality::bidirectional, 2, 1);
  const auto data = fixtures::teacher_samples(10, 3, 2, 1);
  EXPECT_THROW(pretrain_unidirectional(net, data, toy_hp(), toy_config(2)), std::invalid_argument);
}

TEST(ProcedureUnidirectional, Deterministic) {
  const auto data = fixtures::teacher_samples(100, 12, 4, 3);
  SparseNet a = SparseNet::random(make_layers({12, 16, 4}), Directionality::unidirectional, 8, 2);
  SparseNet b = a;
  pretrain_unidirectional(a, data, toy_hp(), toy_config(8));
  pretrain_unidirectional(b, data, toy_hp(), toy_config(8));
  EXPECT_EQ(a, b);
}

TEST(ProcedureBidirectional, DegreeSumsDecrease) {
  SparseNet net = SparseNet::random(make_layers({8, 6, 4}), Directionality::bidirectional, 6, 3);
  const auto data = fixtures::teacher_samples(120, 8, 4, 5);
  const PretrainReport r = pretrain_bidirectional(net, data, toy_hp(), toy_config(6), 1);
  ASSERT_EQ(r.degree_sums.size(), 2u);
  EXPECT_LT(r.degree_sums[1], r.degree_sums[0]);
  EXPECT_TRUE(net.degrees_within());
  EXPECT_NO_THROW(net.validate());
}

TEST(ProcedureBidirectional, StepSixForcesSumBelowPreviousLayer) {
  // 6-6-6-6 with a vacuous bound: each layer starts at 36 live weights, so
  // every layer after the first must be pruned below its predecessor.
  SparseNet net = SparseNet::random(make_layers({6, 6, 6, 6}), Directionality::bidirectional, 6, 4);
  const auto data = fixtures::teacher_samples(80, 6, 6, 6);
  const PretrainReport r = pretrain_bidirectional(net, data, toy_hp(), toy_config(6), 2);
  ASSERT_EQ(r.degree_sums.size(), 3u);
  EXPECT_LT(r.degree_sums[1], r.degree_sums[0]);
  EXPECT_LT(r.degree_sums[2], r.degree_sums[1]);
}

TEST(ProcedureBidirectional, ReducesReconstructionError) {
  std::vector<double> before;
  std::vector<double> after;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SparseNet net = SparseNet::random(make_layers({8, 6, 8}), Directionality::bidirectional, 6, seed);
    const auto data = unlabeled(fixtures::teacher_samples(150, 8, 8, seed + 10));
    before.push_back(evaluate(net, data, Loss::generation, HyperParams{}));
    PruneConfig cfg = toy_config(6);
    cfg.seed = seed;
    pretrain_bidirectional(net, data, toy_hp(), cfg, 1);
    after.push_back(evaluate(net, data, Loss::generation, HyperParams{}));
  }
  EXPECT_LT(median(after), median(before));
}

TEST(ProcedureBidirectional, LaterLayersUntouchedWhileTrainingEarlier) {
  SparseNet net = SparseNet::random(make_layers({8, 6, 5, 4}), Directionality::bidirectional, 6, 7);
  const SparseNet original = net;
  const auto data = fixtures::teacher_samples(60, 8, 4, 1);
  std::size_t calls = 0;
  pretrain_bidirectional(net, data, toy_hp(), toy_config(6), 2, [&](std::size_t h, const SparseNet& n) {
    ++calls;
    for (std::size_t k = h + 1; k < n.link_count(); ++k) {
      EXPECT_EQ(n.forward_link(k), original.forward_link(k));
      EXPECT_EQ(n.backward_link(k), original.backward_link(k));
    }
  });
  EXPECT_EQ(calls, 3u);
}

TEST(ProcedureBidirectional, RejectsMismatchedDepth) {
  SparseNet net = SparseNet::random(make_layers({4, 3, 2}), Directionality::bidirectional, 4, 1);
  const auto data = fixtures::teacher_samples(10, 4, 2, 1);
  EXPECT_THROW(pretrain_bidirectional(net, data, toy_hp(), toy_config(4), 2), std::invalid_argument);
}

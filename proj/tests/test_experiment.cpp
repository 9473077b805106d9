#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "hemi/experiment.hpp"

using namespace hemi;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.seed = 3;
  c.arch.layers = {kFeatures, 12, kSources};
  c.arch.max_degree = 12;
  c.prune.max_epochs = 4;
  c.prune.epochs_per_pass = 2;
  c.prune.prune_batch = 32;
  c.terminals = 2;
  c.workload.core_samples = 200;
  c.workload.samples_per_group = 100;
  c.workload.profiles.resize(3);
  c.round.epoch_cap = 2;
  c.round.loop_batch = 32;
  c.aggregate.replay = 32;
  c.right_epochs = 1;
  c.personalize_epochs = 1;
  c.baseline_epochs = 2;
  c.threads = 2;
  c.sweep.terminals = {1, 2};
  c.sweep.p = {1, 2};
  c.sweep.latency_limits = {0.1, 0.2, 0.4, 1.0};
  return c;
}

const OutputFiles& shared_run() {
  static const OutputFiles files = run_experiment(tiny());
  return files;
}

}  // namespace

TEST(Table, CsvRoundTrip) {
  Table t;
  t.header = {"a", "b"};
  t.rows = {{"1", "0.5"}, {"2", ""}};
  const Table back = Table::parse(t.csv());
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.number(0, "b"), 0.5);
  EXPECT_THROW(back.column("c"), std::invalid_argument);
  EXPECT_THROW(Table::parse("a,b\n1\n"), std::invalid_argument);
}

TEST(Table, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 87.46, 1e-300, 12345678.901234567}) {
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
}

TEST(Experiment, EmitsFiveTables) {
  const auto& f = shared_run();
  for (const char* name : {"t1_accuracy_vs_M.csv", "t2_accuracy_vs_latency.csv", "t3_commcost_vs_p.csv",
                           "t4_terminal_learning_time.csv", "t5_core_learning_time.csv"}) {
    ASSERT_TRUE(f.count(name)) << name;
  }
  const Table t1 = Table::parse(f.at("t1_accuracy_vs_M.csv"));
  EXPECT_EQ(t1.header, (std::vector<std::string>{"M", "baseline_accuracy", "proposal_accuracy", "improvement_pp"}));
  ASSERT_EQ(t1.rows.size(), 2u);
  EXPECT_EQ(t1.rows[0][0], "1");
  EXPECT_EQ(t1.rows[1][0], "2");
  EXPECT_EQ(Table::parse(f.at("t2_accuracy_vs_latency.csv")).rows.size(), 4u);
  const Table t3 = Table::parse(f.at("t3_commcost_vs_p.csv"));
  ASSERT_EQ(t3.rows.size(), 2u);
  EXPECT_EQ(t3.number(1, "samples"), 2 * t3.number(0, "samples"));
  const Table t4 = Table::parse(f.at("t4_terminal_learning_time.csv"));
  EXPECT_EQ(t4.header[2], "baseline_seconds@wallclock");
}

TEST(Experiment, PerRunArtifacts) {
  const auto& f = shared_run();
  for (const char* name :
       {"config.json", "core/prune_left.csv", "core/prune_right.csv", "core/global_left.ckpt", "runs/M2/predictions.csv",
        "runs/M2/ledger_proposal.csv", "runs/M2/ledger_baseline.csv", "runs/M2/metrics.csv",
        "runs/M2/checkpoints/terminal_1_left.ckpt", "runs/M2/checkpoints/baseline.ckpt", "runs/M1/predictions.csv",
        "runs/M2_p2/ledger_proposal.csv", "runs/M2_p2/ledger_baseline.csv"}) {
    EXPECT_TRUE(f.count(name)) << name;
  }
  EXPECT_EQ(parse_config(nlohmann::json::parse(f.at("config.json"))), tiny());
}

TEST(Experiment, ImprovementIdentitiesExact) {
  const auto& f = shared_run();
  for (const char* name : {"t1_accuracy_vs_M.csv", "t2_accuracy_vs_latency.csv"}) {
    const Table t = Table::parse(f.at(name));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      EXPECT_EQ(t.number(r, "improvement_pp"), t.number(r, "proposal_accuracy") - t.number(r, "baseline_accuracy"));
    }
  }
  const Table t3 = Table::parse(f.at("t3_commcost_vs_p.csv"));
  for (std::size_t r = 0; r < t3.rows.size(); ++r) {
    EXPECT_EQ(t3.number(r, "improvement_times"), t3.number(r, "baseline_cc") / t3.number(r, "proposal_cc"));
  }
  const Table t5 = Table::parse(f.at("t5_core_learning_time.csv"));
  for (std::size_t r = 0; r < t5.rows.size(); ++r) {
    const double b = t5.number(r, "baseline_seconds@wallclock");
    const double c = t5.number(r, "core_seconds@wallclock");
    EXPECT_GT(b, 0.0);
    EXPECT_GT(c, 0.0);
    EXPECT_EQ(t5.number(r, "cost_times@wallclock"), c / b);
  }
}

TEST(Experiment, BaselineAccuracyMonotoneInLimit) {
  const Table t2 = Table::parse(shared_run().at("t2_accuracy_vs_latency.csv"));
  for (std::size_t r = 1; r < t2.rows.size(); ++r) {
    EXPECT_GE(t2.number(r, "baseline_accuracy"), t2.number(r - 1, "baseline_accuracy"));
  }
}

TEST(Experiment, NoRawDataInProposalLedgers) {
  for (const auto& [name, content] : shared_run()) {
    if (name.find("ledger_proposal.csv") == std::string::npos) continue;
    EXPECT_EQ(content.find("raw_data"), std::string::npos) << name;
    EXPECT_EQ(content.find("raw-data"), std::string::npos) << name;
  }
}

TEST(Experiment, DeterministicModuloWallclock) {
  const OutputFiles again = run_experiment(tiny());
  const OutputFiles a = deterministic_view(shared_run()), b = deterministic_view(again);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, content] : a) EXPECT_EQ(content, b.at(name)) << name;
  const Table t4 = Table::parse(a.at("t4_terminal_learning_time.csv"));
  EXPECT_EQ(t4.header, (std::vector<std::string>{"p", "samples"}));
}

TEST(Experiment, InvalidConfigNamesStage) {
  ExperimentConfig c = tiny();
  c.hp.learning_rate = -1.0;
  try {
    run_experiment(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
  }
}

TEST(Experiment, RuntimeFailureNamesStage) {
  ExperimentConfig c = tiny();
  c.workload.samples_per_group = 5;
  try {
    run_experiment(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_NE(e.stage().find("M="), std::string::npos) << e.what();
  }
}

TEST(WriteOutputs, RoundTripAndNoStaging) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "hemi_write_outputs";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "keep.txt") << "mine";
  const OutputFiles files{{"a.csv", "x\n1\n"}, {"sub/b.bin", std::string("\0\1\2", 3)}};
  write_outputs(files, dir);
  OutputFiles back = read_outputs(dir);
  EXPECT_EQ(back.at("keep.txt"), "mine");
  back.erase("keep.txt");
  EXPECT_EQ(back, files);
  fs::path staging = dir;
  staging += ".staging";
  EXPECT_FALSE(fs::exists(staging));
  fs::remove_all(dir);
}

TEST(DeterministicView, DropsWallclockColumnsOnly) {
  const OutputFiles f{{"t.csv", "p,s@wallclock,c\n1,0.3,2\n"}, {"m.ckpt", "raw"}};
  const OutputFiles v = deterministic_view(f);
  EXPECT_EQ(v.at("t.csv"), "p,c\n1,2\n");
  EXPECT_EQ(v.at("m.ckpt"), "raw");
}

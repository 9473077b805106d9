#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hemi/acceptance.hpp"
#include "hemi/checkpoint.hpp"
#include "hemi/config.hpp"
#include "hemi/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hemi;

namespace {

enum Exit { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool paper_scale = false;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.paper_scale) cfg.arch.layers = {kFeatures, 1000, 900, 800, 700, 600, kSources};
  apply_env_overrides(cfg, [](const char* k) { return std::getenv(k); });
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.output_dir = *g.out;
  cfg.validate();
  return cfg;
}

std::string bytes_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

std::string csv_of(const CommLedger& l) {
  std::ostringstream o;
  write_ledger_csv(o, l);
  return o.str();
}

Bytes read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

json accuracy_json(const Served& s, const std::vector<double>& limits) {
  json j;
  j["unlimited"] = served_accuracy(s, std::numeric_limits<double>::infinity());
  for (double l : limits) j[format_number(l)] = served_accuracy(s, l);
  return j;
}

int cmd_pretrain(const ExperimentConfig& cfg) {
  const Workload w = synthesize(cfg.seed, cfg.terminals, cfg.workload);
  const CoreInit core = core_init(w.core.train, cfg.hp, cfg.core());
  OutputFiles files;
  std::ostringstream l, r;
  write_prune_events_csv(l, core.left_report.events);
  write_prune_events_csv(r, core.right_report.events);
  files["core/prune_left.csv"] = l.str();
  files["core/prune_right.csv"] = r.str();
  files["core/global_left.ckpt"] = bytes_string(serialize(core.global.pair.left, "core"));
  files["core/global_right.ckpt"] = bytes_string(serialize(core.global.pair.right, "core"));
  write_outputs(files, cfg.output_dir);
  std::cout << json{{"command", "pretrain"},
                    {"seconds", core.seconds},
                    {"left_epochs", core.left_report.epochs},
                    {"right_epochs", core.right_report.epochs},
                    {"left_degree_sums", core.left_report.degree_sums},
                    {"right_degree_sums", core.right_report.degree_sums}}
                   .dump()
            << std::endl;
  return kOk;
}

int cmd_federate(const ExperimentConfig& cfg) {
  const Workload w = synthesize(cfg.seed, cfg.terminals, cfg.workload);
  const FederationResult fed = run_federation(cfg.federation(cfg.terminals), w);
  OutputFiles files;
  files["federate/ledger_proposal.csv"] = csv_of(fed.ledger);
  std::ostringstream m;
  write_round_metrics_csv(m, fed.metrics);
  files["federate/metrics.csv"] = m.str();
  files["federate/checkpoints/global_left.ckpt"] = bytes_string(serialize(fed.global.pair.left, "core"));
  files["federate/checkpoints/global_right.ckpt"] = bytes_string(serialize(fed.global.pair.right, "core"));
  for (std::size_t i = 0; i < fed.terminals.size(); ++i) {
    const std::string stem = "federate/checkpoints/terminal_" + std::to_string(i);
    const std::string origin = "terminal-" + std::to_string(i);
    files[stem + "_left.ckpt"] = bytes_string(serialize(fed.terminals[i].left, origin));
    files[stem + "_right.ckpt"] = bytes_string(serialize(fed.terminals[i].right, origin));
  }
  write_outputs(files, cfg.output_dir);
  std::cout << json{{"command", "federate"},
                    {"rounds", fed.rounds},
                    {"converged", fed.converged},
                    {"comm_cost", comm_cost(fed.ledger)},
                    {"core_seconds", fed.core_seconds},
                    {"terminal_seconds", fed.terminal_seconds},
                    {"proposal_accuracy", accuracy_json(serve_terminals(fed.terminals, w), cfg.sweep.latency_limits)}}
                   .dump()
            << std::endl;
  return kOk;
}

int cmd_baseline(const ExperimentConfig& cfg) {
  const Workload w = synthesize(cfg.seed, cfg.terminals, cfg.workload);
  const WanTopology topo = cfg.topology(cfg.terminals);
  const BaselineResult b = run_baseline(cfg.baseline(), w, topo);
  OutputFiles files;
  files["baseline/ledger_baseline.csv"] = csv_of(b.ledger);
  files["baseline/checkpoints/baseline.ckpt"] = bytes_string(serialize(b.net, "baseline"));
  write_outputs(files, cfg.output_dir);
  Rng rng = make_rng(cfg.seed, 300);
  std::cout << json{{"command", "baseline"},
                    {"seconds", b.seconds},
                    {"comm_cost", comm_cost(b.ledger)},
                    {"baseline_accuracy", accuracy_json(serve_core(b.net, w, topo, rng), cfg.sweep.latency_limits)}}
                   .dump()
            << std::endl;
  return kOk;
}

// Reads whichever of the federate and baseline checkpoints exist under the
// output directory and sweeps accuracy over the latency limits.
int cmd_evaluate(const ExperimentConfig& cfg) {
  const fs::path root = cfg.output_dir;
  const fs::path fed_dir = root / "federate/checkpoints";
  const fs::path base_ckpt = root / "baseline/checkpoints/baseline.ckpt";
  const bool have_fed = fs::exists(fed_dir / "terminal_0_left.ckpt");
  const bool have_base = fs::exists(base_ckpt);
  if (!have_fed && !have_base) throw std::runtime_error("no checkpoints under " + root.string());
  const Workload w = synthesize(cfg.seed, cfg.terminals, cfg.workload);
  const WanTopology topo = cfg.topology(cfg.terminals);
  Table t;
  t.header = {"latency_limit_s"};
  std::vector<double> limits = cfg.sweep.latency_limits;
  limits.push_back(std::numeric_limits<double>::infinity());
  for (double l : limits) t.rows.push_back({format_number(l)});
  json out{{"command", "evaluate"}};
  auto add = [&](const std::string& name, const Served& s) {
    t.header.push_back(name + "_accuracy");
    for (std::size_t i = 0; i < limits.size(); ++i) t.rows[i].push_back(format_number(100.0 * served_accuracy(s, limits[i])));
    out[name + "_accuracy"] = accuracy_json(s, cfg.sweep.latency_limits);
  };
  if (have_base) {
    Rng rng = make_rng(cfg.seed, 300);
    add("baseline", serve_core(deserialize(read_bytes(base_ckpt)), w, topo, rng));
  }
  if (have_fed) {
    std::vector<DualHemisphere> terms(cfg.terminals);
    for (std::size_t i = 0; i < cfg.terminals; ++i) {
      const std::string stem = "terminal_" + std::to_string(i);
      terms[i].left = deserialize(read_bytes(fed_dir / (stem + "_left.ckpt")));
      terms[i].right = deserialize(read_bytes(fed_dir / (stem + "_right.ckpt")));
      terms[i].role = Role::terminal_of(i);
    }
    add("proposal", serve_terminals(terms, w));
  }
  write_outputs({{"evaluation.csv", t.csv()}}, root);
  std::cout << out.dump() << std::endl;
  return kOk;
}

int cmd_report(const ExperimentConfig& cfg) {
  const OutputFiles files = run_experiment(cfg, &std::cerr);
  write_outputs(files, cfg.output_dir);
  json tables = json::array();
  for (const auto& [name, content] : files) {
    if (name.rfind("t", 0) == 0 && name.find('/') == std::string::npos) tables.push_back(name);
  }
  std::cout << json{{"command", "report"}, {"output_dir", cfg.output_dir}, {"tables", tables}}.dump() << std::endl;
  return kOk;
}

int cmd_selftest(const std::vector<int>& only) {
  acceptance::Options opts;
  opts.only = only;
  const auto results = acceptance::run_all(opts, [](const acceptance::Result& r) {
    std::cout << acceptance::format(r) << std::endl;
  });
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.pass;
  std::cout << "acceptance: " << passed << "/" << results.size() << " passed" << std::endl;
  return passed == results.size() ? kOk : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-hemisphere federated bandwidth prediction experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Override the output directory");
  app.add_flag("--paper-scale", g.paper_scale, "Use the 96-1000-900-800-700-600-8 architecture");

  auto* pretrain = app.add_subcommand("pretrain", "Layer-wise pretraining of the core pair; writes checkpoints");
  auto* federate = app.add_subcommand("federate", "Full federation run; writes checkpoints and ledgers");
  auto* baseline = app.add_subcommand("baseline", "Central baseline with raw-data collection");
  auto* evaluate = app.add_subcommand("evaluate", "Accuracy over latency limits from saved checkpoints");
  auto* report = app.add_subcommand("report", "Sweep M and p and write the five tables");
  auto* selftest = app.add_subcommand("selftest", "Run the acceptance suite");
  std::vector<int> only;
  selftest->add_option("--only", only, "Criterion ids to run")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << std::flush;
    return fail(kConfigError, "usage", e.what());
  }

  try {
    if (selftest->parsed()) return cmd_selftest(only);
    const ExperimentConfig cfg = resolve(g);
    if (pretrain->parsed()) return cmd_pretrain(cfg);
    if (federate->parsed()) return cmd_federate(cfg);
    if (baseline->parsed()) return cmd_baseline(cfg);
    if (evaluate->parsed()) return cmd_evaluate(cfg);
    if (report->parsed()) return cmd_report(cfg);
  } catch (const ConfigError& e) {
    return fail(kConfigError, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kRuntimeError, "runtime", e.what());
  }
  return kOk;
}

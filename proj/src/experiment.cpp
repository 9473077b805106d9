#include "hemi/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "hemi/checkpoint.hpp"

namespace hemi {

namespace {

constexpr std::uint64_t kStreamServe = 300;

template <class F>
auto stage(const std::string& name, std::ostream* log, F&& f) {
  if (log) *log << "[stage] " << name << std::endl;
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string bytes_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string ledger_csv(const CommLedger& l) {
  std::ostringstream o;
  write_ledger_csv(o, l);
  return o.str();
}

std::size_t train_samples(const Workload& w) {
  std::size_t n = 0;
  for (const auto& t : w.terminals) n += t.train.size();
  return n;
}

std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

struct RunSummary {
  double proposal_cc = 0.0;
  double baseline_cc = 0.0;
  double terminal_seconds = 0.0;
  double core_seconds = 0.0;
  double baseline_seconds = 0.0;
  std::size_t samples = 0;
};

}  // namespace

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string Table::csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

Table Table::parse(const std::string& csv) {
  Table t;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("table: missing header");
  t.header = split_line(line);
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      throw std::invalid_argument("table: line " + std::to_string(n) + " has " + std::to_string(cells.size()) +
                                  " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::size_t Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw std::invalid_argument("table: no column '" + name + "'");
}

double Table::number(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row).at(column(name));
  std::size_t used = 0;
  const double v = std::stod(cell, &used);
  if (used != cell.size()) throw std::invalid_argument("table: '" + cell + "' is not a number");
  return v;
}

ServedPair serve_both(std::span<const DualHemisphere> terminals, const SparseNet& central, const Workload& w,
                      const WanTopology& topo, std::uint64_t seed) {
  ServedPair s;
  s.proposal = serve_terminals(terminals, w);
  Rng rng = make_rng(seed, kStreamServe);
  s.baseline = serve_core(central, w, topo, rng);
  return s;
}

Table predictions_table(const ServedPair& s, const Workload& w) {
  Table t;
  t.header = {"terminal", "timestamp", "truth", "proposal_source", "proposal_latency_s", "baseline_source",
              "baseline_latency_s"};
  std::size_t k = 0;
  for (std::size_t i = 0; i < w.terminals.size(); ++i) {
    for (const auto& smp : w.terminals[i].test.records()) {
      t.rows.push_back({std::to_string(i), std::to_string(smp.timestamp), std::to_string(s.proposal.truth.at(k)),
                        std::to_string(s.proposal.responses.at(k).source),
                        format_number(s.proposal.responses.at(k).latency),
                        std::to_string(s.baseline.responses.at(k).source),
                        format_number(s.baseline.responses.at(k).latency)});
      ++k;
    }
  }
  return t;
}

Table latency_accuracy_table(const ServedPair& s, const std::vector<double>& limits) {
  Table t;
  t.header = {"latency_limit_s", "baseline_accuracy", "proposal_accuracy", "improvement_pp"};
  for (double limit : limits) {
    const double b = 100.0 * served_accuracy(s.baseline, limit);
    const double p = 100.0 * served_accuracy(s.proposal, limit);
    t.rows.push_back({format_number(limit), format_number(b), format_number(p), format_number(p - b)});
  }
  return t;
}

std::string run_dir(std::size_t m, std::size_t p) {
  std::string d = "runs/M" + std::to_string(m);
  if (p != 1) d += "_p" + std::to_string(p);
  return d;
}

OutputFiles run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  stage("config", log, [&] {
    cfg.validate();
    return 0;
  });
  OutputFiles out;
  out["config.json"] = to_json(cfg).dump(2) + "\n";

  const std::size_t md = cfg.terminals;
  std::vector<std::size_t> ms = cfg.sweep.terminals;
  ms.push_back(md);
  ms = sorted_unique(ms);
  const bool md_in_sweep =
      std::find(cfg.sweep.terminals.begin(), cfg.sweep.terminals.end(), md) != cfg.sweep.terminals.end();

  const std::string md_tag = "M=" + std::to_string(md);
  const Workload wd = stage("workload " + md_tag, log, [&] { return synthesize(cfg.seed, md, cfg.workload); });
  const CoreInit core = stage("core-init", log, [&] { return core_init(wd.core.train, cfg.hp, cfg.core()); });
  {
    std::ostringstream l, r;
    write_prune_events_csv(l, core.left_report.events);
    write_prune_events_csv(r, core.right_report.events);
    out["core/prune_left.csv"] = l.str();
    out["core/prune_right.csv"] = r.str();
    out["core/global_left.ckpt"] = bytes_string(serialize(core.global.pair.left, "core"));
    out["core/global_right.ckpt"] = bytes_string(serialize(core.global.pair.right, "core"));
  }

  auto run_pair = [&](const Workload& w, std::size_t m, std::size_t p, const std::string& tag, ServedPair* served) {
    const FederationResult fed =
        stage("federation " + tag, log, [&] { return run_federation(cfg.federation(m), w, &core); });
    const BaselineResult base =
        stage("baseline " + tag, log, [&] { return run_baseline(cfg.baseline(), w, cfg.topology(m)); });
    const std::string dir = run_dir(m, p);
    out[dir + "/ledger_proposal.csv"] = ledger_csv(fed.ledger);
    out[dir + "/ledger_baseline.csv"] = ledger_csv(base.ledger);
    std::ostringstream metrics;
    write_round_metrics_csv(metrics, fed.metrics);
    out[dir + "/metrics.csv"] = metrics.str();
    if (served) {
      *served = stage("serve " + tag, log, [&] { return serve_both(fed.terminals, base.net, w, cfg.topology(m), cfg.seed); });
      out[dir + "/predictions.csv"] = predictions_table(*served, w).csv();
      out[dir + "/checkpoints/global_left.ckpt"] = bytes_string(serialize(fed.global.pair.left, "core"));
      out[dir + "/checkpoints/global_right.ckpt"] = bytes_string(serialize(fed.global.pair.right, "core"));
      for (std::size_t i = 0; i < fed.terminals.size(); ++i) {
        const std::string origin = "terminal-" + std::to_string(i);
        const std::string stem = dir + "/checkpoints/terminal_" + std::to_string(i);
        out[stem + "_left.ckpt"] = bytes_string(serialize(fed.terminals[i].left, origin));
        out[stem + "_right.ckpt"] = bytes_string(serialize(fed.terminals[i].right, origin));
      }
      out[dir + "/checkpoints/baseline.ckpt"] = bytes_string(serialize(base.net, "baseline"));
    }
    RunSummary s;
    s.proposal_cc = comm_cost(fed.ledger);
    s.baseline_cc = comm_cost(base.ledger);
    s.terminal_seconds = fed.terminal_seconds;
    s.core_seconds = fed.core_seconds;
    s.baseline_seconds = base.seconds;
    s.samples = train_samples(w);
    return s;
  };

  const double unlimited = std::numeric_limits<double>::infinity();
  Table t1;
  t1.header = {"M", "baseline_accuracy", "proposal_accuracy", "improvement_pp"};
  RunSummary at_md;
  ServedPair served_md;
  for (std::size_t m : ms) {
    const std::string tag = "M=" + std::to_string(m);
    const Workload w =
        m == md ? wd : stage("workload " + tag, log, [&] { return synthesize(cfg.seed, m, cfg.workload); });
    ServedPair served;
    const RunSummary s = run_pair(w, m, 1, tag, &served);
    if (m == md) {
      at_md = s;
      served_md = served;
    }
    if (m != md || md_in_sweep) {
      const double b = 100.0 * served_accuracy(served.baseline, unlimited);
      const double p = 100.0 * served_accuracy(served.proposal, unlimited);
      t1.rows.push_back({std::to_string(m), format_number(b), format_number(p), format_number(p - b)});
    }
  }
  out["t1_accuracy_vs_M.csv"] = t1.csv();
  out["t2_accuracy_vs_latency.csv"] = latency_accuracy_table(served_md, cfg.sweep.latency_limits).csv();

  Table t3, t4, t5;
  t3.header = {"p", "samples", "baseline_cc", "proposal_cc", "improvement_times"};
  const std::string w_suffix = kWallclockSuffix;
  t4.header = {"p", "samples", "baseline_seconds" + w_suffix, "terminal_seconds" + w_suffix, "cost_times" + w_suffix};
  t5.header = {"p", "samples", "baseline_seconds" + w_suffix, "core_seconds" + w_suffix, "cost_times" + w_suffix};
  for (std::size_t p : sorted_unique(cfg.sweep.p)) {
    RunSummary s = at_md;
    if (p != 1) {
      const std::string tag = md_tag + " p=" + std::to_string(p);
      Workload wp = wd;
      for (auto& t : wp.terminals) t = scale(t, p);
      s = run_pair(wp, md, p, tag, nullptr);
    }
    const std::string ps = std::to_string(p), ns = std::to_string(s.samples);
    t3.rows.push_back({ps, ns, format_number(s.baseline_cc), format_number(s.proposal_cc),
                       format_number(s.baseline_cc / s.proposal_cc)});
    t4.rows.push_back({ps, ns, format_number(s.baseline_seconds), format_number(s.terminal_seconds),
                       format_number(s.terminal_seconds / s.baseline_seconds)});
    t5.rows.push_back({ps, ns, format_number(s.baseline_seconds), format_number(s.core_seconds),
                       format_number(s.core_seconds / s.baseline_seconds)});
  }
  out["t3_commcost_vs_p.csv"] = t3.csv();
  out["t4_terminal_learning_time.csv"] = t4.csv();
  out["t5_core_learning_time.csv"] = t5.csv();
  return out;
}

void write_outputs(const OutputFiles& files, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path target = dir.empty() ? fs::path(".") : dir;
  fs::path staging = target;
  staging += ".staging";
  fs::remove_all(staging);
  try {
    for (const auto& [rel, content] : files) {
      const fs::path p = staging / rel;
      fs::create_directories(p.parent_path());
      std::ofstream o(p, std::ios::binary);
      o.write(content.data(), static_cast<std::streamsize>(content.size()));
      if (!o) throw std::runtime_error("cannot write " + p.string());
    }
    for (const auto& [rel, content] : files) {
      const fs::path dst = target / rel;
      fs::create_directories(dst.parent_path());
      fs::rename(staging / rel, dst);
    }
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(staging);
}

OutputFiles read_outputs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  OutputFiles out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[fs::relative(e.path(), dir).generic_string()] = s.str();
  }
  return out;
}

OutputFiles deterministic_view(const OutputFiles& files) {
  OutputFiles out;
  for (const auto& [name, content] : files) {
    if (name.size() < 4 || name.compare(name.size() - 4, 4, ".csv") != 0) {
      out[name] = content;
      continue;
    }
    Table t = Table::parse(content);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < t.header.size(); ++i) {
      const std::string& h = t.header[i];
      const std::string suffix = kWallclockSuffix;
      if (h.size() < suffix.size() || h.compare(h.size() - suffix.size(), suffix.size(), suffix) != 0) keep.push_back(i);
    }
    Table v;
    for (std::size_t i : keep) v.header.push_back(t.header[i]);
    for (const auto& r : t.rows) {
      std::vector<std::string> row;
      for (std::size_t i : keep) row.push_back(r[i]);
      v.rows.push_back(std::move(row));
    }
    out[name] = v.csv();
  }
  return out;
}

}  // namespace hemi

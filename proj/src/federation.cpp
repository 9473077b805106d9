#include "hemi/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "hemi/checkpoint.hpp"

namespace hemi {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

enum Stream : std::uint64_t {
  kStreamLeft = 11,
  kStreamRight = 12,
  kStreamRightTune = 13,
  kStreamDelay = 14,
  kStreamAggregate = 15,
  kStreamTerminal = 100,
  kStreamBaseline = 200,
};

bool same_shape(const SparseNet& a, const SparseNet& b) {
  return a.layers() == b.layers() && a.directionality() == b.directionality();
}

std::vector<std::size_t> catalog_of(std::span<const Sample> data) {
  std::vector<std::uint8_t> seen;
  for (const auto& s : data) {
    const std::size_t b = argmax(s.target);
    if (b >= seen.size()) seen.resize(b + 1, 0);
    seen[b] = 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) out.push_back(i);
  }
  return out;
}

void average_into(SparseNet& dst, std::span<const SparseNet* const> nets, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  auto blend = [&](std::vector<Link>& out, auto pick) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      Link& l = out[k];
      std::fill(l.weight.begin(), l.weight.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
      std::fill(l.live.begin(), l.live.end(), std::uint8_t{1});
      for (std::size_t n = 0; n < nets.size(); ++n) {
        const Link& src = pick(*nets[n])[k];
        const double a = weights[n] / total;
        for (std::size_t i = 0; i < l.weight.size(); ++i) {
          l.weight[i] += a * src.weight[i];
          l.live[i] = static_cast<std::uint8_t>(l.live[i] & src.live[i]);
        }
        for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] += a * src.bias[i];
      }
      for (std::size_t i = 0; i < l.weight.size(); ++i) {
        if (!l.live[i]) l.weight[i] = 0.0;
      }
    }
  };
  blend(dst.forward_links(), [](const SparseNet& n) -> const std::vector<Link>& { return n.forward_links(); });
  blend(dst.backward_links(), [](const SparseNet& n) -> const std::vector<Link>& { return n.backward_links(); });
}

LedgerEntry entry(std::size_t round, std::size_t link, LinkDirection dir, MessageKind kind, std::uint64_t bytes,
                  const WanTopology& topo, double time) {
  LedgerEntry e;
  e.round = round;
  e.link = link;
  e.direction = dir;
  e.kind = kind;
  e.bytes = bytes;
  e.distance = topo.distance.at(link);
  e.time = time;
  return e;
}

void require_test(const Workload& w) {
  for (const auto& t : w.terminals) {
    if (t.test.empty()) throw std::invalid_argument("workload terminal has an empty test split");
  }
}

}  // namespace

WanTopology WanTopology::star(std::size_t terminals, double distance, double lo, double hi) {
  WanTopology t;
  t.distance.assign(terminals, distance);
  t.delay_lo = lo;
  t.delay_hi = hi;
  t.validate();
  return t;
}

double WanTopology::sample_leg(Rng& rng) const {
  if (delay_lo == delay_hi) return delay_lo;
  return std::uniform_real_distribution<double>(delay_lo, delay_hi)(rng);
}

void WanTopology::validate() const {
  if (distance.empty()) throw std::invalid_argument("topology.terminals must be >= 1");
  for (double d : distance) {
    if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("topology.distance must be finite and >= 0");
  }
  if (!(delay_lo >= 0.0) || !std::isfinite(delay_hi) || !(delay_lo <= delay_hi)) {
    throw std::invalid_argument("topology.delay must satisfy 0 <= lo <= hi");
  }
}

const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::param_download: return "param-download";
    case MessageKind::param_upload: return "param-upload";
    case MessageKind::raw_data: return "raw-data";
    case MessageKind::label_summary: return "label-summary";
  }
  return "?";
}

const char* to_string(LinkDirection d) { return d == LinkDirection::to_terminal ? "down" : "up"; }

CommLedger::CommLedger(const CommLedger& other) {
  std::lock_guard lock(other.mu_);
  entries_ = other.entries_;
  running_ = other.running_;
}

CommLedger& CommLedger::operator=(const CommLedger& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  entries_ = other.entries_;
  running_ = other.running_;
  return *this;
}

void CommLedger::append(const LedgerEntry& e) {
  std::lock_guard lock(mu_);
  entries_.push_back(e);
  running_ += e.distance * static_cast<double>(e.bytes);
}

void CommLedger::append_batch(std::vector<LedgerEntry> batch) {
  std::stable_sort(batch.begin(), batch.end(), [](const LedgerEntry& a, const LedgerEntry& b) {
    return a.round != b.round ? a.round < b.round : a.link < b.link;
  });
  std::lock_guard lock(mu_);
  for (auto& e : batch) {
    running_ += e.distance * static_cast<double>(e.bytes);
    entries_.push_back(e);
  }
}

std::vector<LedgerEntry> CommLedger::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t CommLedger::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

double CommLedger::running_cost() const {
  std::lock_guard lock(mu_);
  return running_;
}

bool LedgerFilter::matches(const LedgerEntry& e) const {
  return (!kind || *kind == e.kind) && (!link || *link == e.link) && (!round || *round == e.round);
}

double comm_cost(const CommLedger& ledger, const LedgerFilter& filter) {
  double cc = 0.0;
  for (const auto& e : ledger.entries()) {
    if (filter.matches(e)) cc += e.distance * static_cast<double>(e.bytes);
  }
  return cc;
}

std::uint64_t ledger_bytes(const CommLedger& ledger, const LedgerFilter& filter) {
  std::uint64_t total = 0;
  for (const auto& e : ledger.entries()) {
    if (filter.matches(e)) total += e.bytes;
  }
  return total;
}

void write_ledger_csv(std::ostream& out, const CommLedger& ledger) {
  const auto old_prec = out.precision(std::numeric_limits<double>::max_digits10);
  out << "round,link,direction,kind,ed,ef,t\n";
  for (const auto& e : ledger.entries()) {
    out << e.round << ',' << e.link << ',' << to_string(e.direction) << ',' << to_string(e.kind) << ','
        << e.distance << ',' << e.bytes << ',' << e.time << '\n';
  }
  out.precision(old_prec);
}

double sample_latency(ResponsePath path, const WanTopology& topo, Rng& rng, double processing_seconds) {
  if (path == ResponsePath::terminal) return processing_seconds;
  const double out = topo.sample_leg(rng);
  const double back = topo.sample_leg(rng);
  return out + back + processing_seconds;
}

double nominal_processing_seconds(const SparseNet& net) {
  double macs = 0.0;
  for (const auto& l : net.forward_links()) macs += static_cast<double>(l.rows * l.cols);
  return macs * 1e-9;
}

void Architecture::validate() const {
  if (layers.size() < 2) throw std::invalid_argument("architecture.layers needs at least two sizes");
  for (auto s : layers) {
    if (s < 1) throw std::invalid_argument("architecture.layers entries must be >= 1");
  }
  if (max_degree < 1) throw std::invalid_argument("architecture.max_degree must be >= 1");
}

CoreInit core_init(const Dataset& core_data, const HyperParams& hp, const CoreInitConfig& cfg) {
  cfg.arch.validate();
  hp.validate();
  if (core_data.empty()) throw std::invalid_argument("core_init: D_c is empty");
  const auto t0 = Clock::now();
  const auto data = core_data.records();
  const auto layers = make_layers(cfg.arch.layers);
  CoreInit out;
  GlobalModel& g = out.global;
  g.pair.role = Role::core();
  g.pair.left = SparseNet::random(layers, Directionality::unidirectional, cfg.arch.max_degree,
                                  derive_seed(cfg.seed, kStreamLeft));
  g.pair.right = SparseNet::random(layers, Directionality::bidirectional, cfg.arch.max_degree,
                                   derive_seed(cfg.seed, kStreamRight));
  PruneConfig pc = cfg.prune;
  pc.max_degree = cfg.arch.max_degree;
  pc.seed = cfg.seed;
  pc.stream = kStreamLeft;
  out.left_report = pretrain_unidirectional(g.pair.left, data, hp, pc);
  pc.stream = kStreamRight;
  out.right_report = pretrain_bidirectional(g.pair.right, data, hp, pc, cfg.arch.hidden_layers());
  Rng rng = make_rng(cfg.seed, kStreamRightTune);
  for (std::size_t e = 0; e < cfg.right_epochs; ++e) train_epoch(g.pair.right, data, Loss::cost, hp, rng);
  g.core_prior = LabelPrior::from_samples(data);
  g.pair.prior = g.core_prior;
  g.catalog = catalog_of(data);
  out.seconds = seconds_since(t0);
  return out;
}

std::vector<DualHemisphere> dispatch_init(const GlobalModel& global, const WanTopology& topo, CommLedger& ledger,
                                          Rng& delay_rng, double clock) {
  topo.validate();
  const Bytes left = serialize(global.pair.left, "core");
  const Bytes right = serialize(global.pair.right, "core");
  std::vector<DualHemisphere> out;
  std::vector<LedgerEntry> batch;
  for (std::size_t i = 0; i < topo.terminals(); ++i) {
    DualHemisphere dh;
    dh.left = deserialize(left);
    dh.right = deserialize(right);
    dh.role = Role::terminal_of(i);
    out.push_back(std::move(dh));
    batch.push_back(entry(0, i, LinkDirection::to_terminal, MessageKind::param_download, left.size(), topo,
                          clock + topo.sample_leg(delay_rng)));
    batch.push_back(entry(0, i, LinkDirection::to_terminal, MessageKind::param_download, right.size(), topo,
                          clock + topo.sample_leg(delay_rng)));
  }
  ledger.append_batch(std::move(batch));
  return out;
}

AggregateReport core_aggregate(GlobalModel& global, std::span<const Upload> uploads, const HyperParams& hp,
                               const AggregateConfig& cfg, Rng& rng) {
  if (uploads.empty()) throw std::invalid_argument("core_aggregate: no uploads");
  AggregateReport rep;
  std::vector<SparseNet> nets;
  std::vector<LabelPrior> priors;
  std::vector<double> weights;
  for (const auto& up : uploads) {
    try {
      SparseNet net = deserialize(up.checkpoint);
      LabelPrior prior = decode_label_prior(up.label_summary);
      if (!same_shape(net, global.pair.right) || prior.dims() != global.pair.left.output_size() || prior.empty() ||
          up.sample_count == 0) {
        rep.rejected.push_back(up.terminal);
        continue;
      }
      nets.push_back(std::move(net));
      priors.push_back(std::move(prior));
      weights.push_back(static_cast<double>(up.sample_count));
      rep.accepted.push_back(up.terminal);
    } catch (const DecodeError&) {
      rep.rejected.push_back(up.terminal);
    }
  }
  if (nets.empty()) return rep;

  LabelPrior pooled = global.core_prior;
  for (std::size_t n = 0; n < nets.size(); ++n) {
    std::vector<Sample> replay;
    replay.reserve(cfg.replay);
    for (std::size_t i = 0; i < cfg.replay; ++i) {
      Sample s;
      s.target = priors[n].sample(rng);
      s.features = generate(nets[n], s.target);
      replay.push_back(std::move(s));
    }
    train_epoch(global.pair.left, replay, Loss::training, hp, rng);
    rep.replayed += replay.size();
    pooled = LabelPrior::merge(pooled, priors[n]);
  }
  global.pair.prior = pooled;

  for (const auto& prior : priors) {
    for (std::size_t c : prior.classes()) {
      if (!std::binary_search(global.catalog.begin(), global.catalog.end(), c) &&
          std::find(rep.new_classes.begin(), rep.new_classes.end(), c) == rep.new_classes.end()) {
        rep.new_classes.push_back(c);
      }
    }
  }
  if (!rep.new_classes.empty()) {
    dual_loop_epoch(global.pair, hp, cfg.replay, rng);
    global.catalog.insert(global.catalog.end(), rep.new_classes.begin(), rep.new_classes.end());
    std::sort(global.catalog.begin(), global.catalog.end());
  }

  std::vector<const SparseNet*> ptrs;
  for (const auto& n : nets) ptrs.push_back(&n);
  average_into(global.pair.right, ptrs, weights);
  return rep;
}

double validation_error(const GlobalModel& global, const Dataset& validation) {
  if (validation.empty()) throw std::invalid_argument("validation split is empty");
  const auto r = validation.records();
  return loss_terms(global.pair.left, r).training / static_cast<double>(r.size());
}

bool global_sync(const GlobalModel& global, std::vector<DualHemisphere>& terminals, const Dataset& validation,
                 CommLedger& ledger, const WanTopology& topo, double threshold, std::size_t round, Rng& delay_rng,
                 double clock, double* error) {
  const double err = validation_error(global, validation);
  if (error) *error = err;
  if (!(err < threshold)) return false;
  const Bytes left = serialize(global.pair.left, "core");
  std::vector<LedgerEntry> batch;
  for (auto& t : terminals) {
    t.left = deserialize(left);
    batch.push_back(entry(round, t.role.terminal, LinkDirection::to_terminal, MessageKind::param_download,
                          left.size(), topo, clock + topo.sample_leg(delay_rng)));
  }
  ledger.append_batch(std::move(batch));
  return true;
}

void FederationConfig::validate() const {
  core.arch.validate();
  core.prune.validate();
  hp.validate();
  round.validate();
  topology.validate();
  if (aggregate.replay < 1) throw std::invalid_argument("federation.replay must be >= 1");
  if (std::isnan(sync_threshold)) throw std::invalid_argument("federation.sync_threshold must not be NaN");
  if (round_cap < 1) throw std::invalid_argument("federation.round_cap must be >= 1");
  if (invocations < 1) throw std::invalid_argument("federation.invocations must be >= 1");
  if (threads < 1) throw std::invalid_argument("federation.threads must be >= 1");
}

namespace {

struct TerminalRoundResult {
  std::optional<Upload> upload;
  std::vector<RoundMetric> metrics;
  double seconds = 0.0;
};

TerminalRoundResult run_terminal(DualHemisphere& dh, const Dataset& data, const FederationConfig& cfg,
                                 std::size_t round, Rng& rng, std::vector<double>& history) {
  const auto t0 = Clock::now();
  TerminalRoundResult r;
  std::size_t epoch = 0;
  for (std::size_t inv = 0; inv < cfg.invocations && !r.upload; ++inv) {
    RoundOutcome o = terminal_round(dh, data, cfg.hp, cfg.round, rng, history);
    for (const auto& m : o.epochs) {
      RoundMetric rm;
      rm.round = round;
      rm.terminal = dh.role.terminal;
      rm.epoch = ++epoch;
      rm.training = m.training;
      rm.generation = m.generation;
      rm.cost = m.cost;
      r.metrics.push_back(rm);
    }
    if (o.upload) {
      r.metrics.back().converged = true;
      r.metrics.back().upload_bytes = o.upload->checkpoint.size() + o.upload->label_summary.size() + 8;
      r.upload = std::move(o.upload);
    }
  }
  r.seconds = seconds_since(t0);
  return r;
}

template <typename F>
void for_each_terminal(std::size_t n, std::size_t threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  std::size_t next = 0;
  std::mutex mu;
  for (std::size_t w = 0; w < std::min(threads, n); ++w) {
    jobs.push_back(std::async(std::launch::async, [&] {
      while (true) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= n) return;
          i = next++;
        }
        f(i);
      }
    }));
  }
  for (auto& j : jobs) j.get();
}

}  // namespace

FederationResult run_federation(const FederationConfig& cfg, const Workload& workload, const CoreInit* core) {
  cfg.validate();
  const std::size_t m = cfg.topology.terminals();
  if (workload.terminals.size() != m) {
    throw std::invalid_argument("federation: workload has " + std::to_string(workload.terminals.size()) +
                                " terminals, topology has " + std::to_string(m));
  }
  FederationResult res;
  CoreInit fresh;
  if (!core) {
    fresh = core_init(workload.core.train, cfg.hp, cfg.core);
    core = &fresh;
  }
  res.global = core->global;
  res.core_seconds = core->seconds;

  Rng delay = make_rng(cfg.seed, kStreamDelay);
  Rng agg_rng = make_rng(cfg.seed, kStreamAggregate);
  std::vector<Rng> term_rng;
  for (std::size_t i = 0; i < m; ++i) term_rng.push_back(make_rng(cfg.seed, kStreamTerminal + i));
  std::vector<std::vector<double>> history(m);
  std::vector<double> term_seconds(m, 0.0);

  double clock = 0.0;
  res.terminals = dispatch_init(res.global, cfg.topology, res.ledger, delay, clock);
  for (const auto& e : res.ledger.entries()) clock = std::max(clock, e.time);

  for (std::size_t round = 1; round <= cfg.round_cap; ++round) {
    std::vector<TerminalRoundResult> out(m);
    for_each_terminal(m, cfg.threads, [&](std::size_t i) {
      out[i] = run_terminal(res.terminals[i], workload.terminals[i].train, cfg, round, term_rng[i], history[i]);
    });
    std::vector<Upload> uploads;
    std::vector<LedgerEntry> batch;
    double arrival = clock;
    for (std::size_t i = 0; i < m; ++i) {
      term_seconds[i] += out[i].seconds;
      res.metrics.insert(res.metrics.end(), out[i].metrics.begin(), out[i].metrics.end());
      if (!out[i].upload) continue;
      const Upload& up = *out[i].upload;
      const double t = clock + cfg.topology.sample_leg(delay);
      arrival = std::max(arrival, t);
      batch.push_back(entry(round, i, LinkDirection::to_core, MessageKind::param_upload, up.checkpoint.size() + 8,
                            cfg.topology, t));
      batch.push_back(entry(round, i, LinkDirection::to_core, MessageKind::label_summary, up.label_summary.size(),
                            cfg.topology, t));
      uploads.push_back(up);
    }
    res.ledger.append_batch(std::move(batch));
    clock = arrival;
    res.rounds = round;
    if (uploads.empty()) continue;

    const auto t0 = Clock::now();
    res.aggregates.push_back(core_aggregate(res.global, uploads, cfg.hp, cfg.aggregate, agg_rng));
    res.core_seconds += seconds_since(t0);

    double err = 0.0;
    const bool ok = global_sync(res.global, res.terminals, workload.core.validation, res.ledger, cfg.topology,
                                cfg.sync_threshold, round, delay, clock, &err);
    res.sync_errors.push_back(err);
    for (const auto& e : res.ledger.entries()) clock = std::max(clock, e.time);
    if (ok) {
      res.converged = true;
      break;
    }
  }

  for_each_terminal(m, cfg.threads, [&](std::size_t i) {
    const auto t0 = Clock::now();
    for (std::size_t e = 0; e < cfg.personalize_epochs; ++e) {
      local_left_epoch(res.terminals[i], workload.terminals[i].train, cfg.hp, term_rng[i]);
    }
    term_seconds[i] += seconds_since(t0);
  });
  double sum = 0.0;
  for (double s : term_seconds) sum += s;
  res.terminal_seconds = sum / static_cast<double>(m);
  return res;
}

CommLedger collect_raw(const Workload& workload, const WanTopology& topo, Rng& delay_rng) {
  if (workload.terminals.size() != topo.terminals()) {
    throw std::invalid_argument("collect_raw: workload and topology disagree on the terminal count");
  }
  CommLedger ledger;
  std::vector<LedgerEntry> batch;
  for (std::size_t i = 0; i < workload.terminals.size(); ++i) {
    const auto& tr = workload.terminals[i].train;
    const std::uint64_t bytes = static_cast<std::uint64_t>(tr.size()) * sample_wire_bytes();
    batch.push_back(entry(0, i, LinkDirection::to_core, MessageKind::raw_data, bytes, topo,
                          topo.sample_leg(delay_rng)));
  }
  ledger.append_batch(std::move(batch));
  return ledger;
}

BaselineResult run_baseline(const BaselineConfig& cfg, const Workload& workload, const WanTopology& topo) {
  cfg.arch.validate();
  cfg.hp.validate();
  BaselineResult res;
  Rng delay = make_rng(cfg.seed, kStreamBaseline);
  res.ledger = collect_raw(workload, topo, delay);
  const auto t0 = Clock::now();
  std::vector<Sample> pool;
  for (const auto& s : workload.core.train.records()) pool.push_back(s);
  for (const auto& t : workload.terminals) {
    for (const auto& s : t.train.records()) pool.push_back(s);
  }
  if (pool.empty()) throw std::invalid_argument("run_baseline: no training data");
  res.net = SparseNet::random(make_layers(cfg.arch.layers), Directionality::unidirectional,
                              cfg.arch.max_degree, derive_seed(cfg.seed, kStreamBaseline + 1));
  Rng rng = make_rng(cfg.seed, kStreamBaseline + 2);
  for (std::size_t e = 0; e < cfg.epochs; ++e) train_epoch(res.net, pool, Loss::training, cfg.hp, rng);
  res.seconds = seconds_since(t0);
  return res;
}

Served serve_terminals(std::span<const DualHemisphere> terminals, const Workload& workload) {
  if (terminals.size() != workload.terminals.size()) {
    throw std::invalid_argument("serve_terminals: terminal count mismatch");
  }
  require_test(workload);
  Served s;
  for (std::size_t i = 0; i < terminals.size(); ++i) {
    const double proc = nominal_processing_seconds(terminals[i].left);
    for (const auto& smp : workload.terminals[i].test.records()) {
      s.responses.push_back({respond(terminals[i].left, smp.features).source, proc});
      s.truth.push_back(smp.best_source);
      s.terminal.push_back(i);
    }
  }
  return s;
}

Served serve_core(const SparseNet& net, const Workload& workload, const WanTopology& topo, Rng& rng) {
  if (topo.terminals() != workload.terminals.size()) throw std::invalid_argument("serve_core: terminal count mismatch");
  require_test(workload);
  Served s;
  const double proc = nominal_processing_seconds(net);
  for (std::size_t i = 0; i < workload.terminals.size(); ++i) {
    for (const auto& smp : workload.terminals[i].test.records()) {
      s.responses.push_back({respond(net, smp.features).source, sample_latency(ResponsePath::core, topo, rng, proc)});
      s.truth.push_back(smp.best_source);
      s.terminal.push_back(i);
    }
  }
  return s;
}

double served_accuracy(const Served& s, double limit) { return accuracy(s.responses, s.truth, limit); }

}  // namespace hemi

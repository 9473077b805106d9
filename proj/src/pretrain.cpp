#include "hemi/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace hemi {
namespace {

struct LinkRef {
  Direction direction;
  std::size_t link;
};

struct Candidate {
  LinkRef ref;
  std::size_t row;
  std::size_t col;
};

double half_sq_with_override(std::span<const double> v, std::span<const double> ref, std::size_t idx, double value) {
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = (i == idx ? value : v[i]) - ref[i];
    sum += d * d;
  }
  return 0.5 * sum;
}

double half_sq(std::span<const double> v, std::span<const double> ref) {
  return half_sq_with_override(v, ref, std::numeric_limits<std::size_t>::max(), 0.0);
}

std::vector<LinkRef> pruned_links(const SparseNet& net, Loss loss) {
  std::vector<LinkRef> refs;
  for (std::size_t k = 0; k < net.link_count(); ++k) refs.push_back({Direction::positive, k});
  if (net.bidirectional() && loss != Loss::training) {
    for (std::size_t k = 0; k < net.link_count(); ++k) refs.push_back({Direction::negative, k});
  }
  return refs;
}

double link_threshold(const Link& l, const PruneConfig& cfg) {
  if (cfg.threshold) return *cfg.threshold;
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < l.weight.size(); ++i) {
    if (!l.live[i]) continue;
    sum += l.weight[i];
    sq += l.weight[i] * l.weight[i];
    ++n;
  }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  return cfg.threshold_scale * std::sqrt(var);
}

bool degrees_ok(const SparseNet& net, std::span<const LinkRef> links, std::size_t max_degree) {
  return std::all_of(links.begin(), links.end(), [&](const LinkRef& r) {
    return net.link(r.direction, r.link).max_in_degree() <= max_degree;
  });
}

std::optional<Candidate> smallest_for_over_degree(const SparseNet& net, std::span<const LinkRef> links,
                                                  std::span<const double> tau, std::size_t max_degree) {
  for (std::size_t li = 0; li < links.size(); ++li) {
    const LinkRef ref = links[li];
    const Link& l = net.link(ref.direction, ref.link);
    for (std::size_t r = 0; r < l.rows; ++r) {
      if (l.in_degree(r) <= max_degree) continue;
      std::size_t best = l.cols;
      for (std::size_t c = 0; c < l.cols; ++c) {
        if (!l.alive(r, c) || !(std::abs(l.w(r, c)) < tau[li])) continue;
        if (best == l.cols || std::abs(l.w(r, c)) < std::abs(l.w(r, best))) best = c;
      }
      if (best != l.cols) return Candidate{ref, r, best};
    }
  }
  return std::nullopt;
}

std::optional<Candidate> smallest_in_link(const SparseNet& net, LinkRef ref, double tau) {
  const Link& l = net.link(ref.direction, ref.link);
  std::optional<Candidate> best;
  double best_mag = 0.0;
  for (std::size_t r = 0; r < l.rows; ++r) {
    for (std::size_t c = 0; c < l.cols; ++c) {
      if (!l.alive(r, c)) continue;
      const double m = std::abs(l.w(r, c));
      if (!(m < tau)) continue;
      if (!best || m < best_mag) {
        best = Candidate{ref, r, c};
        best_mag = m;
      }
    }
  }
  return best;
}

double logged_probability(double delta_e, double e) {
  if (e > 0.0) return deletion_probability(delta_e, e);
  return delta_e <= 0.0 ? 1.0 : 0.0;
}

// Stochastic visit over sub-threshold candidates of `links` until `done`
// holds, then deterministic sub-threshold deletions chosen by `fallback`.
template <typename Done, typename Fallback>
std::vector<PruneEvent> prune_until(SparseNet& net, std::span<const Sample> batch, Loss loss, const PruneConfig& cfg,
                                    const HyperParams& hp, Rng& rng, std::size_t epoch,
                                    std::span<const LinkRef> links, Done done, Fallback fallback) {
  std::vector<PruneEvent> events;
  if (done(net)) return events;
  IncrementalLoss eval(net, batch, loss, hp);
  double e = eval.value();

  std::vector<double> tau;
  for (const auto& ref : links) tau.push_back(link_threshold(net.link(ref.direction, ref.link), cfg));

  auto record = [&](const Candidate& c, double mag, double e_without, bool forced, bool deleted) {
    PruneEvent ev;
    ev.epoch = epoch;
    ev.direction = c.ref.direction;
    ev.link = c.ref.link;
    ev.row = c.row;
    ev.col = c.col;
    ev.magnitude = mag;
    ev.delta_e = e_without - e;
    ev.base_e = e;
    ev.probability = logged_probability(ev.delta_e, e);
    ev.outcome = forced ? PruneOutcome::forced : (deleted ? PruneOutcome::deleted : PruneOutcome::kept);
    ev.batch_size = batch.size();
    events.push_back(ev);
  };

  bool satisfied = false;
  for (std::size_t li = 0; li < links.size() && !satisfied; ++li) {
    const LinkRef ref = links[li];
    const Link& l = net.link(ref.direction, ref.link);
    for (std::size_t r = 0; r < l.rows && !satisfied; ++r) {
      for (std::size_t c = 0; c < l.cols; ++c) {
        if (done(net)) {
          satisfied = true;
          break;
        }
        if (!l.alive(r, c)) continue;
        const double mag = std::abs(l.w(r, c));
        if (!(mag < tau[li])) continue;
        const Candidate cand{ref, r, c};
        const double e_without = eval.trial(ref.direction, ref.link, r, c);
        const double p = logged_probability(e_without - e, e);
        const bool deleted = uniform01(rng) < p;
        record(cand, mag, e_without, false, deleted);
        if (deleted) {
          eval.commit(ref.direction, ref.link, r, c);
          e = eval.value();
        }
      }
    }
  }

  while (!done(net)) {
    const std::optional<Candidate> pick = fallback(net, tau);
    if (!pick) break;
    const Link& l = net.link(pick->ref.direction, pick->ref.link);
    const double mag = std::abs(l.w(pick->row, pick->col));
    const double e_without = eval.trial(pick->ref.direction, pick->ref.link, pick->row, pick->col);
    record(*pick, mag, e_without, true, true);
    eval.commit(pick->ref.direction, pick->ref.link, pick->row, pick->col);
    e = eval.value();
  }
  return events;
}

PruneConfig unbounded(PruneConfig cfg) {
  cfg.threshold = std::numeric_limits<double>::infinity();
  return cfg;
}

void train_epochs(SparseNet& net, std::span<const Sample> data, Loss loss, const HyperParams& hp, Rng& rng,
                  std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) train_epoch(net, data, loss, hp, rng);
}

}  // namespace

void PruneConfig::validate() const {
  if (threshold && !(*threshold >= 0.0)) throw std::invalid_argument("prune.threshold must be >= 0");
  if (!(threshold_scale >= 0.0) || !std::isfinite(threshold_scale)) {
    throw std::invalid_argument("prune.threshold_scale must be finite and >= 0");
  }
  if (max_degree < 1) throw std::invalid_argument("prune.max_degree must be >= 1");
  if (epochs_per_pass < 1) throw std::invalid_argument("prune.epochs_per_pass must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("prune.max_epochs must be >= 1");
  if (prune_batch < 1) throw std::invalid_argument("prune.prune_batch must be >= 1");
}

double deletion_probability(double delta_e, double e) {
  if (!(e > 0.0)) throw std::invalid_argument("deletion_probability: base error must be > 0");
  return std::min(1.0, std::exp(-delta_e / e));
}

IncrementalLoss::IncrementalLoss(SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp)
    : net_(net), batch_(batch), loss_(loss), hp_(hp), links_(net.link_count()) {
  if (batch.empty()) throw std::invalid_argument("IncrementalLoss: empty batch");
  if (loss == Loss::generation && !net.bidirectional()) {
    throw std::logic_error("generation error requested on a unidirectional net");
  }
  with_generation_ = net.bidirectional() && loss != Loss::training;
  const std::size_t positions = with_generation_ ? 2 * links_ + 1 : links_ + 1;
  cache_.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = batch[i];
    Cache& c = cache_[i];
    c.pre.resize(positions);
    c.post.resize(positions);
    Activations fa = forward(net, s.features);
    for (std::size_t p = 0; p <= links_; ++p) {
      c.pre[p] = std::move(fa.pre[p]);
      c.post[p] = std::move(fa.post[p]);
    }
    if (loss != Loss::generation) {
      if (s.target.size() != net.output_size()) throw std::invalid_argument("IncrementalLoss: target width mismatch");
      c.training = half_sq(c.post[links_], s.target);
    }
    if (with_generation_) {
      Activations ga = generate_trace(net, c.post[links_]);
      for (std::size_t p = links_ + 1; p < positions; ++p) {
        const std::size_t layer = 2 * links_ - p;
        c.pre[p] = std::move(ga.pre[layer]);
        c.post[p] = std::move(ga.post[layer]);
      }
      c.generation = half_sq(c.post.back(), s.features);
    }
  }
  for (const double v : live_parameters(net)) {
    abs_sum_ += std::abs(v);
    sq_sum_ += v * v;
  }
}

std::size_t IncrementalLoss::chain_position(Direction d, std::size_t link) const {
  return d == Direction::positive ? link : 2 * links_ - 1 - link;
}

const Link& IncrementalLoss::chain_link(std::size_t position) const {
  return position < links_ ? net_.forward_link(position) : net_.backward_link(2 * links_ - 1 - position);
}

std::pair<double, double> IncrementalLoss::propagate(const Sample& s, const Cache& old, std::size_t position,
                                                     std::size_t row, std::size_t col, double dw,
                                                     Cache* write) const {
  const std::size_t last = old.post.size() - 1;
  const std::size_t first = position + 1;
  const double z = old.pre[first][row] + dw * old.post[position][col];
  const double a = sigmoid(z);
  const double delta = a - old.post[first][row];
  if (write) {
    write->pre[first][row] = z;
    write->post[first][row] = a;
  }

  std::vector<double> cur;
  std::vector<double> output;  // dense output layer when it was recomputed
  bool single = true;
  for (std::size_t q = first; q < last; ++q) {
    const Link& l = chain_link(q);
    std::vector<double> zn(l.rows);
    if (single) {
      for (std::size_t r = 0; r < l.rows; ++r) zn[r] = old.pre[q + 1][r] + l.w(r, row) * delta;
    } else {
      l.propagate(cur, zn);
    }
    std::vector<double> an(l.rows);
    for (std::size_t r = 0; r < l.rows; ++r) an[r] = sigmoid(zn[r]);
    if (write) {
      write->pre[q + 1] = zn;
      write->post[q + 1] = an;
    }
    cur = std::move(an);
    single = false;
    if (q + 1 == links_) output = cur;
  }

  double training = old.training;
  if (first <= links_ && loss_ != Loss::generation) {
    if (first == links_) {
      training = half_sq_with_override(old.post[links_], s.target, row, a);
    } else {
      training = half_sq(output, s.target);
    }
  }
  double generation = old.generation;
  if (with_generation_) {
    if (first == last) {
      generation = half_sq_with_override(old.post[last], s.features, row, a);
    } else {
      generation = half_sq(cur, s.features);
    }
  }
  if (write) {
    write->training = training;
    write->generation = generation;
  }
  return {training, generation};
}

double IncrementalLoss::value() const {
  double t = 0.0;
  double g = 0.0;
  for (const auto& c : cache_) {
    t += c.training;
    g += c.generation;
  }
  switch (loss_) {
    case Loss::training:
      return t;
    case Loss::generation:
      return g;
    case Loss::cost:
      return t + g + hp_.lasso * abs_sum_ + hp_.ridge * std::sqrt(std::max(0.0, sq_sum_));
  }
  return 0.0;
}

double IncrementalLoss::trial(Direction d, std::size_t link, std::size_t row, std::size_t col) const {
  const Link& l = net_.link(d, link);
  if (!l.alive(row, col)) return value();
  const double w = l.w(row, col);
  const std::size_t pos = chain_position(d, link);
  if (d == Direction::negative && !with_generation_) return value();
  double t = 0.0;
  double g = 0.0;
  for (std::size_t i = 0; i < batch_.size(); ++i) {
    const auto [ti, gi] = propagate(batch_[i], cache_[i], pos, row, col, -w, nullptr);
    t += ti;
    g += gi;
  }
  switch (loss_) {
    case Loss::training:
      return t;
    case Loss::generation:
      return g;
    case Loss::cost:
      return t + g + hp_.lasso * (abs_sum_ - std::abs(w)) + hp_.ridge * std::sqrt(std::max(0.0, sq_sum_ - w * w));
  }
  return 0.0;
}

void IncrementalLoss::commit(Direction d, std::size_t link, std::size_t row, std::size_t col) {
  Link& l = net_.link(d, link);
  if (!l.alive(row, col)) return;
  const double w = l.w(row, col);
  if (d == Direction::positive || with_generation_) {
    const std::size_t pos = chain_position(d, link);
    for (std::size_t i = 0; i < batch_.size(); ++i) propagate(batch_[i], cache_[i], pos, row, col, -w, &cache_[i]);
  }
  abs_sum_ -= std::abs(w);
  sq_sum_ -= w * w;
  l.remove(row, col);
}

std::vector<PruneEvent> prune_pass(SparseNet& net, std::span<const Sample> batch, Loss loss, const PruneConfig& cfg,
                                   const HyperParams& hp, Rng& rng, std::size_t epoch) {
  cfg.validate();
  net.set_max_degree(cfg.max_degree);
  const std::vector<LinkRef> links = pruned_links(net, loss);
  const std::size_t dmax = cfg.max_degree;
  return prune_until(
      net, batch, loss, cfg, hp, rng, epoch, links,
      [&](const SparseNet& n) { return degrees_ok(n, links, dmax); },
      [&](const SparseNet& n, std::span<const double> tau) { return smallest_for_over_degree(n, links, tau, dmax); });
}

std::vector<Sample> prune_subsample(std::span<const Sample> data, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n < data.size()) {
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data[i]);
  return out;
}

PretrainReport pretrain_unidirectional(SparseNet& net, std::span<const Sample> data, const HyperParams& hp,
                                       const PruneConfig& cfg) {
  cfg.validate();
  hp.validate();
  if (net.bidirectional()) throw std::invalid_argument("pretrain_unidirectional: net must be unidirectional");
  if (data.empty()) throw std::invalid_argument("pretrain_unidirectional: empty data");
  net.set_max_degree(cfg.max_degree);
  Rng rng = make_rng(cfg.seed, cfg.stream);
  const std::vector<Sample> batch = prune_subsample(data, cfg.prune_batch, derive_seed(cfg.seed, cfg.stream + 1));

  PretrainReport report;
  while (true) {
    train_epochs(net, data, Loss::training, hp, rng, cfg.epochs_per_pass);
    report.epochs += cfg.epochs_per_pass;
    auto events = prune_pass(net, batch, Loss::training, cfg, hp, rng, report.epochs);
    report.events.insert(report.events.end(), events.begin(), events.end());
    if (net.degrees_within(Direction::positive)) break;
    if (report.epochs >= cfg.max_epochs) {
      report.capped = true;
      auto forced = prune_pass(net, batch, Loss::training, unbounded(cfg), hp, rng, report.epochs);
      report.events.insert(report.events.end(), forced.begin(), forced.end());
      break;
    }
  }
  for (const auto& l : net.forward_links()) report.degree_sums.push_back(l.degree_sum());
  return report;
}

PretrainReport pretrain_bidirectional(SparseNet& net, std::span<const Sample> data, const HyperParams& hp,
                                      const PruneConfig& cfg, std::size_t hidden_layers,
                                      const std::function<void(std::size_t, const SparseNet&)>& on_layer) {
  cfg.validate();
  hp.validate();
  if (!net.bidirectional()) throw std::invalid_argument("pretrain_bidirectional: net must be bidirectional");
  if (hidden_layers + 1 != net.link_count()) {
    throw std::invalid_argument("pretrain_bidirectional: hidden layer count does not match the net");
  }
  if (data.empty()) throw std::invalid_argument("pretrain_bidirectional: empty data");
  net.set_max_degree(cfg.max_degree);
  Rng rng = make_rng(cfg.seed, cfg.stream);

  // Layer-h representation of every record; targets are not used by E^r.
  std::vector<Sample> reps;
  reps.reserve(data.size());
  for (const auto& s : data) reps.push_back(Sample{s.timestamp, s.features, {}, s.best_source});

  PretrainReport report;
  std::optional<std::size_t> prev_sum;
  for (std::size_t h = 0; h <= hidden_layers; ++h) {
    net.reinitialize_link(Direction::positive, h, rng);
    net.reinitialize_link(Direction::negative, h, rng);
    SparseNet unit(make_layers({net.layer_size(h), net.layer_size(h + 1)}), Directionality::bidirectional,
                   cfg.max_degree);
    unit.forward_link(0) = net.forward_link(h);
    unit.backward_link(0) = net.backward_link(h);
    const std::vector<Sample> batch =
        prune_subsample(reps, cfg.prune_batch, derive_seed(cfg.seed, cfg.stream + 1 + h));

    auto relabel = [&](std::vector<PruneEvent>& evs) {
      for (auto& e : evs) e.link = h;
      report.events.insert(report.events.end(), evs.begin(), evs.end());
    };

    std::size_t unit_epochs = 0;
    while (true) {
      train_epochs(unit, reps, Loss::generation, hp, rng, cfg.epochs_per_pass);
      unit_epochs += cfg.epochs_per_pass;
      report.epochs += cfg.epochs_per_pass;
      auto events = prune_pass(unit, batch, Loss::generation, cfg, hp, rng, report.epochs);
      relabel(events);
      if (unit.degrees_within()) break;
      if (unit_epochs >= cfg.max_epochs) {
        report.capped = true;
        auto forced = prune_pass(unit, batch, Loss::generation, unbounded(cfg), hp, rng, report.epochs);
        relabel(forced);
        break;
      }
    }

    if (prev_sum) {
      const std::size_t target = *prev_sum;
      const std::vector<LinkRef> fwd{{Direction::positive, 0}};
      auto below = [&](const SparseNet& n) { return n.forward_link(0).degree_sum() < target; };
      auto smallest = [&](const SparseNet& n, std::span<const double> tau) {
        return smallest_in_link(n, fwd.front(), tau[0]);
      };
      while (!below(unit)) {
        if (target == 0) {
          report.capped = true;
          break;
        }
        if (unit_epochs >= cfg.max_epochs) {
          report.capped = true;
          auto forced = prune_until(unit, batch, Loss::generation, unbounded(cfg), hp, rng, report.epochs, fwd,
                                    below, smallest);
          relabel(forced);
          break;
        }
        train_epochs(unit, reps, Loss::generation, hp, rng, cfg.epochs_per_pass);
        unit_epochs += cfg.epochs_per_pass;
        report.epochs += cfg.epochs_per_pass;
        auto events = prune_until(unit, batch, Loss::generation, cfg, hp, rng, report.epochs, fwd, below, smallest);
        relabel(events);
      }
    }

    net.forward_link(h) = unit.forward_link(0);
    net.backward_link(h) = unit.backward_link(0);
    prev_sum = net.forward_link(h).degree_sum();
    if (on_layer) on_layer(h, net);

    if (h < hidden_layers) {
      const Link& l = net.forward_link(h);
      std::vector<double> z(l.rows);
      for (auto& s : reps) {
        l.propagate(s.features, z);
        std::vector<double> next(l.rows);
        for (std::size_t r = 0; r < l.rows; ++r) next[r] = sigmoid(z[r]);
        s.features = std::move(next);
      }
    }
  }
  for (const auto& l : net.forward_links()) report.degree_sums.push_back(l.degree_sum());
  return report;
}

void write_prune_events_csv(std::ostream& out, std::span<const PruneEvent> events) {
  const auto old_prec = out.precision(std::numeric_limits<double>::max_digits10);
  out << "epoch,direction,link,row,col,magnitude,delta_e,base_e,probability,outcome,batch\n";
  for (const auto& e : events) {
    out << e.epoch << ',' << (e.direction == Direction::positive ? "positive" : "negative") << ',' << e.link << ','
        << e.row << ',' << e.col << ',' << e.magnitude << ',' << e.delta_e << ',' << e.base_e << ','
        << e.probability << ','
        << (e.outcome == PruneOutcome::kept ? "kept" : (e.outcome == PruneOutcome::deleted ? "deleted" : "forced"))
        << ',' << e.batch_size << '\n';
  }
  out.precision(old_prec);
}

}  // namespace hemi

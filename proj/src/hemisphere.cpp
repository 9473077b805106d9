#include "hemi/hemisphere.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace hemi {
namespace {

constexpr char kPriorMagic[4] = {'H', 'L', 'P', 'S'};
constexpr double kOpenEdge = 1e-6;

double clamp_open(double v) { return std::clamp(v, kOpenEdge, 1.0 - kOpenEdge); }

void require_terminal(const DualHemisphere& dh, const char* op) {
  if (!dh.role.is_terminal()) throw std::logic_error(std::string(op) + " requires a terminal role");
}

void require_data(const Dataset& data, const char* op) {
  if (data.empty()) throw std::invalid_argument(std::string(op) + ": empty dataset");
}

struct NormSums {
  double abs = 0.0;
  double sq = 0.0;
};

NormSums norm_sums(const SparseNet& net) {
  NormSums n;
  for (double v : live_parameters(net)) {
    n.abs += std::abs(v);
    n.sq += v * v;
  }
  return n;
}

std::vector<Sample> loop_samples(const SparseNet& right, std::span<const std::vector<double>> labels) {
  std::vector<Sample> out;
  out.reserve(labels.size());
  for (const auto& y : labels) {
    Sample s;
    s.features = generate(right, y);
    s.target = y;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> drop_targets(std::span<const Sample> samples) {
  std::vector<Sample> out(samples.begin(), samples.end());
  for (auto& s : out) s.target.clear();
  return out;
}

LoopResult loop_terms(const DualHemisphere& dh, std::span<const Sample> with_labels,
                      std::span<const Sample> without_labels, const HyperParams& hp) {
  LoopResult r;
  r.training = loss_terms(dh.left, with_labels).training;
  r.generation = loss_terms(dh.right, without_labels).generation;
  const NormSums a = norm_sums(dh.left);
  const NormSums b = norm_sums(dh.right);
  r.lasso_norm = a.abs + b.abs;
  r.ridge_norm = std::sqrt(a.sq + b.sq);
  r.cost = r.training + r.generation + hp.lasso * r.lasso_norm + hp.ridge * r.ridge_norm;
  return r;
}

}  // namespace

LoopGradients loop_gradients(const DualHemisphere& dh, std::span<const Sample> batch, const HyperParams& hp) {
  LoopGradients out{GradientSet::zeros_like(dh.left), GradientSet::zeros_like(dh.right)};
  for (const auto& s : batch) {
    const Activations gen = generate_trace(dh.right, s.target);
    const std::vector<double>& x = gen.post[0];

    const Activations la = forward(dh.left, x);
    std::vector<double> g(la.output().size());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = la.output()[j] - s.target[j];
    std::vector<double> gx = backprop_positive(dh.left, la, std::move(g), out.left, true);

    const Activations ra = forward(dh.right, x);
    const Activations rec = generate_trace(dh.right, ra.output());
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = rec.post[0][i] - x[i];
    std::vector<double> gf = backprop_negative(dh.right, rec, r, out.right, true);
    const std::vector<double> gxr = backprop_positive(dh.right, ra, std::move(gf), out.right, true);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gxr[i] - r[i];

    backprop_negative(dh.right, gen, std::move(gx), out.right, false);
  }
  mask_gradient(out.left, dh.left);
  mask_gradient(out.right, dh.right);
  const NormSums a = norm_sums(dh.left);
  const NormSums b = norm_sums(dh.right);
  const double joint_ridge = std::sqrt(a.sq + b.sq);
  add_regularizer_gradient(out.left, dh.left, hp, joint_ridge);
  add_regularizer_gradient(out.right, dh.right, hp, joint_ridge);
  return out;
}

LabelPrior LabelPrior::from_samples(std::span<const Sample> samples) {
  LabelPrior p;
  if (samples.empty()) return p;
  const std::size_t d = samples.front().target.size();
  if (d == 0) throw std::invalid_argument("LabelPrior: samples carry no targets");
  p.mean.assign(d, 0.0);
  p.variance.assign(d, 0.0);
  p.min.assign(d, std::numeric_limits<double>::infinity());
  p.max.assign(d, -std::numeric_limits<double>::infinity());
  p.best_count.assign(d, 0);
  p.best_mean.assign(d, 0.0);
  p.best_variance.assign(d, 0.0);
  for (const auto& s : samples) {
    if (s.target.size() != d) throw std::invalid_argument("LabelPrior: target width mismatch");
    for (std::size_t j = 0; j < d; ++j) {
      p.mean[j] += s.target[j];
      p.min[j] = std::min(p.min[j], s.target[j]);
      p.max[j] = std::max(p.max[j], s.target[j]);
    }
    const std::size_t b = argmax(s.target);
    ++p.best_count[b];
    p.best_mean[b] += s.target[b];
  }
  p.count = samples.size();
  const double n = static_cast<double>(p.count);
  for (std::size_t j = 0; j < d; ++j) {
    p.mean[j] /= n;
    if (p.best_count[j] > 0) p.best_mean[j] /= static_cast<double>(p.best_count[j]);
  }
  for (const auto& s : samples) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = s.target[j] - p.mean[j];
      p.variance[j] += dv * dv;
    }
    const std::size_t b = argmax(s.target);
    const double db = s.target[b] - p.best_mean[b];
    p.best_variance[b] += db * db;
  }
  for (std::size_t j = 0; j < d; ++j) {
    p.variance[j] /= n;
    if (p.best_count[j] > 0) p.best_variance[j] /= static_cast<double>(p.best_count[j]);
  }
  return p;
}

std::vector<std::size_t> LabelPrior::classes() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < best_count.size(); ++j) {
    if (best_count[j] > 0) out.push_back(j);
  }
  return out;
}

std::vector<double> LabelPrior::sample(Rng& rng) const {
  if (empty()) throw std::logic_error("LabelPrior::sample on an empty prior");
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = dims();
  std::vector<double> y(d);
  if (uniform01(rng) < 0.5) {
    const double u = uniform01(rng) * static_cast<double>(count);
    std::size_t s = 0;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      acc += static_cast<double>(best_count[j]);
      if (u < acc) {
        s = j;
        break;
      }
      if (best_count[j] > 0) s = j;
    }
    for (std::size_t j = 0; j < d; ++j) y[j] = clamp_open(min[j]);
    const double mag = best_mean[s] + std::sqrt(best_variance[s]) * normal(rng);
    y[s] = clamp_open(std::clamp(mag, min[s], max[s]));
  } else {
    for (std::size_t j = 0; j < d; ++j) y[j] = clamp_open(mean[j] + std::sqrt(variance[j]) * normal(rng));
  }
  return y;
}

LabelPrior LabelPrior::merge(const LabelPrior& a, const LabelPrior& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.dims() != b.dims()) throw std::invalid_argument("LabelPrior::merge: dimension mismatch");
  LabelPrior m;
  const std::size_t d = a.dims();
  const double na = static_cast<double>(a.count);
  const double nb = static_cast<double>(b.count);
  m.count = a.count + b.count;
  m.mean.resize(d);
  m.variance.resize(d);
  m.min.resize(d);
  m.max.resize(d);
  m.best_count.resize(d);
  m.best_mean.resize(d);
  m.best_variance.resize(d);
  auto pool = [](double ma, double va, double wa, double mb, double vb, double wb, double& mo, double& vo) {
    const double w = wa + wb;
    if (w == 0.0) {
      mo = 0.0;
      vo = 0.0;
      return;
    }
    mo = (wa * ma + wb * mb) / w;
    vo = (wa * (va + (ma - mo) * (ma - mo)) + wb * (vb + (mb - mo) * (mb - mo))) / w;
  };
  for (std::size_t j = 0; j < d; ++j) {
    pool(a.mean[j], a.variance[j], na, b.mean[j], b.variance[j], nb, m.mean[j], m.variance[j]);
    m.min[j] = std::min(a.min[j], b.min[j]);
    m.max[j] = std::max(a.max[j], b.max[j]);
    m.best_count[j] = a.best_count[j] + b.best_count[j];
    pool(a.best_mean[j], a.best_variance[j], static_cast<double>(a.best_count[j]), b.best_mean[j],
         b.best_variance[j], static_cast<double>(b.best_count[j]), m.best_mean[j], m.best_variance[j]);
  }
  return m;
}

Bytes encode_label_prior(const LabelPrior& prior) {
  ByteWriter w;
  w.bytes(kPriorMagic, 4);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(prior.dims()));
  w.uint<std::uint64_t>(prior.count);
  for (std::size_t j = 0; j < prior.dims(); ++j) {
    w.real(prior.mean[j]);
    w.real(prior.variance[j]);
    w.real(prior.min[j]);
    w.real(prior.max[j]);
    w.real(prior.best_mean[j]);
    w.real(prior.best_variance[j]);
    w.uint<std::uint64_t>(prior.best_count[j]);
  }
  return w.take();
}

LabelPrior decode_label_prior(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4, "label summary magic");
  if (std::memcmp(magic.data(), kPriorMagic, 4) != 0) throw DecodeError("label summary magic mismatch");
  const auto d = r.uint<std::uint32_t>("label dimensions");
  LabelPrior p;
  p.count = r.uint<std::uint64_t>("label count");
  if (r.remaining() != static_cast<std::size_t>(d) * 56) throw DecodeError("label summary length mismatch");
  for (std::uint32_t j = 0; j < d; ++j) {
    p.mean.push_back(r.real("mean"));
    p.variance.push_back(r.real("variance"));
    p.min.push_back(r.real("min"));
    p.max.push_back(r.real("max"));
    p.best_mean.push_back(r.real("best mean"));
    p.best_variance.push_back(r.real("best variance"));
    p.best_count.push_back(r.uint<std::uint64_t>("best count"));
  }
  std::uint64_t total = 0;
  for (auto c : p.best_count) total += c;
  if (total != p.count) throw DecodeError("label summary histogram does not match its count");
  return p;
}

void DualHemisphere::validate() const {
  if (left.bidirectional()) throw std::invalid_argument("left hemisphere must be unidirectional");
  if (!right.bidirectional()) throw std::invalid_argument("right hemisphere must be bidirectional");
  if (left.input_size() != right.input_size() || left.output_size() != right.output_size()) {
    throw std::invalid_argument("hemisphere input/output widths differ");
  }
  if (!prior.empty() && prior.dims() != left.output_size()) {
    throw std::invalid_argument("label prior width differs from the output layer");
  }
}

double local_left_epoch(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, Rng& rng) {
  require_terminal(dh, "local_left_epoch");
  require_data(data, "local_left_epoch");
  const auto records = data.records();
  train_epoch(dh.left, records, Loss::training, hp, rng);
  return loss_terms(dh.left, records).training;
}

double local_right_epoch(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, Rng& rng) {
  require_terminal(dh, "local_right_epoch");
  require_data(data, "local_right_epoch");
  const auto records = data.records();
  train_epoch(dh.right, records, Loss::cost, hp, rng);
  dh.prior = LabelPrior::from_samples(records);
  return loss_terms(dh.right, records).generation;
}

LoopResult loop_cost(const DualHemisphere& dh, std::span<const std::vector<double>> labels, const HyperParams& hp) {
  if (labels.empty()) throw std::invalid_argument("loop_cost: empty label batch");
  const std::vector<Sample> with = loop_samples(dh.right, labels);
  const std::vector<Sample> without = drop_targets(with);
  return loop_terms(dh, with, without, hp);
}

LoopResult dual_loop_epoch(DualHemisphere& dh, const HyperParams& hp, std::size_t batch, Rng& rng) {
  if (dh.prior.empty()) throw std::logic_error("dual_loop_epoch: empty label prior");
  if (batch == 0) throw std::invalid_argument("dual_loop_epoch: batch must be >= 1");
  std::vector<std::vector<double>> labels;
  labels.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) labels.push_back(dh.prior.sample(rng));
  const std::vector<Sample> with = loop_samples(dh.right, labels);
  const std::vector<Sample> without = drop_targets(with);
  const LoopResult before = loop_terms(dh, with, without, hp);

  std::vector<std::size_t> order(batch);
  for (std::size_t i = 0; i < batch; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Sample> lb;
  for (std::size_t start = 0; start < batch; start += hp.batch_size) {
    lb.clear();
    const std::size_t end = std::min(batch, start + hp.batch_size);
    for (std::size_t i = start; i < end; ++i) {
      lb.push_back(with[order[i]]);
    }
    LoopGradients g = loop_gradients(dh, std::span<const Sample>(lb), hp);
    GradientSet& gl = g.left;
    GradientSet& gr = g.right;
    sgd_step(dh.left, gl, hp.learning_rate);
    sgd_step(dh.right, gr, hp.learning_rate);
  }
  return before;
}

void RoundConfig::validate() const {
  if (threshold && std::isnan(*threshold)) throw std::invalid_argument("round.threshold must not be NaN");
  if (!(plateau_factor > 0.0) || !std::isfinite(plateau_factor)) {
    throw std::invalid_argument("round.plateau_factor must be finite and > 0");
  }
  if (window < 1) throw std::invalid_argument("round.window must be >= 1");
  if (epoch_cap < 1) throw std::invalid_argument("round.epoch_cap must be >= 1");
  if (loop_batch < 1) throw std::invalid_argument("round.loop_batch must be >= 1");
}

RoundOutcome terminal_round(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, const RoundConfig& cfg,
                            Rng& rng, std::vector<double>& history) {
  cfg.validate();
  require_terminal(dh, "terminal_round");
  RoundOutcome out;
  for (std::size_t e = 1; e <= cfg.epoch_cap; ++e) {
    EpochMetric m;
    m.epoch = e;
    m.training = local_left_epoch(dh, data, hp, rng);
    m.generation = local_right_epoch(dh, data, hp, rng);
    m.cost = dual_loop_epoch(dh, hp, cfg.loop_batch, rng).cost;
    out.epochs.push_back(m);
    bool met = false;
    if (cfg.threshold) {
      met = m.cost < *cfg.threshold;
    } else if (history.size() >= cfg.window) {
      const double best = *std::min_element(history.end() - static_cast<std::ptrdiff_t>(cfg.window), history.end());
      met = m.cost < cfg.plateau_factor * best;
    }
    history.push_back(m.cost);
    if (met) {
      out.converged = true;
      Upload up;
      up.terminal = dh.role.terminal;
      up.checkpoint = serialize(dh.right, "terminal");
      up.label_summary = encode_label_prior(dh.prior);
      up.sample_count = dh.prior.count;
      out.upload = std::move(up);
      break;
    }
  }
  return out;
}

RoundOutcome terminal_round(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, const RoundConfig& cfg,
                            Rng& rng) {
  std::vector<double> history;
  return terminal_round(dh, data, hp, cfg, rng, history);
}

void write_round_metrics_csv(std::ostream& out, std::span<const RoundMetric> metrics) {
  const auto old_prec = out.precision(std::numeric_limits<double>::max_digits10);
  out << "round,terminal,epoch,training,generation,cost,converged,upload_bytes\n";
  for (const auto& m : metrics) {
    out << m.round << ',' << m.terminal << ',' << m.epoch << ',' << m.training << ',' << m.generation << ','
        << m.cost << ',' << (m.converged ? 1 : 0) << ',' << m.upload_bytes << '\n';
  }
  out.precision(old_prec);
}

}  // namespace hemi

#include "hemi/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hemi {
namespace {

double half_squared_sum(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b,
                        const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + " vectors");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) throw std::invalid_argument(std::string(what) + ": width mismatch");
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      const double d = a[i][j] - b[i][j];
      sum += d * d;
    }
  }
  return 0.5 * sum;
}

bool uses_training(Loss l) { return l == Loss::training || l == Loss::cost; }
bool uses_generation(Loss l, const SparseNet& net) {
  return l == Loss::generation || (l == Loss::cost && net.bidirectional());
}

void check_batch(const SparseNet& net, std::span<const Sample> batch, Loss loss) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (loss == Loss::generation && !net.bidirectional()) {
    throw std::logic_error("generation error requested on a unidirectional net");
  }
  for (const auto& s : batch) {
    if (s.features.size() != net.input_size()) throw std::invalid_argument("batch input width mismatch");
    if (uses_training(loss) && s.target.size() != net.output_size()) {
      throw std::invalid_argument("batch target width mismatch");
    }
  }
}

// Accumulates dE/d(post) backwards through one chain of links, writing
// parameter partials into `grads`. `post` holds the chain activations ordered
// from source (front) to sink (back); `links[i]` maps post[i] to post[i+1].
// On return `g` holds dE/d(post.front()).
template <typename LinkAt>
void backprop_chain(std::vector<double>& g, const std::vector<const std::vector<double>*>& post, LinkAt link_at,
                    std::vector<LinkGradient*>& grads, bool need_source_grad) {
  std::vector<double> delta;
  for (std::size_t i = post.size() - 1; i-- > 0;) {
    const Link& l = link_at(i);
    const auto& out = *post[i + 1];
    const auto& in = *post[i];
    delta.resize(l.rows);
    for (std::size_t r = 0; r < l.rows; ++r) delta[r] = g[r] * out[r] * (1.0 - out[r]);
    LinkGradient& lg = *grads[i];
    for (std::size_t r = 0; r < l.rows; ++r) {
      const double d = delta[r];
      lg.bias[r] += d;
      double* row = lg.weight.data() + r * l.cols;
      for (std::size_t c = 0; c < l.cols; ++c) row[c] += d * in[c];
    }
    if (i > 0 || need_source_grad) {
      g.assign(l.cols, 0.0);
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double d = delta[r];
        const double* row = l.weight.data() + r * l.cols;
        for (std::size_t c = 0; c < l.cols; ++c) g[c] += row[c] * d;
      }
    }
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

template <typename F>
void for_each_live(const SparseNet& net, F&& f) {
  auto visit = [&](const std::vector<Link>& links) {
    for (const auto& l : links) {
      for (std::size_t i = 0; i < l.weight.size(); ++i) {
        if (l.live[i]) f(l.weight[i]);
      }
      for (double b : l.bias) f(b);
    }
  };
  visit(net.forward_links());
  visit(net.backward_links());
}

}  // namespace

void mask_gradient(GradientSet& grads, const SparseNet& net) {
  for (std::size_t k = 0; k < net.link_count(); ++k) {
    const auto& live = net.forward_link(k).live;
    for (std::size_t i = 0; i < live.size(); ++i) {
      if (!live[i]) grads.forward[k].weight[i] = 0.0;
    }
    if (net.bidirectional()) {
      const auto& blive = net.backward_link(k).live;
      for (std::size_t i = 0; i < blive.size(); ++i) {
        if (!blive[i]) grads.backward[k].weight[i] = 0.0;
      }
    }
  }
}

std::vector<double> backprop_positive(const SparseNet& net, const Activations& act, std::vector<double> g_out,
                                      GradientSet& grads, bool need_input_grad) {
  std::vector<const std::vector<double>*> post;
  for (const auto& p : act.post) post.push_back(&p);
  std::vector<LinkGradient*> lg;
  for (auto& g : grads.forward) lg.push_back(&g);
  backprop_chain(
      g_out, post, [&](std::size_t i) -> const Link& { return net.forward_link(i); }, lg, need_input_grad);
  return g_out;
}

std::vector<double> backprop_negative(const SparseNet& net, const Activations& gen, std::vector<double> g_in,
                                      GradientSet& grads, bool need_label_grad) {
  const std::size_t links = net.link_count();
  // The negative chain runs layer K -> 0; reorder it so the source is first.
  std::vector<const std::vector<double>*> post;
  std::vector<LinkGradient*> lg;
  for (std::size_t k = links + 1; k-- > 0;) post.push_back(&gen.post[k]);
  for (std::size_t k = links; k-- > 0;) lg.push_back(&grads.backward[k]);
  backprop_chain(
      g_in, post, [&](std::size_t i) -> const Link& { return net.backward_link(links - 1 - i); }, lg,
      need_label_grad);
  return g_in;
}

void HyperParams::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  }
  if (!(lasso >= 0.0) || !std::isfinite(lasso)) throw std::invalid_argument("lasso must be finite and >= 0");
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw std::invalid_argument("ridge must be finite and >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

GradientSet GradientSet::zeros_like(const SparseNet& net) {
  GradientSet g;
  for (const auto& l : net.forward_links()) {
    g.forward.push_back({std::vector<double>(l.weight.size(), 0.0), std::vector<double>(l.bias.size(), 0.0)});
  }
  for (const auto& l : net.backward_links()) {
    g.backward.push_back({std::vector<double>(l.weight.size(), 0.0), std::vector<double>(l.bias.size(), 0.0)});
  }
  return g;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
  auto add = [](std::vector<LinkGradient>& a, const std::vector<LinkGradient>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("gradient shape mismatch");
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (a[k].weight.size() != b[k].weight.size() || a[k].bias.size() != b[k].bias.size()) {
        throw std::invalid_argument("gradient shape mismatch");
      }
      for (std::size_t i = 0; i < a[k].weight.size(); ++i) a[k].weight[i] += b[k].weight[i];
      for (std::size_t i = 0; i < a[k].bias.size(); ++i) a[k].bias[i] += b[k].bias[i];
    }
  };
  add(forward, other.forward);
  add(backward, other.backward);
  return *this;
}

GradientSet& GradientSet::operator*=(double s) {
  for (auto* set : {&forward, &backward}) {
    for (auto& lg : *set) {
      for (auto& v : lg.weight) v *= s;
      for (auto& v : lg.bias) v *= s;
    }
  }
  return *this;
}

double GradientSet::max_abs() const {
  double m = 0.0;
  for (const auto* set : {&forward, &backward}) {
    for (const auto& lg : *set) {
      for (double v : lg.weight) m = std::max(m, std::abs(v));
      for (double v : lg.bias) m = std::max(m, std::abs(v));
    }
  }
  return m;
}

double training_error(std::span<const std::vector<double>> predictions,
                      std::span<const std::vector<double>> targets) {
  return half_squared_sum(predictions, targets, "training_error");
}

double generation_error(std::span<const std::vector<double>> generated, std::span<const std::vector<double>> data) {
  return half_squared_sum(generated, data, "generation_error");
}

double regularizer(std::span<const double> theta, int q) {
  if (q < 1) throw std::invalid_argument("regularizer order q must be >= 1");
  double sum = 0.0;
  if (q == 1) {
    for (double t : theta) sum += std::abs(t);
    return sum;
  }
  if (q == 2) {
    for (double t : theta) sum += t * t;
    return std::sqrt(sum);
  }
  for (double t : theta) sum += std::pow(std::abs(t), q);
  return std::pow(sum, 1.0 / q);
}

double regularizer(const SparseNet& net, int q) { return regularizer(live_parameters(net), q); }

std::vector<double> live_parameters(const SparseNet& net) {
  std::vector<double> theta;
  theta.reserve(net.parameter_count());
  for_each_live(net, [&](double v) { theta.push_back(v); });
  return theta;
}

double cost(double training, double generation, std::span<const double> theta, const HyperParams& hp) {
  return training + generation + hp.lasso * regularizer(theta, 1) + hp.ridge * regularizer(theta, 2);
}

double cost(double training, double generation, const SparseNet& net, const HyperParams& hp) {
  return cost(training, generation, live_parameters(net), hp);
}

LossTerms loss_terms(const SparseNet& net, std::span<const Sample> batch) {
  LossTerms t;
  double sq = 0.0;
  for_each_live(net, [&](double v) {
    t.lasso_norm += std::abs(v);
    sq += v * v;
  });
  t.ridge_norm = std::sqrt(sq);
  for (const auto& s : batch) {
    const Activations act = forward(net, s.features);
    const auto& out = act.output();
    if (s.target.size() == out.size()) {
      for (std::size_t j = 0; j < out.size(); ++j) {
        const double d = out[j] - s.target[j];
        t.training += 0.5 * d * d;
      }
    }
    if (net.bidirectional()) {
      const auto rec = generate(net, out);
      for (std::size_t i = 0; i < rec.size(); ++i) {
        const double d = rec[i] - s.features[i];
        t.generation += 0.5 * d * d;
      }
    }
  }
  return t;
}

double evaluate(const SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp) {
  check_batch(net, batch, loss);
  const LossTerms t = loss_terms(net, batch);
  switch (loss) {
    case Loss::training:
      return t.training;
    case Loss::generation:
      return t.generation;
    case Loss::cost:
      return t.total(hp);
  }
  return 0.0;
}

GradientSet backprop(const SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp) {
  check_batch(net, batch, loss);
  GradientSet grads = GradientSet::zeros_like(net);
  const bool want_t = uses_training(loss);
  const bool want_r = uses_generation(loss, net);
  for (const auto& s : batch) {
    const Activations act = forward(net, s.features);
    const auto& out = act.output();
    std::vector<double> g_out(out.size(), 0.0);
    if (want_t) {
      for (std::size_t j = 0; j < out.size(); ++j) g_out[j] += out[j] - s.target[j];
    }
    if (want_r) {
      const Activations gen = generate_trace(net, out);
      std::vector<double> g(gen.post[0].size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = gen.post[0][i] - s.features[i];
      const std::vector<double> gy = backprop_negative(net, gen, std::move(g), grads, true);
      for (std::size_t j = 0; j < g_out.size(); ++j) g_out[j] += gy[j];
    }
    backprop_positive(net, act, std::move(g_out), grads, false);
  }
  mask_gradient(grads, net);
  if (loss == Loss::cost) add_regularizer_gradient(grads, net, hp, regularizer(net, 2));
  return grads;
}

void add_regularizer_gradient(GradientSet& grads, const SparseNet& net, const HyperParams& hp, double ridge_norm) {
  const double ridge_scale = ridge_norm > 0.0 ? hp.ridge / ridge_norm : 0.0;
  auto apply = [&](const std::vector<Link>& links, std::vector<LinkGradient>& lg) {
    for (std::size_t k = 0; k < links.size(); ++k) {
      const Link& l = links[k];
      for (std::size_t i = 0; i < l.weight.size(); ++i) {
        if (!l.live[i]) continue;
        lg[k].weight[i] += hp.lasso * sign(l.weight[i]) + ridge_scale * l.weight[i];
      }
      for (std::size_t i = 0; i < l.bias.size(); ++i) {
        lg[k].bias[i] += hp.lasso * sign(l.bias[i]) + ridge_scale * l.bias[i];
      }
    }
  };
  apply(net.forward_links(), grads.forward);
  apply(net.backward_links(), grads.backward);
}

namespace {

// Extended-precision copy of a net for the finite-difference oracle.
struct WideLink {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<long double> weight;
  std::vector<long double> bias;
  const std::vector<std::uint8_t>* live = nullptr;
};

struct WideNet {
  std::vector<WideLink> forward;
  std::vector<WideLink> backward;
};

std::vector<WideLink> widen(const std::vector<Link>& links) {
  std::vector<WideLink> out;
  for (const auto& l : links) {
    WideLink w;
    w.rows = l.rows;
    w.cols = l.cols;
    w.weight.assign(l.weight.begin(), l.weight.end());
    w.bias.assign(l.bias.begin(), l.bias.end());
    w.live = &l.live;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<long double> wide_layer(const WideLink& l, const std::vector<long double>& in) {
  std::vector<long double> out(l.rows);
  for (std::size_t r = 0; r < l.rows; ++r) {
    long double z = l.bias[r];
    for (std::size_t c = 0; c < l.cols; ++c) {
      if ((*l.live)[r * l.cols + c]) z += l.weight[r * l.cols + c] * in[c];
    }
    out[r] = 1.0L / (1.0L + std::exp(-z));
  }
  return out;
}

long double wide_loss(const WideNet& n, std::span<const Sample> batch, Loss loss, const HyperParams& hp) {
  long double training = 0.0L, generation = 0.0L, lasso = 0.0L, sq = 0.0L;
  for (const auto* links : {&n.forward, &n.backward}) {
    for (const auto& l : *links) {
      for (std::size_t i = 0; i < l.weight.size(); ++i) {
        if ((*l.live)[i]) {
          lasso += std::abs(l.weight[i]);
          sq += l.weight[i] * l.weight[i];
        }
      }
      for (long double b : l.bias) {
        lasso += std::abs(b);
        sq += b * b;
      }
    }
  }
  for (const auto& s : batch) {
    std::vector<long double> a(s.features.begin(), s.features.end());
    for (const auto& l : n.forward) a = wide_layer(l, a);
    if (s.target.size() == a.size()) {
      for (std::size_t j = 0; j < a.size(); ++j) training += 0.5L * (a[j] - s.target[j]) * (a[j] - s.target[j]);
    }
    if (!n.backward.empty()) {
      for (std::size_t k = n.backward.size(); k-- > 0;) a = wide_layer(n.backward[k], a);
      for (std::size_t i = 0; i < a.size(); ++i) generation += 0.5L * (a[i] - s.features[i]) * (a[i] - s.features[i]);
    }
  }
  switch (loss) {
    case Loss::training:
      return training;
    case Loss::generation:
      return generation;
    case Loss::cost:
      return training + generation + static_cast<long double>(hp.lasso) * lasso +
             static_cast<long double>(hp.ridge) * std::sqrt(sq);
  }
  return 0.0L;
}

}  // namespace

GradientSet fd_gradient(const SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp,
                        double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("fd_gradient: eps must be > 0");
  check_batch(net, batch, loss);
  GradientSet grads = GradientSet::zeros_like(net);
  WideNet wide{widen(net.forward_links()), net.bidirectional() ? widen(net.backward_links()) : std::vector<WideLink>{}};
  const long double h = eps;
  auto central = [&](long double& param) {
    const long double saved = param;
    param = saved + h;
    const long double up = wide_loss(wide, batch, loss, hp);
    param = saved - h;
    const long double down = wide_loss(wide, batch, loss, hp);
    param = saved;
    return static_cast<double>((up - down) / (2.0L * h));
  };
  auto run = [&](std::vector<WideLink>& links, std::vector<LinkGradient>& lg) {
    for (std::size_t k = 0; k < links.size(); ++k) {
      WideLink& l = links[k];
      for (std::size_t i = 0; i < l.weight.size(); ++i) {
        if ((*l.live)[i]) lg[k].weight[i] = central(l.weight[i]);
      }
      for (std::size_t i = 0; i < l.bias.size(); ++i) lg[k].bias[i] = central(l.bias[i]);
    }
  };
  run(wide.forward, grads.forward);
  run(wide.backward, grads.backward);
  return grads;
}

double fd_derivative(const std::function<double(double)>& f, double at, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("fd_derivative: eps must be > 0");
  return (f(at + eps) - f(at - eps)) / (2.0 * eps);
}

void train_epoch(SparseNet& net, std::span<const Sample> data, Loss loss, const HyperParams& hp, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Sample> batch;
  batch.reserve(hp.batch_size);
  for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
    batch.clear();
    const std::size_t end = std::min(order.size(), start + hp.batch_size);
    for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
    sgd_step(net, backprop(net, batch, loss, hp), hp.learning_rate);
  }
}

void sgd_step(SparseNet& net, const GradientSet& grads, double learning_rate) {
  auto apply = [&](std::vector<Link>& links, const std::vector<LinkGradient>& lg) {
    if (links.size() != lg.size()) throw std::invalid_argument("sgd_step: gradient shape mismatch");
    for (std::size_t k = 0; k < links.size(); ++k) {
      Link& l = links[k];
      if (lg[k].weight.size() != l.weight.size() || lg[k].bias.size() != l.bias.size()) {
        throw std::invalid_argument("sgd_step: gradient shape mismatch");
      }
      for (std::size_t i = 0; i < l.weight.size(); ++i) {
        if (l.live[i]) l.weight[i] -= learning_rate * lg[k].weight[i];
      }
      for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= learning_rate * lg[k].bias[i];
    }
  };
  apply(net.forward_links(), grads.forward);
  apply(net.backward_links(), grads.backward);
}

}  // namespace hemi

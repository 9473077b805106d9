#include "hemi/sparse_net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hemi {

std::vector<LayerSpec> make_layers(std::initializer_list<std::size_t> sizes) {
  return make_layers(std::span<const std::size_t>(sizes.begin(), sizes.size()));
}

std::vector<LayerSpec> make_layers(std::span<const std::size_t> sizes) {
  std::vector<LayerSpec> out;
  out.reserve(sizes.size());
  for (auto s : sizes) out.push_back(LayerSpec{s});
  return out;
}

Link::Link(std::size_t r, std::size_t c)
    : rows(r), cols(c), weight(r * c, 0.0), bias(r, 0.0), live(r * c, 1) {}

void Link::remove(std::size_t r, std::size_t c) {
  live[r * cols + c] = 0;
  weight[r * cols + c] = 0.0;
}

std::size_t Link::in_degree(std::size_t r) const {
  const auto* row = live.data() + r * cols;
  return static_cast<std::size_t>(std::count(row, row + cols, std::uint8_t{1}));
}

std::size_t Link::max_in_degree() const {
  std::size_t best = 0;
  for (std::size_t r = 0; r < rows; ++r) best = std::max(best, in_degree(r));
  return best;
}

std::size_t Link::degree_sum() const {
  return static_cast<std::size_t>(std::count(live.begin(), live.end(), std::uint8_t{1}));
}

void Link::propagate(std::span<const double> in, std::span<double> z) const {
  // Deleted entries hold 0, so the dense product is exact.
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = weight.data() + r * cols;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      s0 += row[c] * in[c];
      s1 += row[c + 1] * in[c + 1];
      s2 += row[c + 2] * in[c + 2];
      s3 += row[c + 3] * in[c + 3];
    }
    for (; c < cols; ++c) s0 += row[c] * in[c];
    z[r] = bias[r] + ((s0 + s1) + (s2 + s3));
  }
}

SparseNet::SparseNet(std::vector<LayerSpec> layers, Directionality dir, std::size_t max_degree)
    : layers_(std::move(layers)), dir_(dir), max_degree_(max_degree) {
  if (layers_.size() < 2) throw std::invalid_argument("SparseNet needs at least two layers");
  for (const auto& l : layers_) {
    if (l.size < 1) throw std::invalid_argument("layer size must be >= 1");
  }
  if (max_degree_ < 1) throw std::invalid_argument("max_degree must be >= 1");
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
    fwd_.emplace_back(layers_[k + 1].size, layers_[k].size);
    if (bidirectional()) bwd_.emplace_back(layers_[k].size, layers_[k + 1].size);
  }
}

SparseNet SparseNet::random(std::vector<LayerSpec> layers, Directionality dir,
                            std::size_t max_degree, std::uint64_t seed) {
  SparseNet net(std::move(layers), dir, max_degree);
  net.seed_ = seed;
  Rng rng(seed);
  for (std::size_t k = 0; k < net.link_count(); ++k) {
    net.reinitialize_link(Direction::positive, k, rng);
    if (net.bidirectional()) net.reinitialize_link(Direction::negative, k, rng);
  }
  return net;
}

void SparseNet::set_max_degree(std::size_t d) {
  if (d < 1) throw std::invalid_argument("max_degree must be >= 1");
  max_degree_ = d;
}

Link& SparseNet::backward_link(std::size_t k) {
  if (!bidirectional()) throw std::logic_error("unidirectional net has no backward links");
  return bwd_.at(k);
}

const Link& SparseNet::backward_link(std::size_t k) const {
  if (!bidirectional()) throw std::logic_error("unidirectional net has no backward links");
  return bwd_.at(k);
}

void SparseNet::reinitialize_link(Direction d, std::size_t k, Rng& rng) {
  Link& l = link(d, k);
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : l.weight) w = dist(rng);
  for (auto& b : l.bias) b = dist(rng);
  std::fill(l.live.begin(), l.live.end(), std::uint8_t{1});
}

std::size_t SparseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : fwd_) n += l.degree_sum() + l.bias.size();
  for (const auto& l : bwd_) n += l.degree_sum() + l.bias.size();
  return n;
}

bool SparseNet::degrees_within(Direction d) const {
  const auto& links = d == Direction::positive ? fwd_ : bwd_;
  return std::all_of(links.begin(), links.end(),
                     [&](const Link& l) { return l.max_in_degree() <= max_degree_; });
}

bool SparseNet::degrees_within() const {
  return degrees_within(Direction::positive) && (!bidirectional() || degrees_within(Direction::negative));
}

void SparseNet::validate() const {
  if (layers_.size() < 2) throw std::invalid_argument("SparseNet needs at least two layers");
  if (max_degree_ < 1) throw std::invalid_argument("max_degree must be >= 1");
  const std::size_t links = layers_.size() - 1;
  if (fwd_.size() != links) throw std::invalid_argument("forward link count mismatch");
  if (bwd_.size() != (bidirectional() ? links : 0)) throw std::invalid_argument("backward link count mismatch");
  auto check = [](const Link& l, std::size_t rows, std::size_t cols, const std::string& what) {
    if (l.rows != rows || l.cols != cols || l.weight.size() != rows * cols || l.live.size() != rows * cols ||
        l.bias.size() != rows) {
      throw std::invalid_argument(what + ": shape mismatch");
    }
    for (std::size_t i = 0; i < l.weight.size(); ++i) {
      if (l.live[i] > 1) throw std::invalid_argument(what + ": mask entry out of range");
      if (l.live[i] == 0 && l.weight[i] != 0.0) throw std::invalid_argument(what + ": deleted weight is nonzero");
    }
  };
  for (std::size_t k = 0; k < links; ++k) {
    check(fwd_[k], layers_[k + 1].size, layers_[k].size, "forward link " + std::to_string(k));
    if (bidirectional()) check(bwd_[k], layers_[k].size, layers_[k + 1].size, "backward link " + std::to_string(k));
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax of empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (auto& o : out) o /= sum;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

Activations forward(const SparseNet& net, std::span<const double> x) {
  if (x.size() != net.input_size()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) + " entries, net expects " +
                                std::to_string(net.input_size()));
  }
  const std::size_t n = net.layers().size();
  Activations act;
  act.pre.resize(n);
  act.post.resize(n);
  act.post[0].assign(x.begin(), x.end());
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const Link& l = net.forward_link(k);
    act.pre[k + 1].resize(l.rows);
    act.post[k + 1].resize(l.rows);
    l.propagate(act.post[k], act.pre[k + 1]);
    for (std::size_t r = 0; r < l.rows; ++r) act.post[k + 1][r] = sigmoid(act.pre[k + 1][r]);
  }
  return act;
}

Activations generate_trace(const SparseNet& net, std::span<const double> y) {
  if (!net.bidirectional()) throw std::logic_error("generate: net is unidirectional");
  if (y.size() != net.output_size()) {
    throw std::invalid_argument("generate: label has " + std::to_string(y.size()) + " entries, net expects " +
                                std::to_string(net.output_size()));
  }
  const std::size_t n = net.layers().size();
  Activations act;
  act.pre.resize(n);
  act.post.resize(n);
  act.post[n - 1].assign(y.begin(), y.end());
  for (std::size_t k = n - 1; k-- > 0;) {
    const Link& l = net.backward_link(k);
    act.pre[k].resize(l.rows);
    act.post[k].resize(l.rows);
    l.propagate(act.post[k + 1], act.pre[k]);
    for (std::size_t r = 0; r < l.rows; ++r) act.post[k][r] = sigmoid(act.pre[k][r]);
  }
  return act;
}

std::vector<double> generate(const SparseNet& net, std::span<const double> y) {
  return std::move(generate_trace(net, y).post[0]);
}

Response respond(const SparseNet& net, std::span<const double> x) {
  Response r;
  r.bandwidth = forward(net, x).output();
  r.source = argmax(softmax(r.bandwidth));
  return r;
}

}  // namespace hemi

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "hemi/rng.hpp"

namespace hemi {

enum class Directionality : std::uint8_t { unidirectional = 0, bidirectional = 1 };

/// Positive runs input -> output, negative runs output -> input.
enum class Direction : std::uint8_t { positive = 0, negative = 1 };

struct LayerSpec {
  std::size_t size = 1;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

std::vector<LayerSpec> make_layers(std::initializer_list<std::size_t> sizes);
std::vector<LayerSpec> make_layers(std::span<const std::size_t> sizes);

/// Weight block between two adjacent layers. Row r holds the incoming
/// weights of destination neuron r, so in_degree(r) counts live entries of
/// that row. A deleted entry always stores weight 0.
struct Link {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weight;      // rows x cols, row-major
  std::vector<double> bias;        // rows
  std::vector<std::uint8_t> live;  // rows x cols, 1 = present

  Link() = default;
  Link(std::size_t rows, std::size_t cols);

  double w(std::size_t r, std::size_t c) const { return weight[r * cols + c]; }
  double& w(std::size_t r, std::size_t c) { return weight[r * cols + c]; }
  bool alive(std::size_t r, std::size_t c) const { return live[r * cols + c] != 0; }

  /// Drops the entry permanently.
  void remove(std::size_t r, std::size_t c);

  std::size_t in_degree(std::size_t r) const;
  std::size_t max_in_degree() const;
  std::size_t degree_sum() const;

  /// z = W a + b over live entries.
  void propagate(std::span<const double> in, std::span<double> z) const;

  friend bool operator==(const Link&, const Link&) = default;
};

/// Layered network with untied positive and negative weight sets.
///
/// forward_link(k) maps layer k to layer k+1; backward_link(k) maps layer
/// k+1 back to layer k and exists only for bidirectional nets.
class SparseNet {
 public:
  SparseNet() = default;
  SparseNet(std::vector<LayerSpec> layers, Directionality dir, std::size_t max_degree);

  /// Fully connected net with weights and biases uniform in
  /// [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static SparseNet random(std::vector<LayerSpec> layers, Directionality dir,
                          std::size_t max_degree, std::uint64_t seed);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t layer_size(std::size_t k) const { return layers_.at(k).size; }
  std::size_t input_size() const { return layers_.front().size; }
  std::size_t output_size() const { return layers_.back().size; }
  std::size_t link_count() const { return layers_.size() - 1; }

  Directionality directionality() const { return dir_; }
  bool bidirectional() const { return dir_ == Directionality::bidirectional; }

  std::size_t max_degree() const { return max_degree_; }
  void set_max_degree(std::size_t d);

  /// Seed the parameters were drawn from; carried in checkpoints.
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  Link& forward_link(std::size_t k) { return fwd_.at(k); }
  const Link& forward_link(std::size_t k) const { return fwd_.at(k); }
  Link& backward_link(std::size_t k);
  const Link& backward_link(std::size_t k) const;
  Link& link(Direction d, std::size_t k) { return d == Direction::positive ? forward_link(k) : backward_link(k); }
  const Link& link(Direction d, std::size_t k) const {
    return d == Direction::positive ? forward_link(k) : backward_link(k);
  }

  std::vector<Link>& forward_links() { return fwd_; }
  const std::vector<Link>& forward_links() const { return fwd_; }
  std::vector<Link>& backward_links() { return bwd_; }
  const std::vector<Link>& backward_links() const { return bwd_; }

  /// Re-draws one link (weights, biases, full mask) from the uniform
  /// fan-in initializer.
  void reinitialize_link(Direction d, std::size_t k, Rng& rng);

  /// Live weights plus biases across both directions.
  std::size_t parameter_count() const;

  /// True when every neuron fed by `d` links has in-degree <= max_degree().
  bool degrees_within(Direction d) const;
  bool degrees_within() const;

  /// Throws std::invalid_argument if shapes or the deleted-weight-is-zero
  /// invariant do not hold.
  void validate() const;

  friend bool operator==(const SparseNet&, const SparseNet&) = default;

 private:
  std::vector<LayerSpec> layers_;
  Directionality dir_ = Directionality::unidirectional;
  std::size_t max_degree_ = 1;
  std::uint64_t seed_ = 0;
  std::vector<Link> fwd_;
  std::vector<Link> bwd_;
};

/// Per-layer pre-activations and activations, indexed by layer. For a
/// forward pass post[0] is the input; for a generation pass post.back() is
/// the label and post[0] the generated input. pre of the source layer is
/// left empty.
struct Activations {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;

  const std::vector<double>& output() const { return post.back(); }
};

double sigmoid(double z);
std::vector<double> softmax(std::span<const double> v);

/// Lowest index wins ties.
std::size_t argmax(std::span<const double> v);

Activations forward(const SparseNet& net, std::span<const double> x);
Activations generate_trace(const SparseNet& net, std::span<const double> y);
std::vector<double> generate(const SparseNet& net, std::span<const double> y);

struct Response {
  std::vector<double> bandwidth;
  std::size_t source = 0;
};

Response respond(const SparseNet& net, std::span<const double> x);

}  // namespace hemi

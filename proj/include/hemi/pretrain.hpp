#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hemi/objective.hpp"
#include "hemi/sparse_net.hpp"

namespace hemi {

struct PruneConfig {
  /// Absolute magnitude threshold tau. When unset, each link uses
  /// threshold_scale * stddev(live weights of that link), recomputed per pass.
  std::optional<double> threshold;
  double threshold_scale = 0.5;
  std::size_t max_degree = 64;
  /// Gradient epochs between prune passes.
  std::size_t epochs_per_pass = 5;
  /// Hard cap on gradient epochs per procedure (per layer for the layer-wise one).
  std::size_t max_epochs = 200;
  /// Size of the seeded subsample used to measure Delta E.
  std::size_t prune_batch = 256;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  void validate() const;
  friend bool operator==(const PruneConfig&, const PruneConfig&) = default;
};

enum class PruneOutcome : std::uint8_t { kept = 0, deleted = 1, forced = 2 };

struct PruneEvent {
  std::size_t epoch = 0;
  Direction direction = Direction::positive;
  std::size_t link = 0;
  std::size_t row = 0;  // destination neuron
  std::size_t col = 0;  // source neuron
  double magnitude = 0.0;
  double delta_e = 0.0;  // E without the parameter minus E with it
  double base_e = 0.0;   // E with the parameter
  double probability = 0.0;
  PruneOutcome outcome = PruneOutcome::kept;
  std::size_t batch_size = 0;
};

/// min(1, exp(-delta_e / e)). Throws std::invalid_argument when e <= 0.
double deletion_probability(double delta_e, double e);

/// Loss over a fixed batch with cached activations, so the effect of
/// deleting one weight can be measured without a full re-evaluation.
/// trial() leaves state untouched; commit() deletes the weight in the net
/// and refreshes the cache along the affected path.
class IncrementalLoss {
 public:
  IncrementalLoss(SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp);

  double value() const;
  double trial(Direction d, std::size_t link, std::size_t row, std::size_t col) const;
  void commit(Direction d, std::size_t link, std::size_t row, std::size_t col);

 private:
  struct Cache {
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> post;
    double training = 0.0;
    double generation = 0.0;
  };

  std::size_t chain_position(Direction d, std::size_t link) const;
  const Link& chain_link(std::size_t position) const;
  // Re-evaluates one sample after weight (row, col) of chain link `position`
  // moves by `dw`. Writes the new activations back when `cache` is non-null.
  std::pair<double, double> propagate(const Sample& s, const Cache& old, std::size_t position, std::size_t row,
                                      std::size_t col, double dw, Cache* write) const;

  SparseNet& net_;
  std::span<const Sample> batch_;
  Loss loss_;
  HyperParams hp_;
  bool with_generation_ = false;
  std::size_t links_ = 0;
  std::vector<Cache> cache_;
  double abs_sum_ = 0.0;
  double sq_sum_ = 0.0;
};

/// One visit over all live parameters with |theta| < tau in fixed
/// (direction, link, row, col) order. Stops once every neuron in the pruned
/// directions has in-degree <= max_degree; if the stochastic visit ends
/// first, the smallest-magnitude sub-threshold weights feeding over-degree
/// neurons are deleted deterministically (logged as forced). `loss` picks the pruned directions:
/// training prunes forward links, generation and cost on a bidirectional
/// net prune both.
std::vector<PruneEvent> prune_pass(SparseNet& net, std::span<const Sample> batch, Loss loss, const PruneConfig& cfg,
                                   const HyperParams& hp, Rng& rng, std::size_t epoch = 0);

struct PretrainReport {
  std::vector<PruneEvent> events;
  std::size_t epochs = 0;
  bool capped = false;
  /// Forward degree sum per link after completion.
  std::vector<std::size_t> degree_sums;
};

/// Whole-net gradient descent on E^t alternating with prune passes until all
/// forward in-degrees are <= max_degree. At the epoch cap one last pass with
/// an unbounded threshold enforces the bound and the report is marked capped.
PretrainReport pretrain_unidirectional(SparseNet& net, std::span<const Sample> data, const HyperParams& hp,
                                       const PruneConfig& cfg);

/// Layer-wise: for h = 0..hidden_layers, re-initialize the link pair between
/// layers h and h+1, train it as a one-layer reconstruction unit on E^r of
/// the layer-h representation, prune under the degree bound, then keep
/// pruning until the forward degree sum of link h is below that of link h-1.
/// `on_layer(h, net)` runs after link h is written back.
PretrainReport pretrain_bidirectional(SparseNet& net, std::span<const Sample> data, const HyperParams& hp,
                                      const PruneConfig& cfg, std::size_t hidden_layers,
                                      const std::function<void(std::size_t, const SparseNet&)>& on_layer = {});

/// Fixed seeded subsample of at most `n` records.
std::vector<Sample> prune_subsample(std::span<const Sample> data, std::size_t n, std::uint64_t seed);

void write_prune_events_csv(std::ostream& out, std::span<const PruneEvent> events);

}  // namespace hemi

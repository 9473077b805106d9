#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "hemi/checkpoint.hpp"
#include "hemi/dataset.hpp"
#include "hemi/objective.hpp"
#include "hemi/sparse_net.hpp"

namespace hemi {

/// O(1)-in-|data| summary of label vectors: per-dimension moments and range,
/// best-source histogram, and per-source moments of the winning value.
struct LabelPrior {
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> min;
  std::vector<double> max;
  std::vector<std::uint64_t> best_count;
  std::vector<double> best_mean;
  std::vector<double> best_variance;
  std::uint64_t count = 0;

  static LabelPrior from_samples(std::span<const Sample> samples);

  bool empty() const { return count == 0; }
  std::size_t dims() const { return mean.size(); }
  /// Classes with a nonzero best-source count, ascending.
  std::vector<std::size_t> classes() const;

  /// With probability 1/2 a one-hot label: a best source drawn from the
  /// histogram carries a magnitude drawn around its winning-value moments and
  /// every other component sits at its observed minimum. Otherwise each
  /// component is Gaussian around its mean. All components are clamped into
  /// (0, 1).
  std::vector<double> sample(Rng& rng) const;

  /// Count-weighted pooling of two summaries. Used when the core folds in a
  /// terminal's label summary.
  static LabelPrior merge(const LabelPrior& a, const LabelPrior& b);

  friend bool operator==(const LabelPrior&, const LabelPrior&) = default;
};

/// Fixed size for a given dimension count: 16 + 56 * dims bytes.
Bytes encode_label_prior(const LabelPrior& prior);
LabelPrior decode_label_prior(std::span<const std::uint8_t> bytes);

struct Role {
  enum class Kind : std::uint8_t { core, terminal };
  Kind kind = Kind::core;
  std::size_t terminal = 0;

  static Role core() { return {}; }
  static Role terminal_of(std::size_t id) { return {Kind::terminal, id}; }
  bool is_terminal() const { return kind == Kind::terminal; }
  friend bool operator==(const Role&, const Role&) = default;
};

struct DualHemisphere {
  SparseNet left;   // unidirectional, serves responses
  SparseNet right;  // bidirectional, generates inputs from labels
  Role role;
  LabelPrior prior;

  /// Throws std::invalid_argument on directionality or width mismatch.
  void validate() const;
  friend bool operator==(const DualHemisphere&, const DualHemisphere&) = default;
};

/// One mini-batch pass of E^t over `data` on the left net; returns E^t on
/// `data` afterwards. Requires a terminal role.
double local_left_epoch(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, Rng& rng);

/// One mini-batch pass over `data` on the right net, positive pass to labels
/// and negative pass back to inputs (E^t + E^r + regularizers), then the label
/// prior is rebuilt from the targets. Returns E^r on `data` afterwards.
/// Requires a terminal role.
double local_right_epoch(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, Rng& rng);

struct LoopResult {
  double training = 0.0;    // left E^t on the generated batch
  double generation = 0.0;  // right cycle E^r on the generated batch
  double lasso_norm = 0.0;  // joint R_1 over both nets
  double ridge_norm = 0.0;  // joint R_2 over both nets
  double cost = 0.0;
};

struct LoopGradients {
  GradientSet left;
  GradientSet right;
};

/// Exact partials of the loop cost over both nets for the labels in
/// `batch` (features are ignored): E^t of left(generate(right, y)) against y,
/// plus the cycle error of x = generate(right, y) against
/// generate(right, forward(right, x)), plus the joint regularizer. Both terms
/// are differentiated through x into the negative-direction weights.
LoopGradients loop_gradients(const DualHemisphere& dh, std::span<const Sample> batch, const HyperParams& hp);

/// Draws `batch` labels from the prior and runs one pass of mini-batch
/// gradient steps of the loop cost over them, updating both nets. The
/// returned terms describe the state before the update. Reads no dataset.
LoopResult dual_loop_epoch(DualHemisphere& dh, const HyperParams& hp, std::size_t batch, Rng& rng);

/// Loop cost of the current state on a fixed label batch, for progress checks.
LoopResult loop_cost(const DualHemisphere& dh, std::span<const std::vector<double>> labels, const HyperParams& hp);

struct RoundConfig {
  /// Absolute loop-cost threshold. When unset, an epoch converges when its
  /// loop cost is below plateau_factor times the minimum of the previous
  /// `window` epochs.
  std::optional<double> threshold;
  double plateau_factor = 1.05;
  std::size_t window = 3;
  std::size_t epoch_cap = 20;
  std::size_t loop_batch = 256;

  void validate() const;
  friend bool operator==(const RoundConfig&, const RoundConfig&) = default;
};

struct Upload {
  std::size_t terminal = 0;
  Bytes checkpoint;     // right net
  Bytes label_summary;  // encoded LabelPrior
  std::uint64_t sample_count = 0;
};

struct EpochMetric {
  std::size_t epoch = 0;
  double training = 0.0;
  double generation = 0.0;
  double cost = 0.0;
};

struct RoundOutcome {
  bool converged = false;
  std::optional<Upload> upload;
  std::vector<EpochMetric> epochs;
};

/// Repeats local_left_epoch, local_right_epoch and dual_loop_epoch until the
/// loop cost meets the threshold or epoch_cap epochs ran. `history` carries
/// loop costs across re-invocations.
RoundOutcome terminal_round(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, const RoundConfig& cfg,
                            Rng& rng, std::vector<double>& history);
RoundOutcome terminal_round(DualHemisphere& dh, const Dataset& data, const HyperParams& hp, const RoundConfig& cfg,
                            Rng& rng);

struct RoundMetric {
  std::size_t round = 0;
  std::size_t terminal = 0;
  std::size_t epoch = 0;
  double training = 0.0;
  double generation = 0.0;
  double cost = 0.0;
  bool converged = false;
  std::uint64_t upload_bytes = 0;
};

void write_round_metrics_csv(std::ostream& out, std::span<const RoundMetric> metrics);

}  // namespace hemi

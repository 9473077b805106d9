#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "hemi/dataset.hpp"

namespace hemi {

inline constexpr std::size_t kSources = 8;
inline constexpr std::size_t kWindow = 12;
inline constexpr std::size_t kFeatures = kSources * kWindow;

/// Per-source bandwidth series at uniform ticks, row-major [tick][source].
///
/// `series` feeds the features and `level` the targets. Synthesized traces
/// normalize `series` per trace and per source, while `level` uses one
/// calibration shared by every trace, so a terminal-specific gain is visible
/// only in the targets. An empty `level` means targets are read from
/// `series`.
struct Trace {
  std::size_t terminal = 0;
  std::size_t sources = kSources;
  std::int64_t start = 0;
  std::vector<double> series;
  std::vector<double> level;

  std::size_t ticks() const { return sources == 0 ? 0 : series.size() / sources; }
  double at(std::size_t tick, std::size_t source) const { return series[tick * sources + source]; }
};

/// One sample per window end: features[8 t + s] is source s at history tick
/// t (t = 0 oldest), the target is the following tick. Timestamps are
/// start + index of the target tick. Throws std::invalid_argument when the
/// trace is shorter than window + 1 ticks.
std::vector<Sample> featurize(const Trace& trace, std::size_t window = kWindow);

/// Per-group transform of the base process: raw' = gain * raw(t + phase) + offset.
struct Profile {
  std::optional<std::size_t> preferred;
  std::vector<double> gain = std::vector<double>(kSources, 1.0);
  std::vector<double> offset = std::vector<double>(kSources, 0.0);
  double phase = 0.0;  // ticks

  static Profile identity() { return {}; }
  /// Scales source `s` by `gain` and shifts the diurnal phase.
  static Profile preferring(std::size_t s, double gain, double phase = 0.0);

  /// Throws std::invalid_argument on a nonpositive gain or a width mismatch.
  void validate() const;
  friend bool operator==(const Profile&, const Profile&) = default;
};

struct SplitDataset {
  Dataset train;
  Dataset validation;
  Dataset test;
  std::size_t p = 1;

  std::size_t size() const { return train.size() + validation.size() + test.size(); }
};

/// 80/10/10 by timestamp order. `samples` must already be time-ordered.
SplitDataset split(std::vector<Sample> samples);

/// Merges per-group splits partition by partition, ordered by timestamp.
SplitDataset merge(std::span<const SplitDataset> parts);

/// Every sample repeated p times. Timestamps become t * p + copy so the
/// order, and therefore the split boundaries, are preserved.
std::vector<Sample> scale(std::span<const Sample> samples, std::size_t p);
SplitDataset scale(const SplitDataset& data, std::size_t p);

struct WorkloadConfig {
  std::size_t core_samples = 4000;
  std::size_t samples_per_group = 2000;
  /// One profile per user group. Group g is served by terminal g mod M.
  std::vector<Profile> profiles;
  double period = 24.0;
  double mean_level = 5.0;     // Mb/s
  double amplitude = 2.0;      // Mb/s
  double ar = 0.6;             // AR(1) coefficient
  double noise = 0.8;          // innovation std, Mb/s
  double full_scale = 16.0;    // Mb/s mapped to the top of the target range

  /// Five groups preferring sources 0, 3, 6, 1, 4 with gain 1.6.
  static WorkloadConfig desk();
  void validate() const;
  friend bool operator==(const WorkloadConfig&, const WorkloadConfig&) = default;
};

struct Workload {
  SplitDataset core;
  std::vector<SplitDataset> terminals;
  std::vector<std::vector<std::size_t>> groups;  // groups held by each terminal
};

/// Raw per-source bandwidth of one trace before normalization.
Trace base_trace(std::uint64_t seed, std::uint64_t stream, std::size_t ticks, const Profile& profile,
                 const WorkloadConfig& cfg);

/// Min-max of `series` per source into [0.05, 0.95]; `level` gets the shared
/// calibration 0.05 + 0.9 raw / full_scale. Throws std::invalid_argument when
/// a source series is constant.
Trace normalize(Trace raw, double full_scale);

/// D_c from the unpersonalized process and one D_d per terminal. Pure given
/// the seed.
Workload synthesize(std::uint64_t seed, std::size_t terminals, const WorkloadConfig& cfg);

struct ServedResponse {
  std::size_t source = 0;
  double latency = 0.0;  // seconds
};

/// Fraction of responses that pick the true best source within `limit`
/// seconds. Throws std::invalid_argument on empty or mismatched inputs or a
/// nonpositive limit.
double accuracy(std::span<const ServedResponse> responses, std::span<const std::size_t> truth, double limit);

/// Header: timestamp, f0..f{n-1}, t0..t{k-1}, best_source.
void write_samples_csv(std::ostream& out, std::span<const Sample> samples);
/// Throws std::invalid_argument naming the line on malformed input.
std::vector<Sample> read_samples_csv(std::istream& in);

/// Canonical wire size of one raw sample: features, targets and timestamp.
std::size_t sample_wire_bytes(std::size_t features = kFeatures, std::size_t targets = kSources);

}  // namespace hemi

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hemi/config.hpp"

namespace hemi {

/// A pipeline stage failed. what() is "<stage>: <cause>".
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Column names ending in this suffix carry wall-clock measurements and are
/// exempt from determinism checks.
inline constexpr const char* kWallclockSuffix = "@wallclock";

/// Output files keyed by path relative to the output directory.
using OutputFiles = std::map<std::string, std::string>;

/// One CSV: header plus rows, all cells already formatted.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const;
  static Table parse(const std::string& csv);
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

/// Round-trip formatting for doubles.
std::string format_number(double v);

struct ServedPair {
  Served proposal;
  Served baseline;
};

/// Per-sample predictions: terminal, timestamp, truth, and source plus
/// latency for both systems.
Table predictions_table(const ServedPair& s, const Workload& w);

/// Accuracy in percent of both systems at each latency limit.
Table latency_accuracy_table(const ServedPair& s, const std::vector<double>& limits);

/// Terminal and central responses for a finished pair of runs. The core path
/// uses a delay stream derived from `seed`.
ServedPair serve_both(std::span<const DualHemisphere> terminals, const SparseNet& central, const Workload& w,
                      const WanTopology& topo, std::uint64_t seed);

/// Sweeps M and p, writes the five comparison tables and every per-run
/// artifact into memory. Nothing touches disk.
OutputFiles run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Writes into a sibling staging directory and renames it over `dir`, so a
/// failure leaves no partial output.
void write_outputs(const OutputFiles& files, const std::filesystem::path& dir);

/// Reads every regular file under `dir` back into the same map form.
OutputFiles read_outputs(const std::filesystem::path& dir);

/// The files whose bytes must match across identical runs, with wall-clock
/// columns dropped.
OutputFiles deterministic_view(const OutputFiles& files);

/// Paths of the per-run artifacts.
std::string run_dir(std::size_t m, std::size_t p = 1);

}  // namespace hemi

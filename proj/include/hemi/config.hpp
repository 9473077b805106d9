#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hemi/federation.hpp"

namespace hemi {

/// Invalid configuration. what() is "<field path>: <reason>".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& reason)
      : std::invalid_argument(path + ": " + reason), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct SweepConfig {
  std::vector<std::size_t> terminals{3, 4, 5};
  std::vector<std::size_t> p{1, 2, 4, 8};
  std::vector<double> latency_limits{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  Architecture arch;
  HyperParams hp{0.02, 1e-5, 9e-5, 32};
  PruneConfig prune;

  std::size_t terminals = 5;
  /// Per-link distances; terminal i uses distances[i mod size]. Empty means 1.0.
  std::vector<double> distances;
  double delay_lo = 0.05;
  double delay_hi = 0.15;

  WorkloadConfig workload = WorkloadConfig::desk();

  RoundConfig round;
  AggregateConfig aggregate;
  double sync_threshold = 0.1;
  std::size_t round_cap = 3;
  std::size_t invocations = 2;
  std::size_t personalize_epochs = 10;
  std::size_t right_epochs = 10;
  std::size_t threads = 1;

  std::size_t baseline_epochs = 20;

  SweepConfig sweep;
  std::string output_dir = "out";

  /// Throws ConfigError naming the offending field.
  void validate() const;

  WanTopology topology(std::size_t m) const;
  FederationConfig federation(std::size_t m) const;
  BaselineConfig baseline() const;
  CoreInitConfig core() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Missing keys keep their defaults; unknown keys and wrong types are errors.
ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
/// Throws ConfigError with the path as field when the file is missing or not JSON.
ExperimentConfig load_config(const std::filesystem::path& path);

/// HEMI_SEED and HEMI_OUT override seed and output_dir.
void apply_env_overrides(ExperimentConfig& cfg, const std::function<const char*(const char*)>& getenv_fn);

}  // namespace hemi

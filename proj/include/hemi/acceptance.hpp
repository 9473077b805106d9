#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace hemi::acceptance {

struct Result {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  /// Wall time of the check plus the recorded cost of any shared run it
  /// reused from an earlier check.
  double seconds = 0.0;
  double limit_seconds = 0.0;  // 0 when unbounded
};

struct Options {
  /// Criterion ids to run; empty runs all ten.
  std::vector<int> only;
  /// Scratch space for the on-disk round trip.
  std::filesystem::path scratch = std::filesystem::temp_directory_path();
};

/// One line: "PASS|FAIL <id> <name>: <detail> [<seconds> s]".
std::string format(const Result& r);

/// Runs the selected criteria, calling `sink` as each finishes. Results are
/// returned in id order.
std::vector<Result> run_all(const Options& opts = {}, const std::function<void(const Result&)>& sink = {});

}  // namespace hemi::acceptance

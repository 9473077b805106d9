#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hemi/dataset.hpp"
#include "hemi/rng.hpp"

namespace hemi::fixtures {

/// Features and targets uniform in [0.05, 0.95].
inline std::vector<Sample> random_samples(std::size_t n, std::size_t in, std::size_t out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> v;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.timestamp = static_cast<std::int64_t>(i);
    for (std::size_t j = 0; j < in; ++j) s.features.push_back(0.05 + 0.9 * uniform01(rng));
    for (std::size_t j = 0; j < out; ++j) s.target.push_back(0.05 + 0.9 * uniform01(rng));
    v.push_back(std::move(s));
  }
  return v;
}

/// Targets are a fixed smooth function of the features, so nets can learn them.
inline std::vector<Sample> teacher_samples(std::size_t n, std::size_t in, std::size_t out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> v;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.timestamp = static_cast<std::int64_t>(i);
    for (std::size_t j = 0; j < in; ++j) s.features.push_back(uniform01(rng));
    for (std::size_t k = 0; k < out; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += ((j + k) % 3 == 0 ? 1.0 : -0.5) * s.features[j];
      s.target.push_back(0.1 + 0.8 / (1.0 + std::exp(-acc)));
    }
    v.push_back(std::move(s));
  }
  return v;
}

}  // namespace hemi::fixtures

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hemi {

struct Sample {
  std::int64_t timestamp = 0;
  std::vector<double> features;
  std::vector<double> target;
  std::size_t best_source = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Owned sample collection that counts record reads. Every accessor that
/// hands out samples adds the number of records it exposes to reads(), so
/// tests can prove a code path never touched the data.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  Dataset(const Dataset& other) : samples_(other.samples_) {}
  Dataset(Dataset&& other) noexcept : samples_(std::move(other.samples_)) {}
  Dataset& operator=(const Dataset& other) {
    samples_ = other.samples_;
    return *this;
  }
  Dataset& operator=(Dataset&& other) noexcept {
    samples_ = std::move(other.samples_);
    return *this;
  }

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  const Sample& at(std::size_t i) const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    return samples_.at(i);
  }

  std::span<const Sample> records() const {
    reads_.fetch_add(samples_.size(), std::memory_order_relaxed);
    return samples_;
  }

  void push_back(Sample s) { samples_.push_back(std::move(s)); }
  std::vector<Sample>& mutable_records() { return samples_; }

  std::size_t reads() const { return reads_.load(std::memory_order_relaxed); }
  void reset_reads() const { reads_.store(0, std::memory_order_relaxed); }

  friend bool operator==(const Dataset& a, const Dataset& b) { return a.samples_ == b.samples_; }

 private:
  std::vector<Sample> samples_;
  mutable std::atomic<std::size_t> reads_{0};
};

}  // namespace hemi

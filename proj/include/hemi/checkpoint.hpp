#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hemi/sparse_net.hpp"
#include "hemi/wire.hpp"

namespace hemi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string origin;
  SparseNet net;
};

// Layout (all integers and floats little-endian):
//   "HEMI" u32 version u8 directionality u32 layer_count u64[layer_count] sizes
//   u64 max_degree u64 seed u32 origin_len origin_bytes
//   per forward link, then per backward link:
//     f64[rows*cols] weights (row-major), f64[rows] bias, bit-packed mask
// Equal nets with equal origin encode to equal bytes.
Bytes serialize(const SparseNet& net, std::string_view origin = {});
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
SparseNet deserialize(std::span<const std::uint8_t> bytes);

nlohmann::json to_json(const SparseNet& net);

void write_checkpoint(const std::filesystem::path& path, const SparseNet& net, std::string_view origin = {});
SparseNet read_checkpoint(const std::filesystem::path& path);

}  // namespace hemi

#include "hemi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace hemi {
namespace {

constexpr char kMagic[4] = {'H', 'E', 'M', 'I'};
constexpr std::uint64_t kMaxLayers = 1u << 12;
constexpr std::uint64_t kMaxLayerSize = 1u << 24;

void write_link(ByteWriter& w, const Link& l) {
  for (double v : l.weight) w.real(v);
  for (double b : l.bias) w.real(b);
  std::uint8_t acc = 0;
  for (std::size_t i = 0; i < l.live.size(); ++i) {
    if (l.live[i]) acc |= static_cast<std::uint8_t>(1u << (i % 8));
    if (i % 8 == 7) {
      w.byte(acc);
      acc = 0;
    }
  }
  if (l.live.size() % 8 != 0) w.byte(acc);
}

void read_link(ByteReader& r, Link& l) {
  r.need(l.weight.size() * 8 + l.bias.size() * 8 + (l.live.size() + 7) / 8, "link payload");
  for (auto& v : l.weight) v = r.real("weight");
  for (auto& b : l.bias) b = r.real("bias");
  auto bits = r.take((l.live.size() + 7) / 8, "mask");
  for (std::size_t i = 0; i < l.live.size(); ++i) l.live[i] = (bits[i / 8] >> (i % 8)) & 1u;
}

}  // namespace

Bytes serialize(const SparseNet& net, std::string_view origin) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(net.directionality()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) w.uint<std::uint64_t>(l.size);
  w.uint<std::uint64_t>(net.max_degree());
  w.uint<std::uint64_t>(net.seed());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(origin.size()));
  w.bytes(origin.data(), origin.size());
  for (const auto& l : net.forward_links()) write_link(w, l);
  for (const auto& l : net.backward_links()) write_link(w, l);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw DecodeError("checkpoint magic mismatch");
  Checkpoint cp;
  cp.version = r.uint<std::uint32_t>("version");
  if (cp.version != kCheckpointVersion) {
    throw DecodeError("unsupported checkpoint version " + std::to_string(cp.version));
  }
  const auto dir = r.uint<std::uint8_t>("directionality");
  if (dir > 1) throw DecodeError("invalid directionality tag");
  const auto count = r.uint<std::uint32_t>("layer count");
  if (count < 2 || count > kMaxLayers) throw DecodeError("invalid layer count");
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) {
    const auto v = r.uint<std::uint64_t>("layer size");
    if (v < 1 || v > kMaxLayerSize) throw DecodeError("invalid layer size");
    s = static_cast<std::size_t>(v);
  }
  const auto max_degree = r.uint<std::uint64_t>("max degree");
  if (max_degree < 1) throw DecodeError("invalid max degree");
  const auto seed = r.uint<std::uint64_t>("seed");
  const auto origin_len = r.uint<std::uint32_t>("origin length");
  auto origin = r.take(origin_len, "origin");
  cp.origin.assign(origin.begin(), origin.end());

  // Check the payload length before allocating anything sized by the header.
  std::uint64_t expected = 0;
  const std::uint64_t directions = dir == 1 ? 2 : 1;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const std::uint64_t cells = static_cast<std::uint64_t>(sizes[k]) * sizes[k + 1];
    expected += directions * (cells * 8 + (cells + 7) / 8);
    expected += 8 * (sizes[k + 1] + (dir == 1 ? sizes[k] : 0));
  }
  if (r.remaining() < expected) throw DecodeError("checkpoint truncated: payload shorter than header implies");
  if (r.remaining() > expected) throw DecodeError("checkpoint has trailing bytes");

  SparseNet net(make_layers(sizes), static_cast<Directionality>(dir), static_cast<std::size_t>(max_degree));
  net.set_seed(seed);
  for (auto& l : net.forward_links()) read_link(r, l);
  for (auto& l : net.backward_links()) read_link(r, l);
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw DecodeError(std::string("checkpoint shape inconsistency: ") + e.what());
  }
  cp.net = std::move(net);
  return cp;
}

SparseNet deserialize(std::span<const std::uint8_t> bytes) { return decode_checkpoint(bytes).net; }

nlohmann::json to_json(const SparseNet& net) {
  nlohmann::json j;
  j["format"] = "HEMI";
  j["version"] = kCheckpointVersion;
  j["directionality"] = net.bidirectional() ? "bidirectional" : "unidirectional";
  std::vector<std::size_t> sizes;
  for (const auto& l : net.layers()) sizes.push_back(l.size);
  j["layers"] = sizes;
  j["max_degree"] = net.max_degree();
  j["seed"] = net.seed();
  auto links = [](const std::vector<Link>& ls) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : ls) {
      arr.push_back({{"rows", l.rows}, {"cols", l.cols}, {"weight", l.weight}, {"bias", l.bias}, {"live", l.live}});
    }
    return arr;
  };
  j["forward"] = links(net.forward_links());
  if (net.bidirectional()) j["backward"] = links(net.backward_links());
  return j;
}

void write_checkpoint(const std::filesystem::path& path, const SparseNet& net, std::string_view origin) {
  const Bytes bytes = serialize(net, origin);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SparseNet read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace hemi

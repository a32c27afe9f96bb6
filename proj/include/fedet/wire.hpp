#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "fedet/enhancer_group.hpp"

namespace fedet {

// --- cost accounting ----------------------------------------------------------

// Updated-parameter count of one communicated group:
//   D * (2*d*b + d + b) + d * labels
// (enhancers plus the bias-free head). Pure integer arithmetic.
inline int64_t comm_cost(int64_t depth, int64_t hidden, int64_t bottleneck,
                         int64_t labels) {
  FEDET_CHECK(depth >= 0 && hidden >= 0 && bottleneck >= 0 && labels >= 0,
              "comm_cost: negative argument");
  return depth * (2 * hidden * bottleneck + hidden + bottleneck) +
         hidden * labels;
}

// Forward-pass FLOPs of a single enhancer on one sample: 2 * d * b * seq_len.
inline int64_t enhancer_flops(int64_t hidden, int64_t bottleneck,
                              int64_t seq_len) {
  FEDET_CHECK(hidden >= 0 && bottleneck >= 0 && seq_len >= 0,
              "enhancer_flops: negative argument");
  return 2 * hidden * bottleneck * seq_len;
}

// --- CRC-32 (IEEE 802.3, poly 0xEDB88320) --------------------------------------

namespace detail {

inline const std::array<uint32_t, 256>& crc32_table() {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

}  // namespace detail

inline uint32_t crc32(std::span<const uint8_t> bytes) {
  const auto& table = detail::crc32_table();
  uint32_t c = 0xFFFFFFFFu;
  for (uint8_t b : bytes) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// --- group wire format ----------------------------------------------------------
//
// Little-endian layout, fixed for interoperability:
//   magic "FETG"      4 bytes
//   version           u16  (currently 1)
//   group_id          u32
//   task_id           u32
//   D                 u16  (enhancer count)
//   d                 u32  (hidden width)
//   b                 u32  (bottleneck width)
//   domain length     u32
//   domain class ids  u32 each
//   payload           f32 each: per enhancer [W_down row-major, beta_down,
//                     W_up row-major, beta_up], then head row-major (d x |domain|)
//   crc32             u32 over all preceding bytes
//
// Total size: 28 + 4*|domain| + 4*(D*(2db+d+b) + d*|domain|) + 4 bytes.
// Floats travel as f32; the f64 -> f32 -> f64 round trip is lossy once and
// stable afterwards (serialize . deserialize . serialize is byte-identical).

inline constexpr uint16_t kWireVersion = 1;
inline constexpr size_t kWireHeaderBytes = 28;

inline int64_t serialized_group_size(int64_t depth, int64_t hidden,
                                     int64_t bottleneck, int64_t domain_len) {
  return static_cast<int64_t>(kWireHeaderBytes) + 4 * domain_len +
         4 * comm_cost(depth, hidden, bottleneck, domain_len) + 4;
}

namespace detail {

struct WireWriter {
  std::vector<uint8_t> buf;

  void u16(uint16_t v) {
    buf.push_back(static_cast<uint8_t>(v & 0xFF));
    buf.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<uint32_t>(static_cast<float>(v))); }
  void bytes(const char* p, size_t n) {
    buf.insert(buf.end(), p, p + n);
  }
};

struct WireReader {
  std::span<const uint8_t> buf;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    FEDET_CHECK(pos + n <= buf.size(),
                "wire: truncated message while reading " << what);
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f32(const char* what) {
    return static_cast<double>(std::bit_cast<float>(u32(what)));
  }
};

}  // namespace detail

inline std::vector<uint8_t> serialize_group(const EnhancerGroup& group,
                                            uint32_t task_id) {
  FEDET_CHECK(!group.empty(), "serialize: group " << group.group_id
                                                  << " has an empty domain");
  FEDET_CHECK(group.head.defined(), "serialize: group has no head");
  const int64_t depth = group.depth();
  const int64_t d = group.hidden();
  const int64_t b = group.bottleneck();

  detail::WireWriter w;
  w.bytes("FETG", 4);
  w.u16(kWireVersion);
  w.u32(group.group_id);
  w.u32(task_id);
  w.u16(static_cast<uint16_t>(depth));
  w.u32(static_cast<uint32_t>(d));
  w.u32(static_cast<uint32_t>(b));
  w.u32(static_cast<uint32_t>(group.domain.size()));
  for (ClassId c : group.domain) w.u32(c);

  for (const auto& e : group.enhancers) {
    FEDET_CHECK(e.hidden() == d && e.bottleneck() == b,
                "serialize: ragged enhancer dims in group " << group.group_id);
    for (double v : e.w_down.data()) w.f32(v);
    for (double v : e.beta_down.data()) w.f32(v);
    for (double v : e.w_up.data()) w.f32(v);
    for (double v : e.beta_up.data()) w.f32(v);
  }
  for (double v : group.head.data()) w.f32(v);

  w.u32(crc32(w.buf));
  return std::move(w.buf);
}

struct DeserializedGroup {
  EnhancerGroup group;  // parameters land frozen; clone(true) to train
  uint32_t task_id = 0;
};

inline DeserializedGroup deserialize_group(std::span<const uint8_t> bytes) {
  detail::WireReader r{bytes};
  r.need(4, "magic");
  FEDET_CHECK(std::memcmp(bytes.data(), "FETG", 4) == 0,
              "wire: bad magic, not a group message");
  r.pos = 4;
  uint16_t version = r.u16("version");
  FEDET_CHECK(version == kWireVersion,
              "wire: unsupported version " << version);

  DeserializedGroup out;
  out.group.group_id = r.u32("group id");
  out.task_id = r.u32("task id");
  const int64_t depth = r.u16("enhancer count");
  const int64_t d = r.u32("hidden width");
  const int64_t b = r.u32("bottleneck width");
  const int64_t domain_len = r.u32("domain length");
  FEDET_CHECK(depth >= 1 && d >= 1 && b >= 1 && domain_len >= 1,
              "wire: degenerate dimensions (D=" << depth << ", d=" << d
                                                << ", b=" << b << ", |domain|="
                                                << domain_len << ")");
  // bound the dims before computing the expected size, so corrupted headers
  // cannot overflow the arithmetic below
  FEDET_CHECK(d <= (1 << 20) && b <= (1 << 20) && domain_len <= (1 << 20),
              "wire: implausible dimensions (d=" << d << ", b=" << b
                                                 << ", |domain|=" << domain_len << ")");

  const auto expected =
      static_cast<size_t>(serialized_group_size(depth, d, b, domain_len));
  FEDET_CHECK(bytes.size() == expected,
              "wire: length " << bytes.size() << " does not match layout size "
                              << expected);

  const uint32_t stored_crc =
      static_cast<uint32_t>(bytes[expected - 4]) |
      (static_cast<uint32_t>(bytes[expected - 3]) << 8) |
      (static_cast<uint32_t>(bytes[expected - 2]) << 16) |
      (static_cast<uint32_t>(bytes[expected - 1]) << 24);
  const uint32_t computed = crc32(bytes.subspan(0, expected - 4));
  FEDET_CHECK(stored_crc == computed,
              "wire: CRC mismatch, stored " << stored_crc << " vs computed "
                                            << computed);

  out.group.domain.reserve(static_cast<size_t>(domain_len));
  for (int64_t i = 0; i < domain_len; ++i)
    out.group.domain.push_back(r.u32("domain class id"));

  auto read_tensor = [&](Shape shape) {
    std::vector<double> data(static_cast<size_t>(numel_of(shape)));
    for (auto& v : data) v = r.f32("payload");
    return Tensor::from_data(std::move(shape), std::move(data), false);
  };

  out.group.enhancers.reserve(static_cast<size_t>(depth));
  for (int64_t i = 0; i < depth; ++i) {
    EnhancerParams e;
    e.w_down = read_tensor({d, b});
    e.beta_down = read_tensor({b});
    e.w_up = read_tensor({b, d});
    e.beta_up = read_tensor({d});
    out.group.enhancers.push_back(std::move(e));
  }
  out.group.head = read_tensor({d, domain_len});
  return out;
}

}  // namespace fedet

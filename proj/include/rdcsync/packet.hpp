#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "rdcsync/types.hpp"

namespace rdcsync {

/// Round identifiers order flooding rounds. The 64-bit value packs
///   [63:48] election epoch, [47:24] root priority, [23:0] sequence,
/// so a later epoch always wins and, inside an epoch, a better-ranked root
/// wins over a worse one. Priority = kMaxRank - rank, rank = (hops, node id).
namespace round_id {

inline constexpr std::uint64_t kSeqBits = 24;
inline constexpr std::uint64_t kPrioBits = 24;
inline constexpr std::uint64_t kSeqMask = (1ull << kSeqBits) - 1;
inline constexpr std::uint64_t kPrioMask = (1ull << kPrioBits) - 1;
inline constexpr std::uint32_t kMaxRank = static_cast<std::uint32_t>(kPrioMask);

/// hops saturate at 255 and node ids at 65535 inside the rank field.
inline std::uint32_t rank(std::uint32_t hops, NodeId id) {
  const std::uint32_t h = hops > 0xFF ? 0xFF : hops;
  const std::uint32_t n = id > 0xFFFF ? 0xFFFF : id;
  return (h << 16) | n;
}

inline std::uint64_t make(std::uint32_t epoch, std::uint32_t rank_value, std::uint32_t seq) {
  return (static_cast<std::uint64_t>(epoch & 0xFFFF) << 48) |
         (static_cast<std::uint64_t>(kMaxRank - (rank_value & kPrioMask)) << kSeqBits) | (seq & kSeqMask);
}

inline std::uint32_t epoch(std::uint64_t id) { return static_cast<std::uint32_t>(id >> 48); }
inline std::uint32_t rank_of(std::uint64_t id) {
  return kMaxRank - static_cast<std::uint32_t>((id >> kSeqBits) & kPrioMask);
}
inline std::uint32_t seq(std::uint64_t id) { return static_cast<std::uint32_t>(id & kSeqMask); }
inline std::uint64_t next(std::uint64_t id) { return (id & ~kSeqMask) | ((id + 1) & kSeqMask); }

}  // namespace round_id

/// Uplink samples a node reports about its neighbors: neighbor id and the
/// minimum (local logical receive - neighbor logical send) seen last round.
using NeighborBuffer = std::vector<std::pair<NodeId, Tick>>;

struct SyncPacket {
  NodeId sender_id = 0;
  std::uint8_t seq_in_batch = 1;  // 1..N
  std::uint8_t batch_size = 1;
  Tick hw_ts = 0;
  Tick logical_ts = 0;
  double phi = 1.0;
  std::uint64_t round_id = 0;
  Tick theta_cum = 0;
  std::uint16_t hops = 0;  // sender's distance to the root that issued round_id
  std::optional<NeighborBuffer> neighbor_buf;  // only on seq_in_batch == 1

  bool operator==(const SyncPacket&) const = default;
};

class MalformedPacket : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace wire {

namespace detail {
template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

template <typename T>
T get(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw MalformedPacket("truncated packet");
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(in[pos + i]) << (8 * i));
  pos += sizeof(T);
  return static_cast<T>(u);
}
}  // namespace detail

/// Canonical little-endian encoding used in trace logs:
///   u32 sender | u8 seq | u8 batch | i64 hw | i64 logical | f64 phi (IEEE bits)
///   | u64 round | i64 theta_cum | u16 hops | u8 has_buf [| u16 count | (u32 id, i64 value)*]
inline std::vector<std::uint8_t> encode(const SyncPacket& p) {
  std::vector<std::uint8_t> out;
  out.reserve(48 + (p.neighbor_buf ? p.neighbor_buf->size() * 12 : 0));
  detail::put<std::uint32_t>(out, p.sender_id);
  detail::put<std::uint8_t>(out, p.seq_in_batch);
  detail::put<std::uint8_t>(out, p.batch_size);
  detail::put<std::int64_t>(out, p.hw_ts);
  detail::put<std::int64_t>(out, p.logical_ts);
  detail::put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(p.phi));
  detail::put<std::uint64_t>(out, p.round_id);
  detail::put<std::int64_t>(out, p.theta_cum);
  detail::put<std::uint16_t>(out, p.hops);
  detail::put<std::uint8_t>(out, p.neighbor_buf ? 1 : 0);
  if (p.neighbor_buf) {
    if (p.neighbor_buf->size() > 0xFFFF) throw MalformedPacket("neighbor buffer too large");
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.neighbor_buf->size()));
    for (const auto& [id, v] : *p.neighbor_buf) {
      detail::put<std::uint32_t>(out, id);
      detail::put<std::int64_t>(out, v);
    }
  }
  return out;
}

inline SyncPacket decode(std::span<const std::uint8_t> in) {
  std::size_t pos = 0;
  SyncPacket p;
  p.sender_id = detail::get<std::uint32_t>(in, pos);
  p.seq_in_batch = detail::get<std::uint8_t>(in, pos);
  p.batch_size = detail::get<std::uint8_t>(in, pos);
  p.hw_ts = detail::get<std::int64_t>(in, pos);
  p.logical_ts = detail::get<std::int64_t>(in, pos);
  p.phi = std::bit_cast<double>(detail::get<std::uint64_t>(in, pos));
  p.round_id = detail::get<std::uint64_t>(in, pos);
  p.theta_cum = detail::get<std::int64_t>(in, pos);
  p.hops = detail::get<std::uint16_t>(in, pos);
  const auto has_buf = detail::get<std::uint8_t>(in, pos);
  if (has_buf > 1) throw MalformedPacket("bad buffer flag");
  if (has_buf) {
    const auto count = detail::get<std::uint16_t>(in, pos);
    NeighborBuffer buf;
    buf.reserve(count);
    for (std::uint16_t i = 0; i < count; ++i) {
      const auto id = detail::get<std::uint32_t>(in, pos);
      const auto v = detail::get<std::int64_t>(in, pos);
      buf.emplace_back(id, v);
    }
    p.neighbor_buf = std::move(buf);
  }
  if (pos != in.size()) throw MalformedPacket("trailing bytes");
  return p;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

}  // namespace wire
}  // namespace rdcsync

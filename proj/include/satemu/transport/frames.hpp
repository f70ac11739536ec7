#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "satemu/time.hpp"
#include "satemu/transport/profile.hpp"

namespace satemu::transport {

using StreamId = std::uint64_t;
using ConnId = std::uint64_t;
using PacketNumber = std::uint64_t;

inline constexpr PacketNumber kNoPacketNumber = ~PacketNumber{0};

/// Modeled wire sizes. Data packets are sized by their stream payload.
inline constexpr std::uint32_t kAckPacketBytes = 40;
inline constexpr std::uint32_t kPingPacketBytes = 40;
inline constexpr std::uint32_t kQuicHandshakeBytes = 1200;  // padded Initial / server flight
inline constexpr std::uint32_t kTcpSynBytes = 40;
inline constexpr std::uint32_t kTlsFlightBytes = 1200;

/// Application message boundary: the message ends at stream offset `end`.
struct MessageMark {
  std::uint64_t end = 0;
  std::uint64_t tag = 0;

  friend bool operator==(const MessageMark&, const MessageMark&) = default;
};

struct StreamFrame {
  StreamId stream = 0;
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
  bool fin = false;
  std::vector<MessageMark> marks;
};

struct AckFrame {
  /// Inclusive packet-number ranges [first, last], highest range first.
  std::vector<std::pair<PacketNumber, PacketNumber>> ranges;
  SimTime ack_delay{0};
  /// TCP-like only: contiguous bytes received on stream 0 (cumulative ACK).
  std::uint64_t cumulative = 0;

  PacketNumber largest() const { return ranges.empty() ? kNoPacketNumber : ranges.front().second; }
};

enum class FrameKind : std::uint8_t { handshake, short_header, close };

/// Transport payload carried by one emunet packet.
struct Frame {
  ConnId conn = 0;
  FrameKind kind = FrameKind::short_header;
  bool from_client = true;
  std::uint8_t hs_step = 0;
  PacketNumber pn = kNoPacketNumber;  // short-header ack-eliciting packets only
  bool hs_done = false;               // client's handshake-completing flight
  bool ping = false;
  std::vector<StreamFrame> streams;
  std::optional<AckFrame> ack;
  std::uint64_t max_data = ~std::uint64_t{0};
  int close_code = 0;
  TransportProfile offer;  // client handshake packets: the profile a proxy should mirror

  bool ack_eliciting() const { return kind == FrameKind::short_header && pn != kNoPacketNumber; }
};

}  // namespace satemu::transport

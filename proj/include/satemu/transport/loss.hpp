#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

#include "satemu/time.hpp"
#include "satemu/transport/frames.hpp"

namespace satemu::transport {

inline constexpr PacketNumber kPacketThreshold = 3;

struct SentPacket {
  PacketNumber pn = 0;
  SimTime sent{0};
  std::uint32_t size = 0;
  bool in_flight = true;
  bool hs_done = false;
  bool ping = false;
  std::vector<StreamFrame> frames;  // marks are re-derived from the stream on retransmission
};

/// Outstanding ack-eliciting packets keyed by packet number.
using SentLedger = std::map<PacketNumber, SentPacket>;

struct LossScan {
  std::vector<PacketNumber> lost;
  SimTime next_loss_time = kNever;  // earliest time-threshold expiry among survivors
};

/// Time threshold used by the QUIC-like profile: 9/8 of max(latest, smoothed), at least 1ms.
inline SimTime loss_delay(SimTime latest_rtt, SimTime smoothed_rtt) {
  SimTime base = std::max(latest_rtt, smoothed_rtt);
  return std::max<SimTime>(base * 9 / 8, std::chrono::milliseconds(1));
}

/// QUIC-like loss detection: a packet below the largest acknowledged is lost
/// once kPacketThreshold later packets are acknowledged or once it has been
/// outstanding for the time threshold.
inline LossScan detect_quic_losses(const SentLedger& ledger, PacketNumber largest_acked, SimTime now,
                                   SimTime latest_rtt, SimTime smoothed_rtt) {
  LossScan scan;
  if (largest_acked == kNoPacketNumber) return scan;
  SimTime delay = loss_delay(latest_rtt, smoothed_rtt);
  for (auto it = ledger.begin(); it != ledger.end() && it->first < largest_acked; ++it) {
    const SentPacket& p = it->second;
    if (largest_acked >= p.pn + kPacketThreshold || p.sent + delay <= now) {
      scan.lost.push_back(p.pn);
    } else {
      scan.next_loss_time = std::min(scan.next_loss_time, p.sent + delay);
    }
  }
  return scan;
}

/// TCP-like loss marking once fast retransmit has been triggered (three
/// duplicate ACKs) or recovery is active: the oldest outstanding segment plus
/// every segment with kPacketThreshold later segments selectively acknowledged.
inline std::vector<PacketNumber> detect_tcp_losses(const SentLedger& ledger, PacketNumber largest_acked,
                                                   bool fast_retransmit) {
  std::vector<PacketNumber> lost;
  if (largest_acked == kNoPacketNumber) return lost;
  for (auto it = ledger.begin(); it != ledger.end() && it->first < largest_acked; ++it) {
    bool oldest = it == ledger.begin();
    if ((oldest && fast_retransmit) || largest_acked >= it->first + kPacketThreshold) lost.push_back(it->first);
  }
  return lost;
}

}  // namespace satemu::transport

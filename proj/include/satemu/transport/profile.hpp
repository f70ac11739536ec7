#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "satemu/congestion.hpp"
#include "satemu/errors.hpp"
#include "satemu/time.hpp"

namespace satemu::transport {

enum class Kind { quic, tcp };

inline const char* to_string(Kind k) { return k == Kind::quic ? "quic" : "tcp"; }

struct AckFrequencyConfig {
  std::uint32_t ack_eliciting_threshold = 2;
  SimTime max_ack_delay = std::chrono::milliseconds(25);

  void validate() const {
    if (ack_eliciting_threshold < 1) throw ValidationError("ack_eliciting_threshold", "must be >= 1");
    if (max_ack_delay < SimTime{0}) throw ValidationError("max_ack_delay", "must be >= 0");
  }
};

struct TransportProfile {
  Kind kind = Kind::quic;
  int tls_rtts = 0;  // tcp only: 1 for TLS 1.3, 2 for TLS 1.2
  std::uint32_t max_payload_bytes = 1200;
  AckFrequencyConfig ack_frequency;

  static TransportProfile quic() { return TransportProfile{}; }
  static TransportProfile tcp(int tls_rtts = 0) {
    TransportProfile p;
    p.kind = Kind::tcp;
    p.tls_rtts = tls_rtts;
    return p;
  }

  /// Number of client->server->client exchanges before the client may send data.
  int handshake_exchanges() const { return kind == Kind::quic ? 1 : 1 + tls_rtts; }

  void validate() const {
    if (kind == Kind::quic && tls_rtts != 0) throw ValidationError("tls_rtts", "must be 0 for quic");
    if (tls_rtts < 0 || tls_rtts > 2) throw ValidationError("tls_rtts", "must be 0, 1 or 2");
    if (max_payload_bytes < 256) throw ValidationError("max_payload_bytes", "must be >= 256");
    ack_frequency.validate();
  }
};

/// Congestion controller choice for one endpoint or path segment.
struct CcTuning {
  cc::Algorithm algorithm = cc::Algorithm::cubic;
  std::uint32_t iw_packets = 10;

  friend bool operator==(const CcTuning&, const CcTuning&) = default;
};

}  // namespace satemu::transport

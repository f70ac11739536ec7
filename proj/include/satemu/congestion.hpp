#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include "satemu/errors.hpp"
#include "satemu/time.hpp"

namespace satemu::cc {

enum class Algorithm { newreno, cubic };

inline Algorithm parse_algorithm(std::string_view name) {
  if (name == "newreno") return Algorithm::newreno;
  if (name == "cubic") return Algorithm::cubic;
  throw UnknownAlgorithm("unknown congestion control algorithm '" + std::string(name) + "'");
}

inline const char* to_string(Algorithm a) { return a == Algorithm::newreno ? "newreno" : "cubic"; }

inline constexpr double kCubicC = 0.4;
inline constexpr double kCubicBeta = 0.7;
inline constexpr double kNewRenoBeta = 0.5;
inline constexpr std::uint64_t kInfiniteSsthresh = std::numeric_limits<std::uint64_t>::max();

/// Cubic window in segments, `t` seconds after the epoch start.
inline double cubic_window(double t, double k, double w_max) { return kCubicC * std::pow(t - k, 3) + w_max; }

/// Time for the cubic function to climb back to w_max after a reduction.
inline double cubic_k(double w_max) { return std::cbrt(w_max * (1.0 - kCubicBeta) / kCubicC); }

/// Window-based congestion controller (NewReno or Cubic) measured in bytes.
///
/// A loss episode starts at a congestion event and lasts until a packet
/// sent after the event is acknowledged; at most one reduction is applied
/// per episode. Episode membership is decided by packet number.
class CongestionController {
 public:
  CongestionController(Algorithm algorithm, std::uint32_t iw_packets, std::uint32_t mss)
      : algorithm_(algorithm), iw_packets_(iw_packets), mss_(mss) {
    if (iw_packets < 1) throw ValidationError("iw_packets", "must be >= 1");
    if (mss < 1) throw ValidationError("mss", "must be >= 1");
    cwnd_ = static_cast<std::uint64_t>(iw_packets) * mss;
  }

  Algorithm algorithm() const noexcept { return algorithm_; }
  std::uint32_t iw_packets() const noexcept { return iw_packets_; }
  std::uint32_t mss() const noexcept { return mss_; }
  std::uint64_t cwnd() const noexcept { return cwnd_; }
  std::uint64_t ssthresh() const noexcept { return ssthresh_; }
  bool in_slow_start() const noexcept { return cwnd_ < ssthresh_; }
  std::uint64_t min_cwnd() const noexcept { return 2ull * mss_; }

  double w_max_segments() const noexcept { return w_max_; }
  double k_seconds() const noexcept { return k_; }
  SimTime epoch_start() const noexcept { return epoch_start_; }
  std::uint64_t congestion_events() const noexcept { return events_; }

  /// True while packets numbered <= the recovery boundary are being acked.
  bool in_recovery() const noexcept { return in_recovery_; }
  bool sent_in_episode(std::uint64_t packet_number) const noexcept {
    return in_recovery_ && packet_number <= recovery_end_pn_;
  }

  /// Window growth for one acknowledged packet.
  std::uint64_t on_packet_acked(std::uint64_t packet_number, std::uint64_t acked_bytes, SimTime now) {
    if (in_recovery_) {
      if (packet_number <= recovery_end_pn_) return cwnd_;
      in_recovery_ = false;
    }
    if (cwnd_ < ssthresh_) {
      cwnd_ += acked_bytes;
      return cwnd_;
    }
    if (algorithm_ == Algorithm::newreno) {
      bytes_acked_ += acked_bytes;
      while (bytes_acked_ >= cwnd_) {
        bytes_acked_ -= cwnd_;
        cwnd_ += mss_;
      }
      return cwnd_;
    }
    // Reno-friendly estimate, grown per acked byte (alpha = 3(1-b)/(1+b)).
    const double alpha = 3.0 * (1.0 - kCubicBeta) / (1.0 + kCubicBeta);
    w_est_ += alpha * static_cast<double>(acked_bytes) / static_cast<double>(cwnd_);
    double t = to_seconds(now - epoch_start_);
    double target_segments = std::max(cubic_window(t, k_, w_max_), w_est_);
    auto target = static_cast<std::uint64_t>(target_segments * mss_);
    if (target > cwnd_) cwnd_ = target;
    return cwnd_;
  }

  /// Multiplicative decrease. `largest_sent_pn` bounds the new episode.
  /// Returns false (no change) if `lost_pn` belongs to the current episode.
  bool on_congestion_event(SimTime now, std::uint64_t lost_pn, std::uint64_t largest_sent_pn) {
    if (sent_in_episode(lost_pn)) return false;
    reduce(now);
    cwnd_ = std::max(ssthresh_, min_cwnd());
    enter_recovery(largest_sent_pn);
    return true;
  }

  /// Retransmission timeout: decrease ssthresh as for a congestion event,
  /// then restart slow start from the two-segment floor.
  std::uint64_t on_timeout(SimTime now, std::uint64_t largest_sent_pn) {
    if (cwnd_ > min_cwnd() || ssthresh_ == kInfiniteSsthresh) reduce(now);
    cwnd_ = min_cwnd();
    bytes_acked_ = 0;
    enter_recovery(largest_sent_pn);
    return cwnd_;
  }

 private:
  void reduce(SimTime now) {
    ++events_;
    bytes_acked_ = 0;
    if (algorithm_ == Algorithm::newreno) {
      ssthresh_ = std::max<std::uint64_t>(static_cast<std::uint64_t>(cwnd_ * kNewRenoBeta), min_cwnd());
      return;
    }
    w_max_ = static_cast<double>(cwnd_) / mss_;
    ssthresh_ = std::max<std::uint64_t>(static_cast<std::uint64_t>(cwnd_ * kCubicBeta), min_cwnd());
    k_ = cubic_k(w_max_);
    epoch_start_ = now;
    w_est_ = static_cast<double>(ssthresh_) / mss_;
  }

  void enter_recovery(std::uint64_t largest_sent_pn) {
    in_recovery_ = true;
    recovery_end_pn_ = largest_sent_pn;
  }

  Algorithm algorithm_;
  std::uint32_t iw_packets_;
  std::uint32_t mss_;
  std::uint64_t cwnd_;
  std::uint64_t ssthresh_ = kInfiniteSsthresh;
  std::uint64_t bytes_acked_ = 0;
  std::uint64_t events_ = 0;

  double w_max_ = 0.0;
  double k_ = 0.0;
  double w_est_ = 0.0;
  SimTime epoch_start_{0};

  bool in_recovery_ = false;
  std::uint64_t recovery_end_pn_ = 0;
};

}  // namespace satemu::cc

#pragma once

#include <algorithm>
#include <cstdint>

#include "satemu/time.hpp"
#include "satemu/transport/profile.hpp"

namespace satemu::transport {

struct AckDecision {
  bool now = false;
  SimTime deadline = kNever;  // meaningful when !now

  static AckDecision immediate() { return AckDecision{true, kNever}; }
  static AckDecision delayed(SimTime at) { return AckDecision{false, at}; }
};

/// Receiver-side ACK scheduling: acknowledge every `threshold` ack-eliciting
/// packets, immediately on reordering, otherwise after max_ack_delay.
class AckPolicy {
 public:
  explicit AckPolicy(AckFrequencyConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const AckFrequencyConfig& config() const noexcept { return cfg_; }
  std::uint32_t unacked() const noexcept { return unacked_; }

  AckDecision on_ack_eliciting(bool out_of_order, SimTime now) {
    ++unacked_;
    if (out_of_order || unacked_ >= cfg_.ack_eliciting_threshold) return AckDecision::immediate();
    if (deadline_ == kNever) deadline_ = now + cfg_.max_ack_delay;
    return AckDecision::delayed(deadline_);
  }

  void on_ack_sent() {
    unacked_ = 0;
    deadline_ = kNever;
  }

 private:
  AckFrequencyConfig cfg_;
  std::uint32_t unacked_ = 0;
  SimTime deadline_ = kNever;
};

}  // namespace satemu::transport

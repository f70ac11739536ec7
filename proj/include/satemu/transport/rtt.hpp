#pragma once

#include <algorithm>

#include "satemu/time.hpp"

namespace satemu::transport {

/// Smoothed RTT estimator (alpha 1/8, beta 1/4; first sample sets
/// srtt = sample and rttvar = sample / 2).
class RttEstimator {
 public:
  bool has_sample() const noexcept { return has_sample_; }
  SimTime smoothed() const noexcept { return smoothed_; }
  SimTime variance() const noexcept { return variance_; }
  SimTime min_rtt() const noexcept { return min_; }
  SimTime latest() const noexcept { return latest_; }

  /// `ack_delay` is subtracted when it does not push the sample below min_rtt.
  void update(SimTime sample, SimTime ack_delay = SimTime{0}) {
    if (sample <= SimTime{0}) sample = SimTime{1};
    latest_ = sample;
    if (!has_sample_) {
      has_sample_ = true;
      min_ = sample;
      smoothed_ = sample;
      variance_ = sample / 2;
      return;
    }
    min_ = std::min(min_, sample);
    SimTime adjusted = sample;
    if (sample - ack_delay >= min_) adjusted = sample - ack_delay;
    SimTime dev = smoothed_ > adjusted ? smoothed_ - adjusted : adjusted - smoothed_;
    variance_ = (3 * variance_ + dev) / 4;
    smoothed_ = (7 * smoothed_ + adjusted) / 8;
  }

 private:
  bool has_sample_ = false;
  SimTime smoothed_{0};
  SimTime variance_{0};
  SimTime min_{0};
  SimTime latest_{0};
};

}  // namespace satemu::transport

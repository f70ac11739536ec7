#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "satemu/emunet/simulator.hpp"
#include "satemu/errors.hpp"
#include "satemu/time.hpp"

namespace satemu::emunet {

enum class Direction { forward, ret };  // forward: server to client

inline const char* to_string(Direction d) { return d == Direction::forward ? "forward" : "return"; }

struct DelayStep {
  SimTime start;
  SimTime delay;
};

/// Piecewise-constant one-way delay. The first step starts at t=0 and start
/// times are strictly increasing.
class DelaySchedule {
 public:
  DelaySchedule() : steps_{{SimTime{0}, SimTime{0}}} {}
  DelaySchedule(SimTime constant) : steps_{{SimTime{0}, constant}} {}  // NOLINT: implicit by intent
  explicit DelaySchedule(std::vector<DelayStep> steps) : steps_(std::move(steps)) { validate(); }

  SimTime at(SimTime t) const {
    // Last step with start <= t.
    auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                               [](SimTime v, const DelayStep& s) { return v < s.start; });
    return std::prev(it)->delay;
  }

  const std::vector<DelayStep>& steps() const noexcept { return steps_; }
  bool is_static() const noexcept { return steps_.size() == 1; }

 private:
  void validate() const {
    if (steps_.empty()) throw ValidationError("delay_schedule", "schedule is empty");
    if (steps_.front().start != SimTime{0}) throw ValidationError("delay_schedule", "first step must start at t=0");
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      if (steps_[i].delay < SimTime{0}) throw ValidationError("delay_schedule", "negative delay");
      if (i > 0 && steps_[i].start <= steps_[i - 1].start)
        throw ValidationError("delay_schedule", "start times must be strictly increasing");
    }
  }

  std::vector<DelayStep> steps_;
};

struct LinkSpec {
  DelaySchedule one_way_delay;
  double loss_prob = 0.0;
  double rate_bps = 0.0;  // 0 = unlimited
  std::uint32_t queue_capacity_pkts = 64;
  Direction direction = Direction::forward;

  void validate() const {
    if (!(loss_prob >= 0.0 && loss_prob <= 1.0)) throw ValidationError("loss_prob", "must be within [0, 1]");
    if (rate_bps < 0.0) throw ValidationError("rate_bps", "must be >= 0");
    if (queue_capacity_pkts < 1) throw ValidationError("queue_capacity_pkts", "must be >= 1");
  }
};

inline SimTime delay_at(const LinkSpec& link, SimTime t) { return link.one_way_delay.at(t); }

/// Time to clock `size_bytes` onto a link, rounded up to whole microseconds.
inline SimTime serialization_time(std::uint32_t size_bytes, double rate_bps) {
  if (rate_bps <= 0.0) return SimTime{0};
  return SimTime{static_cast<std::int64_t>(std::ceil(size_bytes * 8.0 * 1e6 / rate_bps - 1e-9))};
}

enum class DropReason { queue_overflow, random_loss };

inline const char* to_string(DropReason r) {
  return r == DropReason::queue_overflow ? "queue_overflow" : "random_loss";
}

struct Delivered {
  SimTime arrival;
};
struct Dropped {
  DropReason reason;
};
using EnqueueOutcome = std::variant<Delivered, Dropped>;

struct LinkStats {
  std::uint64_t offered = 0;
  std::uint64_t delivered = 0;
  std::uint64_t delivered_bytes = 0;
  std::uint64_t random_losses = 0;
  std::uint64_t overflow_drops = 0;
};

/// Dynamic state of one directed link: drop-tail FIFO in front of a
/// fixed-rate serializer, followed by the propagation delay.
class Link {
 public:
  explicit Link(LinkSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const LinkSpec& spec() const noexcept { return spec_; }
  const LinkStats& stats() const noexcept { return stats_; }

  /// Admission, loss draw, and timing for a packet handed to the link at `now`.
  EnqueueOutcome enqueue(std::uint32_t size_bytes, SimTime now, Rng& rng) {
    if (size_bytes == 0) throw Error("enqueue: packet size must be positive");
    ++stats_.offered;
    while (!in_queue_.empty() && in_queue_.front() <= now) in_queue_.pop_front();
    if (in_queue_.size() >= spec_.queue_capacity_pkts) {
      ++stats_.overflow_drops;
      return Dropped{DropReason::queue_overflow};
    }
    if (spec_.loss_prob > 0.0 && rng.uniform() < spec_.loss_prob) {
      ++stats_.random_losses;
      return Dropped{DropReason::random_loss};
    }
    SimTime done = std::max(now, busy_until_) + serialization_time(size_bytes, spec_.rate_bps);
    busy_until_ = done;
    if (spec_.rate_bps > 0.0) in_queue_.push_back(done);
    SimTime arrival = std::max(done + delay_at(spec_, now), last_arrival_);
    last_arrival_ = arrival;
    ++stats_.delivered;
    stats_.delivered_bytes += size_bytes;
    return Delivered{arrival};
  }

  std::size_t queued(SimTime now) const {
    std::size_t n = 0;
    for (SimTime t : in_queue_) n += t > now ? 1 : 0;
    return n;
  }

 private:
  LinkSpec spec_;
  LinkStats stats_;
  SimTime busy_until_{0};
  SimTime last_arrival_{0};
  std::deque<SimTime> in_queue_;  // serialization completion times, ascending
};

}  // namespace satemu::emunet

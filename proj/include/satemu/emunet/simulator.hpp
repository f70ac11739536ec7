#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "satemu/errors.hpp"
#include "satemu/time.hpp"

namespace satemu::emunet {

/// Deterministic uniform source. Every random draw of one simulation goes
/// through a single instance, consumed in event order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 bits of precision; independent of the
  /// standard library's distribution implementations.
  double uniform() {
    ++draws_;
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  std::uint64_t draws() const noexcept { return draws_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

/// Clock plus event queue ordered by (time, insertion sequence).
class Simulator {
 public:
  using Handler = std::function<void()>;

  explicit Simulator(std::uint64_t seed = 1) : rng_(seed) {}
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  SimTime now() const noexcept { return now_; }
  Rng& rng() noexcept { return rng_; }

  void schedule_at(SimTime at, Handler handler) {
    if (at < now_) at = now_;
    queue_.push(Event{at, next_seq_++, std::move(handler)});
  }
  void schedule_in(SimTime delay, Handler handler) { schedule_at(now_ + delay, std::move(handler)); }

  /// Processes every event with time <= t_end, then sets the clock to t_end.
  /// Returns the number of events processed.
  std::uint64_t run_until(SimTime t_end) {
    if (t_end < now_) throw Error("run_until: t_end is before the current time");
    std::uint64_t processed = 0;
    while (!queue_.empty() && queue_.top().at <= t_end) {
      // priority_queue::top is const; the handler is moved out before pop.
      Event ev = std::move(const_cast<Event&>(queue_.top()));
      queue_.pop();
      now_ = ev.at;
      try {
        ev.handler();
      } catch (const SimulationError&) {
        throw;
      } catch (const std::exception& e) {
        throw SimulationError("event #" + std::to_string(ev.seq) + " at " +
                              std::to_string(ev.at.count()) + "us: " + e.what());
      }
      ++processed;
    }
    now_ = t_end;
    return processed;
  }

  std::size_t pending() const noexcept { return queue_.size(); }

 private:
  struct Event {
    SimTime at;
    std::uint64_t seq;
    Handler handler;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };

  SimTime now_{0};
  std::uint64_t next_seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  Rng rng_;
};

/// Re-armable one-shot timer. Keeps at most one live queue entry per
/// deadline; a fired entry whose deadline has moved is ignored or re-posted.
class Timer {
 public:
  Timer(Simulator& sim, std::function<void()> on_fire) : sim_(&sim), on_fire_(std::move(on_fire)) {}
  Timer(const Timer&) = delete;
  Timer& operator=(const Timer&) = delete;

  void arm(SimTime deadline) {
    deadline_ = deadline;
    if (scheduled_ != kNever && scheduled_ <= deadline) return;
    post(deadline);
  }
  void cancel() { deadline_ = kNever; }
  bool armed() const noexcept { return deadline_ != kNever; }
  SimTime deadline() const noexcept { return deadline_; }

 private:
  void post(SimTime at) {
    scheduled_ = at;
    std::uint64_t token = ++token_;
    sim_->schedule_at(at, [this, token] { fire(token); });
  }
  void fire(std::uint64_t token) {
    if (token != token_) return;
    scheduled_ = kNever;
    if (deadline_ == kNever) return;
    if (deadline_ > sim_->now()) {
      post(deadline_);
      return;
    }
    deadline_ = kNever;
    on_fire_();
  }

  Simulator* sim_;
  std::function<void()> on_fire_;
  SimTime deadline_ = kNever;
  SimTime scheduled_ = kNever;
  std::uint64_t token_ = 0;
};

}  // namespace satemu::emunet

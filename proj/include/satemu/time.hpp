#pragma once

#include <chrono>
#include <cstdint>
#include <limits>

namespace satemu {

/// Simulated time in integer microseconds. Used both as a time point
/// (offset from simulation start) and as a duration.
using SimTime = std::chrono::duration<std::int64_t, std::micro>;

inline constexpr SimTime kNever = SimTime::max();

constexpr double to_ms(SimTime t) { return static_cast<double>(t.count()) / 1000.0; }
constexpr double to_seconds(SimTime t) { return static_cast<double>(t.count()) / 1e6; }

constexpr SimTime from_ms(double ms) { return SimTime{static_cast<std::int64_t>(ms * 1000.0 + (ms >= 0 ? 0.5 : -0.5))}; }
constexpr SimTime from_seconds(double s) { return from_ms(s * 1000.0); }

}  // namespace satemu

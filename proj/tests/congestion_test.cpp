#include <cmath>
#include <cstdint>
#include <random>

#include <gtest/gtest.h>

#include "satemu/congestion.hpp"

using namespace satemu;
using namespace satemu::cc;
using namespace std::chrono_literals;

namespace {

constexpr std::uint32_t kMss = 1200;

// Bisection on C*K^3 = w_max*(1-beta); independent of cubic_k().
double k_by_bisection(double w_max) {
  double lo = 0.0, hi = 100.0;
  for (int i = 0; i < 200; ++i) {
    double mid = (lo + hi) / 2;
    (0.4 * mid * mid * mid < w_max * 0.3 ? lo : hi) = mid;
  }
  return (lo + hi) / 2;
}

/// Drives a controller out of slow start into congestion avoidance at
/// `segments`, returning the packet number to use for the next ack.
std::uint64_t enter_avoidance(CongestionController& c, std::uint64_t segments, SimTime now) {
  // Grow in slow start to 2*segments, then reduce once (NewReno halves).
  std::uint64_t pn = 0;
  while (c.cwnd() < 2 * segments * kMss) c.on_packet_acked(pn++, kMss, now);
  c.on_congestion_event(now, pn, pn);
  return pn + 1;
}

}  // namespace

TEST(CongestionInit, InitialWindows) {
  EXPECT_EQ(CongestionController(Algorithm::cubic, 10, kMss).cwnd(), 12000u);
  EXPECT_EQ(CongestionController(Algorithm::newreno, 100, kMss).cwnd(), 120000u);
  CongestionController tiny(Algorithm::newreno, 1, kMss);
  EXPECT_EQ(tiny.cwnd(), 1200u);
  EXPECT_EQ(tiny.ssthresh(), kInfiniteSsthresh);
  EXPECT_TRUE(tiny.in_slow_start());
  tiny.on_congestion_event(0s, 0, 0);
  EXPECT_EQ(tiny.cwnd(), 2400u);
}

TEST(CongestionInit, AlgorithmIndependentStart) {
  for (std::uint32_t iw : {1u, 10u, 100u}) {
    CongestionController a(Algorithm::newreno, iw, kMss), b(Algorithm::cubic, iw, kMss);
    EXPECT_EQ(a.cwnd(), b.cwnd());
    EXPECT_EQ(a.cwnd(), iw * kMss);
  }
}

TEST(CongestionInit, Errors) {
  EXPECT_THROW(CongestionController(Algorithm::cubic, 0, kMss), ValidationError);
  EXPECT_THROW(parse_algorithm("bbr"), UnknownAlgorithm);
  EXPECT_EQ(parse_algorithm("newreno"), Algorithm::newreno);
  EXPECT_EQ(parse_algorithm("cubic"), Algorithm::cubic);
}

TEST(SlowStart, GrowsByAckedBytes) {
  CongestionController c(Algorithm::newreno, 10, kMss);
  EXPECT_EQ(c.on_packet_acked(0, 1200, 0s), 13200u);
}

TEST(SlowStart, DoublingMatchesClosedForm) {
  for (auto algo : {Algorithm::newreno, Algorithm::cubic}) {
    for (std::uint32_t iw : {1u, 10u, 100u}) {
      CongestionController c(algo, iw, kMss);
      std::uint64_t pn = 0;
      for (int round = 0; round < 8; ++round) {
        const double oracle = iw * std::pow(2.0, round) * kMss;
        EXPECT_NEAR(static_cast<double>(c.cwnd()), oracle, oracle * 1e-9) << "round " << round;
        std::uint64_t packets = c.cwnd() / kMss;
        for (std::uint64_t i = 0; i < packets; ++i) c.on_packet_acked(pn++, kMss, 0s);
      }
    }
  }
}

TEST(NewRenoAvoidance, OneSegmentPerWindow) {
  CongestionController c(Algorithm::newreno, 10, kMss);
  std::uint64_t pn = enter_avoidance(c, 100, 0s);
  ASSERT_EQ(c.cwnd(), 120000u);
  ASSERT_FALSE(c.in_slow_start());
  for (int i = 0; i < 100; ++i) c.on_packet_acked(pn++, kMss, 0s);
  EXPECT_EQ(c.cwnd(), 121200u);
}

TEST(NewRenoAvoidance, MatchesBruteForceAccumulator) {
  CongestionController c(Algorithm::newreno, 10, kMss);
  std::uint64_t pn = enter_avoidance(c, 50, 0s);
  std::mt19937 gen(3);
  std::uniform_int_distribution<std::uint32_t> sizes(1, kMss);
  std::uint64_t cwnd = c.cwnd(), acc = 0;
  for (int i = 0; i < 20000; ++i) {
    std::uint32_t b = sizes(gen);
    // Oracle: add bytes one at a time; every full window of bytes adds one MSS.
    acc += b;
    while (acc >= cwnd) {
      acc -= cwnd;
      cwnd += kMss;
    }
    ASSERT_EQ(c.on_packet_acked(pn++, b, 0s), cwnd);
  }
}

TEST(CongestionEvent, ReductionFactors) {
  CongestionController reno(Algorithm::newreno, 100, kMss);
  reno.on_congestion_event(1s, 5, 10);
  EXPECT_EQ(reno.ssthresh(), 50u * kMss);
  EXPECT_EQ(reno.cwnd(), 50u * kMss);

  CongestionController cubic(Algorithm::cubic, 100, kMss);
  cubic.on_congestion_event(1s, 5, 10);
  EXPECT_EQ(cubic.ssthresh(), 70u * kMss);
  EXPECT_EQ(cubic.cwnd(), 70u * kMss);
  EXPECT_DOUBLE_EQ(cubic.w_max_segments(), 100.0);
  EXPECT_NEAR(cubic.k_seconds(), k_by_bisection(100.0), 1e-9);
  EXPECT_NEAR(cubic.k_seconds(), 4.217163326508746, 1e-9);
  EXPECT_EQ(cubic.epoch_start(), 1s);
}

TEST(CongestionEvent, FloorAtTwoSegments) {
  CongestionController c(Algorithm::newreno, 3, kMss);
  c.on_congestion_event(0s, 0, 0);
  EXPECT_EQ(c.cwnd(), 2u * kMss);
}

TEST(CongestionEvent, OneReductionPerEpisode) {
  CongestionController c(Algorithm::newreno, 100, kMss);
  EXPECT_TRUE(c.on_congestion_event(0s, 10, 99));
  EXPECT_FALSE(c.on_congestion_event(0s, 50, 99));  // same episode
  EXPECT_EQ(c.cwnd(), 60000u);
  // Acks for packets sent before the episode do not grow the window.
  c.on_packet_acked(20, kMss, 0s);
  EXPECT_EQ(c.cwnd(), 60000u);
  EXPECT_TRUE(c.in_recovery());
  // First ack of a packet sent after the reduction ends recovery.
  c.on_packet_acked(100, kMss, 0s);
  EXPECT_FALSE(c.in_recovery());
  EXPECT_TRUE(c.on_congestion_event(0s, 150, 200));
  EXPECT_EQ(c.cwnd(), 30000u);
}

TEST(Timeout, ResetsToFloor) {
  CongestionController cubic(Algorithm::cubic, 200, kMss);
  cubic.on_timeout(0s, 0);
  EXPECT_EQ(cubic.ssthresh(), 140u * kMss);
  EXPECT_EQ(cubic.cwnd(), 2u * kMss);
  EXPECT_TRUE(cubic.in_slow_start());

  CongestionController reno(Algorithm::newreno, 10, kMss);
  reno.on_timeout(0s, 0);
  EXPECT_EQ(reno.cwnd(), 2u * kMss);
  std::uint64_t ss = reno.ssthresh();
  reno.on_timeout(0s, 0);  // already at the floor
  EXPECT_EQ(reno.cwnd(), 2u * kMss);
  EXPECT_EQ(reno.ssthresh(), ss);
}

TEST(Cubic, ReachesWmaxAtK) {
  CongestionController c(Algorithm::cubic, 100, kMss);
  c.on_congestion_event(0s, 0, 0);
  SimTime at_k = from_seconds(c.k_seconds());
  c.on_packet_acked(1, kMss, at_k);
  EXPECT_NEAR(static_cast<double>(c.cwnd()), 100.0 * kMss, 100.0 * kMss * 1e-9);
}

TEST(Cubic, WindowFunctionShape) {
  const double w_max = 100.0, k = cubic_k(w_max);
  EXPECT_DOUBLE_EQ(cubic_window(k, k, w_max), w_max);
  EXPECT_NEAR(cubic_window(0.0, k, w_max), 0.7 * w_max, 1e-9);
  double prev = cubic_window(k, k, w_max);
  for (double t = k + 0.01; t < k + 10; t += 0.01) {
    double w = cubic_window(t, k, w_max);
    ASSERT_GT(w, prev);
    prev = w;
  }
  // Concave below K: increments shrink while approaching w_max.
  double d1 = cubic_window(1.0, k, w_max) - cubic_window(0.0, k, w_max);
  double d2 = cubic_window(k, k, w_max) - cubic_window(k - 1.0, k, w_max);
  EXPECT_GT(d1, d2);
}

TEST(Cubic, AvoidanceFollowsCubicCurveOverTime) {
  CongestionController c(Algorithm::cubic, 100, kMss);
  c.on_congestion_event(0s, 0, 0);
  std::uint64_t pn = 1;
  std::uint64_t prev = c.cwnd();
  for (int ms = 100; ms <= 8000; ms += 100) {
    c.on_packet_acked(pn++, kMss, std::chrono::milliseconds(ms));
    double t = ms / 1000.0;
    auto oracle = static_cast<std::uint64_t>(std::max(cubic_window(t, c.k_seconds(), 100.0), 0.0) * kMss);
    ASSERT_GE(c.cwnd(), prev);
    ASSERT_GE(c.cwnd(), std::min<std::uint64_t>(oracle, c.cwnd()));
    if (ms > 5000) {
      ASSERT_EQ(c.cwnd(), oracle) << ms;
    }
    prev = c.cwnd();
  }
}

TEST(Invariants, RandomEventSequences) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto algo = trial % 2 ? Algorithm::cubic : Algorithm::newreno;
    CongestionController c(algo, 1 + gen() % 100, kMss);
    std::uint64_t pn = 0;
    SimTime now{0};
    bool reduced = false;
    for (int step = 0; step < 2000; ++step) {
      now += SimTime{static_cast<std::int64_t>(gen() % 5000)};
      auto r = gen() % 100;
      std::uint64_t cwnd_before = c.cwnd();
      std::uint64_t ss_before = c.ssthresh();
      if (r < 2) {
        bool applied = c.on_congestion_event(now, pn > 0 ? gen() % pn : 0, pn);
        if (applied) {
          reduced = true;
          ASSERT_LE(c.ssthresh(), cwnd_before);
        }
      } else if (r < 3) {
        c.on_timeout(now, pn);
        reduced = true;
        ASSERT_EQ(c.cwnd(), c.min_cwnd());
      } else {
        c.on_packet_acked(pn, kMss, now);
        ASSERT_GE(c.cwnd(), cwnd_before);
        ASSERT_EQ(c.ssthresh(), ss_before);
      }
      ++pn;
      if (reduced) {
        ASSERT_GE(c.cwnd(), c.min_cwnd());
      }
    }
  }
}

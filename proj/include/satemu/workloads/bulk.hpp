#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "satemu/workloads/testbed.hpp"

namespace satemu::workloads {

inline constexpr SimTime kSampleInterval = std::chrono::milliseconds(100);
inline constexpr std::uint64_t kBulkTag = 0;

struct GoodputSample {
  std::int64_t t_ms;
  std::uint64_t interval_bytes;
  std::uint64_t cum_bytes;
};

struct CwndSample {
  std::int64_t t_ms;
  std::uint64_t cwnd_bytes;
  std::uint64_t ssthresh_bytes;  // cc::kInfiniteSsthresh before the first reduction
};

struct BulkResult {
  RunStatus status = RunStatus::ok;
  std::string error;
  double establishment_ms = -1;
  double ttfb_ms = -1;
  std::vector<GoodputSample> goodput;
  std::vector<CwndSample> cwnd;
  std::uint64_t total_bytes = 0;
};

/// Client requests once, the origin answers with an endless stream for the
/// whole run. Goodput is sampled at the client, cwnd at the forward sender
/// onto the satellite hop.
inline BulkResult run_bulk(const RunSetup& setup, EventLog* log = nullptr) {
  BulkResult r;
  Testbed bed(setup, log);
  Origin origin(bed, [](Connection& c, StreamId s, std::uint64_t) { c.send_unbounded(s); }, false);

  auto client = bed.make_client(setup.profile);
  std::uint64_t received = 0;
  SimTime first_byte = kNever;
  auto& cb = client->callbacks();
  cb.on_established = [&] {
    r.establishment_ms = to_ms(bed.sim().now() - client->handshake_started_at());
    send_message(*client, 0, kRequestBytes, kBulkTag, true);
  };
  cb.on_stream_data = [&](StreamId, std::uint64_t n, bool) {
    if (n > 0 && first_byte == kNever) first_byte = bed.sim().now();
    received += n;
  };
  cb.on_closed = [&](transport::CloseCode code) {
    if (r.status == RunStatus::ok) {
      r.status = RunStatus::failed;
      r.error = std::string("client connection closed: ") + transport::to_string(code);
    }
  };

  const std::int64_t samples = setup.duration / kSampleInterval;
  std::uint64_t last = 0;
  for (std::int64_t k = 1; k <= samples; ++k) {
    bed.sim().schedule_at(k * kSampleInterval, [&, k] {
      std::int64_t t_ms = k * (kSampleInterval.count() / 1000);
      r.goodput.push_back({t_ms, received - last, received});
      last = received;
      if (Connection* s = bed.forward_sender(origin.connections()))
        r.cwnd.push_back({t_ms, s->congestion().cwnd(), s->congestion().ssthresh()});
    });
  }

  client->connect();
  try {
    bed.sim().run_until(setup.duration);
  } catch (const Error& e) {
    r.status = RunStatus::failed;
    r.error = e.what();
  }
  if (first_byte != kNever) r.ttfb_ms = to_ms(first_byte - client->handshake_started_at());
  r.total_bytes = r.goodput.empty() ? 0 : r.goodput.back().cum_bytes;
  if (r.status == RunStatus::ok && r.establishment_ms < 0) {
    r.status = RunStatus::failed;
    r.error = "connection not established";
  }
  return r;
}

}  // namespace satemu::workloads

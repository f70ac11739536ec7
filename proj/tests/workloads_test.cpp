#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "satemu/workloads.hpp"

using namespace satemu;
using namespace satemu::workloads;
using namespace std::chrono_literals;

namespace {

RunSetup geo(bool pep, double loss = 0.0, TransportProfile prof = TransportProfile::quic()) {
  RunSetup s;
  s.pep.enabled = pep;
  s.path.loss_prob = loss;
  s.profile = prof;
  return s;
}

RunSetup leo(bool pep, double loss = 0.0) {
  RunSetup s = geo(pep, loss);
  s.path.satcom_one_way = emunet::DelaySchedule(16ms);
  return s;
}

SimTime first_time(const EventLog& log, const char* event) {
  auto r = log.named(event);
  return r.empty() ? kNever : r.front()->time;
}

}  // namespace

// ---------------------------------------------------------------------------
// page manifest

TEST(Manifest, DefaultShape) {
  PageManifest m = default_manifest();
  EXPECT_EQ(m.size(), 75u);
  EXPECT_EQ(m.total_bytes(), 880'000u);
  EXPECT_EQ(m.render_critical_count(), 3u);
  EXPECT_EQ(m.at(m.root_index()).size_bytes, 30'000u);
  EXPECT_TRUE(m.at(m.root_index()).render_critical);
  EXPECT_EQ(m.discovered_by(m.root_index()).size(), 74u);
  std::uint64_t tail = std::accumulate(kDefaultTailSizes.begin(), kDefaultTailSizes.end(), std::uint64_t{0});
  EXPECT_EQ(tail, 810'000u);
  EXPECT_TRUE(std::is_sorted(kDefaultTailSizes.rbegin(), kDefaultTailSizes.rend()));
}

TEST(Manifest, CommittedFileMatchesDefault) {
  PageManifest file = load_manifest(std::string(SATEMU_SOURCE_DIR) + "/data/default_manifest.json");
  PageManifest def = default_manifest();
  ASSERT_EQ(file.size(), def.size());
  for (std::size_t i = 0; i < def.size(); ++i) {
    EXPECT_EQ(file.at(i).id, def.at(i).id);
    EXPECT_EQ(file.at(i).size_bytes, def.at(i).size_bytes);
    EXPECT_EQ(file.at(i).render_critical, def.at(i).render_critical);
    EXPECT_EQ(file.at(i).discovered_by, def.at(i).discovered_by);
  }
}

TEST(Manifest, JsonRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "satemu_manifest_rt.json";
  save_manifest(default_manifest(), path.string());
  PageManifest back = load_manifest(path.string());
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(default_manifest()));
  std::filesystem::remove(path);
}

TEST(Manifest, Validation) {
  using O = ObjectSpec;
  EXPECT_THROW(PageManifest(std::vector<ObjectSpec>{}), ValidationError);
  EXPECT_THROW(PageManifest({O{"a", 1, true, std::nullopt}, O{"b", 1, false, std::nullopt}}), ValidationError);
  EXPECT_THROW(PageManifest({O{"a", 1, true, std::nullopt}, O{"a", 1, false, "a"}}), ValidationError);
  EXPECT_THROW(PageManifest({O{"a", 1, true, std::nullopt}, O{"b", 1, false, "zzz"}}), ValidationError);
  EXPECT_THROW(PageManifest({O{"a", 0, true, std::nullopt}}), ValidationError);
  // b and c reference each other; the root alone is not enough.
  EXPECT_THROW(PageManifest({O{"a", 1, true, std::nullopt}, O{"b", 1, false, "c"}, O{"c", 1, false, "b"}}),
               ValidationError);
  EXPECT_NO_THROW(PageManifest({O{"a", 1, true, std::nullopt}, O{"b", 1, false, "a"}, O{"c", 1, false, "b"}}));
}

TEST(Manifest, MalformedFileReportsLine) {
  auto path = std::filesystem::temp_directory_path() / "satemu_manifest_bad.json";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("{\n  \"objects\": [\n    {\"id\": \"a\",, }\n  ]\n}\n", f);
    std::fclose(f);
  }
  try {
    load_manifest(path.string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// path

TEST(Path, RttAndQueueSizing) {
  PathSpec geo_path;
  EXPECT_EQ(geo_path.base_rtt(), 580ms);
  // 20 Mbit/s x 580 ms / 8 / 1200 B = 1208.3 packets.
  EXPECT_EQ(geo_path.queue_for(20e6), 1209u);
  EXPECT_EQ(geo_path.queue_for(8e6), 484u);
  PathSpec leo_path;
  leo_path.satcom_one_way = emunet::DelaySchedule(16ms);
  EXPECT_EQ(leo_path.base_rtt(), 112ms);
  EXPECT_EQ(leo_path.queue_for(20e6), 234u);
  EXPECT_EQ(leo_path.queue_for(1e6), 64u);
  leo_path.queue_capacity_pkts = 500;
  EXPECT_EQ(leo_path.queue_for(20e6), 500u);
  auto hops = geo_path.hops();
  ASSERT_EQ(hops.size(), 3u);
  EXPECT_EQ(hops[1].toward_client.rate_bps, 20e6);
  EXPECT_EQ(hops[1].toward_server.rate_bps, 8e6);
  EXPECT_EQ(hops[0].toward_client.one_way_delay.at(0ms), 0ms);
  EXPECT_EQ(hops[2].toward_server.one_way_delay.at(0ms), 40ms);
}

// ---------------------------------------------------------------------------
// bulk

TEST(Bulk, NonPepGeoTimings) {
  BulkResult r = run_bulk(geo(false));
  ASSERT_EQ(r.status, RunStatus::ok) << r.error;
  EXPECT_GE(r.establishment_ms, 580.0);
  EXPECT_LE(r.establishment_ms, 590.0);
  // Handshake round trip plus request/response round trip.
  EXPECT_GE(r.ttfb_ms, 1160.0);
  EXPECT_LE(r.ttfb_ms, 1170.0);
}

TEST(Bulk, SeriesShapeAndConservation) {
  for (bool pep : {false, true}) {
    BulkResult r = run_bulk(geo(pep));
    ASSERT_EQ(r.status, RunStatus::ok) << r.error;
    ASSERT_EQ(r.goodput.size(), 150u);
    EXPECT_EQ(r.goodput.front().t_ms, 100);
    EXPECT_EQ(r.goodput.back().t_ms, 15000);
    std::uint64_t sum = 0, prev = 0;
    for (const auto& g : r.goodput) {
      sum += g.interval_bytes;
      EXPECT_EQ(g.cum_bytes, sum);
      EXPECT_GE(g.cum_bytes, prev);
      prev = g.cum_bytes;
    }
    EXPECT_EQ(sum, r.total_bytes);
    EXPECT_LE(r.total_bytes, 37'500'000u);
    for (std::size_t i = 0; i < r.cwnd.size(); ++i) {
      EXPECT_EQ(r.cwnd[i].t_ms % 100, 0);
      if (i > 0) {
        EXPECT_EQ(r.cwnd[i].t_ms, r.cwnd[i - 1].t_ms + 100);
      }
    }
    EXPECT_EQ(r.cwnd.back().t_ms, 15000);
  }
}

TEST(Bulk, LateSteadyStateNearLinkRate) {
  for (auto prof : {TransportProfile::quic(), TransportProfile::tcp()}) {
    BulkResult r = run_bulk(geo(false, 0.0, prof));
    ASSERT_EQ(r.status, RunStatus::ok) << r.error;
    std::uint64_t late = 0;
    for (const auto& g : r.goodput)
      if (g.t_ms > 12000) late += g.interval_bytes;
    double mbps = late * 8.0 / 3.0 / 1e6;
    EXPECT_GT(mbps, 19.0) << transport::to_string(prof.kind);
    EXPECT_LE(mbps, 20.01) << transport::to_string(prof.kind);
  }
}

TEST(Bulk, PepSenderStartsWithSatelliteWindow) {
  BulkResult r = run_bulk(geo(true));
  ASSERT_EQ(r.status, RunStatus::ok) << r.error;
  ASSERT_FALSE(r.cwnd.empty());
  EXPECT_GE(r.cwnd.front().cwnd_bytes, 120'000u);
  // Default proxy mode: the client's handshake completes at the ST proxy.
  EXPECT_LT(r.establishment_ms, 5.0);
}

TEST(Bulk, PepAheadEarlyAfterTtfbAlignment) {
  BulkResult pep = run_bulk(geo(true));
  BulkResult non = run_bulk(geo(false));
  ASSERT_EQ(pep.status, RunStatus::ok);
  ASSERT_EQ(non.status, RunStatus::ok);
  auto cum_at = [](const BulkResult& r, double t_ms) -> double {
    std::uint64_t v = 0;
    for (const auto& g : r.goodput)
      if (g.t_ms <= t_ms) v = g.cum_bytes;
    return static_cast<double>(v);
  };
  for (int t = 600; t < 5000; t += 100) {
    double p = cum_at(pep, pep.ttfb_ms + t);
    double n = cum_at(non, non.ttfb_ms + t);
    EXPECT_GT(p, n) << "t=" << t;
  }
}

TEST(Bulk, ConnectTimeoutFailsRun) {
  RunSetup s = geo(false, 1.0);
  BulkResult r = run_bulk(s);
  EXPECT_EQ(r.status, RunStatus::failed);
  EXPECT_NE(r.error.find("connect_timeout"), std::string::npos) << r.error;
  EXPECT_EQ(r.total_bytes, 0u);
  EXPECT_EQ(r.goodput.size(), 150u);
}

TEST(Bulk, DeterministicPerSeed) {
  BulkResult a = run_bulk([] { auto s = geo(true, 0.01); s.seed = 7; return s; }());
  BulkResult b = run_bulk([] { auto s = geo(true, 0.01); s.seed = 7; return s; }());
  BulkResult c = run_bulk([] { auto s = geo(true, 0.01); s.seed = 8; return s; }());
  ASSERT_EQ(a.goodput.size(), b.goodput.size());
  for (std::size_t i = 0; i < a.goodput.size(); ++i) EXPECT_EQ(a.goodput[i].cum_bytes, b.goodput[i].cum_bytes);
  EXPECT_EQ(a.ttfb_ms, b.ttfb_ms);
  EXPECT_NE(a.total_bytes, c.total_bytes);
}

// ---------------------------------------------------------------------------
// web

TEST(Web, MetricOrderingAndCompleteness) {
  for (auto mode : {HttpMode::h3, HttpMode::h1})
    for (bool pep : {false, true})
      for (double loss : {0.0, 0.01}) {
        WebResult r = run_web(geo(pep, loss), mode, default_manifest());
        ASSERT_EQ(r.status, RunStatus::ok) << r.error;
        EXPECT_LE(r.rs_ms, r.fcp_ms);
        EXPECT_LE(r.fcp_ms, r.plt_ms);
        EXPECT_EQ(r.plt_ms, *std::max_element(r.object_ms.begin(), r.object_ms.end()));
        for (double t : r.object_ms) EXPECT_GE(t, 0.0);
      }
}

TEST(Web, H1ResponseStartIsTwoRoundTrips) {
  WebResult r = run_web(geo(false), HttpMode::h1, default_manifest());
  ASSERT_EQ(r.status, RunStatus::ok) << r.error;
  EXPECT_GE(r.rs_ms, 1160.0);
  EXPECT_LE(r.rs_ms, 1170.0);
}

TEST(Web, RootOnlyPage) {
  PageManifest m({ObjectSpec{"index.html", 1000, true, std::nullopt}});
  for (auto mode : {HttpMode::h3, HttpMode::h1}) {
    WebResult r = run_web(geo(false), mode, m);
    ASSERT_EQ(r.status, RunStatus::ok) << r.error;
    EXPECT_EQ(r.rs_ms, r.fcp_ms);
    EXPECT_EQ(r.fcp_ms, r.plt_ms);
    EXPECT_EQ(r.plt_ms, r.object_ms[0]);
  }
}

TEST(Web, H3AtMostSixStreamsOnOneConnection) {
  EventLog log;
  WebResult r = run_web(geo(false, 0.01), HttpMode::h3, default_manifest(), &log);
  ASSERT_EQ(r.status, RunStatus::ok) << r.error;
  std::set<std::int64_t> conns;
  int active = 0, peak = 0, requests = 0;
  for (const auto& rec : log.records()) {
    if (rec.category != "http") continue;
    if (rec.event == "request_sent") {
      conns.insert(rec.fields["conn"].get<std::int64_t>());
      ++requests;
      peak = std::max(peak, ++active);
    } else if (rec.event == "object_complete") {
      --active;
    }
  }
  EXPECT_EQ(conns.size(), 1u);
  EXPECT_EQ(requests, 75);
  EXPECT_EQ(peak, 6);
  EXPECT_EQ(active, 0);
}

TEST(Web, H1AtMostSixSerialConnections) {
  EventLog log;
  WebResult r = run_web(geo(false, 0.01), HttpMode::h1, default_manifest(), &log);
  ASSERT_EQ(r.status, RunStatus::ok) << r.error;
  EXPECT_EQ(log.named("connection_opened").size(), 6u);
  // Each connection carries one request at a time.
  std::map<std::int64_t, std::int64_t> outstanding;
  std::map<std::int64_t, std::int64_t> conn_of_object;
  for (const auto& rec : log.records()) {
    if (rec.category != "http") continue;
    if (rec.event == "request_sent") {
      auto c = rec.fields["conn"].get<std::int64_t>();
      EXPECT_EQ(outstanding[c], 0);
      ++outstanding[c];
      conn_of_object[rec.fields["object"].get<std::int64_t>()] = c;
    } else if (rec.event == "object_complete") {
      --outstanding[conn_of_object.at(rec.fields["object"].get<std::int64_t>())];
    }
  }
  // Only one connection exists until the root completes.
  auto opened = log.named("connection_opened");
  SimTime root_done = kNever;
  for (const auto* rec : log.named("object_complete"))
    if (rec->fields["object"] == 0) root_done = rec->time;
  EXPECT_LT(opened[0]->time, root_done);
  for (std::size_t i = 1; i < opened.size(); ++i) EXPECT_GE(opened[i]->time, root_done);
}

TEST(Web, PreambleGatesFirstRequest) {
  for (bool pep : {false, true}) {
    EventLog log;
    WebResult r = run_web(geo(pep), HttpMode::h3, default_manifest(), &log);
    ASSERT_EQ(r.status, RunStatus::ok) << r.error;
    SimTime pre = first_time(log, "preamble_received");
    SimTime req = first_time(log, "request_sent");
    ASSERT_NE(pre, kNever);
    EXPECT_EQ(pre, req);
    if (!pep) {
      // Travels with the server's handshake flight: no extra round trip.
      EXPECT_GE(pre, 580ms);
      EXPECT_LE(pre, 585ms);
    } else {
      // Relayed hop by hop after the proxies' handshakes.
      SimTime relayed = kNever;
      for (const auto* rec : log.named("preamble_relayed")) relayed = std::min(relayed, rec->time);
      EXPECT_GT(pre, 580ms);
      EXPECT_LE(relayed, pre);
    }
  }
}

TEST(Web, GeoOrderings) {
  auto plt = [](bool pep, HttpMode m, double loss) {
    WebResult r = run_web(geo(pep, loss), m, default_manifest());
    EXPECT_EQ(r.status, RunStatus::ok) << r.error;
    return r;
  };
  WebResult h3 = plt(false, HttpMode::h3, 0.0);
  WebResult h3p = plt(true, HttpMode::h3, 0.0);
  WebResult h1 = plt(false, HttpMode::h1, 0.0);
  EXPECT_LT(h3.plt_ms, h1.plt_ms);
  EXPECT_LT(h3p.plt_ms, h3.plt_ms);
  EXPECT_GT(h3p.rs_ms, h3.rs_ms);
}

TEST(Web, LeoIsFaster) {
  WebResult g = run_web(geo(false), HttpMode::h3, default_manifest());
  WebResult l = run_web(leo(false), HttpMode::h3, default_manifest());
  EXPECT_LT(l.plt_ms, g.plt_ms);
  EXPECT_GE(l.rs_ms, 224.0);
  EXPECT_LE(l.rs_ms, 240.0);
}

TEST(Web, FailedConnectionFailsRun) {
  WebResult r = run_web(geo(false, 1.0), HttpMode::h3, default_manifest());
  EXPECT_EQ(r.status, RunStatus::failed);
  EXPECT_FALSE(r.error.empty());
}

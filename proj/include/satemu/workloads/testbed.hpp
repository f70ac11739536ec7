#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "satemu/emunet.hpp"
#include "satemu/event_log.hpp"
#include "satemu/pep/proxy.hpp"
#include "satemu/transport/connection.hpp"

namespace satemu::workloads {

using emunet::NodeId;
using transport::CcTuning;
using transport::Connection;
using transport::MessageMark;
using transport::StreamId;
using transport::TransportProfile;

inline constexpr std::uint64_t kRequestBytes = 100;
inline constexpr std::uint64_t kPreambleBytes = 100;
inline constexpr StreamId kPreambleStream = 3;

/// Client - ST - GW - server path. The SAT hop is the only rate-limited and
/// lossy hop; the LAN hop has no delay.
struct PathSpec {
  emunet::DelaySchedule satcom_one_way{std::chrono::milliseconds(250)};
  SimTime internet_one_way = std::chrono::milliseconds(40);
  double loss_prob = 0.0;
  double forward_rate_bps = 20e6;
  double return_rate_bps = 8e6;
  /// 0 = one path BDP of 1200-byte packets, at least 64.
  std::uint32_t queue_capacity_pkts = 0;

  /// Round trip over the whole path, from the delays in effect at t=0.
  SimTime base_rtt() const { return 2 * (satcom_one_way.at(SimTime{0}) + internet_one_way); }

  std::uint32_t queue_for(double rate_bps) const {
    if (queue_capacity_pkts > 0) return queue_capacity_pkts;
    double pkts = rate_bps * to_seconds(base_rtt()) / 8.0 / 1200.0;
    return std::max<std::uint32_t>(64, static_cast<std::uint32_t>(std::ceil(pkts)));
  }

  std::vector<emunet::HopSpec> hops() const {
    emunet::HopSpec lan{"lan", {}, {}};
    emunet::HopSpec sat{"sat", {}, {}};
    sat.toward_client.one_way_delay = satcom_one_way;
    sat.toward_client.rate_bps = forward_rate_bps;
    sat.toward_client.queue_capacity_pkts = queue_for(forward_rate_bps);
    sat.toward_client.loss_prob = loss_prob;
    sat.toward_server.one_way_delay = satcom_one_way;
    sat.toward_server.rate_bps = return_rate_bps;
    sat.toward_server.queue_capacity_pkts = queue_for(return_rate_bps);
    sat.toward_server.loss_prob = loss_prob;
    emunet::HopSpec net{"net", {}, {}};
    net.toward_client.one_way_delay = emunet::DelaySchedule(internet_one_way);
    net.toward_server.one_way_delay = emunet::DelaySchedule(internet_one_way);
    return {lan, sat, net};
  }
};

struct PepSetup {
  bool enabled = false;
  pep::Mode mode = pep::Mode::standard;
  CcTuning sat_segment{cc::Algorithm::newreno, 100};
  CcTuning terrestrial_segment{};
};

/// Everything one run needs besides the workload itself.
struct RunSetup {
  PathSpec path;
  TransportProfile profile = TransportProfile::quic();
  CcTuning client_cc{};
  CcTuning server_cc{};
  PepSetup pep;
  std::uint64_t seed = 1;
  SimTime duration = std::chrono::seconds(15);
  /// Sees every packet offered to every link; for tracing and checks.
  std::function<void(const emunet::LinkEvent&)> link_observer;
};

enum class RunStatus { ok, failed };

inline const char* to_string(RunStatus s) { return s == RunStatus::ok ? "ok" : "failed"; }

/// One fresh simulation: network, transport stack and (optionally) the two
/// proxies at ST and GW.
class Testbed {
 public:
  Testbed(const RunSetup& setup, EventLog* log)
      : sim_(setup.seed), net_(sim_, setup.path.hops()), stack_(net_, log), setup_(setup) {
    if (log || setup_.link_observer) {
      net_.observe_links([this, log](const emunet::LinkEvent& e) {
        if (log && e.dropped)
          log->record(e.at, "link", "packet_dropped",
                      {{"hop", e.hop}, {"direction", e.direction == emunet::Direction::forward ? "forward" : "return"},
                       {"packet", e.packet_id}, {"size", e.size_bytes}, {"reason", emunet::to_string(e.reason)}});
        if (setup_.link_observer) setup_.link_observer(e);
      });
    }
    if (setup.pep.enabled) {
      for (NodeId node : {emunet::kProxySt, emunet::kProxyGw}) {
        pep::ProxyConfig cfg;
        cfg.node = node;
        cfg.mode = setup.pep.mode;
        cfg.next_hop = node == emunet::kProxySt ? emunet::kProxyGw : emunet::kServer;
        // Both proxy endpoints of the satellite segment get its tuning.
        cfg.incoming_cc = node == emunet::kProxyGw ? setup.pep.sat_segment : setup.pep.terrestrial_segment;
        cfg.onward_cc = node == emunet::kProxySt ? setup.pep.sat_segment : setup.pep.terrestrial_segment;
        proxies_.push_back(std::make_unique<pep::Proxy>(stack_, cfg));
      }
    }
  }
  Testbed(const Testbed&) = delete;
  Testbed& operator=(const Testbed&) = delete;

  emunet::Simulator& sim() noexcept { return sim_; }
  transport::Net& net() noexcept { return net_; }
  transport::Stack& stack() noexcept { return stack_; }
  const RunSetup& setup() const noexcept { return setup_; }
  std::size_t proxy_count() const noexcept { return proxies_.size(); }
  pep::Proxy& proxy(std::size_t i) { return *proxies_.at(i); }

  /// Where the client addresses its connections.
  NodeId first_hop() const { return proxies_.empty() ? emunet::kServer : emunet::kProxySt; }

  std::unique_ptr<Connection> make_client(TransportProfile profile) {
    return std::make_unique<Connection>(stack_, transport::Role::client, emunet::kClient, first_hop(),
                                        stack_.next_conn_id(), profile, setup_.client_cc);
  }

  /// The endpoint that sends forward data onto the satellite hop for the
  /// first client connection: the GW proxy with a PEP, the origin otherwise.
  Connection* forward_sender(const std::vector<std::unique_ptr<Connection>>& origin_conns) {
    if (!proxies_.empty()) {
      pep::Proxy& gw = *proxies_.back();
      return gw.splice_count() > 0 ? &gw.splice(0).incoming() : nullptr;
    }
    return origin_conns.empty() ? nullptr : origin_conns.front().get();
  }

  void log(const char* category, const char* event, nlohmann::ordered_json fields) {
    if (auto* l = stack_.log()) l->record(sim_.now(), category, event, std::move(fields));
  }

 private:
  emunet::Simulator sim_;
  transport::Net net_;
  transport::Stack stack_;
  RunSetup setup_;
  std::vector<std::unique_ptr<pep::Proxy>> proxies_;
};

/// Origin server application. Each request is a message whose mark tag names
/// what to send back; the responder writes the response on the same stream.
class Origin {
 public:
  using Responder = std::function<void(Connection&, StreamId, std::uint64_t tag)>;

  Origin(Testbed& bed, Responder responder, bool control_preamble)
      : bed_(&bed), responder_(std::move(responder)), preamble_(control_preamble) {
    bed.stack().listen(emunet::kServer, [this](const transport::NetPacket& p) { accept(p); });
  }

  const std::vector<std::unique_ptr<Connection>>& connections() const noexcept { return conns_; }

 private:
  void accept(const transport::NetPacket& p) {
    transport::ConnectionOptions opts;
    opts.allow_half_rtt_data = preamble_;
    auto c = std::make_unique<Connection>(bed_->stack(), transport::Role::server, emunet::kServer, p.src,
                                          p.payload.conn, p.payload.offer, bed_->setup().server_cc, opts);
    Connection* raw = c.get();
    raw->callbacks().on_message = [this, raw](StreamId s, MessageMark m) { responder_(*raw, s, m.tag); };
    if (preamble_ && raw->profile().kind == transport::Kind::quic) raw->send(kPreambleStream, kPreambleBytes, true);
    conns_.push_back(std::move(c));
  }

  Testbed* bed_;
  Responder responder_;
  bool preamble_;
  std::vector<std::unique_ptr<Connection>> conns_;
};

/// Writes `bytes` on a stream with a message mark at its end.
inline void send_message(Connection& c, StreamId stream, std::uint64_t bytes, std::uint64_t tag, bool fin) {
  const auto* s = c.send_stream(stream);
  std::uint64_t end = (s ? s->written : 0) + bytes;
  MessageMark mark{end, tag};
  c.send(stream, bytes, fin, std::span<const MessageMark>(&mark, 1));
}

}  // namespace satemu::workloads

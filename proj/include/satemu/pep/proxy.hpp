#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "satemu/errors.hpp"
#include "satemu/transport/connection.hpp"

namespace satemu::pep {

using emunet::NodeId;
using transport::CcTuning;
using transport::CloseCode;
using transport::Connection;
using transport::MessageMark;
using transport::StreamId;

/// default: answer the incoming handshake at once and connect onward in
/// parallel. h3_capable: complete the incoming handshake only once the onward
/// one has completed.
enum class Mode { standard, h3_capable };

inline const char* to_string(Mode m) { return m == Mode::standard ? "default" : "h3_capable"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "default") return Mode::standard;
  if (s == "h3_capable") return Mode::h3_capable;
  throw ValidationError("pep.mode", "unknown mode '" + std::string(s) + "'");
}

inline constexpr std::uint64_t kDefaultBufferCap = 16'000'000;

struct ProxyConfig {
  NodeId node = emunet::kProxySt;
  Mode mode = Mode::standard;
  NodeId next_hop = emunet::kServer;
  /// Controller for the proxy's endpoint of the incoming and onward segments.
  CcTuning incoming_cc;
  CcTuning onward_cc;
  std::uint64_t buffer_cap = kDefaultBufferCap;

  void validate() const {
    if (next_hop == node) throw ValidationError("pep.next_hop", "must differ from the proxy node");
    if (buffer_cap < 2 * 1200) throw ValidationError("pep.buffer_cap", "too small");
    if (incoming_cc.iw_packets < 1 || onward_cc.iw_packets < 1) throw ValidationError("pep.iw", "must be >= 1");
  }
};

struct SpliceStats {
  std::uint64_t relayed_to_onward = 0;
  std::uint64_t relayed_to_incoming = 0;
  std::uint64_t peak_buffered = 0;
};

class Proxy;

/// One incoming connection spliced onto its onward connection. Stream ids are
/// the same on both legs and so are stream offsets, so message marks carry over.
class Splice {
 public:
  enum class Lane { to_onward, to_incoming };

  Splice(Proxy& proxy, const transport::NetPacket& first);
  Splice(const Splice&) = delete;
  Splice& operator=(const Splice&) = delete;

  Connection& incoming() { return *incoming_; }
  Connection& onward() { return *onward_; }
  const Connection& incoming() const { return *incoming_; }
  const Connection& onward() const { return *onward_; }
  Mode mode() const noexcept { return mode_; }
  bool closed() const noexcept { return closed_; }
  const SpliceStats& stats() const noexcept { return stats_; }

  /// Bytes waiting at the proxy, in its relay queues and in the outgoing
  /// connections' unsent stream buffers.
  std::uint64_t buffered() const {
    return to_onward_.queued + to_incoming_.queued + incoming_->unsent_bytes() + onward_->unsent_bytes();
  }

  /// Queues stream bytes for the other leg and forwards what the other leg's
  /// window allows. Throws ProxyOverload past the buffer cap.
  void relay(Lane lane, StreamId stream, std::uint64_t bytes, bool fin);
  void relay(Lane lane, StreamId stream, std::uint64_t bytes, bool fin, const std::vector<MessageMark>& marks);

 private:
  struct StreamQueue {
    std::uint64_t queued = 0;
    std::uint64_t forwarded = 0;  // stream offset reached on the outgoing leg
    bool fin = false;
    bool fin_forwarded = false;
    std::map<std::uint64_t, std::uint64_t> marks;
  };
  struct LaneState {
    std::map<StreamId, StreamQueue> streams;
    std::uint64_t queued = 0;
    std::uint64_t drained = 0;
  };

  LaneState& lane_state(Lane l) { return l == Lane::to_onward ? to_onward_ : to_incoming_; }
  Connection& out_conn(Lane l) { return l == Lane::to_onward ? *onward_ : *incoming_; }
  Connection& in_conn(Lane l) { return l == Lane::to_onward ? *incoming_ : *onward_; }

  void pump(Lane lane);
  void on_onward_established();
  void on_leg_closed(bool incoming_leg, CloseCode code);
  void abort(CloseCode code, const std::string& why);
  void log(const char* event, nlohmann::ordered_json fields);

  Proxy* proxy_;
  Mode mode_;
  std::unique_ptr<Connection> incoming_;
  std::unique_ptr<Connection> onward_;
  LaneState to_onward_;
  LaneState to_incoming_;
  SpliceStats stats_;
  bool closed_ = false;
  bool pumping_ = false;
};

/// Connection-splitting proxy listening at one node of the chain.
class Proxy {
 public:
  Proxy(transport::Stack& stack, ProxyConfig cfg) : stack_(&stack), cfg_(cfg) {
    cfg_.validate();
    stack.listen(cfg_.node, [this](const transport::NetPacket& pkt) {
      splices_.push_back(std::make_unique<Splice>(*this, pkt));
    });
  }
  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  const ProxyConfig& config() const noexcept { return cfg_; }
  transport::Stack& stack() noexcept { return *stack_; }
  std::size_t splice_count() const noexcept { return splices_.size(); }
  Splice& splice(std::size_t i) { return *splices_.at(i); }
  const Splice& splice(std::size_t i) const { return *splices_.at(i); }

 private:
  transport::Stack* stack_;
  ProxyConfig cfg_;
  std::vector<std::unique_ptr<Splice>> splices_;
};

// ---------------------------------------------------------------------------

inline Splice::Splice(Proxy& proxy, const transport::NetPacket& first) : proxy_(&proxy) {
  const ProxyConfig& cfg = proxy.config();
  transport::Stack& stack = proxy.stack();
  const transport::TransportProfile profile = first.payload.offer;
  // A TCP PEP always answers locally; only QUIC splices can be h3-capable.
  mode_ = profile.kind == transport::Kind::tcp ? Mode::standard : cfg.mode;

  transport::ConnectionOptions in_opts;
  in_opts.gate_handshake = mode_ == Mode::h3_capable;
  in_opts.receive_window = cfg.buffer_cap / 2;
  incoming_ = std::make_unique<Connection>(stack, transport::Role::server, cfg.node, first.src, first.payload.conn,
                                           profile, cfg.incoming_cc, in_opts);
  transport::ConnectionOptions out_opts;
  out_opts.receive_window = cfg.buffer_cap / 2;
  onward_ = std::make_unique<Connection>(stack, transport::Role::client, cfg.node, cfg.next_hop, stack.next_conn_id(),
                                         profile, cfg.onward_cc, out_opts);

  auto& in_cb = incoming_->callbacks();
  in_cb.on_stream_chunk = [this](StreamId s, std::uint64_t n, bool fin, const std::vector<MessageMark>& m) {
    relay(Lane::to_onward, s, n, fin, m);
  };
  in_cb.on_send_progress = [this] { pump(Lane::to_incoming); };
  in_cb.on_established = [this] { pump(Lane::to_incoming); };
  in_cb.on_closed = [this](CloseCode c) { on_leg_closed(true, c); };

  auto& out_cb = onward_->callbacks();
  out_cb.on_stream_chunk = [this](StreamId s, std::uint64_t n, bool fin, const std::vector<MessageMark>& m) {
    relay(Lane::to_incoming, s, n, fin, m);
  };
  out_cb.on_send_progress = [this] { pump(Lane::to_onward); };
  out_cb.on_established = [this] { on_onward_established(); };
  out_cb.on_closed = [this](CloseCode c) { on_leg_closed(false, c); };

  log("incoming_accepted", {{"conn", incoming_->id()},
                            {"onward_conn", onward_->id()},
                            {"node", cfg.node},
                            {"mode", to_string(mode_)},
                            {"profile", transport::to_string(profile.kind)}});
  onward_->connect();
}

inline void Splice::log(const char* event, nlohmann::ordered_json fields) {
  transport::Stack& stack = proxy_->stack();
  if (auto* l = stack.log()) l->record(stack.sim().now(), "pep", event, std::move(fields));
}

inline void Splice::relay(Lane lane, StreamId stream, std::uint64_t bytes, bool fin) {
  relay(lane, stream, bytes, fin, {});
}

inline void Splice::relay(Lane lane, StreamId stream, std::uint64_t bytes, bool fin,
                          const std::vector<MessageMark>& marks) {
  if (closed_) return;
  LaneState& ls = lane_state(lane);
  StreamQueue& q = ls.streams[stream];
  for (const auto& m : marks) q.marks[m.end] = m.tag;
  q.queued += bytes;
  ls.queued += bytes;
  if (fin) q.fin = true;
  std::uint64_t total = buffered();
  stats_.peak_buffered = std::max(stats_.peak_buffered, total);
  if (total > proxy_->config().buffer_cap) {
    abort(CloseCode::proxy_overload, "buffer " + std::to_string(total) + " B exceeds cap");
    throw ProxyOverload("proxy at node " + std::to_string(proxy_->config().node) + ": " + std::to_string(total) +
                        " B buffered, cap " + std::to_string(proxy_->config().buffer_cap) + " B");
  }
  pump(lane);
}

inline void Splice::pump(Lane lane) {
  if (closed_ || pumping_) return;
  pumping_ = true;
  LaneState& ls = lane_state(lane);
  Connection& out = out_conn(lane);
  const std::uint64_t drained_before = ls.drained;
  for (auto& [id, q] : ls.streams) {
    if (out.closed()) break;
    // Keep at most one window of data inside the outgoing connection so the
    // rest stays here and throttles the incoming leg.
    std::uint64_t unsent = out.unsent_bytes();
    std::uint64_t window = std::min(out.congestion().cwnd(), proxy_->config().buffer_cap / 4);
    std::uint64_t room = window > unsent ? window - unsent : 0;
    std::uint64_t n = std::min(q.queued, room);
    bool fin = q.fin && !q.fin_forwarded && n == q.queued;
    // A mark travels with the chunk that completes its message.
    std::vector<MessageMark> marks;
    while (!q.marks.empty() && q.marks.begin()->first <= q.forwarded + n) {
      marks.push_back({q.marks.begin()->first, q.marks.begin()->second});
      q.marks.erase(q.marks.begin());
    }
    if (n == 0 && !fin && marks.empty()) continue;
    out.send(id, n, fin, marks);
    q.queued -= n;
    q.forwarded += n;
    ls.queued -= n;
    ls.drained += n;
    (lane == Lane::to_onward ? stats_.relayed_to_onward : stats_.relayed_to_incoming) += n;
    if (fin) {
      q.fin_forwarded = true;
      if (lane == Lane::to_incoming && id % 4 == 3) log("preamble_relayed", {{"conn", incoming_->id()}, {"stream", id}});
    }
  }
  pumping_ = false;
  if (ls.drained != drained_before && !closed_)
    in_conn(lane).set_receive_limit(ls.drained + proxy_->config().buffer_cap / 2);
}

inline void Splice::on_onward_established() {
  log("onward_established", {{"conn", incoming_->id()}, {"onward_conn", onward_->id()}});
  if (mode_ == Mode::h3_capable) incoming_->release_handshake();
  pump(Lane::to_onward);
}

inline void Splice::on_leg_closed(bool incoming_leg, CloseCode code) {
  if (closed_) return;
  if (incoming_leg) {
    abort(code, "incoming leg closed");
  } else {
    abort(code == CloseCode::connect_timeout ? CloseCode::proxy_error : code, "onward leg closed");
  }
}

inline void Splice::abort(CloseCode code, const std::string& why) {
  if (closed_) return;
  closed_ = true;
  log("splice_closed", {{"conn", incoming_->id()}, {"node", proxy_->config().node}, {"code", transport::to_string(code)}, {"reason", why}});
  incoming_->close(code);
  onward_->close(code);
}

}  // namespace satemu::pep

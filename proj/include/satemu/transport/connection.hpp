#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "satemu/congestion.hpp"
#include "satemu/emunet.hpp"
#include "satemu/errors.hpp"
#include "satemu/event_log.hpp"
#include "satemu/time.hpp"
#include "satemu/transport/ack_policy.hpp"
#include "satemu/transport/frames.hpp"
#include "satemu/transport/loss.hpp"
#include "satemu/transport/profile.hpp"
#include "satemu/transport/rtt.hpp"
#include "satemu/transport/streams.hpp"

namespace satemu::transport {

using emunet::NodeId;
using Net = emunet::Network<Frame>;
using NetPacket = emunet::Packet<Frame>;

enum class Role { client, server };
enum class HandshakeState { idle, in_progress, complete };

enum class CloseCode : int { none = 0, connect_timeout = 1, proxy_error = 2, proxy_overload = 3, application = 4 };

inline const char* to_string(CloseCode c) {
  switch (c) {
    case CloseCode::none: return "none";
    case CloseCode::connect_timeout: return "connect_timeout";
    case CloseCode::proxy_error: return "proxy_error";
    case CloseCode::proxy_overload: return "proxy_overload";
    case CloseCode::application: return "application";
  }
  return "unknown";
}

inline constexpr SimTime kInitialTimeout = std::chrono::seconds(1);
inline constexpr SimTime kHandshakeGiveUp = std::chrono::seconds(10);
inline constexpr SimTime kMinRto = std::chrono::milliseconds(200);
inline constexpr SimTime kMinPto = std::chrono::milliseconds(10);
inline constexpr SimTime kMaxBackoff = std::chrono::seconds(60);
inline constexpr std::size_t kMaxAckRanges = 32;

class Connection;

/// Per-simulation transport context: demultiplexes packets arriving at each
/// node to the connection endpoints bound there, and hands unknown
/// connection attempts to the node's listener.
class Stack {
 public:
  using Acceptor = std::function<void(const NetPacket&)>;

  explicit Stack(Net& net, EventLog* log = nullptr) : net_(&net), log_(log), nodes_(net.node_count()) {
    for (NodeId n = 0; n < net.node_count(); ++n)
      net.attach(n, [this, n](NetPacket&& pkt) { dispatch(n, pkt); });
  }
  Stack(const Stack&) = delete;
  Stack& operator=(const Stack&) = delete;

  Net& net() noexcept { return *net_; }
  emunet::Simulator& sim() noexcept { return net_->sim(); }
  EventLog* log() noexcept { return log_; }
  ConnId next_conn_id() noexcept { return next_conn_id_++; }

  /// The acceptor must create (and thereby bind) a server connection for
  /// the packet's connection id; the packet is then delivered to it.
  void listen(NodeId node, Acceptor acceptor) { nodes_.at(node).acceptor = std::move(acceptor); }

  void bind(NodeId node, ConnId id, Connection* c) { nodes_.at(node).conns[id] = c; }
  void unbind(NodeId node, ConnId id) { nodes_.at(node).conns.erase(id); }

 private:
  struct NodeState {
    std::map<ConnId, Connection*> conns;
    Acceptor acceptor;
  };

  inline void dispatch(NodeId node, const NetPacket& pkt);

  Net* net_;
  EventLog* log_;
  std::vector<NodeState> nodes_;
  ConnId next_conn_id_ = 1;
};

struct ConnectionOptions {
  /// Server only: allow stream data alongside the final handshake reply,
  /// before the client's completing flight arrives.
  bool allow_half_rtt_data = false;
  /// Server only: withhold the final handshake reply until release_handshake().
  bool gate_handshake = false;
  /// Initial connection-level receive credit in bytes.
  std::uint64_t receive_window = kUnbounded;
};

struct ConnectionStats {
  std::uint64_t packets_sent = 0;       // ack-eliciting short-header packets
  std::uint64_t ack_packets_sent = 0;   // ACK-only packets
  std::uint64_t handshake_packets_sent = 0;
  std::uint64_t packets_lost = 0;
  std::uint64_t retransmitted_bytes = 0;
  std::uint64_t stream_bytes_sent = 0;  // new bytes only
  std::uint64_t probes_sent = 0;
  std::uint64_t pto_fired = 0;
  std::uint64_t rto_fired = 0;
  std::uint64_t delayed_ack_fired = 0;
  std::uint64_t data_before_handshake = 0;  // must stay 0
  std::uint64_t max_inflight_excess = 0;    // max(bytes_in_flight - cwnd) after a window-limited send
};

/// One endpoint of a reliable, stream-oriented connection (QUIC-like or
/// TCP-like profile) running over emunet.
class Connection {
 public:
  struct Callbacks {
    std::function<void()> on_established;
    std::function<void(StreamId, std::uint64_t new_bytes, bool fin)> on_stream_data;
    std::function<void(StreamId, MessageMark)> on_message;
    /// When set, replaces on_stream_data and on_message: newly contiguous
    /// bytes arrive together with the message marks they complete.
    std::function<void(StreamId, std::uint64_t new_bytes, bool fin, const std::vector<MessageMark>&)> on_stream_chunk;
    std::function<void(CloseCode)> on_closed;
    /// Invoked after acknowledgments or losses change sending capacity.
    std::function<void()> on_send_progress;
  };

  Connection(Stack& stack, Role role, NodeId local, NodeId peer, ConnId id, TransportProfile profile,
             CcTuning tuning, ConnectionOptions opts = {})
      : stack_(&stack),
        role_(role),
        local_(local),
        peer_(peer),
        id_(id),
        profile_(profile),
        opts_(opts),
        cc_(tuning.algorithm, tuning.iw_packets, profile.max_payload_bytes),
        ack_policy_(profile.kind == Kind::tcp ? AckFrequencyConfig{2, profile.ack_frequency.max_ack_delay}
                                              : profile.ack_frequency),
        hs_timer_(stack.sim(), [this] { on_handshake_timer(); }),
        loss_timer_(stack.sim(), [this] { on_loss_timer(); }),
        ack_timer_(stack.sim(), [this] { on_ack_timer(); }) {
    profile_.validate();
    stack_->bind(local_, id_, this);
  }
  ~Connection() { stack_->unbind(local_, id_); }
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  Callbacks& callbacks() noexcept { return cb_; }

  // -- observers ---------------------------------------------------------
  ConnId id() const noexcept { return id_; }
  Role role() const noexcept { return role_; }
  NodeId local() const noexcept { return local_; }
  NodeId peer() const noexcept { return peer_; }
  const TransportProfile& profile() const noexcept { return profile_; }
  HandshakeState handshake_state() const noexcept { return hs_state_; }
  bool established() const noexcept { return hs_state_ == HandshakeState::complete; }
  bool closed() const noexcept { return closed_; }
  CloseCode close_code() const noexcept { return close_code_; }
  SimTime handshake_started_at() const noexcept { return hs_started_; }
  SimTime established_at() const noexcept { return established_at_; }
  const cc::CongestionController& congestion() const noexcept { return cc_; }
  const RttEstimator& rtt() const noexcept { return rtt_; }
  const ConnectionStats& stats() const noexcept { return stats_; }
  std::uint64_t bytes_in_flight() const noexcept { return bytes_in_flight_; }
  std::size_t outstanding_packets() const noexcept { return ledger_.size(); }
  PacketNumber next_packet_number() const noexcept { return next_pn_; }
  bool handshake_gated() const noexcept { return gate_pending_; }
  std::uint64_t peer_max_data() const noexcept { return peer_max_data_; }
  std::uint64_t received_data_total() const noexcept { return recv_data_total_; }

  const SendStream* send_stream(StreamId id) const {
    auto it = send_.find(id);
    return it == send_.end() ? nullptr : &it->second;
  }
  const RecvStream* recv_stream(StreamId id) const {
    auto it = recv_.find(id);
    return it == recv_.end() ? nullptr : &it->second;
  }
  std::vector<StreamId> recv_stream_ids() const {
    std::vector<StreamId> ids;
    for (const auto& [id, s] : recv_) ids.push_back(id);
    return ids;
  }

  /// Bytes written by the application and not yet packetized (bounded streams).
  std::uint64_t unsent_bytes() const {
    std::uint64_t n = 0;
    for (const auto& [id, s] : send_)
      if (!s.unbounded) n += s.unsent();
    return n;
  }

  bool valid_send_stream(StreamId id) const {
    if (profile_.kind == Kind::tcp) return id == 0;
    auto type = id % 4;
    return role_ == Role::client ? (type == 0 || type == 2) : (type == 0 || type == 1 || type == 3);
  }

  // -- operations --------------------------------------------------------

  /// Client: starts the handshake with the first flight at the current time.
  void connect() {
    if (role_ != Role::client) throw Error("connect: only the client initiates");
    if (hs_state_ != HandshakeState::idle) return;
    hs_state_ = HandshakeState::in_progress;
    hs_started_ = now();
    hs_last_progress_ = now();
    hs_step_ = 0;
    send_handshake(0);
  }

  /// Appends `bytes` to a stream, optionally closing it and marking message
  /// boundaries (absolute end offsets). Data leaves only once the handshake
  /// allows it. Returns the accepted byte count.
  std::uint64_t send(StreamId stream, std::uint64_t bytes, bool fin, std::span<const MessageMark> marks = {}) {
    if (!valid_send_stream(stream))
      throw UnknownStream("stream " + std::to_string(stream) + " is not valid for this " + to_string(profile_.kind) +
                          " endpoint");
    SendStream& s = send_stream_for(stream);
    if (s.fin || s.unbounded) throw SendAfterFin("stream " + std::to_string(stream) + " already finished");
    s.written += bytes;
    s.fin = fin;
    for (const auto& m : marks) s.marks[m.end] = m.tag;
    if (closed_) return bytes;
    flush();
    return bytes;
  }

  /// Marks a stream as an endless source (bulk transfer sender).
  void send_unbounded(StreamId stream) {
    if (!valid_send_stream(stream)) throw UnknownStream("stream " + std::to_string(stream) + " is not valid");
    SendStream& s = send_stream_for(stream);
    if (s.fin) throw SendAfterFin("stream " + std::to_string(stream) + " already finished");
    s.unbounded = true;
    flush();
  }

  /// Server with gate_handshake: lets the withheld final handshake reply go out.
  void release_handshake() {
    gate_open_ = true;
    if (gate_pending_ && !closed_) {
      gate_pending_ = false;
      send_handshake_reply(profile_.handshake_exchanges() - 1);
    }
  }

  /// Raises the connection-level receive credit. Sends a window update when
  /// the peer may be blocked or the credit grew substantially.
  void set_receive_limit(std::uint64_t limit) {
    if (limit <= local_max_data_) return;
    local_max_data_ = limit;
    if (closed_ || hs_state_ == HandshakeState::idle) return;
    std::uint64_t window = opts_.receive_window == kUnbounded ? 0 : opts_.receive_window;
    bool peer_blocked = recv_data_total_ >= advertised_max_data_;
    if (peer_blocked || local_max_data_ - advertised_max_data_ >= window / 8) send_ack_only(true);
  }

  /// Closes the connection and notifies the peer (one close packet).
  void close(CloseCode code) {
    if (closed_) return;
    Frame f = base_frame(FrameKind::close);
    f.close_code = static_cast<int>(code);
    transmit(std::move(f), kAckPacketBytes);
    shutdown(code, false);
  }

  void on_packet(const NetPacket& pkt) {
    if (closed_) return;
    const Frame& f = pkt.payload;
    if (f.kind != FrameKind::close && (peer_max_data_ == kUnbounded || f.max_data > peer_max_data_))
      peer_max_data_ = f.max_data;
    switch (f.kind) {
      case FrameKind::close:
        log("connectivity", "connection_closed", {{"conn", id_}, {"code", to_string(CloseCode(f.close_code))}});
        shutdown(CloseCode(f.close_code), true);
        return;
      case FrameKind::handshake:
        on_handshake_packet(f);
        return;
      case FrameKind::short_header:
        on_short_packet(f);
        return;
    }
  }

 private:
  struct Delivery {
    StreamId stream;
    std::uint64_t bytes = 0;
    bool fin = false;
    std::vector<MessageMark> marks;
  };

  enum class LossTimerMode { none, loss_time, pto, rto, blocked };

  SimTime now() const { return stack_->sim().now(); }
  bool is_client() const { return role_ == Role::client; }
  bool is_quic() const { return profile_.kind == Kind::quic; }

  void log(const char* category, const char* event, nlohmann::ordered_json fields) {
    if (auto* l = stack_->log()) l->record(now(), category, event, std::move(fields));
  }

  SendStream& send_stream_for(StreamId id) {
    auto [it, inserted] = send_.try_emplace(id);
    if (inserted) it->second.id = id;
    return it->second;
  }

  Frame base_frame(FrameKind kind) const {
    Frame f;
    f.conn = id_;
    f.kind = kind;
    f.from_client = is_client();
    f.max_data = local_max_data_;
    return f;
  }

  void transmit(Frame f, std::uint32_t size) { stack_->net().send(local_, peer_, size, std::move(f)); }

  // -- handshake ---------------------------------------------------------

  std::uint32_t handshake_size(int step) const {
    if (is_quic()) return kQuicHandshakeBytes;
    return step == 0 ? kTcpSynBytes : kTlsFlightBytes;
  }

  void send_handshake(int step) {
    Frame f = base_frame(FrameKind::handshake);
    f.hs_step = static_cast<std::uint8_t>(step);
    f.offer = profile_;
    hs_last_tx_ = now();
    ++stats_.handshake_packets_sent;
    log("transport", "packet_sent", {{"conn", id_}, {"type", "handshake"}, {"step", step}, {"role", "client"}});
    transmit(std::move(f), handshake_size(step));
    arm_handshake_timer();
  }

  void send_handshake_reply(int step) {
    Frame f = base_frame(FrameKind::handshake);
    f.hs_step = static_cast<std::uint8_t>(step);
    ++stats_.handshake_packets_sent;
    log("transport", "packet_sent", {{"conn", id_}, {"type", "handshake"}, {"step", step}, {"role", "server"}});
    transmit(std::move(f), handshake_size(step));
    if (step == profile_.handshake_exchanges() - 1) {
      if (!final_reply_sent_) reply_sent_at_ = now();
      final_reply_sent_ = true;
      if (opts_.allow_half_rtt_data) flush();
    }
  }

  void arm_handshake_timer() {
    SimTime backoff = std::min<SimTime>(kInitialTimeout * (1LL << std::min(hs_retries_, 6)), kMaxBackoff);
    hs_timer_.arm(std::min(hs_last_tx_ + backoff, hs_last_progress_ + kHandshakeGiveUp));
  }

  void on_handshake_timer() {
    if (closed_ || hs_state_ != HandshakeState::in_progress || !is_client()) return;
    if (now() - hs_last_progress_ >= kHandshakeGiveUp) {
      log("connectivity", "connect_timeout", {{"conn", id_}});
      shutdown(CloseCode::connect_timeout, true);
      return;
    }
    ++hs_retries_;
    send_handshake(hs_step_);
  }

  void on_handshake_packet(const Frame& f) {
    const int last = profile_.handshake_exchanges() - 1;
    if (role_ == Role::server) {
      if (!f.from_client) return;
      if (hs_state_ == HandshakeState::idle) {
        hs_state_ = HandshakeState::in_progress;
        hs_started_ = now();
      }
      if (f.hs_step == last && opts_.gate_handshake && !gate_open_) {
        if (!gate_pending_) log("transport", "handshake_withheld", {{"conn", id_}});
        gate_pending_ = true;
        return;
      }
      send_handshake_reply(f.hs_step);
      return;
    }
    if (f.from_client || hs_state_ != HandshakeState::in_progress || f.hs_step != hs_step_) return;
    hs_last_progress_ = now();
    hs_retries_ = 0;
    if (hs_step_ < last) {
      ++hs_step_;
      send_handshake(hs_step_);
      return;
    }
    rtt_.update(now() - hs_last_tx_);
    hs_timer_.cancel();
    need_hs_done_packet_ = true;
    complete_handshake();
  }

  void complete_handshake() {
    hs_state_ = HandshakeState::complete;
    established_at_ = now();
    log("transport", "handshake_complete",
        {{"conn", id_}, {"role", is_client() ? "client" : "server"}, {"duration_us", (now() - hs_started_).count()}});
    if (cb_.on_established) cb_.on_established();
    flush();
  }

  bool can_send_app_data() const {
    if (closed_) return false;
    if (hs_state_ == HandshakeState::complete) return true;
    return role_ == Role::server && final_reply_sent_ && opts_.allow_half_rtt_data;
  }

  // -- receive path ------------------------------------------------------

  void on_short_packet(const Frame& f) {
    if (role_ == Role::server && hs_state_ != HandshakeState::complete) {
      if (!final_reply_sent_) return;
      if (!rtt_.has_sample()) rtt_.update(now() - reply_sent_at_);
      complete_handshake();
      if (closed_) return;
    }

    std::vector<Delivery> deliveries;
    bool eliciting = f.ack_eliciting();
    bool duplicate = false;
    bool out_of_order = false;
    if (eliciting) {
      duplicate = received_pns_.contains(f.pn);
      if (!duplicate) {
        if (largest_received_ != kNoPacketNumber && f.pn != largest_received_ + 1) out_of_order = true;
        received_pns_.insert(f.pn, f.pn + 1);
        if (largest_received_ == kNoPacketNumber || f.pn > largest_received_) {
          largest_received_ = f.pn;
          largest_received_at_ = now();
        }
      }
      log("transport", "packet_received", {{"conn", id_}, {"pn", f.pn}, {"frames", f.streams.size()}});
    }

    if (f.ack) on_ack(*f.ack);
    if (closed_) return;

    bool data_out_of_order = false;
    if (!duplicate)
      for (const auto& sf : f.streams) data_out_of_order |= on_stream_frame(sf, deliveries);

    if (eliciting) {
      if (duplicate) {
        ack_now_ = true;
      } else {
        bool reordered = out_of_order || (profile_.kind == Kind::tcp && data_out_of_order);
        AckDecision d = ack_policy_.on_ack_eliciting(reordered, now());
        if (d.now) {
          ack_now_ = true;
        } else {
          ack_timer_.arm(d.deadline);
        }
      }
    }

    for (const auto& d : deliveries) {
      if (closed_) return;
      if (d.fin) log("transport", "stream_fin", {{"conn", id_}, {"stream", d.stream}});
      if (cb_.on_stream_chunk) {
        cb_.on_stream_chunk(d.stream, d.bytes, d.fin, d.marks);
        continue;
      }
      if (d.bytes > 0 && cb_.on_stream_data) cb_.on_stream_data(d.stream, d.bytes, false);
      for (const auto& m : d.marks) {
        if (closed_) return;
        if (cb_.on_message) cb_.on_message(d.stream, m);
      }
      if (d.fin && !closed_ && cb_.on_stream_data) cb_.on_stream_data(d.stream, 0, true);
    }
    flush();
  }

  /// Returns true if the frame arrived out of order, filled a hole, or left one.
  bool on_stream_frame(const StreamFrame& sf, std::vector<Delivery>& out) {
    auto [it, inserted] = recv_.try_emplace(sf.stream);
    RecvStream& rs = it->second;
    if (inserted) rs.id = sf.stream;
    const std::uint64_t delivered_before = rs.delivered;
    const bool had_hole = rs.received.size() > 1 || (!rs.received.empty() && rs.received.ranges().begin()->first > 0);
    const std::uint64_t end = sf.offset + sf.length;
    if (sf.fin) rs.final_size = end;
    rs.received.insert(sf.offset, end);
    if (end > rs.highest) {
      recv_data_total_ += end - rs.highest;
      rs.highest = end;
    }
    for (const auto& m : sf.marks)
      if (m.end > rs.delivered) rs.marks[m.end] = m.tag;

    rs.delivered = rs.received.contiguous_end(rs.delivered);
    Delivery d{sf.stream, rs.delivered - delivered_before, false, {}};
    while (!rs.marks.empty() && rs.marks.begin()->first <= rs.delivered) {
      d.marks.push_back(MessageMark{rs.marks.begin()->first, rs.marks.begin()->second});
      rs.marks.erase(rs.marks.begin());
    }
    if (rs.final_size && rs.delivered == *rs.final_size && !rs.fin_delivered) {
      rs.fin_delivered = true;
      d.fin = true;
    }
    if (d.bytes > 0 || d.fin || !d.marks.empty()) out.push_back(std::move(d));
    return sf.offset > delivered_before || had_hole || rs.received.size() > 1;
  }

  // -- acknowledgment processing ------------------------------------------

  void on_ack(const AckFrame& ack) {
    if (ack.ranges.empty()) return;
    if (next_pn_ == 0 || ack.largest() >= next_pn_)
      throw AckOfUnsentPacket("conn " + std::to_string(id_) + ": ack of unsent packet " +
                              std::to_string(ack.largest()));

    std::vector<SentPacket> acked;
    for (const auto& [first, last] : ack.ranges) {
      for (auto it = ledger_.lower_bound(first); it != ledger_.end() && it->first <= last;) {
        acked.push_back(std::move(it->second));
        it = ledger_.erase(it);
      }
    }
    std::sort(acked.begin(), acked.end(), [](const SentPacket& a, const SentPacket& b) { return a.pn < b.pn; });

    bool fast_retransmit = false;
    if (profile_.kind == Kind::tcp) {
      if (ack.cumulative > last_cumulative_) {
        last_cumulative_ = ack.cumulative;
        dupacks_ = 0;
        fast_retransmit_done_ = false;
      } else if (!acked.empty() && !ledger_.empty()) {
        ++dupacks_;
      }
      if (dupacks_ >= 3 && !fast_retransmit_done_) {
        fast_retransmit = true;
        fast_retransmit_done_ = true;
      }
    }

    if (acked.empty()) {
      if (fast_retransmit) detect_losses(true);
      return;
    }

    const SentPacket& newest = acked.back();
    if (largest_acked_ == kNoPacketNumber || newest.pn > largest_acked_) {
      largest_acked_ = newest.pn;
      if (newest.pn == ack.largest()) rtt_.update(now() - newest.sent, is_quic() ? ack.ack_delay : SimTime{0});
    }

    std::uint64_t cwnd_before = cc_.cwnd();
    std::uint64_t delivered = 0;
    for (const auto& p : acked) {
      if (p.in_flight) bytes_in_flight_ -= p.size;
      for (const auto& sf : p.frames) {
        SendStream& s = send_stream_for(sf.stream);
        s.acked.insert(sf.offset, sf.offset + sf.length);
        if (sf.fin) s.fin_acked = true;
      }
      if (is_client()) hs_confirmed_ = true;
      if (p.in_flight) {
        cc_.on_packet_acked(p.pn, p.size, now());
        delivered += p.size;
      }
    }
    if (prr_active_) {
      if (cc_.in_recovery()) {
        prr_delivered_ += delivered;
        prr_last_delivered_ = delivered;
      } else {
        prr_active_ = false;
      }
    }
    if (cc_.cwnd() != cwnd_before) log_cwnd();
    pto_count_ = 0;
    rto_base_ = now();
    detect_losses(fast_retransmit);
    send_progress_ = true;
  }

  void detect_losses(bool fast_retransmit) {
    std::vector<PacketNumber> lost;
    if (is_quic()) {
      SimTime srtt = rtt_.has_sample() ? rtt_.smoothed() : kInitialTimeout;
      SimTime latest = rtt_.has_sample() ? rtt_.latest() : kInitialTimeout;
      LossScan scan = detect_quic_losses(ledger_, largest_acked_, now(), latest, srtt);
      loss_time_ = scan.next_loss_time;
      lost = std::move(scan.lost);
    } else {
      lost = detect_tcp_losses(ledger_, largest_acked_, fast_retransmit);
    }
    if (lost.empty()) return;
    PacketNumber largest_lost = lost.back();
    const std::uint64_t flight_before = bytes_in_flight_;
    for (PacketNumber pn : lost) declare_lost(pn);
    if (cc_.on_congestion_event(now(), largest_lost, next_pn_ - 1)) {
      prr_active_ = true;
      prr_delivered_ = 0;
      prr_out_ = 0;
      prr_last_delivered_ = 0;
      recover_fs_ = std::max<std::uint64_t>(flight_before, 1);
      log("recovery", "congestion_event", {{"conn", id_}, {"lost_pn", largest_lost}});
      log_cwnd();
    }
    send_progress_ = true;
  }

  void declare_lost(PacketNumber pn) {
    auto node = ledger_.extract(pn);
    if (node.empty()) return;
    SentPacket& p = node.mapped();
    if (p.in_flight) bytes_in_flight_ -= p.size;
    requeue(p);
    ++stats_.packets_lost;
    log("recovery", "packet_lost", {{"conn", id_}, {"pn", pn}, {"size", p.size}});
  }

  void requeue(const SentPacket& p) {
    for (const auto& sf : p.frames) {
      SendStream& s = send_stream_for(sf.stream);
      s.acked.for_each_gap(sf.offset, sf.offset + sf.length,
                           [&](std::uint64_t b, std::uint64_t e) { s.retransmit.insert(b, e); });
      if (sf.fin && !s.fin_acked) s.fin_lost = true;
    }
    if (p.hs_done && !hs_confirmed_) need_hs_done_packet_ = true;
  }

  // -- send path -----------------------------------------------------------

  std::uint64_t flow_credit() const {
    if (peer_max_data_ == kUnbounded) return kUnbounded;
    return peer_max_data_ > sent_data_total_ ? peer_max_data_ - sent_data_total_ : 0;
  }

  bool has_retransmit() const {
    for (const auto& [id, s] : send_)
      if (s.has_retransmit()) return true;
    return false;
  }

  bool has_new_data() const {
    std::uint64_t credit = flow_credit();
    for (const auto& [id, s] : send_) {
      if (s.fin_pending()) return true;
      if (s.unsent() > 0 && credit > 0) return true;
    }
    return false;
  }

  bool flow_blocked() const {
    if (flow_credit() > 0) return false;
    for (const auto& [id, s] : send_)
      if (s.unsent() > 0) return true;
    return false;
  }

  void append_frame(std::vector<StreamFrame>& frames, SendStream& s, std::uint64_t offset, std::uint64_t len) {
    StreamFrame sf;
    sf.stream = s.id;
    sf.offset = offset;
    sf.length = static_cast<std::uint32_t>(len);
    sf.fin = s.fin && !s.unbounded && offset + len == s.written;
    sf.marks = s.marks_in(offset, offset + len);
    if (sf.fin) {
      s.fin_sent = true;
      s.fin_lost = false;
    }
    frames.push_back(std::move(sf));
  }

  /// Fills up to one payload's worth of frames: retransmissions first, then
  /// new data round-robin across streams.
  std::vector<StreamFrame> build_frames(bool allow_new) {
    const std::uint64_t budget = profile_.max_payload_bytes;
    std::uint64_t used = 0;
    std::vector<StreamFrame> frames;
    for (auto& [id, s] : send_) {
      while (used < budget && !s.retransmit.empty()) {
        auto [b, e] = *s.retransmit.ranges().begin();
        std::uint64_t gap_b = 0, gap_e = 0;
        bool found = false;
        s.acked.for_each_gap(b, e, [&](std::uint64_t gb, std::uint64_t ge) {
          if (!found) {
            found = true;
            gap_b = gb;
            gap_e = ge;
          }
        });
        if (!found) {
          s.retransmit.erase(b, e);
          continue;
        }
        s.retransmit.erase(b, gap_b);
        std::uint64_t len = std::min(gap_e - gap_b, budget - used);
        s.retransmit.erase(gap_b, gap_b + len);
        append_frame(frames, s, gap_b, len);
        stats_.retransmitted_bytes += len;
        used += len;
      }
      if (used < budget && s.fin_lost && s.retransmit.empty() && s.next_offset == s.written && !s.fin_acked) {
        append_frame(frames, s, s.written, 0);
      }
    }
    if (!allow_new || used >= budget) return frames;

    std::uint64_t credit = flow_credit();
    std::vector<SendStream*> order;
    for (auto it = send_.lower_bound(rr_cursor_); it != send_.end(); ++it) order.push_back(&it->second);
    for (auto it = send_.begin(); it != send_.end() && it->first < rr_cursor_; ++it) order.push_back(&it->second);
    bool first = true;
    for (SendStream* s : order) {
      if (used >= budget) break;
      std::uint64_t len = std::min({s->unsent(), budget - used, credit});
      if (len == 0 && !s->fin_pending()) continue;
      std::uint64_t offset = s->next_offset;
      s->next_offset += len;
      if (s->unbounded) s->written = s->next_offset;
      if (s->fin_pending() || len > 0) append_frame(frames, *s, offset, len);
      sent_data_total_ += len;
      stats_.stream_bytes_sent += len;
      credit = credit == kUnbounded ? credit : credit - len;
      used += len;
      if (first) {
        rr_cursor_ = s->id + 1;
        first = false;
      }
    }
    return frames;
  }

  void attach_ack(Frame& f) {
    if (largest_received_ == kNoPacketNumber) return;
    AckFrame ack;
    for (auto it = received_pns_.ranges().rbegin(); it != received_pns_.ranges().rend() && ack.ranges.size() < kMaxAckRanges;
         ++it)
      ack.ranges.emplace_back(it->first, it->second - 1);
    ack.ack_delay = now() - largest_received_at_;
    if (auto it = recv_.find(0); it != recv_.end()) ack.cumulative = it->second.delivered;
    f.ack = std::move(ack);
    ack_policy_.on_ack_sent();
    ack_timer_.cancel();
    ack_now_ = false;
  }

  void send_short(std::vector<StreamFrame> frames, bool ping) {
    Frame f = base_frame(FrameKind::short_header);
    f.pn = next_pn_++;
    f.hs_done = is_client() && !hs_confirmed_;
    f.ping = ping;
    std::uint64_t payload = 0;
    for (const auto& sf : frames) payload += sf.length;
    auto size = static_cast<std::uint32_t>(std::max<std::uint64_t>(payload, kPingPacketBytes));
    if (payload > 0 && hs_state_ != HandshakeState::complete && !(role_ == Role::server && final_reply_sent_))
      ++stats_.data_before_handshake;
    attach_ack(f);
    advertised_max_data_ = local_max_data_;
    if (f.hs_done) need_hs_done_packet_ = false;

    SentPacket rec;
    rec.pn = f.pn;
    rec.sent = now();
    rec.size = size;
    rec.hs_done = f.hs_done;
    rec.ping = ping;
    rec.frames = frames;
    for (auto& sf : rec.frames) sf.marks.clear();
    f.streams = std::move(frames);

    if (ledger_.empty()) rto_base_ = now();
    ledger_.emplace(rec.pn, std::move(rec));
    bytes_in_flight_ += size;
    if (prr_active_) prr_out_ += size;
    last_eliciting_sent_ = now();
    ++stats_.packets_sent;
    if (auto* l = stack_->log()) {
      nlohmann::ordered_json streams = nlohmann::ordered_json::array();
      for (const auto& sf : f.streams)
        streams.push_back({{"stream", sf.stream}, {"offset", sf.offset}, {"length", sf.length}, {"fin", sf.fin}});
      l->record(now(), "transport", "packet_sent",
                {{"conn", id_}, {"pn", f.pn}, {"size", size}, {"role", is_client() ? "client" : "server"},
                 {"established", hs_state_ == HandshakeState::complete}, {"streams", std::move(streams)}});
    }
    transmit(std::move(f), size);
  }

  void send_ack_only(bool window_update = false) {
    Frame f = base_frame(FrameKind::short_header);
    attach_ack(f);
    if (!f.ack && !window_update) return;
    advertised_max_data_ = local_max_data_;
    ++stats_.ack_packets_sent;
    log("transport", "ack_sent",
        {{"conn", id_}, {"largest", f.ack ? f.ack->largest() : 0}, {"window_update", window_update}});
    transmit(std::move(f), kAckPacketBytes);
  }

  void flush() {
    if (closed_) return;
    if (flushing_) {
      flush_again_ = true;
      return;
    }
    flushing_ = true;
    do {
      flush_again_ = false;
      if (can_send_app_data()) {
        std::uint64_t allowance = recovery_allowance();
        while ((prr_active_ ? allowance > 0 : bytes_in_flight_ < cc_.cwnd()) && (has_retransmit() || has_new_data())) {
          auto frames = build_frames(true);
          if (frames.empty()) break;
          std::uint64_t before = bytes_in_flight_;
          send_short(std::move(frames), false);
          std::uint64_t size = bytes_in_flight_ - before;
          allowance = allowance > size ? allowance - size : 0;
          if (bytes_in_flight_ > cc_.cwnd())
            stats_.max_inflight_excess = std::max(stats_.max_inflight_excess, bytes_in_flight_ - cc_.cwnd());
        }
        if (is_client() && need_hs_done_packet_ && established()) send_short({}, true);
      }
      if (ack_now_) send_ack_only();
      if (send_progress_) {
        send_progress_ = false;
        if (cb_.on_send_progress) cb_.on_send_progress();
      }
    } while (flush_again_ && !closed_);
    flushing_ = false;
    set_loss_timer();
  }

  /// Proportional rate reduction: while recovering, sending follows delivery
  /// so that a large batch of declared losses is not resent as one burst.
  std::uint64_t recovery_allowance() {
    if (!prr_active_) return 0;
    const std::uint64_t ss = cc_.ssthresh();
    const std::uint64_t pipe = bytes_in_flight_;
    std::uint64_t allowed;
    if (pipe > ss) {
      std::uint64_t target = (prr_delivered_ * ss + recover_fs_ - 1) / recover_fs_;
      allowed = target > prr_out_ ? target - prr_out_ : 0;
    } else {
      std::uint64_t owed = prr_delivered_ > prr_out_ ? prr_delivered_ - prr_out_ : 0;
      allowed = std::min(ss - pipe, std::max(owed, prr_last_delivered_) + profile_.max_payload_bytes);
    }
    prr_last_delivered_ = 0;
    const std::uint64_t cwnd = cc_.cwnd();
    return std::min(allowed, cwnd > pipe ? cwnd - pipe : 0);
  }

  // -- timers ----------------------------------------------------------------

  SimTime probe_period() const {
    SimTime base;
    if (!rtt_.has_sample()) {
      base = kInitialTimeout;
    } else {
      base = rtt_.smoothed() + 4 * rtt_.variance();
      base = std::max(base, is_quic() ? kMinPto : kMinRto);
    }
    int shift = std::min(pto_count_, 16);
    return std::min<SimTime>(base * (1LL << shift), kMaxBackoff);
  }

  void set_loss_timer() {
    if (closed_ || !can_send_app_data()) return;
    if (is_quic() && loss_time_ != kNever) {
      loss_mode_ = LossTimerMode::loss_time;
      loss_timer_.arm(loss_time_);
    } else if (!ledger_.empty()) {
      loss_mode_ = is_quic() ? LossTimerMode::pto : LossTimerMode::rto;
      loss_timer_.arm((is_quic() ? last_eliciting_sent_ : rto_base_) + probe_period());
    } else if (flow_blocked()) {
      loss_mode_ = LossTimerMode::blocked;
      if (!loss_timer_.armed()) loss_timer_.arm(now() + probe_period());
    } else {
      loss_mode_ = LossTimerMode::none;
      loss_timer_.cancel();
    }
  }

  void on_loss_timer() {
    if (closed_) return;
    switch (loss_mode_) {
      case LossTimerMode::none:
        return;
      case LossTimerMode::loss_time:
        detect_losses(false);
        break;
      case LossTimerMode::pto:
        on_pto();
        break;
      case LossTimerMode::rto:
        on_rto();
        break;
      case LossTimerMode::blocked:
        ++stats_.probes_sent;
        send_short({}, true);
        break;
    }
    flush();
  }

  void on_pto() {
    ++stats_.pto_fired;
    ++pto_count_;
    log("recovery", "pto_fired", {{"conn", id_}, {"count", pto_count_}});
    if (pto_count_ >= 2) {
      cc_.on_timeout(now(), next_pn_ - 1);
      prr_active_ = false;
      log_cwnd();
    }
    for (int i = 0; i < 2; ++i) {
      if (!has_retransmit() && !has_new_data() && !ledger_.empty()) requeue(ledger_.begin()->second);
      auto frames = build_frames(true);
      ++stats_.probes_sent;
      send_short(std::move(frames), true);
    }
  }

  void on_rto() {
    ++stats_.rto_fired;
    ++pto_count_;
    log("recovery", "rto_fired", {{"conn", id_}, {"count", pto_count_}});
    cc_.on_timeout(now(), next_pn_ - 1);
    prr_active_ = false;
    log_cwnd();
    while (!ledger_.empty()) declare_lost(ledger_.begin()->first);
    dupacks_ = 0;
    fast_retransmit_done_ = false;
    rto_base_ = now();
    send_progress_ = true;
  }

  void on_ack_timer() {
    if (closed_ || ack_policy_.unacked() == 0) return;
    ++stats_.delayed_ack_fired;
    ack_now_ = true;
    flush();
  }

  void log_cwnd() {
    log("recovery", "cwnd_update",
        {{"conn", id_},
         {"cwnd", cc_.cwnd()},
         {"ssthresh", cc_.ssthresh() == cc::kInfiniteSsthresh ? -1.0 : static_cast<double>(cc_.ssthresh())}});
  }

  void shutdown(CloseCode code, bool notify) {
    closed_ = true;
    close_code_ = code;
    hs_timer_.cancel();
    loss_timer_.cancel();
    ack_timer_.cancel();
    if (notify && cb_.on_closed) cb_.on_closed(code);
  }

  Stack* stack_;
  Role role_;
  NodeId local_;
  NodeId peer_;
  ConnId id_;
  TransportProfile profile_;
  ConnectionOptions opts_;
  cc::CongestionController cc_;
  RttEstimator rtt_;
  AckPolicy ack_policy_;
  Callbacks cb_;
  ConnectionStats stats_;

  HandshakeState hs_state_ = HandshakeState::idle;
  int hs_step_ = 0;
  int hs_retries_ = 0;
  SimTime hs_started_ = kNever;
  SimTime hs_last_tx_{0};
  SimTime hs_last_progress_{0};
  SimTime established_at_ = kNever;
  SimTime reply_sent_at_{0};
  bool final_reply_sent_ = false;
  bool gate_open_ = false;
  bool gate_pending_ = false;
  bool hs_confirmed_ = false;
  bool need_hs_done_packet_ = false;
  bool closed_ = false;
  CloseCode close_code_ = CloseCode::none;

  std::map<StreamId, SendStream> send_;
  std::map<StreamId, RecvStream> recv_;
  StreamId rr_cursor_ = 0;

  SentLedger ledger_;
  PacketNumber next_pn_ = 0;
  PacketNumber largest_acked_ = kNoPacketNumber;
  std::uint64_t bytes_in_flight_ = 0;
  SimTime last_eliciting_sent_{0};
  SimTime loss_time_ = kNever;
  SimTime rto_base_{0};
  int pto_count_ = 0;
  LossTimerMode loss_mode_ = LossTimerMode::none;
  std::uint64_t last_cumulative_ = 0;
  int dupacks_ = 0;
  bool fast_retransmit_done_ = false;
  bool prr_active_ = false;
  std::uint64_t prr_delivered_ = 0;
  std::uint64_t prr_out_ = 0;
  std::uint64_t prr_last_delivered_ = 0;
  std::uint64_t recover_fs_ = 1;

  RangeSet received_pns_;
  PacketNumber largest_received_ = kNoPacketNumber;
  SimTime largest_received_at_{0};
  bool ack_now_ = false;

  std::uint64_t local_max_data_ = opts_.receive_window;
  std::uint64_t advertised_max_data_ = opts_.receive_window;
  std::uint64_t recv_data_total_ = 0;
  std::uint64_t peer_max_data_ = kUnbounded;
  std::uint64_t sent_data_total_ = 0;

  bool flushing_ = false;
  bool flush_again_ = false;
  bool send_progress_ = false;

  emunet::Timer hs_timer_;
  emunet::Timer loss_timer_;
  emunet::Timer ack_timer_;
};

inline void Stack::dispatch(NodeId node, const NetPacket& pkt) {
  auto& state = nodes_[node];
  auto it = state.conns.find(pkt.payload.conn);
  if (it == state.conns.end()) {
    const Frame& f = pkt.payload;
    if (f.kind != FrameKind::handshake || !f.from_client || f.hs_step != 0 || !state.acceptor) return;
    state.acceptor(pkt);
    it = state.conns.find(f.conn);
    if (it == state.conns.end()) return;
  }
  it->second->on_packet(pkt);
}

}  // namespace satemu::transport

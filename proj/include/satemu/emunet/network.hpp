#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "satemu/emunet/link.hpp"
#include "satemu/emunet/simulator.hpp"
#include "satemu/errors.hpp"

namespace satemu::emunet {

using NodeId = std::uint32_t;

/// Node roles of the standard four-node path.
inline constexpr NodeId kClient = 0;
inline constexpr NodeId kProxySt = 1;
inline constexpr NodeId kProxyGw = 2;
inline constexpr NodeId kServer = 3;

template <class Payload>
struct Packet {
  std::uint64_t id = 0;
  NodeId src = 0;
  NodeId dst = 0;
  std::uint32_t size_bytes = 0;
  SimTime sent_at{0};
  Payload payload{};
};

/// Both directions of one hop of the chain.
struct HopSpec {
  std::string name;
  LinkSpec toward_server;  // return direction
  LinkSpec toward_client;  // forward direction
};

struct LinkEvent {
  std::size_t hop;
  Direction direction;
  std::uint64_t packet_id;
  std::uint32_t size_bytes;
  SimTime at;          // enqueue time
  bool dropped;
  DropReason reason;   // valid when dropped
  SimTime arrival;     // valid when delivered
};

/// A linear chain of nodes joined by hops; node i and i+1 share hop i.
/// Packets not addressed to the node they reach are forwarded along the chain.
template <class Payload>
class Network {
 public:
  using PacketT = Packet<Payload>;
  using Receiver = std::function<void(PacketT&&)>;
  using LinkObserver = std::function<void(const LinkEvent&)>;

  Network(Simulator& sim, std::vector<HopSpec> hops) : sim_(&sim) {
    if (hops.empty()) throw ValidationError("hops", "at least one hop is required");
    for (auto& h : hops) {
      h.toward_server.direction = Direction::ret;
      h.toward_client.direction = Direction::forward;
      names_.push_back(h.name);
      up_.emplace_back(std::move(h.toward_server));
      down_.emplace_back(std::move(h.toward_client));
    }
    receivers_.resize(hops.size() + 1);
  }
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  Simulator& sim() noexcept { return *sim_; }
  std::size_t node_count() const noexcept { return receivers_.size(); }
  std::size_t hop_count() const noexcept { return up_.size(); }
  const std::string& hop_name(std::size_t hop) const { return names_.at(hop); }

  Link& link(std::size_t hop, Direction d) { return d == Direction::ret ? up_.at(hop) : down_.at(hop); }
  const Link& link(std::size_t hop, Direction d) const { return d == Direction::ret ? up_.at(hop) : down_.at(hop); }

  void attach(NodeId node, Receiver receiver) { receivers_.at(node) = std::move(receiver); }
  void observe_links(LinkObserver observer) { observer_ = std::move(observer); }

  /// Hands a packet to the first link toward its destination. Returns the
  /// assigned packet id.
  std::uint64_t send(NodeId src, NodeId dst, std::uint32_t size_bytes, Payload payload) {
    if (src >= node_count() || dst >= node_count()) throw Error("send: unknown node");
    PacketT pkt;
    pkt.id = next_packet_id_++;
    pkt.src = src;
    pkt.dst = dst;
    pkt.size_bytes = size_bytes;
    pkt.sent_at = sim_->now();
    pkt.payload = std::move(payload);
    std::uint64_t id = pkt.id;
    if (src == dst) {
      deliver(src, std::move(pkt));
    } else {
      forward(src, std::move(pkt));
    }
    return id;
  }

  std::uint64_t packets_sent() const noexcept { return next_packet_id_; }

 private:
  void forward(NodeId at, PacketT&& pkt) {
    bool up = pkt.dst > at;
    std::size_t hop = up ? at : at - 1;
    NodeId next = up ? at + 1 : at - 1;
    Link& l = up ? up_[hop] : down_[hop];
    EnqueueOutcome outcome = l.enqueue(pkt.size_bytes, sim_->now(), sim_->rng());
    if (observer_) {
      LinkEvent ev{hop, l.spec().direction, pkt.id, pkt.size_bytes, sim_->now(), false, DropReason::random_loss, SimTime{0}};
      if (auto* d = std::get_if<Dropped>(&outcome)) {
        ev.dropped = true;
        ev.reason = d->reason;
      } else {
        ev.arrival = std::get<Delivered>(outcome).arrival;
      }
      observer_(ev);
    }
    if (auto* d = std::get_if<Delivered>(&outcome)) {
      sim_->schedule_at(d->arrival, [this, next, p = std::move(pkt)]() mutable { arrive(next, std::move(p)); });
    }
  }

  void arrive(NodeId node, PacketT&& pkt) {
    if (pkt.dst == node) {
      deliver(node, std::move(pkt));
    } else {
      forward(node, std::move(pkt));
    }
  }

  void deliver(NodeId node, PacketT&& pkt) {
    if (receivers_[node]) receivers_[node](std::move(pkt));
  }

  Simulator* sim_;
  std::vector<std::string> names_;
  std::vector<Link> up_;
  std::vector<Link> down_;
  std::vector<Receiver> receivers_;
  LinkObserver observer_;
  std::uint64_t next_packet_id_ = 0;
};

}  // namespace satemu::emunet

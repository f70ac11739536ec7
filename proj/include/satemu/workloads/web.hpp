#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "satemu/workloads/manifest.hpp"
#include "satemu/workloads/testbed.hpp"

namespace satemu::workloads {

enum class HttpMode { h3, h1 };

inline const char* to_string(HttpMode m) { return m == HttpMode::h3 ? "h3" : "h1"; }

inline HttpMode parse_http_mode(std::string_view s) {
  if (s == "h3") return HttpMode::h3;
  if (s == "h1") return HttpMode::h1;
  throw ValidationError("http_mode", "unknown mode '" + std::string(s) + "'");
}

inline constexpr std::size_t kMaxParallel = 6;
inline constexpr SimTime kWebTimeLimit = std::chrono::seconds(120);

struct WebResult {
  RunStatus status = RunStatus::ok;
  std::string error;
  double rs_ms = -1;
  double fcp_ms = -1;
  double plt_ms = -1;
  std::vector<double> object_ms;  // completion per manifest object, -1 if never
};

namespace detail {

/// Fetch bookkeeping shared by both HTTP modes.
class PageLoad {
 public:
  PageLoad(Testbed& bed, const PageManifest& m, WebResult& r)
      : bed_(&bed), manifest_(&m), result_(&r), root_(m.root_index()) {
    r.object_ms.assign(m.size(), -1.0);
  }

  bool done() const noexcept { return remaining_ == 0; }
  std::size_t root() const noexcept { return root_; }
  std::deque<std::size_t>& queue() noexcept { return queue_; }
  const PageManifest& manifest() const noexcept { return *manifest_; }

  void start() { queue_.push_back(root_); }

  void first_byte(std::size_t obj) {
    if (obj == root_ && result_->rs_ms < 0) result_->rs_ms = now_ms();
  }

  void complete(std::size_t obj) {
    if (obj >= manifest_->size() || result_->object_ms[obj] >= 0) return;
    result_->object_ms[obj] = now_ms();
    --remaining_;
    bed_->log("http", "object_complete", {{"object", obj}, {"id", manifest_->at(obj).id}});
    for (std::size_t child : manifest_->discovered_by(obj)) queue_.push_back(child);
    if (done()) finish();
  }

  void fail(const std::string& why) {
    if (result_->status == RunStatus::failed) return;
    result_->status = RunStatus::failed;
    result_->error = why;
  }

  double now_ms() const { return to_ms(bed_->sim().now()); }

 private:
  void finish() {
    double fcp = 0, plt = 0;
    for (std::size_t i = 0; i < manifest_->size(); ++i) {
      plt = std::max(plt, result_->object_ms[i]);
      if (manifest_->at(i).render_critical) fcp = std::max(fcp, result_->object_ms[i]);
    }
    result_->fcp_ms = fcp;
    result_->plt_ms = plt;
  }

  Testbed* bed_;
  const PageManifest* manifest_;
  WebResult* result_;
  std::size_t root_;
  std::size_t remaining_ = manifest_->size();
  std::deque<std::size_t> queue_;
};

/// One QUIC connection, one bidirectional stream per object, at most six at
/// a time. Requests wait for the server's control preamble.
class H3Client {
 public:
  H3Client(Testbed& bed, PageLoad& load) : bed_(&bed), load_(&load) {
    conn_ = bed.make_client(TransportProfile::quic());
    auto& cb = conn_->callbacks();
    cb.on_stream_data = [this](StreamId s, std::uint64_t n, bool fin) {
      if (s == kPreambleStream) {
        if (fin && !ready_) {
          ready_ = true;
          bed_->log("http", "preamble_received", {{"conn", conn_->id()}});
          pump();
        }
        return;
      }
      if (n > 0)
        if (auto it = by_stream_.find(s); it != by_stream_.end()) load_->first_byte(it->second);
    };
    cb.on_message = [this](StreamId s, MessageMark m) {
      auto it = by_stream_.find(s);
      if (it == by_stream_.end() || it->second != m.tag) return;
      by_stream_.erase(it);
      --active_;
      load_->complete(m.tag);
      pump();
    };
    cb.on_closed = [this](transport::CloseCode c) {
      load_->fail(std::string("connection closed: ") + transport::to_string(c));
    };
  }

  void start() {
    conn_->connect();
    pump();
  }

 private:
  void pump() {
    if (!ready_) return;
    auto& q = load_->queue();
    while (!q.empty() && active_ < kMaxParallel && !conn_->closed()) {
      std::size_t obj = q.front();
      q.pop_front();
      StreamId s = next_stream_;
      next_stream_ += 4;
      by_stream_[s] = obj;
      ++active_;
      bed_->log("http", "request_sent", {{"conn", conn_->id()}, {"stream", s}, {"object", obj}, {"active", active_}});
      send_message(*conn_, s, kRequestBytes, obj, true);
    }
  }

  Testbed* bed_;
  PageLoad* load_;
  std::unique_ptr<Connection> conn_;
  std::map<StreamId, std::size_t> by_stream_;
  StreamId next_stream_ = 0;
  std::size_t active_ = 0;
  bool ready_ = false;
};

/// Up to six keep-alive TCP connections, opened when objects are waiting and
/// no open connection is idle. One request in flight per connection.
class H1Client {
 public:
  H1Client(Testbed& bed, PageLoad& load, TransportProfile profile) : bed_(&bed), load_(&load), profile_(profile) {}

  void start() { dispatch(); }

 private:
  struct Worker {
    std::unique_ptr<Connection> conn;
    std::optional<std::size_t> object;
  };

  void dispatch() {
    auto& q = load_->queue();
    while (!q.empty()) {
      Worker* w = nullptr;
      for (auto& cand : workers_)
        if (!cand->object && !cand->conn->closed()) {
          w = cand.get();
          break;
        }
      if (!w) {
        if (workers_.size() >= kMaxParallel) return;
        w = open();
      }
      std::size_t obj = q.front();
      q.pop_front();
      w->object = obj;
      bed_->log("http", "request_sent", {{"conn", w->conn->id()}, {"stream", 0}, {"object", obj}});
      send_message(*w->conn, 0, kRequestBytes, obj, false);
    }
  }

  Worker* open() {
    auto w = std::make_unique<Worker>();
    w->conn = bed_->make_client(profile_);
    Worker* raw = w.get();
    auto& cb = raw->conn->callbacks();
    cb.on_stream_data = [this, raw](StreamId, std::uint64_t n, bool) {
      if (n > 0 && raw->object) load_->first_byte(*raw->object);
    };
    cb.on_message = [this, raw](StreamId, MessageMark m) {
      if (!raw->object || *raw->object != m.tag) return;
      raw->object.reset();
      load_->complete(m.tag);
      dispatch();
    };
    cb.on_closed = [this](transport::CloseCode c) {
      load_->fail(std::string("connection closed: ") + transport::to_string(c));
    };
    workers_.push_back(std::move(w));
    bed_->log("http", "connection_opened", {{"conn", raw->conn->id()}, {"open", workers_.size()}});
    raw->conn->connect();
    return raw;
  }

  Testbed* bed_;
  PageLoad* load_;
  TransportProfile profile_;
  std::vector<std::unique_ptr<Worker>> workers_;
};

}  // namespace detail

/// Loads a page: the root first, then everything it references. h3 runs use
/// the h3-capable proxy mode when the PEP is enabled; h1 runs split each TCP
/// connection.
inline WebResult run_web(RunSetup setup, HttpMode mode, const PageManifest& manifest, EventLog* log = nullptr,
                         SimTime time_limit = kWebTimeLimit) {
  manifest.validate();
  if (mode == HttpMode::h3) {
    setup.profile = TransportProfile::quic();
    setup.pep.mode = pep::Mode::h3_capable;
  } else {
    if (setup.profile.kind != transport::Kind::tcp) setup.profile = TransportProfile::tcp();
    setup.pep.mode = pep::Mode::standard;
  }

  WebResult r;
  Testbed bed(setup, log);
  Origin origin(
      bed,
      [&manifest, mode](Connection& c, StreamId s, std::uint64_t tag) {
        if (tag >= manifest.size()) return;
        send_message(c, s, manifest.at(tag).size_bytes, tag, mode == HttpMode::h3);
      },
      mode == HttpMode::h3);

  detail::PageLoad load(bed, manifest, r);
  std::unique_ptr<detail::H3Client> h3;
  std::unique_ptr<detail::H1Client> h1;
  load.start();
  if (mode == HttpMode::h3) {
    h3 = std::make_unique<detail::H3Client>(bed, load);
    h3->start();
  } else {
    h1 = std::make_unique<detail::H1Client>(bed, load, setup.profile);
    h1->start();
  }

  try {
    while (!load.done() && r.status == RunStatus::ok && bed.sim().now() < time_limit)
      bed.sim().run_until(std::min(time_limit, bed.sim().now() + std::chrono::milliseconds(100)));
  } catch (const Error& e) {
    load.fail(e.what());
  }
  if (r.status == RunStatus::ok && !load.done()) load.fail("page incomplete after " + std::to_string(to_seconds(time_limit)) + " s");
  return r;
}

}  // namespace satemu::workloads

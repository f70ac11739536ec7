#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "satemu/range_set.hpp"
#include "satemu/transport/frames.hpp"

namespace satemu::transport {

inline constexpr std::uint64_t kUnbounded = std::numeric_limits<std::uint64_t>::max();

/// Sender half of a stream. Bytes are modeled by offset only.
struct SendStream {
  StreamId id = 0;
  std::uint64_t written = 0;     // bytes handed over by the application
  bool unbounded = false;        // application supplies bytes on demand
  bool fin = false;              // no bytes after `written`
  std::uint64_t next_offset = 0; // first never-sent byte
  bool fin_sent = false;
  bool fin_acked = false;
  bool fin_lost = false;
  RangeSet acked;
  RangeSet retransmit;
  std::map<std::uint64_t, std::uint64_t> marks;  // end offset -> tag

  std::uint64_t end() const { return unbounded ? kUnbounded : written; }
  std::uint64_t unsent() const { return unbounded ? kUnbounded : written - next_offset; }
  bool fin_pending() const { return fin && !unbounded && next_offset == written && (!fin_sent || fin_lost); }
  bool has_retransmit() const { return !retransmit.empty() || (fin_lost && next_offset == written); }
  bool all_acked() const { return fin && fin_acked && acked.contiguous_end(0) >= written; }

  std::vector<MessageMark> marks_in(std::uint64_t begin, std::uint64_t end_offset) const {
    std::vector<MessageMark> out;
    for (auto it = marks.upper_bound(begin); it != marks.end() && it->first <= end_offset; ++it)
      out.push_back(MessageMark{it->first, it->second});
    return out;
  }
};

/// Receiver half of a stream: reassembly and in-order delivery.
struct RecvStream {
  StreamId id = 0;
  RangeSet received;
  std::uint64_t delivered = 0;
  std::uint64_t highest = 0;
  std::optional<std::uint64_t> final_size;
  bool fin_delivered = false;
  std::map<std::uint64_t, std::uint64_t> marks;  // pending, end offset -> tag
};

}  // namespace satemu::transport

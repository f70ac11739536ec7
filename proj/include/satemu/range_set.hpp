#pragma once

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <map>

namespace satemu {

/// Set of disjoint half-open integer ranges [begin, end), coalesced on insert.
class RangeSet {
 public:
  using Map = std::map<std::uint64_t, std::uint64_t>;  // begin -> end

  /// Inserts [begin, end) and returns how many values were not already present.
  std::uint64_t insert(std::uint64_t begin, std::uint64_t end) {
    if (begin >= end) return 0;
    std::uint64_t added = end - begin;
    auto it = ranges_.upper_bound(begin);
    if (it != ranges_.begin()) {
      auto prev = std::prev(it);
      if (prev->second >= begin) {
        if (prev->second >= end) return 0;
        added -= prev->second - begin;
        begin = prev->first;
        it = ranges_.erase(prev);
      }
    }
    while (it != ranges_.end() && it->first <= end) {
      std::uint64_t overlap_end = std::min(it->second, end);
      if (overlap_end > it->first) added -= overlap_end - it->first;
      end = std::max(end, it->second);
      it = ranges_.erase(it);
    }
    ranges_.emplace(begin, end);
    return added;
  }

  /// Removes [begin, end) from the set.
  void erase(std::uint64_t begin, std::uint64_t end) {
    if (begin >= end) return;
    auto it = ranges_.upper_bound(begin);
    if (it != ranges_.begin()) --it;
    while (it != ranges_.end() && it->first < end) {
      auto [b, e] = *it;
      if (e <= begin) {
        ++it;
        continue;
      }
      it = ranges_.erase(it);
      if (b < begin) ranges_.emplace(b, begin);
      if (e > end) {
        ranges_.emplace(end, e);
        break;
      }
    }
  }

  bool contains(std::uint64_t value) const {
    auto it = ranges_.upper_bound(value);
    if (it == ranges_.begin()) return false;
    return std::prev(it)->second > value;
  }

  /// End of the range starting at `from`, or `from` if `from` is not covered.
  std::uint64_t contiguous_end(std::uint64_t from) const {
    auto it = ranges_.upper_bound(from);
    if (it == ranges_.begin()) return from;
    auto prev = std::prev(it);
    return prev->second > from ? prev->second : from;
  }

  /// Sub-ranges of [begin, end) not present in the set, ascending.
  template <class Fn>
  void for_each_gap(std::uint64_t begin, std::uint64_t end, Fn&& fn) const {
    auto it = ranges_.upper_bound(begin);
    if (it != ranges_.begin() && std::prev(it)->second > begin) begin = std::prev(it)->second;
    for (; begin < end; ++it) {
      if (it == ranges_.end() || it->first >= end) {
        fn(begin, end);
        return;
      }
      if (it->first > begin) fn(begin, it->first);
      begin = std::max(begin, it->second);
    }
  }

  bool empty() const noexcept { return ranges_.empty(); }
  std::size_t size() const noexcept { return ranges_.size(); }
  std::uint64_t max_end() const { return ranges_.empty() ? 0 : ranges_.rbegin()->second; }

  const Map& ranges() const noexcept { return ranges_; }

 private:
  Map ranges_;
};

}  // namespace satemu

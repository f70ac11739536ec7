#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "satemu/time.hpp"

namespace satemu {

/// Line-delimited structured event records {time_us, category, event, fields},
/// loosely following qlog's event vocabulary.
class EventLog {
 public:
  struct Record {
    SimTime time;
    std::string category;
    std::string event;
    nlohmann::ordered_json fields;
  };

  void record(SimTime t, std::string_view category, std::string_view event, nlohmann::ordered_json fields = {}) {
    records_.push_back(Record{t, std::string(category), std::string(event), std::move(fields)});
  }

  const std::vector<Record>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  template <class Pred>
  std::vector<const Record*> filter(Pred&& pred) const {
    std::vector<const Record*> out;
    for (const auto& r : records_)
      if (pred(r)) out.push_back(&r);
    return out;
  }

  std::vector<const Record*> named(std::string_view event) const {
    return filter([&](const Record& r) { return r.event == event; });
  }

  void write_jsonl(std::ostream& os) const {
    for (const auto& r : records_) {
      nlohmann::ordered_json line;
      line["time_us"] = r.time.count();
      line["category"] = r.category;
      line["event"] = r.event;
      line["fields"] = r.fields.is_null() ? nlohmann::ordered_json::object() : r.fields;
      os << line.dump() << '\n';
    }
  }

 private:
  std::vector<Record> records_;
};

}  // namespace satemu

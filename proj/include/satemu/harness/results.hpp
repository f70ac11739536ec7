#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "satemu/harness/config.hpp"
#include "satemu/workloads.hpp"

namespace satemu::harness {

inline constexpr const char* kSchemaLine = "# schema v1";
inline constexpr const char* kPartialMarker = "PARTIAL";

class IoError : public Error {
 public:
  using Error::Error;
};

struct RunRecord {
  std::string scenario;
  Measurement measurement = Measurement::quic_bulk;
  bool pep = false;
  int run = 0;
  std::uint64_t seed = 0;
  workloads::RunStatus status = workloads::RunStatus::ok;
  std::string error;
  std::optional<workloads::BulkResult> bulk;
  std::optional<workloads::WebResult> web;

  bool ok() const noexcept { return status == workloads::RunStatus::ok; }
};

/// Millisecond values with microsecond resolution; negative means "not observed".
inline std::string fmt_ms(double ms) {
  if (ms < 0) return "";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", ms);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

namespace detail {

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const char* header) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << kSchemaLine << '\n' << header << '\n';
  }
  std::ofstream& out() { return out_; }
  void close() {
    out_.close();
    if (!out_) throw IoError("error writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline std::string key_prefix(const RunRecord& r) {
  return csv_field(r.scenario) + "," + to_string(r.measurement) + "," + (r.pep ? "1" : "0") + "," + std::to_string(r.run);
}

}  // namespace detail

inline constexpr const char* kGoodputHeader = "scenario,measurement,pep,run,t_ms,interval_bytes,cum_bytes";
inline constexpr const char* kCwndHeader = "scenario,measurement,pep,run,t_ms,cwnd_bytes,ssthresh_bytes";
inline constexpr const char* kBulkHeader = "scenario,measurement,pep,run,establishment_ms,ttfb_ms,total_bytes";
inline constexpr const char* kWebHeader = "scenario,mode,pep,run,rs_ms,fcp_ms,plt_ms";
inline constexpr const char* kRunsHeader = "scenario,measurement,pep,run,seed,status,error";

/// Writes goodput.csv, cwnd.csv, bulk.csv, web.csv and runs.csv. Result rows
/// come from successful runs only; runs.csv lists every run.
inline void write_results(const std::vector<RunRecord>& records, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  detail::CsvFile goodput(dir / "goodput.csv", kGoodputHeader);
  detail::CsvFile cwnd(dir / "cwnd.csv", kCwndHeader);
  detail::CsvFile bulk(dir / "bulk.csv", kBulkHeader);
  detail::CsvFile web(dir / "web.csv", kWebHeader);
  detail::CsvFile runs(dir / "runs.csv", kRunsHeader);
  for (const auto& r : records) {
    const std::string key = detail::key_prefix(r);
    runs.out() << key << ',' << r.seed << ',' << workloads::to_string(r.status) << ',' << csv_field(r.error) << '\n';
    if (!r.ok()) continue;
    if (r.bulk) {
      const auto& b = *r.bulk;
      for (const auto& g : b.goodput) goodput.out() << key << ',' << g.t_ms << ',' << g.interval_bytes << ',' << g.cum_bytes << '\n';
      for (const auto& c : b.cwnd) {
        cwnd.out() << key << ',' << c.t_ms << ',' << c.cwnd_bytes << ',';
        if (c.ssthresh_bytes == cc::kInfiniteSsthresh) {
          cwnd.out() << -1;
        } else {
          cwnd.out() << c.ssthresh_bytes;
        }
        cwnd.out() << '\n';
      }
      bulk.out() << key << ',' << fmt_ms(b.establishment_ms) << ',' << fmt_ms(b.ttfb_ms) << ',' << b.total_bytes << '\n';
    }
    if (r.web) {
      const auto& w = *r.web;
      web.out() << csv_field(r.scenario) << ',' << (r.measurement == Measurement::h3_web ? "h3" : "h1") << ','
                << (r.pep ? 1 : 0) << ',' << r.run << ',' << fmt_ms(w.rs_ms) << ',' << fmt_ms(w.fcp_ms) << ','
                << fmt_ms(w.plt_ms) << '\n';
    }
  }
  for (auto* f : {&goodput, &cwnd, &bulk, &web, &runs}) f->close();
}

}  // namespace satemu::harness

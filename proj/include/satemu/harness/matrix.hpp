#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "satemu/harness/config.hpp"
#include "satemu/harness/results.hpp"

namespace satemu::harness {

struct MatrixOptions {
  std::filesystem::path out_dir;
  int jobs = 1;
  bool event_logs = false;
  std::optional<int> repetitions;
  std::optional<std::uint64_t> seed;
  /// Called after each run, from the worker that ran it, under a lock.
  std::function<void(const RunRecord&)> on_run_done;
};

struct MatrixSummary {
  std::size_t runs = 0;
  std::size_t failed = 0;
};

struct RunTask {
  const ScenarioConfig* config;
  Measurement measurement;
  bool pep;
  int run;
};

inline std::string event_log_name(const RunRecord& r) {
  return r.scenario + "_" + to_string(r.measurement) + "_" + (r.pep ? "pep" : "nopep") + "_" + std::to_string(r.run) +
         ".jsonl";
}

/// One run in a fresh simulation. Never throws for simulation failures; they
/// end up in the record's status.
inline RunRecord run_one(const ScenarioConfig& cfg, Measurement m, bool pep, int run, EventLog* log = nullptr) {
  RunRecord rec;
  rec.scenario = cfg.name;
  rec.measurement = m;
  rec.pep = pep;
  rec.run = run;
  workloads::RunSetup setup = cfg.run_setup(m, pep, run);
  rec.seed = setup.seed;
  try {
    if (is_bulk(m)) {
      rec.bulk = workloads::run_bulk(setup, log);
      rec.status = rec.bulk->status;
      rec.error = rec.bulk->error;
    } else {
      auto mode = m == Measurement::h3_web ? workloads::HttpMode::h3 : workloads::HttpMode::h1;
      rec.web = workloads::run_web(setup, mode, *cfg.manifest, log);
      rec.status = rec.web->status;
      rec.error = rec.web->error;
    }
  } catch (const std::exception& e) {
    rec.status = workloads::RunStatus::failed;
    rec.error = e.what();
  }
  return rec;
}

inline std::vector<RunTask> expand(const std::vector<ScenarioConfig>& configs) {
  std::vector<RunTask> tasks;
  for (const auto& c : configs)
    for (Measurement m : c.measurements)
      for (bool pep : c.pep_arms())
        for (int run = 0; run < c.repetitions; ++run) tasks.push_back({&c, m, pep, run});
  return tasks;
}

inline std::vector<ScenarioConfig> apply_overrides(std::vector<ScenarioConfig> configs, const MatrixOptions& opts) {
  for (auto& c : configs) {
    if (opts.repetitions) c.repetitions = *opts.repetitions;
    if (opts.seed) c.base_seed = *opts.seed;
    c.validate();
  }
  return configs;
}

/// Runs every task; records come back in task order whatever the number of
/// worker threads. Event logs go to `events_dir` when set.
inline std::vector<RunRecord> execute(const std::vector<RunTask>& tasks, int jobs,
                                      const std::optional<std::filesystem::path>& events_dir = std::nullopt,
                                      const std::function<void(const RunRecord&)>& on_done = {}) {
  std::vector<RunRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex sink;
  std::string io_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const RunTask& t = tasks[i];
      std::optional<EventLog> log;
      if (events_dir) log.emplace();
      RunRecord rec = run_one(*t.config, t.measurement, t.pep, t.run, log ? &*log : nullptr);
      if (log) {
        auto path = *events_dir / event_log_name(rec);
        std::ofstream out(path);
        log->write_jsonl(out);
        out.close();
        if (!out) {
          std::lock_guard lock(sink);
          if (io_error.empty()) io_error = "error writing " + path.string();
        }
      }
      std::lock_guard lock(sink);
      records[i] = std::move(rec);
      if (on_done) on_done(records[i]);
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (!io_error.empty()) throw IoError(io_error);
  return records;
}

/// Runs the whole matrix and writes the result directory. A PARTIAL marker
/// exists in the directory until every file has been written.
inline MatrixSummary run_matrix(const std::vector<ScenarioConfig>& input, const MatrixOptions& opts) {
  std::vector<ScenarioConfig> configs = apply_overrides(input, opts);
  const auto& dir = opts.out_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto marker = dir / kPartialMarker;
  {
    std::ofstream m(marker);
    if (!m) throw IoError("cannot write " + marker.string());
    m << "run in progress or aborted\n";
  }
  std::optional<std::filesystem::path> events;
  if (opts.event_logs) {
    events = dir / "events";
    std::filesystem::create_directories(*events, ec);
    if (ec) throw IoError("cannot create " + events->string() + ": " + ec.message());
  }
  MatrixSummary summary;
  try {
    auto records = execute(expand(configs), opts.jobs, events, opts.on_run_done);
    write_results(records, dir);
    {
      std::ofstream cfg_out(dir / "config.json");
      nlohmann::ordered_json doc;
      doc["scenarios"] = nlohmann::ordered_json::array();
      for (const auto& c : configs) doc["scenarios"].push_back(scenario_to_json(c));
      cfg_out << doc.dump(2) << '\n';
      cfg_out.close();
      if (!cfg_out) throw IoError("error writing " + (dir / "config.json").string());
    }
    summary.runs = records.size();
    for (const auto& r : records) summary.failed += r.ok() ? 0 : 1;
  } catch (const IoError& e) {
    std::ofstream m(marker, std::ios::app);
    m << e.what() << '\n';
    throw;
  }
  std::filesystem::remove(marker, ec);
  return summary;
}

}  // namespace satemu::harness

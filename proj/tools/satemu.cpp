// satemu: run the emulation matrix, check configs, list presets.
//
// Exit codes: 0 success, 1 invalid config or usage, 2 failed runs or I/O error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "satemu/harness.hpp"

namespace h = satemu::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRunFailures = 2;

void print_scenarios(const std::vector<h::ScenarioConfig>& configs) {
  std::printf("%-16s %10s %10s %8s %12s %5s %5s\n", "scenario", "sat_ms", "rtt_ms", "loss_%", "fwd/ret_mbps",
              "pep", "reps");
  for (const auto& c : configs) {
    double sat = satemu::to_ms(c.satcom_one_way.at(satemu::SimTime{0}));
    double rtt = 2 * (sat + c.internet_one_way_delay_ms);
    char rates[32];
    std::snprintf(rates, sizeof rates, "%g/%g", c.forward_rate_mbps, c.return_rate_mbps);
    std::printf("%-16s %10g %10g %8g %12s %5s %5d\n", c.name.c_str(), sat, rtt, c.loss_pct, rates,
                c.pep_enabled ? "on" : "off", c.repetitions);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Satellite path emulation with QUIC/TCP connection-splitting proxies"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  int jobs = 1;
  std::optional<int> repetitions;
  std::optional<std::uint64_t> seed;
  bool event_logs = false;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run every scenario x measurement x PEP arm x repetition");
  run->add_option("--config", config_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Result directory")->required();
  run->add_option("--jobs", jobs, "Parallel runs")->check(CLI::Range(1, 1024));
  run->add_option("--repetitions", repetitions, "Override repetitions of every scenario")->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "Override the base seed of every scenario");
  run->add_flag("--event-logs", event_logs, "Write one JSONL event log per run");
  run->add_flag("-q,--quiet", quiet, "No progress output");

  auto* validate = app.add_subcommand("validate", "Check a scenario config");
  validate->add_option("--config", config_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);

  bool as_json = false;
  auto* presets = app.add_subcommand("presets", "Print the built-in GEO/LEO scenario grid");
  presets->add_flag("--json", as_json, "Print as a config document");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*presets) {
      auto grid = h::preset_grid();
      if (as_json) {
        nlohmann::ordered_json doc;
        doc["scenarios"] = nlohmann::ordered_json::array();
        for (const auto& c : grid) doc["scenarios"].push_back(h::scenario_to_json(c));
        std::cout << doc.dump(2) << '\n';
      } else {
        print_scenarios(grid);
      }
      return kExitOk;
    }

    auto configs = h::load_config(config_path);

    if (*validate) {
      std::size_t total = h::expand(configs).size();
      print_scenarios(configs);
      std::printf("%zu scenario(s), %zu run(s): config is valid\n", configs.size(), total);
      return kExitOk;
    }

    h::MatrixOptions opts;
    opts.out_dir = out_dir;
    opts.jobs = jobs;
    opts.event_logs = event_logs;
    opts.repetitions = repetitions;
    opts.seed = seed;
    std::size_t done = 0;
    if (!quiet) {
      opts.on_run_done = [&](const h::RunRecord& r) {
        ++done;
        if (!r.ok())
          std::fprintf(stderr, "run failed: %s %s pep=%d run=%d: %s\n", r.scenario.c_str(), h::to_string(r.measurement),
                       r.pep ? 1 : 0, r.run, r.error.c_str());
        else if (done % 50 == 0)
          std::fprintf(stderr, "%zu runs done\n", done);
      };
    }
    h::MatrixSummary s = h::run_matrix(configs, opts);
    std::printf("%zu run(s), %zu failed; results in %s\n", s.runs, s.failed, out_dir.c_str());
    return s.failed == 0 ? kExitOk : kExitRunFailures;
  } catch (const satemu::ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitInvalid;
  } catch (const satemu::ValidationError& e) {
    std::fprintf(stderr, "invalid config: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRunFailures;
  }
}

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satemu/errors.hpp"
#include "satemu/json_parse.hpp"
#include "satemu/workloads.hpp"

namespace satemu::harness {

using workloads::PageManifest;

enum class Measurement { quic_bulk, tcp_bulk, h3_web, h1_web };

inline constexpr Measurement kAllMeasurements[] = {Measurement::quic_bulk, Measurement::tcp_bulk,
                                                   Measurement::h3_web, Measurement::h1_web};

inline const char* to_string(Measurement m) {
  switch (m) {
    case Measurement::quic_bulk: return "quic-bulk";
    case Measurement::tcp_bulk: return "tcp-bulk";
    case Measurement::h3_web: return "h3-web";
    case Measurement::h1_web: return "h1-web";
  }
  return "?";
}

inline Measurement parse_measurement(const std::string& s) {
  for (Measurement m : kAllMeasurements)
    if (s == to_string(m)) return m;
  throw ValidationError("measurements", "unknown measurement '" + s + "'");
}

inline bool is_bulk(Measurement m) { return m == Measurement::quic_bulk || m == Measurement::tcp_bulk; }

struct ScenarioConfig {
  std::string name;
  emunet::DelaySchedule satcom_one_way{std::chrono::milliseconds(250)};
  double internet_one_way_delay_ms = 40;
  double loss_pct = 0;
  double attenuation_db = 0;
  double forward_rate_mbps = 20;
  double return_rate_mbps = 8;
  std::uint32_t queue_capacity_pkts = 0;  // 0 = path BDP
  transport::CcTuning client_cc{};
  transport::CcTuning server_cc{};
  /// Adds the PEP arm next to the non-PEP arm.
  bool pep_enabled = true;
  pep::Mode pep_mode = pep::Mode::standard;
  transport::CcTuning pep_sat_segment{cc::Algorithm::newreno, 100};
  transport::CcTuning pep_terrestrial_segment{};
  transport::AckFrequencyConfig ack_frequency{};
  int tls_rtts = 0;
  std::vector<Measurement> measurements{std::begin(kAllMeasurements), std::end(kAllMeasurements)};
  double duration_s = 15;
  int repetitions = 100;
  std::uint64_t base_seed = 1;
  std::string page_manifest;  // empty = built-in default
  std::shared_ptr<const PageManifest> manifest = std::make_shared<PageManifest>(workloads::default_manifest());

  void validate() const {
    static const std::regex kName("[A-Za-z0-9._-]+");
    if (!std::regex_match(name, kName)) throw ValidationError("name", "must match [A-Za-z0-9._-]+, got '" + name + "'");
    for (const auto& st : satcom_one_way.steps())
      if (st.delay < SimTime{0}) throw ValidationError("satcom_one_way_delay_ms", "must be >= 0");
    if (!(internet_one_way_delay_ms >= 0)) throw ValidationError("internet_one_way_delay_ms", "must be >= 0");
    if (!(loss_pct >= 0 && loss_pct <= 100)) throw ValidationError("loss_pct", "must be within [0, 100]");
    if (attenuation_db != 0) throw ValidationError("attenuation_db", "only 0 dB is supported");
    if (!(forward_rate_mbps > 0)) throw ValidationError("forward_rate_mbps", "must be > 0");
    if (!(return_rate_mbps > 0)) throw ValidationError("return_rate_mbps", "must be > 0");
    for (auto [field, t] : {std::pair{"client.iw", client_cc}, {"server.iw", server_cc}, {"pep.sat_segment.iw", pep_sat_segment},
                            {"pep.terrestrial_segment.iw", pep_terrestrial_segment}})
      if (t.iw_packets < 1) throw ValidationError(field, "must be >= 1");
    if (ack_frequency.ack_eliciting_threshold < 1) throw ValidationError("ack_frequency.threshold", "must be >= 1");
    if (ack_frequency.max_ack_delay < SimTime{0}) throw ValidationError("ack_frequency.max_ack_delay_ms", "must be >= 0");
    if (tls_rtts < 0 || tls_rtts > 2) throw ValidationError("tls_rtts", "must be 0, 1 or 2");
    if (measurements.empty()) throw ValidationError("measurements", "must not be empty");
    if (!(duration_s > 0)) throw ValidationError("duration_s", "must be > 0");
    if (repetitions < 1) throw ValidationError("repetitions", "must be >= 1");
  }

  workloads::RunSetup run_setup(Measurement m, bool pep, int run) const {
    workloads::RunSetup s;
    s.path.satcom_one_way = satcom_one_way;
    s.path.internet_one_way = from_ms(internet_one_way_delay_ms);
    s.path.loss_prob = loss_pct / 100.0;
    s.path.forward_rate_bps = forward_rate_mbps * 1e6;
    s.path.return_rate_bps = return_rate_mbps * 1e6;
    s.path.queue_capacity_pkts = queue_capacity_pkts;
    bool tcp = m == Measurement::tcp_bulk || m == Measurement::h1_web;
    s.profile = tcp ? transport::TransportProfile::tcp(tls_rtts) : transport::TransportProfile::quic();
    s.profile.ack_frequency = ack_frequency;
    s.client_cc = client_cc;
    s.server_cc = server_cc;
    s.pep.enabled = pep;
    s.pep.mode = pep_mode;
    s.pep.sat_segment = pep_sat_segment;
    s.pep.terrestrial_segment = pep_terrestrial_segment;
    s.seed = base_seed + static_cast<std::uint64_t>(run);
    s.duration = from_seconds(duration_s);
    return s;
  }

  std::vector<bool> pep_arms() const { return pep_enabled ? std::vector<bool>{false, true} : std::vector<bool>{false}; }
};

/// Built-in scenarios: "geo" (250 ms satellite one-way delay) and "leo" (16 ms).
inline ScenarioConfig preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  if (name == "geo") {
    c.satcom_one_way = emunet::DelaySchedule(std::chrono::milliseconds(250));
  } else if (name == "leo") {
    c.satcom_one_way = emunet::DelaySchedule(std::chrono::milliseconds(16));
  } else {
    throw ValidationError("preset", "unknown preset '" + name + "' (expected geo or leo)");
  }
  return c;
}

inline constexpr double kPresetLossPct[] = {0, 0.01, 0.1, 1};

/// Both orbits at the four loss rates.
inline std::vector<ScenarioConfig> preset_grid() {
  std::vector<ScenarioConfig> out;
  for (const char* orbit : {"geo", "leo"})
    for (double loss : kPresetLossPct) {
      ScenarioConfig c = preset(orbit);
      c.loss_pct = loss;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s-loss%g", orbit, loss);
      c.name = buf;
      out.push_back(std::move(c));
    }
  return out;
}

namespace detail {

template <class T>
T get_field(const nlohmann::json& j, const std::string& field) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(field, "wrong type: " + j.dump());
  }
}

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(where.empty() ? "scenario" : where, "expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ValidationError(where.empty() ? key : where + "." + key, "unknown field");
  }
}

inline transport::CcTuning parse_tuning(const nlohmann::json& j, const std::string& where, transport::CcTuning base) {
  check_keys(j, where, {"cca", "iw"});
  if (j.contains("cca")) {
    try {
      base.algorithm = cc::parse_algorithm(get_field<std::string>(j["cca"], where + ".cca"));
    } catch (const UnknownAlgorithm& e) {
      throw ValidationError(where + ".cca", e.what());
    }
  }
  if (j.contains("iw")) {
    auto iw = get_field<std::int64_t>(j["iw"], where + ".iw");
    if (iw < 1 || iw > 100000) throw ValidationError(where + ".iw", "must be within [1, 100000]");
    base.iw_packets = static_cast<std::uint32_t>(iw);
  }
  return base;
}

inline emunet::DelaySchedule parse_delay(const nlohmann::json& j) {
  const std::string field = "satcom_one_way_delay_ms";
  if (j.is_number()) {
    double ms = j.get<double>();
    if (ms < 0) throw ValidationError(field, "must be >= 0");
    return emunet::DelaySchedule(from_ms(ms));
  }
  if (!j.is_array()) throw ValidationError(field, "expected a number or a list of {start_s, delay_ms}");
  std::vector<emunet::DelayStep> steps;
  for (const auto& e : j) {
    check_keys(e, field, {"start_s", "delay_ms"});
    if (!e.contains("start_s") || !e.contains("delay_ms")) throw ValidationError(field, "each step needs start_s and delay_ms");
    double start = get_field<double>(e["start_s"], field + ".start_s");
    double ms = get_field<double>(e["delay_ms"], field + ".delay_ms");
    if (ms < 0) throw ValidationError(field, "must be >= 0");
    steps.push_back({from_seconds(start), from_ms(ms)});
  }
  try {
    return emunet::DelaySchedule(std::move(steps));
  } catch (const ValidationError& e) {
    throw ValidationError(field, e.what());
  }
}

}  // namespace detail

/// One scenario object. `base_dir` resolves a relative page_manifest path.
inline ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::get_field;
  detail::check_keys(j, "", {"name", "preset", "satcom_one_way_delay_ms", "internet_one_way_delay_ms", "loss_pct",
                             "attenuation_db", "forward_rate_mbps", "return_rate_mbps", "queue_capacity_pkts", "client",
                             "server", "pep", "ack_frequency", "tls_rtts", "measurements", "duration_s", "repetitions",
                             "base_seed", "page_manifest"});
  ScenarioConfig c;
  if (j.contains("preset")) c = preset(get_field<std::string>(j["preset"], "preset"));
  if (j.contains("name")) c.name = get_field<std::string>(j["name"], "name");
  if (c.name.empty()) throw ValidationError("name", "is required");
  if (j.contains("satcom_one_way_delay_ms")) c.satcom_one_way = detail::parse_delay(j["satcom_one_way_delay_ms"]);
  if (j.contains("internet_one_way_delay_ms"))
    c.internet_one_way_delay_ms = get_field<double>(j["internet_one_way_delay_ms"], "internet_one_way_delay_ms");
  if (j.contains("loss_pct")) c.loss_pct = get_field<double>(j["loss_pct"], "loss_pct");
  if (j.contains("attenuation_db")) c.attenuation_db = get_field<double>(j["attenuation_db"], "attenuation_db");
  if (j.contains("forward_rate_mbps")) c.forward_rate_mbps = get_field<double>(j["forward_rate_mbps"], "forward_rate_mbps");
  if (j.contains("return_rate_mbps")) c.return_rate_mbps = get_field<double>(j["return_rate_mbps"], "return_rate_mbps");
  if (j.contains("queue_capacity_pkts"))
    c.queue_capacity_pkts = get_field<std::uint32_t>(j["queue_capacity_pkts"], "queue_capacity_pkts");
  if (j.contains("client")) c.client_cc = detail::parse_tuning(j["client"], "client", c.client_cc);
  if (j.contains("server")) c.server_cc = detail::parse_tuning(j["server"], "server", c.server_cc);
  if (j.contains("pep")) {
    const auto& p = j["pep"];
    detail::check_keys(p, "pep", {"enabled", "mode", "sat_segment", "terrestrial_segment"});
    if (p.contains("enabled")) c.pep_enabled = get_field<bool>(p["enabled"], "pep.enabled");
    if (p.contains("mode")) c.pep_mode = pep::parse_mode(get_field<std::string>(p["mode"], "pep.mode"));
    if (p.contains("sat_segment")) c.pep_sat_segment = detail::parse_tuning(p["sat_segment"], "pep.sat_segment", c.pep_sat_segment);
    if (p.contains("terrestrial_segment"))
      c.pep_terrestrial_segment = detail::parse_tuning(p["terrestrial_segment"], "pep.terrestrial_segment", c.pep_terrestrial_segment);
  }
  if (j.contains("ack_frequency")) {
    const auto& a = j["ack_frequency"];
    detail::check_keys(a, "ack_frequency", {"threshold", "max_ack_delay_ms"});
    if (a.contains("threshold")) {
      auto t = get_field<std::int64_t>(a["threshold"], "ack_frequency.threshold");
      if (t < 1) throw ValidationError("ack_frequency.threshold", "must be >= 1");
      c.ack_frequency.ack_eliciting_threshold = static_cast<std::uint32_t>(t);
    }
    if (a.contains("max_ack_delay_ms"))
      c.ack_frequency.max_ack_delay = from_ms(get_field<double>(a["max_ack_delay_ms"], "ack_frequency.max_ack_delay_ms"));
  }
  if (j.contains("tls_rtts")) c.tls_rtts = get_field<int>(j["tls_rtts"], "tls_rtts");
  if (j.contains("measurements")) {
    c.measurements.clear();
    for (const auto& m : j["measurements"]) {
      Measurement parsed = parse_measurement(get_field<std::string>(m, "measurements"));
      if (std::find(c.measurements.begin(), c.measurements.end(), parsed) == c.measurements.end())
        c.measurements.push_back(parsed);
    }
  }
  if (j.contains("duration_s")) c.duration_s = get_field<double>(j["duration_s"], "duration_s");
  if (j.contains("repetitions")) c.repetitions = get_field<int>(j["repetitions"], "repetitions");
  if (j.contains("base_seed")) c.base_seed = get_field<std::uint64_t>(j["base_seed"], "base_seed");
  if (j.contains("page_manifest")) {
    c.page_manifest = get_field<std::string>(j["page_manifest"], "page_manifest");
    std::filesystem::path p(c.page_manifest);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    try {
      c.manifest = std::make_shared<PageManifest>(workloads::load_manifest(p.string()));
    } catch (const ValidationError& e) {
      throw ValidationError("page_manifest", e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ValidationError("page_manifest", e.what());
    }
  }
  c.validate();
  return c;
}

/// A document {"scenarios": [...]}; each entry may start from a preset.
inline std::vector<ScenarioConfig> configs_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  if (!doc.is_object() || !doc.contains("scenarios") || !doc["scenarios"].is_array())
    throw ValidationError("scenarios", "expected an object with a 'scenarios' list");
  detail::check_keys(doc, "", {"scenarios"});
  std::vector<ScenarioConfig> out;
  std::set<std::string> names;
  for (std::size_t i = 0; i < doc["scenarios"].size(); ++i) {
    try {
      out.push_back(scenario_from_json(doc["scenarios"][i], base_dir));
    } catch (const ValidationError& e) {
      throw ValidationError("scenarios[" + std::to_string(i) + "]." + e.field(), e.what());
    }
    if (!names.insert(out.back().name).second)
      throw ValidationError("scenarios[" + std::to_string(i) + "].name", "duplicate scenario name '" + out.back().name + "'");
  }
  if (out.empty()) throw ValidationError("scenarios", "must not be empty");
  return out;
}

inline std::vector<ScenarioConfig> load_config(const std::string& path) {
  return configs_from_json(parse_json_file(path), std::filesystem::path(path).parent_path());
}

inline nlohmann::ordered_json scenario_to_json(const ScenarioConfig& c) {
  auto tuning = [](const transport::CcTuning& t) {
    return nlohmann::ordered_json{{"cca", cc::to_string(t.algorithm)}, {"iw", t.iw_packets}};
  };
  nlohmann::ordered_json j;
  j["name"] = c.name;
  if (c.satcom_one_way.is_static()) {
    j["satcom_one_way_delay_ms"] = to_ms(c.satcom_one_way.at(SimTime{0}));
  } else {
    auto steps = nlohmann::ordered_json::array();
    for (const auto& s : c.satcom_one_way.steps())
      steps.push_back({{"start_s", to_seconds(s.start)}, {"delay_ms", to_ms(s.delay)}});
    j["satcom_one_way_delay_ms"] = steps;
  }
  j["internet_one_way_delay_ms"] = c.internet_one_way_delay_ms;
  j["loss_pct"] = c.loss_pct;
  j["attenuation_db"] = c.attenuation_db;
  j["forward_rate_mbps"] = c.forward_rate_mbps;
  j["return_rate_mbps"] = c.return_rate_mbps;
  j["queue_capacity_pkts"] = c.queue_capacity_pkts;
  j["client"] = tuning(c.client_cc);
  j["server"] = tuning(c.server_cc);
  j["pep"] = {{"enabled", c.pep_enabled},
              {"mode", pep::to_string(c.pep_mode)},
              {"sat_segment", tuning(c.pep_sat_segment)},
              {"terrestrial_segment", tuning(c.pep_terrestrial_segment)}};
  j["ack_frequency"] = {{"threshold", c.ack_frequency.ack_eliciting_threshold},
                        {"max_ack_delay_ms", to_ms(c.ack_frequency.max_ack_delay)}};
  j["tls_rtts"] = c.tls_rtts;
  auto ms = nlohmann::ordered_json::array();
  for (auto m : c.measurements) ms.push_back(to_string(m));
  j["measurements"] = ms;
  j["duration_s"] = c.duration_s;
  j["repetitions"] = c.repetitions;
  j["base_seed"] = c.base_seed;
  if (!c.page_manifest.empty()) j["page_manifest"] = c.page_manifest;
  return j;
}

}  // namespace satemu::harness

// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the exit status is non-zero if any criterion fails.
//
// Workload criteria run the scenario matrix into a scratch directory and
// read their numbers back from the CSV files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "satemu/harness.hpp"

using namespace satemu;
using namespace satemu::harness;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

constexpr int kReps = 20;
constexpr double kForwardBps = 20e6;

// ---------------------------------------------------------------------------
// CSV access

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  Table t;
  std::string line;
  std::getline(in, line);
  if (line != kSchemaLine) throw std::runtime_error(p.string() + ": missing schema line");
  std::getline(in, line);
  t.header = split(line);
  while (std::getline(in, line)) t.rows.push_back(split(line));
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

/// Column values of the rows matching every (column, value) filter.
std::vector<double> select(const Table& t, const std::string& column,
                           const std::vector<std::pair<std::string, std::string>>& where) {
  std::vector<std::pair<std::size_t, std::string>> w;
  for (const auto& [c, v] : where) w.emplace_back(t.col(c), v);
  std::size_t k = t.col(column);
  std::vector<double> out;
  for (const auto& r : t.rows) {
    bool match = std::all_of(w.begin(), w.end(), [&](const auto& f) { return r.at(f.first) == f.second; });
    if (match && !r.at(k).empty()) out.push_back(std::stod(r.at(k)));
  }
  return out;
}

/// Mean over runs of `column`, per sample time, for one bulk arm.
std::map<long, double> mean_series(const Table& goodput, const std::string& scenario, const std::string& measurement,
                                   const std::string& pep, const std::string& column) {
  std::size_t cs = goodput.col("scenario"), cm = goodput.col("measurement"), cp = goodput.col("pep"),
              ct = goodput.col("t_ms"), cv = goodput.col(column);
  std::map<long, std::pair<double, int>> acc;
  for (const auto& r : goodput.rows) {
    if (r[cs] != scenario || r[cm] != measurement || r[cp] != pep) continue;
    auto& a = acc[std::stol(r[ct])];
    a.first += std::stod(r[cv]);
    a.second += 1;
  }
  std::map<long, double> out;
  for (const auto& [t, a] : acc) out[t] = a.first / a.second;
  return out;
}

// ---------------------------------------------------------------------------
// reporting

int failures = 0;

void report(int n, bool pass, const std::string& what, const std::string& detail) {
  std::printf("criterion %2d: %s  %s (%s)\n", n, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

ScenarioConfig scenario(const char* orbit, const std::string& name, double loss_pct, std::vector<Measurement> ms,
                        int reps) {
  ScenarioConfig c = preset(orbit);
  c.name = name;
  c.loss_pct = loss_pct;
  c.measurements = std::move(ms);
  c.repetitions = reps;
  c.validate();
  return c;
}

MatrixSummary run_into(const std::vector<ScenarioConfig>& cfgs, const fs::path& dir, int jobs = 1) {
  MatrixOptions o;
  o.out_dir = dir;
  o.jobs = jobs;
  return run_matrix(cfgs, o);
}

// ---------------------------------------------------------------------------
// criteria

void handshake(const Table& geo_bulk, const Table& leo_bulk) {
  bool ok = true;
  std::string detail;
  auto check = [&](const Table& t, const char* scen, const char* m, double lo, double hi) {
    auto v = select(t, "establishment_ms", {{"scenario", scen}, {"measurement", m}, {"pep", "0"}});
    if (v.empty()) {
      ok = false;
      detail += std::string(scen) + " " + m + " no rows; ";
      return;
    }
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    ok = ok && *mn >= lo && *mx <= hi;
    detail += std::string(scen) + " " + m + fmt(" [%.1f, %.1f]; ", *mn, *mx);
  };
  check(geo_bulk, "geo", "tcp-bulk", 580, 590);
  check(geo_bulk, "geo", "quic-bulk", 580, 590);
  check(leo_bulk, "leo", "tcp-bulk", 112, 122);
  check(leo_bulk, "leo", "quic-bulk", 112, 122);
  report(1, ok, "client establishment time", detail + "bounds GEO [580, 590], LEO [112, 122] ms");
}

void h1_response_start(const Table& web) {
  auto rs = select(web, "rs_ms", {{"scenario", "geo"}, {"mode", "h1"}, {"pep", "0"}});
  double m = median(rs);
  report(2, rs.size() == kReps && m >= 1160 && m <= 1280, "h1 GEO median response start",
         fmt("median %.1f ms over %.0f runs, bound [1160, 1280]", m, static_cast<double>(rs.size())));
}

/// First sample time at which the mean interval goodput reaches 90% of the
/// forward rate; -1 if never.
long t90(const std::map<long, double>& interval_bytes) {
  for (const auto& [t, b] : interval_bytes)
    if (b * 8.0 / 0.1 >= 0.9 * kForwardBps) return t;
  return -1;
}

void slow_start(const Table& goodput) {
  long pep = t90(mean_series(goodput, "geo", "quic-bulk", "1", "interval_bytes"));
  long nopep = t90(mean_series(goodput, "geo", "quic-bulk", "0", "interval_bytes"));
  // A non-PEP arm that never gets there is later than any PEP time.
  bool ok = pep >= 0 && (nopep < 0 || nopep - pep >= 1000);
  report(3, ok, "time to 90% of forward rate, PEP ahead by >= 1.0 s",
         fmt("PEP %.0f ms, non-PEP %.0f ms (-1 = never)", static_cast<double>(pep), static_cast<double>(nopep)));
}

struct Ratio {
  double peak_early = NAN;
  long peak_at = -1;
  double at_end = NAN;
};

Ratio cum_ratio(const Table& goodput, const std::string& scen) {
  auto pep = mean_series(goodput, scen, "quic-bulk", "1", "cum_bytes");
  auto nopep = mean_series(goodput, scen, "quic-bulk", "0", "cum_bytes");
  Ratio r;
  for (const auto& [t, base] : nopep) {
    auto it = pep.find(t);
    if (it == pep.end() || base <= 0) continue;
    double q = it->second / base;
    if (t < 5000 && (std::isnan(r.peak_early) || q > r.peak_early)) {
      r.peak_early = q;
      r.peak_at = t;
    }
    if (t == 15000) r.at_end = q;
  }
  return r;
}

void early_ratio(const Ratio& geo) {
  bool ok = geo.peak_early > 2 && geo.peak_early < 20 && geo.at_end < 1.3;
  report(4, ok, "GEO cumulative-byte ratio PEP/non-PEP",
         fmt("peak %.2f at %.0f ms (bound (2, 20)), at 15 s %.3f (bound < 1.3)", geo.peak_early,
             static_cast<double>(geo.peak_at), geo.at_end));
}

void leo_benefit(const Ratio& geo, const Ratio& leo) {
  report(5, leo.peak_early < geo.peak_early, "LEO peak ratio below GEO peak ratio",
         fmt("LEO %.2f, GEO %.2f", leo.peak_early, geo.peak_early));
}

void web_orderings(const Table& web) {
  auto med = [&](const char* mode, const char* pep, const char* col) {
    return median(select(web, col, {{"scenario", "geo"}, {"mode", mode}, {"pep", pep}}));
  };
  double plt_h3 = med("h3", "0", "plt_ms"), plt_h1 = med("h1", "0", "plt_ms"), plt_h3p = med("h3", "1", "plt_ms");
  double rs_h3 = med("h3", "0", "rs_ms"), rs_h3p = med("h3", "1", "rs_ms");
  bool ok = plt_h3 < plt_h1 && plt_h3p < plt_h3 && rs_h3p > rs_h3;
  report(6, ok, "GEO web medians: PLT h3 < h1, PLT h3-PEP < h3, RS h3-PEP > h3",
         fmt("PLT h3 %.1f, h1 %.1f, h3-PEP %.1f", plt_h3, plt_h1, plt_h3p) +
             fmt("; RS h3 %.1f, h3-PEP %.1f ms", rs_h3, rs_h3p));
}

void lossy_web(const Table& web) {
  auto nopep = select(web, "plt_ms", {{"scenario", "geo-loss1"}, {"mode", "h3"}, {"pep", "0"}});
  auto pep = select(web, "plt_ms", {{"scenario", "geo-loss1"}, {"mode", "h3"}, {"pep", "1"}});
  double a = median(pep), b = median(nopep);
  report(7, !pep.empty() && !nopep.empty() && a < b, "GEO 1% loss median PLT h3-PEP < h3",
         fmt("h3-PEP %.1f ms (%.0f runs)", a, static_cast<double>(pep.size())) +
             fmt(", h3 %.1f ms (%.0f runs)", b, static_cast<double>(nopep.size())));
}

// Congestion control against independent closed forms and brute force.
void congestion_oracles() {
  using namespace satemu::cc;
  constexpr std::uint32_t mss = 1200;
  double worst = 0;
  auto rel = [&](double got, double want) {
    double e = want == 0 ? std::abs(got) : std::abs(got - want) / std::abs(want);
    worst = std::max(worst, e);
  };

  // Slow start: acking a whole window doubles it; after n rounds IW * 2^n.
  for (auto algo : {Algorithm::newreno, Algorithm::cubic}) {
    for (std::uint32_t iw : {1u, 10u, 100u}) {
      CongestionController c(algo, iw, mss);
      std::uint64_t pn = 0;
      for (int round = 1; round <= 12; ++round) {
        std::uint64_t packets = c.cwnd() / mss;
        for (std::uint64_t i = 0; i < packets; ++i) c.on_packet_acked(pn++, mss, SimTime{0});
        rel(static_cast<double>(c.cwnd()), static_cast<double>(iw) * mss * std::pow(2.0, round));
      }
    }
  }

  // Reduction factors from a window of 100 segments.
  for (auto [algo, beta] : {std::pair{Algorithm::newreno, 0.5}, std::pair{Algorithm::cubic, 0.7}}) {
    CongestionController c(algo, 100, mss);
    double before = static_cast<double>(c.cwnd());
    c.on_congestion_event(SimTime{0}, 0, 0);
    rel(static_cast<double>(c.ssthresh()), beta * before);
    rel(static_cast<double>(c.cwnd()), beta * before);
  }

  // NewReno avoidance against a per-byte accumulator.
  {
    CongestionController c(Algorithm::newreno, 100, mss);
    c.on_congestion_event(SimTime{0}, 0, 0);
    double cwnd = c.cwnd(), acc = 0;
    std::mt19937_64 gen(5);
    for (std::uint64_t pn = 1; pn < 20000; ++pn) {
      std::uint64_t bytes = 1 + gen() % mss;
      c.on_packet_acked(pn, bytes, SimTime{0});
      acc += static_cast<double>(bytes);
      while (acc >= cwnd) {
        acc -= cwnd;
        cwnd += mss;
      }
      rel(static_cast<double>(c.cwnd()), cwnd);
    }
  }

  // Cubic: K from bisection on C*K^3 = w_max*(1 - beta); W(K) = w_max; the
  // window follows C*(t-K)^3 + w_max once it dominates the Reno estimate.
  for (double w_max : {20.0, 100.0, 1000.0}) {
    double lo = 0, hi = 1000;
    for (int i = 0; i < 300; ++i) {
      double mid = (lo + hi) / 2;
      (0.4 * mid * mid * mid < w_max * 0.3 ? lo : hi) = mid;
    }
    double k = (lo + hi) / 2;
    CongestionController c(Algorithm::cubic, static_cast<std::uint32_t>(w_max), mss);
    c.on_congestion_event(SimTime{0}, 0, 0);
    rel(c.k_seconds(), k);
    rel(c.w_max_segments(), w_max);
    CongestionController at_k(Algorithm::cubic, static_cast<std::uint32_t>(w_max), mss);
    at_k.on_congestion_event(SimTime{0}, 0, 0);
    at_k.on_packet_acked(1, mss, from_seconds(at_k.k_seconds()));
    rel(static_cast<double>(at_k.cwnd()), w_max * mss);
    for (double t : {k + 1.0, k + 2.5, k + 4.0}) {
      CongestionController late(Algorithm::cubic, static_cast<std::uint32_t>(w_max), mss);
      late.on_congestion_event(SimTime{0}, 0, 0);
      SimTime at = from_seconds(t);
      late.on_packet_acked(1, mss, at);
      // Evaluated at the instant the controller sees, whole microseconds.
      double tq = static_cast<double>(at.count()) / 1e6;
      double want = std::floor((0.4 * std::pow(tq - k, 3) + w_max) * mss);
      rel(static_cast<double>(late.cwnd()), want);
    }
  }
  report(8, worst <= 1e-9, "congestion control oracles", fmt("worst relative error %.3g, bound 1e-9", worst));
}

void loss_and_determinism(const fs::path& scratch) {
  // Loss: both directions of the satellite hop at each preset loss rate.
  bool loss_ok = true;
  double worst_sigma = 0;
  const int n = 100000;
  for (double pct : {0.01, 0.1, 1.0}) {
    ScenarioConfig c = preset("geo");
    c.loss_pct = pct;
    auto hops = c.run_setup(Measurement::quic_bulk, false, 0).path.hops();
    for (const auto* spec : {&hops[1].toward_client, &hops[1].toward_server}) {
      emunet::Link link(*spec);
      emunet::Rng rng(7);
      SimTime gap = emunet::serialization_time(1200, spec->rate_bps);
      int dropped = 0;
      for (int i = 0; i < n; ++i)
        if (std::holds_alternative<emunet::Dropped>(link.enqueue(1200, gap * i, rng))) ++dropped;
      double p = pct / 100, sigma = std::sqrt(p * (1 - p) / n);
      double dev = std::abs(static_cast<double>(dropped) / n - p) / sigma;
      worst_sigma = std::max(worst_sigma, dev);
      loss_ok = loss_ok && dev <= 4 && link.stats().overflow_drops == 0;
    }
  }

  // Determinism: the same matrix twice with one worker, once with four.
  std::vector<ScenarioConfig> cfgs{
      scenario("geo", "geo-loss1", 1, {Measurement::quic_bulk, Measurement::tcp_bulk, Measurement::h3_web,
                                       Measurement::h1_web}, 2),
      scenario("leo", "leo-loss0.1", 0.1, {Measurement::quic_bulk, Measurement::h1_web}, 2)};
  run_into(cfgs, scratch / "det_a");
  run_into(cfgs, scratch / "det_b");
  run_into(cfgs, scratch / "det_c", 4);
  bool same = true;
  std::string differing;
  for (const char* f : {"goodput.csv", "cwnd.csv", "bulk.csv", "web.csv", "runs.csv"}) {
    std::string a = slurp(scratch / "det_a" / f);
    if (a != slurp(scratch / "det_b" / f) || a != slurp(scratch / "det_c" / f)) {
      same = false;
      differing += std::string(" ") + f;
    }
  }
  report(9, loss_ok && same, "loss calibration and determinism",
         fmt("worst loss deviation %.2f sigma over 100k packets, bound 4", worst_sigma) +
             (same ? "; CSVs identical across repeats and --jobs 1/4" : "; CSVs differ:" + differing));
}

void rate_cap() {
  // Forward deliveries of the satellite hop, per run, over the preset grid.
  double worst_excess = -1e18;
  std::size_t runs = 0, windows = 0;
  for (const ScenarioConfig& c : preset_grid()) {
    for (Measurement m : c.measurements) {
      for (bool pep : c.pep_arms()) {
        std::vector<std::pair<SimTime, std::uint32_t>> arrivals;
        std::uint32_t largest = 0;
        workloads::RunSetup setup = c.run_setup(m, pep, 0);
        setup.link_observer = [&](const emunet::LinkEvent& e) {
          if (e.hop != 1 || e.direction != emunet::Direction::forward || e.dropped) return;
          arrivals.emplace_back(e.arrival, e.size_bytes);
          largest = std::max(largest, e.size_bytes);
        };
        if (is_bulk(m)) {
          workloads::run_bulk(setup);
        } else {
          workloads::run_web(setup, m == Measurement::h3_web ? workloads::HttpMode::h3 : workloads::HttpMode::h1,
                             *c.manifest);
        }
        ++runs;
        std::sort(arrivals.begin(), arrivals.end());
        // Every 1 s window starting at a delivery.
        std::uint64_t sum = 0;
        std::size_t j = 0;
        for (std::size_t i = 0; i < arrivals.size(); ++i) {
          if (j < i) {
            j = i;
            sum = 0;
          }
          while (j < arrivals.size() && arrivals[j].first < arrivals[i].first + 1s) sum += arrivals[j++].second;
          double cap = kForwardBps / 8.0 + largest;
          worst_excess = std::max(worst_excess, static_cast<double>(sum) - cap);
          ++windows;
          sum -= arrivals[i].second;
        }
      }
    }
  }
  report(10, worst_excess <= 0, "forward satellite deliveries within 20 Mbit/s + one packet per 1 s window",
         fmt("%.0f runs, %.0f windows, largest window minus cap %.0f bytes", static_cast<double>(runs),
             static_cast<double>(windows), worst_excess));
}

}  // namespace

int main() {
  fs::path scratch = fs::temp_directory_path() / ("satemu_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  try {
    const std::vector<Measurement> all{Measurement::quic_bulk, Measurement::tcp_bulk, Measurement::h3_web,
                                       Measurement::h1_web};
    run_into({scenario("geo", "geo", 0, all, kReps),
              scenario("geo", "geo-loss1", 1, {Measurement::h3_web}, kReps)},
             scratch / "geo");
    run_into({scenario("leo", "leo", 0, {Measurement::quic_bulk, Measurement::tcp_bulk}, kReps)}, scratch / "leo");

    Table geo_bulk = read_csv(scratch / "geo" / "bulk.csv");
    Table geo_goodput = read_csv(scratch / "geo" / "goodput.csv");
    Table geo_web = read_csv(scratch / "geo" / "web.csv");
    Table leo_bulk = read_csv(scratch / "leo" / "bulk.csv");
    Table leo_goodput = read_csv(scratch / "leo" / "goodput.csv");

    handshake(geo_bulk, leo_bulk);
    h1_response_start(geo_web);
    slow_start(geo_goodput);
    Ratio geo = cum_ratio(geo_goodput, "geo");
    early_ratio(geo);
    leo_benefit(geo, cum_ratio(leo_goodput, "leo"));
    web_orderings(geo_web);
    lossy_web(geo_web);
    congestion_oracles();
    loss_and_determinism(scratch);
    rate_cap();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    fs::remove_all(scratch);
    return 2;
  }
  fs::remove_all(scratch);
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}

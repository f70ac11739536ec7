// Prints PEP vs non-PEP cumulative bytes for one GEO bulk download.

#include <cstdio>

#include "satemu/workloads.hpp"

int main() {
  using namespace satemu::workloads;
  RunSetup setup;  // GEO path, QUIC, Cubic/IW10 endpoints
  BulkResult plain = run_bulk(setup);
  setup.pep.enabled = true;
  BulkResult pep = run_bulk(setup);

  std::printf("%6s %12s %12s %7s\n", "t_ms", "non-PEP_B", "PEP_B", "ratio");
  for (std::size_t i = 4; i < plain.goodput.size(); i += 5) {
    double a = static_cast<double>(plain.goodput[i].cum_bytes);
    double b = static_cast<double>(pep.goodput[i].cum_bytes);
    std::printf("%6lld %12.0f %12.0f %7.2f\n", static_cast<long long>(plain.goodput[i].t_ms), a, b, a > 0 ? b / a : 0.0);
  }
  std::printf("ttfb: non-PEP %.1f ms, PEP %.1f ms\n", plain.ttfb_ms, pep.ttfb_ms);
}

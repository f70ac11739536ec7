// Loads the default page over h3 and h1, with and without the proxies.

#include <cstdio>
#include <cstdlib>

#include "satemu/workloads.hpp"

int main(int argc, char** argv) {
  using namespace satemu::workloads;
  double loss_pct = argc > 1 ? std::atof(argv[1]) : 0.0;
  PageManifest page = default_manifest();
  std::printf("GEO, %.2f%% loss, %zu objects, %llu bytes\n", loss_pct, page.size(),
              static_cast<unsigned long long>(page.total_bytes()));
  std::printf("%-8s %8s %8s %8s\n", "arm", "RS_ms", "FCP_ms", "PLT_ms");
  for (HttpMode mode : {HttpMode::h3, HttpMode::h1})
    for (bool pep : {false, true}) {
      RunSetup setup;
      setup.path.loss_prob = loss_pct / 100.0;
      setup.pep.enabled = pep;
      WebResult r = run_web(setup, mode, page);
      char arm[16];
      std::snprintf(arm, sizeof arm, "%s%s", to_string(mode), pep ? "-PEP" : "");
      if (r.status != RunStatus::ok) {
        std::printf("%-8s failed: %s\n", arm, r.error.c_str());
        continue;
      }
      std::printf("%-8s %8.0f %8.0f %8.0f\n", arm, r.rs_ms, r.fcp_ms, r.plt_ms);
    }
}

#include <doctest.h>

#include <cmath>

#include "msgfem/driver.hpp"

using namespace msgfem;

// Seeded random configurations through the whole pipeline: meshes need not
// be square, covers may degenerate to one subdomain, the oversampling may
// swallow the domain, and contrasts reach 1e4. Every run must finish with a
// sane certified error.
TEST_CASE("randomized configuration battery") {
  for (int trial = 0; trial < 12; ++trial) {
    auto u = [&](int salt) { return detail::uniform01(detail::splitmix64(trial * 97 + salt)); };
    RunConfig cfg;
    cfg.nx = 8 + static_cast<int>(u(1) * 40);
    cfg.ny = 8 + static_cast<int>(u(2) * 40);
    cfg.m = std::min({1 + static_cast<int>(u(3) * 4), cfg.nx, cfg.ny});
    cfg.overlap = 1 + static_cast<int>(u(4) * 3);
    cfg.ell = 1 + static_cast<int>(u(5) * 8);
    cfg.n_loc = static_cast<int>(u(6) * 10);
    const double pick = u(7);
    if (pick < 0.3) {
      cfg.coeff = "constant";
    } else if (pick < 0.65) {
      cfg.coeff = "channels";
      cfg.coeff_params.contrast = std::pow(10.0, 1 + u(8) * 3);
      cfg.coeff_params.period = 1 + static_cast<int>(u(9) * 6);
      cfg.coeff_params.vertical = u(10) < 0.5;
    } else {
      cfg.coeff = "inclusions";
      cfg.coeff_params.contrast = std::pow(10.0, 1 + u(8) * 3);
      cfg.coeff_params.period = 1 + static_cast<int>(u(9) * 6);
      cfg.coeff_params.seed = static_cast<std::uint64_t>(trial);
    }
    if (u(12) < 0.3) {
      cfg.tol_loc = std::pow(10.0, -3 * u(13));
      cfg.adaptive_max = 12;
    }
    cfg.threads = 2;
    CAPTURE(trial);
    CAPTURE(cfg.nx);
    CAPTURE(cfg.ny);
    CAPTURE(cfg.m);
    CAPTURE(cfg.ell);
    CAPTURE(cfg.n_loc);
    CAPTURE(cfg.coeff);
    const RunResult r = run_experiment(cfg);
    CHECK(std::isfinite(r.error.energy_rel));
    CHECK(r.error.energy_rel < 1.5);
    CHECK(r.bound.holds);
  }
}

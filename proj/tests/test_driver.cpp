#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "msgfem/driver.hpp"
#include "msgfem/validate.hpp"

using namespace msgfem;

namespace {

std::string mask_timings(const std::string& row) {
  // drop the three trailing wall-clock fields
  int commas = 0;
  std::size_t pos = row.size();
  for (std::size_t k = row.size(); k-- > 0;) {
    if (row[k] == ',' && ++commas == 3) {
      pos = k;
      break;
    }
  }
  return row.substr(0, pos);
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.nx = cfg.ny = 32;
  cfg.m = 2;
  cfg.ell = 2;
  cfg.n_loc = 4;
  cfg.coeff = "channels";
  cfg.coeff_params.contrast = 100;
  cfg.coeff_params.period = 4;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  RunConfig cfg = small_config();
  cfg.m = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.ell = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.overlap = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.pou_product = "sometimes";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.tol_loc = 0.1;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.adaptive());
}

TEST_CASE("csv schema") {
  CHECK(std::string(kCsvHeader) ==
        "run_id,nx,ny,m,overlap,ell,n_loc,H_ratio,err_h1_rel,err_energy_rel,bound_rhs,kappa,"
        "kappa_star,t_fine_s,t_local_s,t_coarse_s");
}

TEST_CASE("runs are bit-reproducible at one worker, timings aside") {
  const RunConfig cfg = small_config();
  const RunResult a = run_experiment(cfg);
  const RunResult b = run_experiment(cfg);
  CHECK(mask_timings(csv_row(cfg, a)) == mask_timings(csv_row(cfg, b)));
  CHECK(a.run_id == b.run_id);
  CHECK((a.sol.u - b.sol.u).cwiseAbs().maxCoeff() == 0.0);

  RunConfig zero_t = cfg;
  zero_t.timings = "zero";
  const RunResult c = run_experiment(zero_t);
  const RunResult d = run_experiment(zero_t);
  CHECK(csv_row(zero_t, c) == csv_row(zero_t, d));  // fully bit-identical rows
}

TEST_CASE("worker count does not change the result") {
  RunConfig cfg = small_config();
  const RunResult a = run_experiment(cfg);
  cfg.threads = 4;
  const RunResult b = run_experiment(cfg);
  CHECK((a.sol.u - b.sol.u).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.error.energy_rel == b.error.energy_rel);
}

TEST_CASE("run ids differ across configs") {
  RunConfig a = small_config();
  RunConfig b = a;
  b.ell = 3;
  RunConfig c = a;
  c.coeff_params.contrast = 101;
  CHECK(config_run_id(a) != config_run_id(b));
  CHECK(config_run_id(a) != config_run_id(c));
}

TEST_CASE("run emits a bound-checked row") {
  const RunConfig cfg = small_config();
  const RunResult r = run_experiment(cfg);
  CHECK(r.bound.holds);
  CHECK(r.error.h1_rel < 1.0);
  CHECK(r.error.energy_rel < 1.0);
  const std::string row = csv_row(cfg, r);
  CHECK(row.find(r.run_id) == 0);
  // H/H* lies in (0,1)
  CHECK(r.h_ratio_mean > 0.0);
  CHECK(r.h_ratio_mean < 1.0);
}

TEST_CASE("local-dimension sweep reuses the bases and decays") {
  RunConfig cfg = small_config();
  cfg.nx = cfg.ny = 64;
  cfg.ell = 4;
  std::ostringstream csv;
  const std::vector<int> values = {2, 5, 9};
  const auto rows = sweep(cfg, SweepAxis::NLoc, values, csv);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].error.energy_rel <= rows[0].error.energy_rel * (1 + 1e-9));
  CHECK(rows[2].error.energy_rel <= rows[1].error.energy_rel * (1 + 1e-9));
  // one row per value plus the header
  int lines = 0;
  std::string line;
  std::istringstream in(csv.str());
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 4);
  CHECK(csv.str().rfind(kCsvHeader, 0) == 0);
}

TEST_CASE("oversampling sweep improves the error") {
  RunConfig cfg = small_config();
  cfg.nx = cfg.ny = 64;
  cfg.n_loc = 8;
  std::ostringstream csv;
  const auto rows = sweep(cfg, SweepAxis::Ell, {2, 6}, csv);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].error.energy_rel < rows[0].error.energy_rel);
}

TEST_CASE("subdomain-count sweep runs and stays bounded") {
  RunConfig cfg = small_config();
  cfg.nx = cfg.ny = 64;
  cfg.ell = 4;
  cfg.n_loc = 6;
  std::ostringstream csv;
  const auto rows = sweep(cfg, SweepAxis::M, {2, 4}, csv);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.bound.holds);
    CHECK(r.error.energy_rel < 0.5);
  }
}

TEST_CASE("sweep argument validation") {
  RunConfig cfg = small_config();
  std::ostringstream csv;
  CHECK_THROWS_AS(sweep(cfg, SweepAxis::NLoc, {}, csv), std::invalid_argument);
  CHECK_THROWS_AS(sweep(cfg, SweepAxis::NLoc, {5, 5}, csv), std::invalid_argument);
  CHECK_THROWS_AS(parse_axis("diagonal"), std::invalid_argument);
}

TEST_CASE("eigenvalue dump covers the requested subdomains") {
  RunConfig cfg = small_config();
  cfg.nx = cfg.ny = 64;
  cfg.m = 4;
  cfg.n_loc = 5;
  std::ostringstream out;
  const auto bases = eig_dump(cfg, {0, 5}, out);
  REQUIRE(bases.size() == 2);
  CHECK(bases[0].subdomain_id == 0);
  CHECK(bases[1].subdomain_id == 5);
  // subdomain 5 is interior at m = 4: its first row carries the zero
  CHECK(bases[1].includes_constant);
  CHECK(out.str().find("5,1,0,inf") != std::string::npos);
  std::ostringstream sink;
  CHECK_THROWS_AS(eig_dump(cfg, {99}, sink), std::invalid_argument);
}

TEST_CASE("adaptive selection drives the error with the tolerance") {
  RunConfig loose = small_config();
  loose.nx = loose.ny = 64;
  loose.ell = 4;
  loose.n_loc = 0;
  loose.tol_loc = 0.5;
  loose.adaptive_max = 14;
  RunConfig tight = loose;
  tight.tol_loc = 0.02;
  const RunResult a = run_experiment(loose);
  const RunResult b = run_experiment(tight);
  int na = 0, nb = 0;
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    na += a.counts[i];
    nb += b.counts[i];
  }
  CHECK(nb >= na);
  CHECK(b.error.energy_rel <= a.error.energy_rel * (1 + 1e-9));
  CHECK(b.bound.certificate_factor <= 0.02 * (1 + 1e-12));
}

TEST_CASE("single-subdomain cover reproduces the fine solution exactly") {
  RunConfig cfg = small_config();
  cfg.nx = cfg.ny = 24;
  cfg.m = 1;
  const RunResult r = run_experiment(cfg);
  // the particular function alone solves the problem; no eigenproblem is posed
  CHECK(r.error.energy_rel < 1e-12);
  CHECK(r.bound.holds);
  CHECK(r.coarse.Phi.cols() == 0);
}

TEST_CASE("conjugate-gradient fine solver flows through the pipeline") {
  RunConfig cfg = small_config();
  cfg.fine_solver = "cg";
  const RunResult r = run_experiment(cfg);
  CHECK(r.bound.holds);
  CHECK(r.error.energy_rel < 0.5);
}

TEST_CASE("thread count resolution honours the environment fallback") {
  RunConfig cfg = small_config();
  cfg.threads = 3;
  CHECK(resolve_threads(cfg) == 3);
  cfg.threads = 0;
  setenv("MSGFEM_THREADS", "5", 1);
  CHECK(resolve_threads(cfg) == 5);
  unsetenv("MSGFEM_THREADS");
  CHECK(resolve_threads(cfg) >= 1);
}

TEST_CASE("validation bundle passes on the default preset") {
  RunConfig cfg;
  cfg.nx = cfg.ny = 32;
  cfg.m = 2;
  cfg.ell = 4;
  cfg.n_loc = 6;
  cfg.coeff = "channels";
  cfg.coeff_params.contrast = 1e3;
  cfg.coeff_params.period = 4;
  cfg.threads = 2;
  const ValidationReport rep = validate_run(cfg);
  for (const auto& c : rep.checks) CHECK_MESSAGE(c.pass, c.name, ": ", c.detail);
  CHECK(rep.all_pass());
}

#include <doctest.h>

#include <cmath>

#include "msgfem/driver.hpp"
#include "msgfem/oracle.hpp"

using namespace msgfem;

namespace {

LocalSystem make_patch(int n, int m, int ell, const std::string& coeff, int sub,
                       const std::string& boundary = "benchmark") {
  RunConfig cfg;
  cfg.nx = cfg.ny = n;
  cfg.m = m;
  cfg.ell = ell;
  cfg.coeff = coeff;
  cfg.coeff_params.contrast = 1e3;
  cfg.coeff_params.period = 4;
  ProblemSetup p = make_problem(cfg);
  if (boundary == "all_neumann") p.tags = classify_boundary(p.mesh, BoundarySpec::all_neumann());
  Decomposition d = decompose(p.mesh, p.tags, m, cfg.overlap, ell);
  return build_local_system(p.mesh, p.tags, p.coeff, p.data, d, sub);
}

}  // namespace

TEST_CASE("harmonic extensions obey the discrete maximum principle at constant coefficient") {
  const LocalSystem sys = make_patch(16, 2, 2, "constant", 0);
  const oracle::HarmonicBasis basis = oracle::dense_harmonic_basis(sys);
  REQUIRE(basis.columns.cols() == sys.n2());
  for (int k = 0; k < sys.n2(); ++k) {
    const Vec& col = basis.columns.col(k);
    // boundary data is the unit hat: values in [0, 1] everywhere
    CHECK(col.minCoeff() >= -1e-12);
    CHECK(col.maxCoeff() <= 1.0 + 1e-12);
  }
}

TEST_CASE("harmonic basis columns satisfy the interior residual test") {
  const LocalSystem sys = make_patch(24, 2, 3, "channels", 1);
  const oracle::HarmonicBasis basis = oracle::dense_harmonic_basis(sys);
  const double amax = sys.K_star.coeffs().abs().maxCoeff();
  for (int k = 0; k < sys.n2(); ++k) {
    const Vec r = sys.K_star * basis.columns.col(k);
    double rmax = 0.0;
    for (int l : sys.b1) rmax = std::max(rmax, std::abs(r[l]));
    CHECK(rmax <= 1e-10 * amax * basis.columns.col(k).norm());
  }
}

TEST_CASE("harmonic basis columns are linearly independent") {
  const LocalSystem sys = make_patch(16, 2, 2, "channels", 0);
  const oracle::HarmonicBasis basis = oracle::dense_harmonic_basis(sys);
  const Mat G = basis.columns.transpose() * basis.columns;
  Eigen::SelfAdjointEigenSolver<Mat> es(G);
  CHECK(es.eigenvalues().minCoeff() > 1e-12 * es.eigenvalues().maxCoeff());
  CHECK(Eigen::ColPivHouseholderQR<Mat>(basis.columns).rank() == sys.n2());
}

TEST_CASE("floating patch: the constant is in the span and carries zero energy") {
  const LocalSystem sys = make_patch(16, 2, 2, "constant", 0, "all_neumann");
  REQUIRE(!sys.touches_dirichlet);
  const oracle::HarmonicBasis basis = oracle::dense_harmonic_basis(sys);
  // the extension of all-ones boundary data is the constant
  const Vec combo = basis.columns * Vec::Ones(sys.n2());
  CHECK((combo - Vec::Ones(sys.n_local())).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(energy_norm(sys.K_star, combo) < 1e-6);  // sqrt of quadratic-form roundoff

  const oracle::DenseEigResult eig = oracle::dense_eigensolve(sys, basis);
  CHECK(eig.values[0] == 0.0);  // reported exactly
  CHECK(eig.values[1] > 0.0);
}

TEST_CASE("desk-scale guard refuses oversized patches") {
  const LocalSystem sys = make_patch(24, 2, 2, "constant", 0);
  CHECK_THROWS_WITH_AS(oracle::dense_harmonic_basis(sys, 4), doctest::Contains("desk-scale"),
                       std::runtime_error);
}

TEST_CASE("scaling the coefficient leaves the spectrum unchanged") {
  RunConfig cfg;
  cfg.nx = cfg.ny = 16;
  cfg.m = 2;
  cfg.ell = 2;
  ProblemSetup p = make_problem(cfg);
  Decomposition d = decompose(p.mesh, p.tags, 2, 2, 2);
  CoefficientField ten;
  for (double v : p.coeff.value) ten.value.push_back(10.0 * v);
  ten.alpha = 10.0 * p.coeff.alpha;
  ten.beta = 10.0 * p.coeff.beta;
  const LocalSystem a = build_local_system(p.mesh, p.tags, p.coeff, p.data, d, 0);
  const LocalSystem b = build_local_system(p.mesh, p.tags, ten, p.data, d, 0);
  const oracle::DenseEigResult ea = oracle::dense_eigensolve(a);
  const oracle::DenseEigResult eb = oracle::dense_eigensolve(b);
  REQUIRE(ea.values.size() == eb.values.size());
  for (int k = 0; k < ea.values.size(); ++k) {
    // attainable relative accuracy degrades with the spectral ratio
    const double tol = std::max(1e-11, 1e-13 * ea.values[k] / ea.values[0]);
    CHECK(eb.values[k] == doctest::Approx(ea.values[k]).epsilon(tol));
  }
}

TEST_CASE("best local error: complete span, monotonicity") {
  RunConfig cfg;
  cfg.nx = cfg.ny = 16;
  cfg.m = 2;
  cfg.ell = 2;
  cfg.coeff = "channels";
  cfg.coeff_params.contrast = 1e3;
  cfg.coeff_params.period = 4;
  const ProblemSetup p = make_problem(cfg);
  const GlobalSystem gsys = assemble_global_system(p.mesh, p.tags, p.coeff, p.data);
  const Vec u_e = fine_solve(p.mesh, p.tags, gsys, p.data);
  const Decomposition d = decompose(p.mesh, p.tags, 2, 2, 2);
  const LocalSystem sys = build_local_system(p.mesh, p.tags, p.coeff, p.data, d, 0);
  LocalEigenOptions opt;
  opt.n_loc = -1;  // full span
  const LocalSpectralBasis basis = solve_subdomain(sys, opt);
  const Vec ue_loc = sys.gather_global(u_e);

  double prev = std::numeric_limits<double>::infinity();
  for (int n = 1; n <= basis.n_members(); ++n) {
    const double e = oracle::best_local_error(sys, basis, ue_loc, n);
    CHECK(e <= prev * (1 + 1e-12));
    prev = e;
  }
  const double full = oracle::best_local_error(sys, basis, ue_loc, basis.n_members());
  CHECK(full <= 1e-10 * energy_norm(sys.K_star, ue_loc));
}

TEST_CASE("certificate bounds the best local approximation error") {
  RunConfig cfg;
  cfg.nx = cfg.ny = 64;
  cfg.m = 2;
  cfg.ell = 4;
  cfg.coeff = "channels";
  cfg.coeff_params.contrast = 1e3;
  cfg.coeff_params.period = 4;
  const ProblemSetup p = make_problem(cfg);
  const GlobalSystem gsys = assemble_global_system(p.mesh, p.tags, p.coeff, p.data);
  const Vec u_e = fine_solve(p.mesh, p.tags, gsys, p.data);
  const Decomposition d = decompose(p.mesh, p.tags, 2, 2, 4);
  for (int i = 0; i < d.size(); ++i) {
    const LocalSystem sys = build_local_system(p.mesh, p.tags, p.coeff, p.data, d, i);
    LocalEigenOptions opt;
    opt.n_loc = 10;
    const LocalSpectralBasis basis = solve_subdomain(sys, opt);
    const Vec ue_loc = sys.gather_global(u_e);
    const double ue_norm = energy_norm(sys.K_star, ue_loc);
    for (int n = 1; n <= 8; ++n) {
      const double lam = basis.lambda[static_cast<std::size_t>(n)];
      if (!(lam > 0.0) || std::isinf(lam)) continue;
      const double best = oracle::best_local_error(sys, basis, ue_loc, n);
      CHECK(best <= ue_norm / std::sqrt(lam) * (1 + 1e-8));
    }
  }
}

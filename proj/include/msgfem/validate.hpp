#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "driver.hpp"

namespace msgfem {

struct ValidationCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;

  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  void print(std::ostream& out) const {
    for (const auto& c : checks)
      out << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  }
};

namespace detail {

inline Vec random_free_vector(int n, std::uint64_t seed) {
  Vec v(n);
  for (int i = 0; i < n; ++i)
    v[i] = 2.0 * uniform01(splitmix64(seed) ^ static_cast<std::uint64_t>(i)) - 1.0;
  return v;
}

/// Largest principal angle between two spans given B-orthonormal column
/// blocks of equal width. Computed through the sine (residual against the
/// second span) so small angles are not lost to cancellation in a cosine.
inline double principal_angle(const Mat& X1, const Mat& X2, const SpMat& B) {
  const Mat C = X2.transpose() * (B * X1);
  const Mat D = X1 - X2 * C;
  const Mat S = D.transpose() * (B * D);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
  const double s = std::sqrt(std::max(es.eigenvalues().maxCoeff(), 0.0));
  return std::asin(std::clamp(s, 0.0, 1.0));
}

}  // namespace detail

/// Compares the reduced-route eigenvalues of one patch against the dense
/// route: the first `count` member values must agree to rel_tol, and
/// eigenspaces of well-separated clusters must align to angle_tol radians.
inline bool compare_eigen_routes(const LocalSystem& sys, const LocalSpectralBasis& iter,
                                 const LocalSpectralBasis& dense, int count, double rel_tol,
                                 double angle_tol, double gap_tol, std::string& msg) {
  const int k_iter = iter.n_members();
  const int k_dense = dense.n_members();
  const int K = std::min({count, k_iter, k_dense});
  for (int k = 0; k < K; ++k) {
    const double a = iter.lambda[static_cast<std::size_t>(k)];
    const double b = dense.lambda[static_cast<std::size_t>(k)];
    const double denom = std::max(std::abs(b), 1e-300);
    if (a == 0.0 && b == 0.0) continue;
    if (!(std::abs(a - b) <= rel_tol * denom)) {
      msg = "subdomain " + std::to_string(sys.id) + ": lambda[" + std::to_string(k + 1) +
               "] mismatch " + g17(a) + " vs " + g17(b);
      return false;
    }
  }
  // Cluster the reference values by relative gap and compare spans of the
  // clusters that are separated on both sides.
  int k = 0;
  while (k < K) {
    int e = k + 1;
    auto gap_ok = [&](double lo, double hi) { return hi - lo > gap_tol * std::max(hi, 1e-300); };
    while (e < K && !gap_ok(dense.lambda[e - 1], dense.lambda[e])) ++e;
    const bool left_sep = (k == 0) || gap_ok(dense.lambda[k - 1], dense.lambda[k]);
    const bool right_sep =
        (e < static_cast<int>(dense.lambda.size())) && gap_ok(dense.lambda[e - 1], dense.lambda[e]);
    if (left_sep && right_sep && e <= k_iter && e <= k_dense) {
      const Mat X1 = iter.vectors.middleCols(k, e - k);
      const Mat X2 = dense.vectors.middleCols(k, e - k);
      const double ang = detail::principal_angle(X1, X2, sys.B_full);
      if (!(ang < angle_tol)) {
        msg = "subdomain " + std::to_string(sys.id) + ": principal angle " + g17(ang) +
                 " for cluster [" + std::to_string(k + 1) + "," + std::to_string(e) + "]";
        return false;
      }
    }
    k = e;
  }
  msg = "ok";
  return true;
}

/// Bundled desk-scale verification: route equivalence, particular-function
/// residuals, the orthogonal splitting of the fine solution, the local and
/// global a-posteriori bounds, eigenpair residuals, Galerkin orthogonality,
/// and the full-span exactness limit.
inline ValidationReport validate_run(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.adaptive())
    throw std::invalid_argument("validate: fixed n_loc configuration required");
  ValidationReport rep;
  auto add = [&](const std::string& name, bool pass, const std::string& detail) {
    rep.checks.push_back({name, pass, detail});
  };

  const ProblemSetup p = make_problem(cfg);
  const GlobalSystem sys = assemble_global_system(p.mesh, p.tags, p.coeff, p.data);
  const Vec u_e = fine_solve(p.mesh, p.tags, sys, p.data);
  const Decomposition decomp = decompose(p.mesh, p.tags, cfg.m, cfg.overlap, cfg.ell);
  const PouProduct mode = parse_pou_product(cfg.pou_product);

  const int n_chk = std::max(cfg.n_loc, 10);
  LocalEigenOptions opt_dense = eigen_options(cfg);
  opt_dense.n_loc = n_chk;
  opt_dense.dense_threshold = 1 << 30;
  LocalEigenOptions opt_iter = opt_dense;
  opt_iter.dense_threshold = 0;

  const int M = decomp.size();
  std::vector<LocalSystem> systems(M);
  std::vector<LocalSpectralBasis> dense_bases(M), iter_bases(M);
  std::vector<LocalSolveResult> locals(M);
  parallel_for(M, resolve_threads(cfg), [&](int i) {
    systems[i] = build_local_system(p.mesh, p.tags, p.coeff, p.data, decomp, i, mode);
    LocalFactorization fact = factorize_local(systems[i]);
    dense_bases[i] = solve_local_eigenpairs(systems[i], fact, opt_dense);
    iter_bases[i] = solve_local_eigenpairs_iterative(systems[i], fact, opt_iter);
    const Vec psi_r = solve_particular_r(systems[i], fact);
    const Vec psi_d = solve_particular_d(systems[i], fact);
    dense_bases[i].psi_r = iter_bases[i].psi_r = psi_r;
    dense_bases[i].psi_d = iter_bases[i].psi_d = psi_d;
    locals[i] = make_result(systems[i], dense_bases[i]);
  });

  {  // reduced route vs dense route
    bool ok = true;
    std::string msg = "ok";
    for (int i = 0; i < M && ok; ++i)
      ok = compare_eigen_routes(systems[i], iter_bases[i], dense_bases[i], 10, 1e-8, 1e-6, 1e-4,
                                msg);
    add("eigensolver-route-equivalence", ok, msg);
  }

  {  // particular-function residuals: solver contract plus 20 random test
     // functions, scaled as |r' v| <= |r| |v| against the forcing norm
    bool ok = true;
    double worst = 0.0;
    for (int i = 0; i < M; ++i) {
      const LocalSystem& ls = systems[i];
      const Vec psi_r = dense_bases[i].psi_r, psi_d = dense_bases[i].psi_d;
      const Vec res_r_full = ls.K_star * psi_r - ls.F_local;
      Vec lift = Vec::Zero(ls.n_local());
      for (std::size_t k = 0; k < ls.dir.size(); ++k) lift[ls.dir[k]] = ls.q_dir[k];
      const Vec res_d_full = ls.K_star * psi_d;
      double f_norm = 0.0, rr = 0.0;
      for (int k = 0; k < ls.n1(); ++k) {
        f_norm += ls.F_local[ls.b1[k]] * ls.F_local[ls.b1[k]];
        rr += res_r_full[ls.b1[k]] * res_r_full[ls.b1[k]];
      }
      const double d_scale = (ls.K_star * lift).norm() + 1e-300;
      double rd = 0.0;
      for (int f = 0; f < ls.n_free(); ++f)
        rd += res_d_full[ls.local_of_free[f]] * res_d_full[ls.local_of_free[f]];
      worst = std::max(worst, std::sqrt(rr) / (std::sqrt(f_norm) + 1e-300));
      worst = std::max(worst, std::sqrt(rd) / d_scale);
      for (int t = 0; t < 20; ++t) {
        Vec v = Vec::Zero(ls.n_local());
        const Vec rb1 = detail::random_free_vector(ls.n1(), 0xA11EULL + 37 * i + t);
        for (int k = 0; k < ls.n1(); ++k) v[ls.b1[k]] = rb1[k];
        const double fv = ls.F_local.dot(v);
        const double res = std::abs(psi_r.dot(ls.K_star * v) - fv);
        worst = std::max(worst, res / (std::sqrt(f_norm) * v.norm() + 1e-300));

        Vec w = Vec::Zero(ls.n_local());
        const Vec rf = detail::random_free_vector(ls.n_free(), 0xD1DULL + 41 * i + t);
        for (int f = 0; f < ls.n_free(); ++f) w[ls.local_of_free[f]] = rf[f];
        const double resd = std::abs(psi_d.dot(ls.K_star * w));
        worst = std::max(worst, resd / (d_scale * w.norm()));
      }
    }
    ok = worst <= 1e-10;
    add("particular-residuals", ok, "max residual " + g17(worst) + " (tol 1e-10)");
  }

  {  // orthogonal splitting of the fine solution and its harmonicity
    bool ok = true;
    double worst_orth = 0.0, worst_harm = 0.0;
    for (int i = 0; i < M; ++i) {
      const LocalSystem& ls = systems[i];
      const Vec ue = ls.gather_global(u_e);
      const Vec psi = dense_bases[i].psi();
      const Vec d = ue - psi;
      const double num = std::abs(d.dot(ls.K_star * psi));
      const double den = energy_norm(ls.K_star, ue) * energy_norm(ls.K_star, psi) + 1e-300;
      worst_orth = std::max(worst_orth, num / den);

      const Vec r = ls.K_star * d;
      double rmax = 0.0;
      for (int k : ls.b1) rmax = std::max(rmax, std::abs(r[k]));
      double kmax = 0.0;
      for (int k = 0; k < ls.K_star.outerSize(); ++k)
        for (SpMat::InnerIterator it(ls.K_star, k); it; ++it)
          kmax = std::max(kmax, std::abs(it.value()));
      worst_harm = std::max(worst_harm, rmax / (kmax * d.norm() + 1e-300));
    }
    ok = worst_orth <= 1e-9 && worst_harm <= 1e-8;
    add("orthogonal-decomposition", ok,
        "orthogonality " + g17(worst_orth) + " (tol 1e-9), harmonicity " + g17(worst_harm) +
            " (tol 1e-8)");
  }

  {  // local best-approximation bound via the certificate
    bool ok = true;
    double worst_ratio = 0.0;
    for (int i = 0; i < M; ++i) {
      const LocalSystem& ls = systems[i];
      const Vec ue = ls.gather_global(u_e);
      const double ue_norm = energy_norm(ls.K_star, ue);
      const int n_max = std::min(8, dense_bases[i].n_members());
      for (int n = 1; n <= n_max; ++n) {
        const double lam = dense_bases[i].lambda[static_cast<std::size_t>(n)];
        if (std::isinf(lam) || lam <= 0.0) continue;
        const double best = oracle::best_local_error(ls, dense_bases[i], ue, n);
        const double rhs = ue_norm / std::sqrt(lam);
        worst_ratio = std::max(worst_ratio, best / (rhs + 1e-300));
      }
    }
    ok = worst_ratio <= 1.0 + 1e-8;
    add("local-n-width-bound", ok, "max ratio " + g17(worst_ratio) + " (tol 1+1e-8)");
  }

  std::vector<int> counts(M);
  for (int i = 0; i < M; ++i) {
    const int extra = dense_bases[i].includes_constant ? 1 : 0;
    counts[i] = std::min(cfg.n_loc + extra, dense_bases[i].n_members());
  }
  const CoarseSpace cs = build_coarse_space(p.mesh, locals, counts);
  const GfemSolution sol = coarse_solve(cs, sys.K, sys.F);
  const BoundReport bound = verify_global_bound(u_e, sol, sys.K, decomp, locals, counts);

  add("global-bound", bound.holds,
      "lhs " + g17(bound.lhs) + " <= rhs " + g17(bound.rhs) + " (kappa " +
          std::to_string(decomp.kappa) + ", kappa* " + std::to_string(decomp.kappa_star) + ")");

  {  // eigenpair residuals of the reduced route
    double worst = 0.0;
    for (int i = 0; i < M; ++i) worst = std::max(worst, iter_bases[i].max_residual);
    add("eigenpair-residual", worst <= 1e-8, "max " + g17(worst) + " (tol 1e-8)");
  }

  add("galerkin-orthogonality", sol.galerkin_residual <= 1e-9,
      "relative residual " + g17(sol.galerkin_residual) + " (tol 1e-9)");

  {  // exactness limit: full local spans reproduce the fine solution
    RunConfig fc = cfg;
    fc.nx = fc.ny = 16;
    fc.m = 2;
    fc.ell = 2;
    fc.n_loc = 0;  // placeholder; full span requested below
    const ProblemSetup fp = make_problem(fc);
    const GlobalSystem fsys = assemble_global_system(fp.mesh, fp.tags, fp.coeff, fp.data);
    const Vec fu = fine_solve(fp.mesh, fp.tags, fsys, fp.data);
    const Decomposition fd = decompose(fp.mesh, fp.tags, fc.m, fc.overlap, fc.ell);
    LocalEigenOptions fopt = eigen_options(fc);
    fopt.n_loc = -1;  // all available members
    std::vector<LocalSolveResult> flocals(fd.size());
    parallel_for(fd.size(), resolve_threads(cfg), [&](int i) {
      LocalSystem s = build_local_system(fp.mesh, fp.tags, fp.coeff, fp.data, fd, i, mode);
      flocals[i] = make_result(s, solve_subdomain(s, fopt));
    });
    std::vector<int> fcounts(fd.size());
    for (int i = 0; i < fd.size(); ++i) fcounts[i] = flocals[i].basis.n_members();
    const CoarseSpace fcs = build_coarse_space(fp.mesh, flocals, fcounts);
    const GfemSolution fsol = coarse_solve(fcs, fsys.K, fsys.F);
    const ErrorReport ferr = error_report(fu, fsol.u, fsys);
    add("full-span-exactness", ferr.energy_rel <= 1e-8,
        "relative energy error " + g17(ferr.energy_rel) + " (tol 1e-8)");
  }

  return rep;
}

}  // namespace msgfem

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "local_system.hpp"
#include "oracle.hpp"
#include "solvers.hpp"

namespace msgfem {

/// Factorizations backing one patch: the interior block A11 (always SPD) for
/// the reduced pencil and the particular source function, and the full free
/// system for harmonic extensions and the essential particular function. A
/// patch away from the essential boundary gets the constraint-bordered
/// semidefinite treatment.
struct LocalFactorization {
  const LocalSystem* sys = nullptr;
  SpdFactor a11;
  SaddleFactor extension;
  // Semidefinite case: the bordered solve leaves a multiple of one fixed
  // direction of harmonicity defect in each extension (the multiplier
  // couples -M1 into the interior rows). This vector satisfies
  // (A rho)|interior = -M1 and M'rho = 0, so subtracting c*rho restores
  // exact discrete harmonicity.
  Vec harmonicity_correction;
};

inline LocalFactorization factorize_local(const LocalSystem& sys) {
  LocalFactorization fact;
  fact.sys = &sys;
  const std::string tag = "subdomain " + std::to_string(sys.id);
  try {
    fact.a11.factorize(sys.A11, tag + " interior block");
    if (sys.touches_dirichlet) {
      fact.extension.factorize_definite(sys.A_free, tag + " free block (definite)");
    } else {
      fact.extension.factorize_semidefinite(sys.A_free, sys.M_free,
                                            tag + " free block (semidefinite)");
      Vec rhs = Vec::Zero(sys.n_free());
      rhs.head(sys.n1()) = -sys.M_free.head(sys.n1());
      if (sys.n2() > 0)
        rhs.tail(sys.n2()).setConstant(sys.M_free.head(sys.n1()).sum() / sys.n2());
      fact.harmonicity_correction = fact.extension.solve_consistent(rhs);
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("factorize_local failed on " + tag + ": " + e.what());
  }
  return fact;
}

struct ReducedExtension {
  Vec phi1, phi2;
  double multiplier = 0.0;
};

/// Harmonic-extension step of the reduced eigenproblem: given p on the
/// interior DOFs, solves the free system with right-hand side (0, -A21 p),
/// bordered by the scalar constraint in the semidefinite case.
inline ReducedExtension apply_reduced_extension(const LocalFactorization& fact, const Vec& p) {
  const LocalSystem& sys = *fact.sys;
  if (p.size() != sys.n1())
    throw std::invalid_argument("apply_reduced_operator: p has wrong dimension");
  Vec rhs = Vec::Zero(sys.n_free());
  rhs.tail(sys.n2()) = -(sys.A12.transpose() * p);
  auto [x, c] = fact.extension.solve(rhs);
  return {x.head(sys.n1()), x.tail(sys.n2()), c};
}

inline std::pair<Vec, Vec> apply_reduced_operator(const LocalFactorization& fact, const Vec& p) {
  ReducedExtension e = apply_reduced_extension(fact, p);
  return {std::move(e.phi1), std::move(e.phi2)};
}

/// Source particular function: interior solve against the patch load, zero on
/// the interior boundary and on essential nodes.
inline Vec solve_particular_r(const LocalSystem& sys, const LocalFactorization& fact) {
  Vec f1(sys.n1());
  for (int k = 0; k < sys.n1(); ++k) f1[k] = sys.F_local[sys.b1[k]];
  Vec x1;
  try {
    x1 = fact.a11.solve(f1, 1e-10);
  } catch (const std::exception& e) {
    throw std::runtime_error("solve_particular_r failed on subdomain " + std::to_string(sys.id) +
                             ": " + e.what());
  }
  Vec psi = Vec::Zero(sys.n_local());
  for (int k = 0; k < sys.n1(); ++k) psi[sys.b1[k]] = x1[k];
  return psi;
}

/// Essential particular function: harmonic lift of the boundary data. Zero
/// for patches that do not meet the essential boundary.
inline Vec solve_particular_d(const LocalSystem& sys, const LocalFactorization& fact) {
  Vec psi = Vec::Zero(sys.n_local());
  if (!sys.touches_dirichlet) return psi;
  for (std::size_t k = 0; k < sys.dir.size(); ++k) psi[sys.dir[k]] = sys.q_dir[k];
  Vec rhs_full = -(sys.K_star * psi);
  Vec rhs = sys.gather_free(rhs_full);
  auto [x, c] = fact.extension.solve(rhs);
  (void)c;
  const double rn = (sys.A_free * x - rhs).norm();
  if (rhs.norm() > 0 && !(rn <= 1e-9 * rhs.norm()))
    throw std::runtime_error("solve_particular_d: solve residual too large on subdomain " +
                             std::to_string(sys.id));
  for (int f = 0; f < sys.n_free(); ++f) psi[sys.local_of_free[f]] += x[f];
  return psi;
}

struct LocalEigenOptions {
  int n_loc = 10;              // non-constant members requested; -1 = all available (dense path)
  double tol = 1e-9;           // relative eigenvalue change between iterations
  double residual_tol = 1e-8;  // relative eigenpair residual target
  int max_iterations = 200;
  int guard_vectors = 3;
  int dense_threshold = 600;  // patches with n1 <= threshold use the dense route
  double null_drop_tol = 1e-12;
  std::uint64_t seed = 0x6d73676665ULL;
};

namespace detail {

inline Vec constant_member(const LocalSystem& sys) {
  Vec ones = Vec::Ones(sys.n_local());
  const double bn = std::sqrt(std::max(ones.dot(sys.B_full * ones), 0.0));
  if (!(bn > 0.0)) throw std::runtime_error("constant member has zero weighted norm");
  return ones / bn;
}

}  // namespace detail

/// Spectral basis via the dense route (explicit harmonic basis plus dense
/// pencil). Used for desk-scale patches and as the cross-check oracle.
inline LocalSpectralBasis solve_local_eigenpairs_dense(const LocalSystem& sys,
                                                       const LocalEigenOptions& opt) {
  const bool neumann = !sys.touches_dirichlet;
  LocalSpectralBasis basis;
  basis.subdomain_id = sys.id;
  basis.includes_constant = neumann;
  basis.iterations = 0;

  oracle::DenseEigResult eig;
  if (sys.n2() > 0) {
    eig = oracle::dense_eigensolve(sys, opt.null_drop_tol);
  } else if (neumann) {
    // Degenerate single-patch cover: only the constant member exists.
    eig.values = Vec::Zero(1);
    eig.vectors = Mat(sys.n_local(), 1);
    eig.vectors.col(0) = detail::constant_member(sys);
  }

  const int avail = static_cast<int>(eig.values.size());
  int n_members;
  if (opt.n_loc < 0) {
    // Full span requested: every resolvable member, no remainder certificate.
    n_members = avail;
  } else {
    const int want = opt.n_loc + (neumann ? 1 : 0);
    // When the resolvable spectrum cannot cover the request plus its
    // certificate, give up one member so the certificate stays a genuine
    // (conservative) eigenvalue. The constant member is never given up.
    const int floor_members = neumann ? std::min(avail, 1) : 0;
    n_members = std::min(want, std::max(avail - 1, floor_members));
  }
  basis.lambda.assign(eig.values.data(), eig.values.data() + n_members);
  if (n_members < avail) {
    basis.lambda.push_back(eig.values[n_members]);
    basis.certificate_available = true;
  } else {
    basis.lambda.push_back(std::numeric_limits<double>::infinity());
    basis.certificate_available = false;
  }
  basis.vectors = eig.vectors.leftCols(n_members);
  return basis;
}

/// Spectral basis via the reduced mixed-formulation route: blocked subspace
/// iteration on the interior-DOF pencil, with the harmonic extension applied
/// through the factorized free system. Ritz values are extracted from the
/// symmetric projection of the two forms onto the extensions of the block
/// (the p-space restriction of the iteration operator is non-normal, so a
/// symmetrized interior-product Gram would misreport the spectrum). The
/// constant member of a semidefinite patch is excluded by the constraint and
/// added back explicitly at eigenvalue 0.
inline LocalSpectralBasis solve_local_eigenpairs_iterative(const LocalSystem& sys,
                                                           const LocalFactorization& fact,
                                                           const LocalEigenOptions& opt) {
  const bool neumann = !sys.touches_dirichlet;
  if (opt.n_loc < 0)
    throw std::invalid_argument("iterative eigensolver requires an explicit n_loc");
  if (opt.n_loc + 1 > sys.n1())
    throw std::invalid_argument("solve_local_eigenpairs: n_loc too large for subdomain " +
                                std::to_string(sys.id));

  LocalSpectralBasis basis;
  basis.subdomain_id = sys.id;
  basis.includes_constant = neumann;

  const int avail_bound = std::max(0, sys.n2() - (neumann ? 1 : 0));
  const int needed = std::min(opt.n_loc + 1, avail_bound);  // pencil values incl. certificate
  if (needed == 0) {
    basis.lambda.assign(neumann ? 2 : 1, std::numeric_limits<double>::infinity());
    if (neumann) basis.lambda[0] = 0.0;
    basis.certificate_available = false;
    basis.vectors = Mat::Zero(sys.n_local(), neumann ? 1 : 0);
    if (neumann) basis.vectors.col(0) = detail::constant_member(sys);
    return basis;
  }
  const int block = std::min(needed + opt.guard_vectors, std::min(sys.n1(), sys.n2()));

  Mat V(sys.n1(), block);
  detail::fill_random(V, opt.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(sys.id + 1));
  auto normalize_columns = [&](Mat& M_, std::uint64_t salt) {
    for (int j = 0; j < M_.cols(); ++j) {
      double nrm = std::sqrt(std::max(M_.col(j).dot(sys.A11 * M_.col(j)), 0.0));
      if (!(nrm > 0.0)) {
        Mat R(M_.rows(), 1);
        detail::fill_random(R, salt + static_cast<std::uint64_t>(j));
        M_.col(j) = R.col(0);
        nrm = std::sqrt(std::max(M_.col(j).dot(sys.A11 * M_.col(j)), 1e-300));
      }
      M_.col(j) /= nrm;
    }
  };
  normalize_columns(V, opt.seed);

  Mat Phi1(sys.n1(), block), Phi2(sys.n2(), block), W(sys.n1(), block);
  Mat X(sys.n_free(), block);
  Vec lam_prev = Vec::Constant(needed, std::numeric_limits<double>::quiet_NaN());
  PencilEigResult ritz;
  bool converged = false;
  int it = 0;
  int short_count = 0;  // consecutive iterations resolving fewer values than requested
  int stagnant = 0;     // settled iterations without residual improvement
  double worst_residual = std::numeric_limits<double>::infinity();
  double best_residual = std::numeric_limits<double>::infinity();

  for (it = 1; it <= opt.max_iterations; ++it) {
    for (int j = 0; j < block; ++j) {
      ReducedExtension ext = apply_reduced_extension(fact, V.col(j));
      Phi1.col(j) = ext.phi1;
      Phi2.col(j) = ext.phi2;
      if (neumann && ext.multiplier != 0.0) {
        // Restore exact discrete harmonicity: the bordered solve carries a
        // multiplier-scaled defect along one fixed direction.
        Phi1.col(j) -= ext.multiplier * fact.harmonicity_correction.head(sys.n1());
        Phi2.col(j) -= ext.multiplier * fact.harmonicity_correction.tail(sys.n2());
      }
    }
    W = sys.B11 * Phi1;
    X.topRows(sys.n1()) = Phi1;
    X.bottomRows(sys.n2()) = Phi2;
    const Mat GK = detail::gram_xp(X, sys.A_free * X);
    const Mat GB = detail::gram_xp(Phi1, W);
    ritz = pencil_eig_smallest(GK, GB, opt.null_drop_tol);

    // A spectrum steeper than the weighted form's resolvable range keeps
    // the trailing requested values out of reach; once the shortfall is
    // persistent, settle for the resolvable ones (the certificate is then a
    // smaller eigenvalue, which only weakens the claimed bound).
    const int avail_now = static_cast<int>(ritz.values.size());
    short_count = avail_now < needed ? short_count + 1 : 0;
    const int k_eff = std::min(avail_now, needed);

    if (k_eff > 0 && (avail_now >= needed || short_count >= 8)) {
      bool settled = true;
      for (int k = 0; k < k_eff; ++k) {
        // Change tolerance with a floor that grows along the spectrum: the
        // attainable relative accuracy of lambda_k degrades with its ratio
        // to lambda_1.
        const double tol_k =
            std::max(opt.tol, 1e-13 * ritz.values[k] / std::max(ritz.values[0], 1e-300));
        if (!(std::abs(ritz.values[k] - lam_prev[k]) <= tol_k * std::abs(ritz.values[k]))) {
          settled = false;
          break;
        }
      }
      if (settled) {
        // Eigenpair residuals: a Ritz coefficient vector c combines the
        // extensions of V's columns, so its multiplier is V*c. Enforcement
        // is scaled per pair: the achievable floor grows with the spectral
        // ratio lambda_k / lambda_1.
        worst_residual = 0.0;
        bool residual_ok = true;
        for (int k = 0; k < k_eff; ++k) {
          const Vec bphi = W * ritz.vectors.col(k);
          const Vec p = V * ritz.vectors.col(k);
          const double scale = ritz.values[k] * bphi.norm();
          const double rel =
              scale > 0 ? (sys.A11 * p - ritz.values[k] * bphi).norm() / scale : 0.0;
          worst_residual = std::max(worst_residual, rel);
          const double floor_k = 1e-15 * ritz.values[k] / ritz.values[0];
          if (!(rel <= std::max(opt.residual_tol, floor_k))) residual_ok = false;
        }
        // Accept once every pair meets its tolerance, or when the values
        // are settled and the residual has hit its attainable floor (steep
        // spectra and high contrast push that floor above the nominal
        // tolerance).
        stagnant = worst_residual >= 0.5 * best_residual ? stagnant + 1 : 0;
        best_residual = std::min(best_residual, worst_residual);
        if (residual_ok || stagnant >= 6) {
          converged = true;
          break;
        }
      }
    }
    lam_prev.setConstant(std::numeric_limits<double>::quiet_NaN());
    lam_prev.head(k_eff) = ritz.values.head(k_eff);

    // Next block: push the Ritz representatives through the reduced
    // operator. Rotating into the Ritz basis keeps the block Gram
    // well-scaled without a cross-scale orthonormalization, which would
    // pollute the small reciprocal directions at working precision.
    Mat Cpad = Mat::Zero(block, block);
    const int nritz = std::min<int>(block, static_cast<int>(ritz.vectors.cols()));
    if (nritz > 0) Cpad.leftCols(nritz) = ritz.vectors.leftCols(nritz);
    if (nritz < block) {
      Mat R(block, block - nritz);
      detail::fill_random(R, opt.seed + 131 * static_cast<std::uint64_t>(it) +
                                 static_cast<std::uint64_t>(sys.id));
      Cpad.rightCols(block - nritz) = R;
    }
    const Mat WC = W * Cpad;
    Mat Vn(sys.n1(), block);
    for (int j = 0; j < block; ++j) Vn.col(j) = fact.a11.solve_unchecked(WC.col(j));
    normalize_columns(Vn, opt.seed + 977 * static_cast<std::uint64_t>(it));
    V = Vn;
  }
  if (!converged)
    throw std::runtime_error(
        "eigensolver: no convergence after " + std::to_string(opt.max_iterations) +
        " iterations on subdomain " + std::to_string(sys.id) +
        " (best eigenpair residual " + g17(worst_residual) + ")");
  basis.iterations = it;
  basis.max_residual = worst_residual;

  const int values_kept = std::min(needed, static_cast<int>(ritz.values.size()));
  // Keep one resolved value back as the certificate whenever the request
  // could not be met in full.
  const int m_pencil = std::min(opt.n_loc, std::max(values_kept - 1, 0));
  basis.lambda.clear();
  if (neumann) basis.lambda.push_back(0.0);
  for (int k = 0; k < m_pencil; ++k) basis.lambda.push_back(ritz.values[k]);
  if (m_pencil < values_kept) {
    basis.lambda.push_back(ritz.values[m_pencil]);
    basis.certificate_available = true;
  } else {
    basis.lambda.push_back(std::numeric_limits<double>::infinity());
    basis.certificate_available = false;
  }

  const int n_members = m_pencil + (neumann ? 1 : 0);
  basis.vectors = Mat::Zero(sys.n_local(), n_members);
  int col = 0;
  if (neumann) basis.vectors.col(col++) = detail::constant_member(sys);
  for (int k = 0; k < m_pencil; ++k) {
    const Vec xk = X * ritz.vectors.col(k);
    basis.vectors.col(col++) = sys.scatter_free(xk);
  }
  return basis;
}

/// Leading spectrum of the weighted local eigenproblem. Small patches fall
/// back to the dense route; larger ones run the reduced iteration.
inline LocalSpectralBasis solve_local_eigenpairs(const LocalSystem& sys,
                                                 const LocalFactorization& fact,
                                                 const LocalEigenOptions& opt) {
  if (opt.n_loc >= 0 && opt.n_loc + 1 > sys.n1())
    throw std::invalid_argument("solve_local_eigenpairs: n_loc too large for subdomain " +
                                std::to_string(sys.id));
  if (opt.n_loc < 0 || sys.n1() <= opt.dense_threshold || sys.n2() == 0)
    return solve_local_eigenpairs_dense(sys, opt);
  return solve_local_eigenpairs_iterative(sys, fact, opt);
}

/// Factorize, solve both particular functions, and build the spectral basis
/// of one patch.
inline LocalSpectralBasis solve_subdomain(const LocalSystem& sys, const LocalEigenOptions& opt) {
  LocalFactorization fact = factorize_local(sys);
  LocalSpectralBasis basis = solve_local_eigenpairs(sys, fact, opt);
  basis.psi_r = solve_particular_r(sys, fact);
  basis.psi_d = solve_particular_d(sys, fact);
  return basis;
}

/// CSV table of the per-subdomain spectra: subdomain_id, k (1-based),
/// lambda_k, lambda_k^{-1/2}. The trailing certificate value is included.
inline void write_eigenvalue_csv(std::ostream& out, const std::vector<LocalSpectralBasis>& bases,
                                 bool header = true) {
  if (header) out << "subdomain_id,k,lambda_k,lambda_k_inv_sqrt\n";
  for (const auto& b : bases) {
    for (std::size_t k = 0; k < b.lambda.size(); ++k) {
      const double lam = b.lambda[k];
      if (std::isinf(lam)) continue;  // exhausted-spectrum sentinel
      const double inv = lam > 0.0 ? 1.0 / std::sqrt(lam) : std::numeric_limits<double>::infinity();
      out << b.subdomain_id << ',' << (k + 1) << ',' << g17(lam) << ',' << g17(inv) << '\n';
    }
  }
}

}  // namespace msgfem

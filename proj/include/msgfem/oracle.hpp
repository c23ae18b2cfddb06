#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "local_system.hpp"
#include "solvers.hpp"

namespace msgfem {
namespace oracle {

/// Explicit basis of the discrete A-harmonic space of a patch: one column
/// per interior-boundary DOF, the harmonic extension of that unit boundary
/// value into the interior. Columns live on patch nodes.
///
/// For a patch that does not touch the essential boundary the constant
/// function is the extension of all-ones boundary data and is therefore
/// already in the span.
struct HarmonicBasis {
  Mat columns;  // n_local x |b2|
};

/// Builds the harmonic basis with one interior-block factorization reused for
/// every column. Desk-scale only: refuses more than `max_columns` boundary
/// DOFs.
inline HarmonicBasis dense_harmonic_basis(const LocalSystem& sys, int max_columns = 2000) {
  if (sys.n2() > max_columns)
    throw std::runtime_error("dense_harmonic_basis: |B2| = " + std::to_string(sys.n2()) +
                             " exceeds the desk-scale guard of " + std::to_string(max_columns));
  SpdFactor a11;
  a11.factorize(sys.A11, "dense_harmonic_basis[" + std::to_string(sys.id) + "] A11");
  HarmonicBasis basis;
  basis.columns = Mat::Zero(sys.n_local(), sys.n2());
  for (int k = 0; k < sys.n2(); ++k) {
    const Vec rhs = -sys.A12.col(k);
    const Vec phi1 = a11.solve_refined_xp(rhs);
    Vec full = Vec::Zero(sys.n_local());
    for (int i = 0; i < sys.n1(); ++i) full[sys.local_of_free[i]] = phi1[i];
    full[sys.local_of_free[sys.n1() + k]] = 1.0;
    basis.columns.col(k) = full;
  }
  return basis;
}

struct DenseEigResult {
  Vec values;   // ascending; starts with the exact 0 of a floating patch
  Mat vectors;  // patch-node columns, B-orthonormal
  int excluded = 0;  // B-null directions (infinite pencil eigenvalues)
};

/// Full spectrum of the weighted local eigenproblem by the classical dense
/// route: restrict both forms to the explicit harmonic basis and solve the
/// dense pencil there. A patch away from the essential boundary carries the
/// constant at eigenvalue 0; it is reported exactly.
inline DenseEigResult dense_eigensolve(const LocalSystem& sys, const HarmonicBasis& basis,
                                       double drop_tol = 1e-12) {
  const Mat& H = basis.columns;
  const Mat KH = sys.K_star * H;
  const Mat BH = sys.B_full * H;
  const bool xp = H.cols() <= 600;  // extended-precision Grams at desk scale
  const Mat GK = xp ? detail::gram_xp(H, KH) : Mat(H.transpose() * KH);
  const Mat GB = xp ? detail::gram_xp(H, BH) : Mat(H.transpose() * BH);
  const bool floating = !sys.touches_dirichlet;
  // The constants of a floating patch have the all-ones coefficient vector in
  // the extension basis; deflate them exactly.
  PencilEigResult p;
  if (floating) {
    const Mat kernel = Mat::Ones(H.cols(), 1);
    p = pencil_eig_smallest(GK, GB, drop_tol, &kernel);
    if (p.k_null != 1)
      throw std::runtime_error("dense_eigensolve: unexpected extra stiffness-null direction on "
                               "subdomain " +
                               std::to_string(sys.id));
  } else {
    p = pencil_eig_smallest(GK, GB, drop_tol, nullptr, 1e-13, /*error_on_k_null=*/true);
  }
  DenseEigResult out;
  out.excluded = p.infinite;
  const int shift = floating ? 1 : 0;
  out.values = Vec(p.values.size() + shift);
  out.vectors = Mat(sys.n_local(), p.values.size() + shift);
  if (floating) {
    Vec ones = Vec::Ones(sys.n_local());
    const double bn = std::sqrt(std::max(ones.dot(sys.B_full * ones), 0.0));
    out.values[0] = 0.0;
    out.vectors.col(0) = ones / bn;
  }
  out.values.tail(p.values.size()) = p.values;
  out.vectors.rightCols(p.values.size()) = H * p.vectors;
  return out;
}

inline DenseEigResult dense_eigensolve(const LocalSystem& sys, double drop_tol = 1e-12) {
  return dense_eigensolve(sys, dense_harmonic_basis(sys), drop_tol);
}

/// Best approximation error of the pasted local difference by the first n
/// basis members:
///   min over xi in span{members 1..n} of || chi*(u_e - psi - xi) ||_{a,omega}
/// computed by dense normal equations in the weighted inner product. `u_e`
/// is the fine-scale solution restricted to patch nodes.
inline double best_local_error(const LocalSystem& sys, const LocalSpectralBasis& basis,
                               const Vec& u_e_local, int n) {
  if (n < 0 || n > basis.n_members())
    throw std::invalid_argument("best_local_error: member count out of range");
  const Vec d = u_e_local - basis.psi();
  const Vec Bd = sys.B_full * d;
  if (n == 0) return std::sqrt(std::max(d.dot(Bd), 0.0));
  const Mat Phi = basis.vectors.leftCols(n);
  const Mat BPhi = sys.B_full * Phi;
  const Mat G = Phi.transpose() * BPhi;
  const Vec rhs = BPhi.transpose() * d;
  const Vec c = G.ldlt().solve(rhs);
  const Vec r = d - Phi * c;
  return std::sqrt(std::max(r.dot(sys.B_full * r), 0.0));
}

}  // namespace oracle
}  // namespace msgfem

#pragma once

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "assembly.hpp"

namespace msgfem {

/// Sparse LDL^T factorization of a symmetric positive definite matrix with a
/// fill-reducing ordering. Keeps the factored matrix for residual checks.
class SpdFactor {
 public:
  SpdFactor() = default;

  void factorize(SpMat A, std::string context) {
    context_ = std::move(context);
    A_ = std::move(A);
    A_.makeCompressed();
    amax_ = 0.0;
    for (int k = 0; k < A_.outerSize(); ++k)
      for (SpMat::InnerIterator it(A_, k); it; ++it) amax_ = std::max(amax_, std::abs(it.value()));
    ldlt_ = std::make_unique<Eigen::SimplicialLDLT<SpMat>>();
    ldlt_->compute(A_);
    if (ldlt_->info() != Eigen::Success)
      throw std::runtime_error(context_ + ": sparse LDL^T factorization failed");
    if (A_.rows() > 0 && ldlt_->vectorD().minCoeff() <= 0.0)
      throw std::runtime_error(context_ + ": matrix is not positive definite (nonpositive pivot)");
  }

  bool valid() const { return ldlt_ != nullptr; }
  const SpMat& matrix() const { return A_; }
  const Eigen::SimplicialLDLT<SpMat>& ldlt() const { return *ldlt_; }

  Vec solve_unchecked(const Vec& b) const { return ldlt_->solve(b); }

  /// One step of iterative refinement: recovers full working-precision
  /// accuracy on ill-conditioned systems at the cost of a second backsolve.
  Vec solve_refined(const Vec& b) const {
    Vec x = ldlt_->solve(b);
    x += ldlt_->solve(b - A_ * x);
    return x;
  }

  /// Refinement with the residual accumulated in extended precision: pushes
  /// the forward error below the eps*cond(A) level of plain refinement.
  /// Used where eigenvector content many decades below the operator scale
  /// must survive (harmonic extensions feeding the reduced eigenproblem).
  Vec solve_refined_xp(const Vec& b) const {
    Vec x = ldlt_->solve(b);
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<long double> acc(static_cast<std::size_t>(b.size()));
      for (int i = 0; i < b.size(); ++i) acc[static_cast<std::size_t>(i)] = b[i];
      for (int k = 0; k < A_.outerSize(); ++k)
        for (SpMat::InnerIterator it(A_, k); it; ++it)
          acc[static_cast<std::size_t>(it.row())] -=
              static_cast<long double>(it.value()) * static_cast<long double>(x[it.col()]);
      Vec r(b.size());
      for (int i = 0; i < b.size(); ++i) r[i] = static_cast<double>(acc[static_cast<std::size_t>(i)]);
      x += ldlt_->solve(r);
    }
    return x;
  }

  /// Residual-checked solve: enforces the backward-error bound
  /// |r| <= tol * max(|b|, max|A| * |x|), the attainable level of a direct
  /// factorization in working precision.
  Vec solve(const Vec& b, double rel_tol = 1e-9) const {
    Vec x = solve_refined_xp(b);
    const double bn = b.norm();
    if (bn > 0.0) {
      const double rn = (A_ * x - b).norm();
      const double scale = std::max(bn, amax_ * x.norm());
      if (!(rn <= rel_tol * scale))
        throw std::runtime_error(context_ + ": solve residual " + g17(rn / scale) +
                                 " exceeds tolerance " + g17(rel_tol));
    }
    return x;
  }

 private:
  SpMat A_;
  std::unique_ptr<Eigen::SimplicialLDLT<SpMat>> ldlt_;
  std::string context_;
  double amax_ = 0.0;
};

/// Solver for the patch system with the interior-boundary blocks eliminated.
///
/// Definite case (patch touches the essential boundary): a direct SPD
/// factorization of A. Semidefinite case: A has the constant kernel and the
/// system is bordered by one scalar constraint row M; the bordered solve is
/// carried out against the factorization of a grounded (one DOF pinned) SPD
/// block, with the multiplier fixed by solvability and the kernel component
/// fixed by the constraint.
class SaddleFactor {
 public:
  void factorize_definite(SpMat A, const std::string& context) {
    semidefinite_ = false;
    n_ = static_cast<int>(A.rows());
    direct_.factorize(std::move(A), context);
  }

  void factorize_semidefinite(const SpMat& A, Vec constraint, const std::string& context) {
    semidefinite_ = true;
    n_ = static_cast<int>(A.rows());
    if (constraint.size() != n_)
      throw std::invalid_argument(context + ": constraint vector length mismatch");
    M_ = std::move(constraint);
    M_dot_ones_ = M_.sum();
    if (!(std::abs(M_dot_ones_) > 0.0))
      throw std::runtime_error(context + ": constraint is orthogonal to the kernel");
    A_ = A;
    // Ground the first DOF: drop its row and column.
    std::vector<Triplet> trips;
    trips.reserve(A.nonZeros());
    for (int k = 0; k < A.outerSize(); ++k)
      for (SpMat::InnerIterator it(A, k); it; ++it)
        if (it.row() > 0 && it.col() > 0) trips.emplace_back(it.row() - 1, it.col() - 1, it.value());
    SpMat Ag(n_ - 1, n_ - 1);
    Ag.setFromTriplets(trips.begin(), trips.end());
    direct_.factorize(std::move(Ag), context + " (grounded block)");
  }

  bool semidefinite() const { return semidefinite_; }
  int size() const { return n_; }
  const SpdFactor& direct() const { return direct_; }
  const Vec& constraint() const { return M_; }

  /// Solves A x = r (definite case) or the bordered system
  /// [A M; M' 0] [x; c] = [r; 0] (semidefinite case); returns x and the
  /// multiplier c (0 in the definite case). Solves are refined once.
  std::pair<Vec, double> solve(const Vec& r) const {
    if (!semidefinite_) return {direct_.solve_refined_xp(r), 0.0};
    const double c = r.sum() / M_dot_ones_;
    Vec rr = r - c * M_;
    Vec xg = direct_.solve_refined_xp(rr.tail(n_ - 1));
    Vec x(n_);
    x[0] = 0.0;
    x.tail(n_ - 1) = xg;
    x.array() -= M_.dot(x) / M_dot_ones_;
    return {x, c};
  }

  /// Solves A x = r for a consistent right-hand side (r orthogonal to the
  /// kernel), normalizing the kernel component against the constraint.
  /// Semidefinite case only.
  Vec solve_consistent(const Vec& r) const {
    if (!semidefinite_)
      throw std::logic_error("solve_consistent: definite systems need no kernel handling");
    Vec x(n_);
    x[0] = 0.0;
    x.tail(n_ - 1) = direct_.solve_refined_xp(r.tail(n_ - 1));
    x.array() -= M_.dot(x) / M_dot_ones_;
    return x;
  }

  /// Max-norm residual of the (possibly bordered) system for a given solve.
  double residual(const Vec& r, const Vec& x, double c) const {
    const SpMat& A = semidefinite_ ? A_ : direct_.matrix();
    Vec res = A * x - r;
    if (semidefinite_) {
      res += c * M_;
      return std::max(res.cwiseAbs().maxCoeff(), std::abs(M_.dot(x)));
    }
    return res.cwiseAbs().maxCoeff();
  }

 private:
  bool semidefinite_ = false;
  int n_ = 0;
  SpdFactor direct_;
  SpMat A_;  // kept in the semidefinite case for residual evaluation
  Vec M_;
  double M_dot_ones_ = 0.0;
};

/// Conjugate-gradient solve for SPD systems; fallback path for
/// memory-constrained fine-scale solves.
inline Vec cg_solve(const SpMat& A, const Vec& b, double rel_tol = 1e-12,
                    int max_iterations = 20000) {
  Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(rel_tol);
  cg.setMaxIterations(max_iterations);
  cg.compute(A);
  Vec x = cg.solve(b);
  if (cg.info() != Eigen::Success)
    throw std::runtime_error("cg_solve: no convergence after " + std::to_string(cg.iterations()) +
                             " iterations (residual " + std::to_string(cg.error()) + ")");
  return x;
}

struct PencilEigResult {
  Vec values;        // finite eigenvalues, ascending
  Mat vectors;       // coefficient columns, GB-orthonormal
  int infinite = 0;  // GB-null directions dropped (infinite eigenvalues)
  int k_null = 0;    // GK-null directions found and dropped
};

namespace detail {

/// A' * B accumulated in extended precision. The reduced eigenproblems mix
/// scales across many decades; plain double Grams cap the attainable
/// relative accuracy of the small reciprocal eigenvalues.
inline Mat gram_xp(const Mat& A, const Mat& B) {
  Mat out(A.cols(), B.cols());
  for (int j = 0; j < B.cols(); ++j)
    for (int i = 0; i < A.cols(); ++i) {
      long double acc = 0.0L;
      for (int r = 0; r < A.rows(); ++r)
        acc += static_cast<long double>(A(r, i)) * static_cast<long double>(B(r, j));
      out(i, j) = static_cast<double>(acc);
    }
  return out;
}

/// Lower Cholesky factorization in extended precision; returns false when a
/// pivot falls below pivot_tol times the largest diagonal entry.
inline bool cholesky_xp(std::vector<long double>& a, int n, double pivot_tol, double diag_max) {
  for (int j = 0; j < n; ++j) {
    long double d = a[j + j * n];
    for (int k = 0; k < j; ++k) d -= a[j + k * n] * a[j + k * n];
    if (!(static_cast<double>(d) > pivot_tol * diag_max)) return false;
    const long double dj = std::sqrt(d);
    a[j + j * n] = dj;
    for (int i = j + 1; i < n; ++i) {
      long double s = a[i + j * n];
      for (int k = 0; k < j; ++k) s -= a[i + k * n] * a[j + k * n];
      a[i + j * n] = s / dj;
    }
  }
  return true;
}

/// Cyclic-Jacobi symmetric eigensolver in extended precision for modest
/// dimensions. Eigenvector accuracy of the standard double-precision solve
/// is eps*spread/gap, which is not enough when reciprocal spectra span many
/// decades; Jacobi in long double recovers the angles.
struct JacobiEigXp {
  Vec values;   // ascending
  Mat vectors;  // orthonormal columns
};

inline JacobiEigXp jacobi_eig_xp(const Mat& A) {
  const int n = static_cast<int>(A.rows());
  std::vector<long double> a(static_cast<std::size_t>(n) * n), v(static_cast<std::size_t>(n) * n,
                                                                 0.0L);
  for (int j = 0; j < n; ++j) {
    v[j + static_cast<std::size_t>(j) * n] = 1.0L;
    for (int i = 0; i < n; ++i)
      a[i + static_cast<std::size_t>(j) * n] =
          0.5L * (static_cast<long double>(A(i, j)) + static_cast<long double>(A(j, i)));
  }
  auto at = [&](int i, int j) -> long double& { return a[i + static_cast<std::size_t>(j) * n]; };
  auto vt = [&](int i, int j) -> long double& { return v[i + static_cast<std::size_t>(j) * n]; };
  for (int sweep = 0; sweep < 60; ++sweep) {
    long double off = 0.0L, diag = 0.0L;
    for (int i = 0; i < n; ++i) {
      diag += std::abs(at(i, i));
      for (int j = i + 1; j < n; ++j) off += std::abs(at(i, j));
    }
    if (off <= 1e-22L * std::max(diag, 1e-300L)) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const long double apq = at(p, q);
        if (apq == 0.0L) continue;
        const long double theta = (at(q, q) - at(p, p)) / (2.0L * apq);
        const long double t = (theta >= 0.0L ? 1.0L : -1.0L) /
                              (std::abs(theta) + std::sqrt(theta * theta + 1.0L));
        const long double c = 1.0L / std::sqrt(t * t + 1.0L);
        const long double s = t * c;
        for (int k = 0; k < n; ++k) {
          const long double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const long double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const long double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return at(x, x) < at(y, y); });
  JacobiEigXp out;
  out.values = Vec(n);
  out.vectors = Mat(n, n);
  for (int k = 0; k < n; ++k) {
    out.values[k] = static_cast<double>(at(order[static_cast<std::size_t>(k)],
                                           order[static_cast<std::size_t>(k)]));
    for (int i = 0; i < n; ++i)
      out.vectors(i, k) = static_cast<double>(vt(i, order[static_cast<std::size_t>(k)]));
  }
  return out;
}

/// Extracts the finite lambdas from the reciprocal spectrum: mu descending,
/// mu <= drop_tol * mu_max are the infinite pencil eigenvalues. `back` maps a
/// reduced eigenvector to pencil coordinates.
template <class BackMap>
inline void collect_reciprocal(PencilEigResult& out, const Vec& mu, const Mat& muvec,
                               int pencil_dim, double drop_tol, BackMap&& back) {
  const double mu_max = std::max(mu.maxCoeff(), 0.0);
  const double mu_cut = drop_tol * mu_max;
  int nfinite = 0;
  for (int i = 0; i < mu.size(); ++i)
    if (mu[i] > mu_cut) ++nfinite;
  out.infinite = static_cast<int>(mu.size()) - nfinite;
  out.values = Vec(nfinite);
  out.vectors = Mat(pencil_dim, nfinite);
  for (int k = 0; k < nfinite; ++k) {
    const int i = static_cast<int>(mu.size()) - 1 - k;  // descending mu
    out.values[k] = 1.0 / mu[i];
    out.vectors.col(k) = back(muvec.col(i)) / std::sqrt(mu[i]);
  }
}

}  // namespace detail

/// Dense symmetric pencil GK x = lambda GB x with both forms positive
/// semidefinite and GB possibly singular. Finite eigenpairs are
/// GK-orthogonal to the GB-null space, so the solve runs on the reciprocal
/// problem GB x = mu GK x restricted to the GK-positive subspace; mu at zero
/// are the infinite pencil eigenvalues (GB-null directions), counted in
/// `infinite`. A known GK-kernel (e.g. the constants of a floating patch)
/// can be handed in for exact deflation; any further GK-null directions are
/// detected, dropped and counted in `k_null`.
///
/// The reduction uses a Cholesky factor of the (deflated) GK so that the
/// small reciprocal eigenvalues are not polluted by the spread of the
/// spectrum; a spectral split is the fallback for a semidefinite GK.
inline PencilEigResult pencil_eig_smallest(const Mat& GK, const Mat& GB, double drop_tol = 1e-12,
                                           const Mat* kernel = nullptr,
                                           double k_null_tol = 1e-13,
                                           bool error_on_k_null = false) {
  if (GK.rows() != GK.cols() || GB.rows() != GB.cols() || GK.rows() != GB.rows())
    throw std::invalid_argument("pencil_eig_smallest: dimension mismatch");
  PencilEigResult out;
  const int n = static_cast<int>(GK.rows());
  if (n == 0) {
    out.values = Vec(0);
    out.vectors = Mat(0, 0);
    return out;
  }

  // Optional exact deflation of a known kernel.
  Mat Q;  // complement basis, n x nr
  int nr = n;
  if (kernel && kernel->cols() > 0) {
    Eigen::HouseholderQR<Mat> qr(*kernel);
    const Mat Qfull = qr.householderQ() * Mat::Identity(n, n);
    nr = n - static_cast<int>(kernel->cols());
    Q = Qfull.rightCols(nr);
    out.k_null = static_cast<int>(kernel->cols());
  }
  auto reduce = [&](const Mat& G) {
    Mat R = 0.5 * (G + G.transpose());
    if (Q.size() > 0) R = (Q.transpose() * R * Q).eval();
    return R;
  };
  const Mat K = reduce(GK);
  const Mat B = reduce(GB);
  if (nr == 0) {
    out.values = Vec(0);
    out.vectors = Mat(n, 0);
    return out;
  }

  auto back_map = [&](const Vec& z) { return Q.size() > 0 ? Vec(Q * z) : z; };

  // Fast path: Cholesky of the (deflated) stiffness Gram, carried out in
  // extended precision so the reciprocal spectrum keeps relative accuracy
  // across its full spread.
  const double kdiag_max = K.diagonal().maxCoeff();
  std::vector<long double> Lx(static_cast<std::size_t>(nr) * nr);
  for (int j = 0; j < nr; ++j)
    for (int i = 0; i < nr; ++i) Lx[i + static_cast<std::size_t>(j) * nr] = K(i, j);
  if (kdiag_max > 0.0 && detail::cholesky_xp(Lx, nr, k_null_tol, kdiag_max)) {
    auto lsolve = [&](std::vector<long double>& col) {
      for (int i = 0; i < nr; ++i) {
        long double s = col[i];
        for (int k = 0; k < i; ++k) s -= Lx[i + static_cast<std::size_t>(k) * nr] * col[k];
        col[i] = s / Lx[i + static_cast<std::size_t>(i) * nr];
      }
    };
    auto ltsolve = [&](std::vector<long double>& col) {
      for (int i = nr - 1; i >= 0; --i) {
        long double s = col[i];
        for (int k = i + 1; k < nr; ++k) s -= Lx[k + static_cast<std::size_t>(i) * nr] * col[k];
        col[i] = s / Lx[i + static_cast<std::size_t>(i) * nr];
      }
    };
    // C = L^{-1} B L^{-T}
    std::vector<std::vector<long double>> Y(nr, std::vector<long double>(nr));
    for (int j = 0; j < nr; ++j) {
      std::vector<long double> col(nr);
      for (int i = 0; i < nr; ++i) col[i] = B(i, j);
      lsolve(col);
      for (int i = 0; i < nr; ++i) Y[j][i] = col[i];  // Y[j] = L^{-1} B e_j
    }
    Mat C(nr, nr);
    for (int i = 0; i < nr; ++i) {
      std::vector<long double> row(nr);
      for (int j = 0; j < nr; ++j) row[j] = Y[j][i];  // row i of L^{-1} B, transposed
      lsolve(row);
      for (int j = 0; j < nr; ++j) C(i, j) = static_cast<double>(row[j]);
    }
    C = 0.5 * (C + C.transpose());
    auto back = [&](const Vec& y) {
      std::vector<long double> col(nr);
      for (int i = 0; i < nr; ++i) col[i] = y[i];
      ltsolve(col);
      Vec z(nr);
      for (int i = 0; i < nr; ++i) z[i] = static_cast<double>(col[i]);
      return back_map(z);
    };
    if (nr <= 256) {
      const detail::JacobiEigXp eb = detail::jacobi_eig_xp(C);
      detail::collect_reciprocal(out, eb.values, eb.vectors, n, drop_tol, back);
    } else {
      Eigen::SelfAdjointEigenSolver<Mat> eb(C);
      if (eb.info() != Eigen::Success)
        throw std::runtime_error("pencil_eig_smallest: weighted eigensolve failed");
      detail::collect_reciprocal(out, eb.eigenvalues(), eb.eigenvectors(), n, drop_tol, back);
    }
    return out;
  }

  // Fallback: spectral split of the stiffness Gram, dropping null directions.
  Eigen::SelfAdjointEigenSolver<Mat> ek(K);
  if (ek.info() != Eigen::Success)
    throw std::runtime_error("pencil_eig_smallest: stiffness eigensolve failed");
  const Vec kappa = ek.eigenvalues();
  const double kmax = std::max(kappa.maxCoeff(), 0.0);
  if (kappa.minCoeff() < -1e-10 * std::max(kmax, 1.0))
    throw std::runtime_error("pencil_eig_smallest: stiffness form is indefinite beyond tolerance");
  const double kcut = k_null_tol * kmax;
  int npos = 0;
  for (int i = 0; i < kappa.size(); ++i)
    if (kappa[i] > kcut) ++npos;
  const int extra_null = nr - npos;
  out.k_null += extra_null;
  if (extra_null > 0 && error_on_k_null)
    throw std::runtime_error("pencil_eig_smallest: unexpected stiffness-null direction");
  if (npos == 0) {
    out.values = Vec(0);
    out.vectors = Mat(n, 0);
    return out;
  }
  Mat Z(nr, npos);
  int c = 0;
  for (int i = 0; i < kappa.size(); ++i)
    if (kappa[i] > kcut) Z.col(c++) = ek.eigenvectors().col(i) / std::sqrt(kappa[i]);
  Mat C = Z.transpose() * B * Z;
  C = 0.5 * (C + C.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eb(C);
  if (eb.info() != Eigen::Success)
    throw std::runtime_error("pencil_eig_smallest: weighted eigensolve failed");
  detail::collect_reciprocal(out, eb.eigenvalues(), eb.eigenvectors(), n, drop_tol,
                             [&](const Vec& y) { return back_map(Z * y); });
  return out;
}

namespace detail {

/// Deterministic standard-normal-ish fill for iteration start blocks
/// (Irwin-Hall of two uniforms, centered; adequate for random starts).
inline void fill_random(Mat& V, std::uint64_t seed) {
  for (int j = 0; j < V.cols(); ++j)
    for (int i = 0; i < V.rows(); ++i) {
      const std::uint64_t k =
          (static_cast<std::uint64_t>(j) << 40) ^ static_cast<std::uint64_t>(i);
      V(i, j) = uniform01(splitmix64(seed) ^ k) + uniform01(splitmix64(seed ^ 0x5bf03635ULL) ^ k) -
                1.0;
    }
}

}  // namespace detail

}  // namespace msgfem

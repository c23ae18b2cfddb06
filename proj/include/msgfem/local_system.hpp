#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "assembly.hpp"
#include "decomp.hpp"
#include "grid.hpp"

namespace msgfem {

/// How products with the partition-of-unity function are realized in the
/// weighted local form: by nodal interpolation of chi*v (the default, keeps
/// everything inside the fine FE space) or by exact 3x3 Gauss quadrature with
/// chi bilinear per element.
enum class PouProduct { Nodal, ExactQuadrature };

inline PouProduct parse_pou_product(const std::string& s) {
  if (s == "nodal") return PouProduct::Nodal;
  if (s == "exact") return PouProduct::ExactQuadrature;
  throw std::invalid_argument("pou product mode must be 'nodal' or 'exact', got \"" + s + "\"");
}

/// All matrices of one oversampled patch, in patch-local node numbering.
/// Free DOFs are ordered interior-first: positions [0, n1) hold b1,
/// [n1, n1+n2) hold b2.
struct LocalSystem {
  int id = -1;
  const Subdomain* sub = nullptr;
  LocalNumbering numbering;  // over the omega_star elements
  std::vector<int> b1, b2, dir;      // patch-local node indices
  std::vector<int> free_of_local;    // local node -> free position, -1 for essential
  std::vector<int> local_of_free;    // free position -> local node

  SpMat K_star;   // stiffness over omega_star, all patch nodes
  SpMat B_full;   // pou-weighted form over omega, all patch nodes
  SpMat A_free;   // K_star restricted to free DOFs (b1-then-b2 order)
  SpMat A11;      // b1 x b1 block
  SpMat A12;      // b1 x b2 block
  SpMat B11;      // weighted form on b1 x b1
  Vec F_local;    // load over omega_star (volume + natural boundary), all patch nodes
  Vec chi_local;  // pou values at patch nodes
  Vec q_dir;      // essential values at dir nodes (same order as dir)
  Vec M_free;     // constraint vector (B_full * ones) on free DOFs
  bool touches_dirichlet = false;
  PouProduct pou_mode = PouProduct::Nodal;

  int n1() const { return static_cast<int>(b1.size()); }
  int n2() const { return static_cast<int>(b2.size()); }
  int n_free() const { return n1() + n2(); }
  int n_local() const { return numbering.size(); }

  /// Scatters a free-DOF vector into a full patch-node vector (zeros at
  /// essential nodes).
  Vec scatter_free(const Vec& xf) const {
    Vec x = Vec::Zero(n_local());
    for (int f = 0; f < n_free(); ++f) x[local_of_free[f]] = xf[f];
    return x;
  }
  Vec gather_free(const Vec& x) const {
    Vec xf(n_free());
    for (int f = 0; f < n_free(); ++f) xf[f] = x[local_of_free[f]];
    return xf;
  }
  /// Restricts a global nodal vector to the patch numbering.
  Vec gather_global(const Vec& u) const {
    Vec x(n_local());
    for (int l = 0; l < n_local(); ++l) x[l] = u[numbering.local_to_global[l]];
    return x;
  }
};

inline LocalSystem build_local_system(const Mesh& mesh, const BoundaryTags& tags,
                                      const CoefficientField& coeff, const ProblemData& data,
                                      const Decomposition& decomp, int sub_id,
                                      PouProduct mode = PouProduct::Nodal) {
  const Subdomain& s = decomp.subdomains.at(sub_id);
  LocalSystem sys;
  sys.id = sub_id;
  sys.sub = &s;
  sys.pou_mode = mode;
  sys.touches_dirichlet = s.touches_dirichlet;
  sys.b1 = s.b1;
  sys.b2 = s.b2;
  sys.dir = s.dir;

  const auto star_elems = s.star_elements(mesh);
  sys.numbering = make_numbering(mesh, star_elems);
  if (sys.numbering.size() != s.star.num_nodes())
    throw std::runtime_error("build_local_system: patch numbering mismatch");

  sys.K_star = assemble_stiffness(mesh, coeff, star_elems, sys.numbering);
  sys.F_local = assemble_load(mesh, tags, data, star_elems, sys.numbering);

  sys.chi_local = Vec::Zero(sys.n_local());
  for (int j = s.star.y0; j <= s.star.y1; ++j)
    for (int i = s.star.x0; i <= s.star.x1; ++i)
      sys.chi_local[s.star_local_node(i, j)] = decomp.pou.at(sub_id, i, j);

  // Weighted form over the omega elements.
  const auto omega_elems = s.omega_elements(mesh);
  std::vector<Triplet> btrips;
  btrips.reserve(omega_elems.size() * 16);
  for (int e : omega_elems) {
    const auto nodes = mesh.element_nodes(e);
    int loc[4];
    Eigen::Vector4d chi4;
    for (int r = 0; r < 4; ++r) {
      loc[r] = sys.numbering.to_local(nodes[r]);
      chi4[r] = sys.chi_local[loc[r]];
    }
    Eigen::Matrix4d Be;
    if (mode == PouProduct::Nodal) {
      const Eigen::Matrix4d Ke = element_stiffness(coeff[e], mesh.hx, mesh.hy);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) Be(r, c) = chi4[r] * Ke(r, c) * chi4[c];
    } else {
      Be = element_pou_stiffness(coeff[e], mesh.hx, mesh.hy, chi4);
    }
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) btrips.emplace_back(loc[r], loc[c], Be(r, c));
  }
  sys.B_full.resize(sys.n_local(), sys.n_local());
  sys.B_full.setFromTriplets(btrips.begin(), btrips.end());

  // Free ordering and block extraction.
  sys.free_of_local.assign(sys.n_local(), -1);
  for (int k = 0; k < sys.n1(); ++k) sys.free_of_local[sys.b1[k]] = k;
  for (int k = 0; k < sys.n2(); ++k) sys.free_of_local[sys.b2[k]] = sys.n1() + k;
  sys.local_of_free.resize(sys.n_free());
  for (int l = 0; l < sys.n_local(); ++l)
    if (sys.free_of_local[l] >= 0) sys.local_of_free[sys.free_of_local[l]] = l;

  std::vector<Triplet> ta, t11, t12, tb11;
  for (int k = 0; k < sys.K_star.outerSize(); ++k)
    for (SpMat::InnerIterator it(sys.K_star, k); it; ++it) {
      const int fr = sys.free_of_local[it.row()];
      const int fc = sys.free_of_local[it.col()];
      if (fr < 0 || fc < 0) continue;
      ta.emplace_back(fr, fc, it.value());
      if (fr < sys.n1() && fc < sys.n1()) t11.emplace_back(fr, fc, it.value());
      if (fr < sys.n1() && fc >= sys.n1()) t12.emplace_back(fr, fc - sys.n1(), it.value());
    }
  for (int k = 0; k < sys.B_full.outerSize(); ++k)
    for (SpMat::InnerIterator it(sys.B_full, k); it; ++it) {
      const int fr = sys.free_of_local[it.row()];
      const int fc = sys.free_of_local[it.col()];
      if (fr >= 0 && fr < sys.n1() && fc >= 0 && fc < sys.n1())
        tb11.emplace_back(fr, fc, it.value());
    }
  sys.A_free.resize(sys.n_free(), sys.n_free());
  sys.A_free.setFromTriplets(ta.begin(), ta.end());
  sys.A11.resize(sys.n1(), sys.n1());
  sys.A11.setFromTriplets(t11.begin(), t11.end());
  sys.A12.resize(sys.n1(), sys.n2());
  sys.A12.setFromTriplets(t12.begin(), t12.end());
  sys.B11.resize(sys.n1(), sys.n1());
  sys.B11.setFromTriplets(tb11.begin(), tb11.end());

  sys.q_dir.resize(static_cast<int>(sys.dir.size()));
  for (std::size_t k = 0; k < sys.dir.size(); ++k) {
    const int g = sys.numbering.local_to_global[sys.dir[k]];
    const auto [i, j] = mesh.node_coords(g);
    sys.q_dir[static_cast<int>(k)] = data.q(mesh.node_x(i), mesh.node_y(j));
  }

  Vec mfull = sys.B_full * Vec::Ones(sys.n_local());
  sys.M_free = sys.gather_free(mfull);
  return sys;
}

/// Per-subdomain spectral basis: particular functions plus the leading
/// eigenvectors of the weighted local eigenproblem, with one extra eigenvalue
/// kept as the a-posteriori error certificate.
///
/// Eigenvalues are indexed as in the underlying eigenproblem: for a patch
/// that does not touch the essential boundary the constant member comes
/// first with eigenvalue exactly 0. Vectors are stored on patch nodes,
/// columns B-orthonormal.
struct LocalSpectralBasis {
  int subdomain_id = -1;
  bool includes_constant = false;
  std::vector<double> lambda;  // size n_members()+1; last entry = certificate
  Mat vectors;                 // n_local x n_members
  Vec psi_r, psi_d;            // particular parts, patch nodes
  bool certificate_available = true;  // false when the spectrum was exhausted
  int iterations = 0;                 // 0 for the dense path
  double max_residual = 0.0;          // eigenpair residual of the retained pairs

  int n_members() const { return static_cast<int>(vectors.cols()); }
  double certificate(int n) const { return lambda.at(static_cast<std::size_t>(n)); }
  double certificate() const { return lambda.back(); }
  Vec psi() const { return psi_r + psi_d; }
};

/// Smallest member count n with lambda[n]^{-1/2} <= tol_loc, i.e. the first
/// excluded eigenvalue certifies the requested local accuracy. For a patch
/// with the constant member, at least the constant is always retained. When
/// the tolerance is unreachable with the available spectrum, returns the full
/// member count with `flagged` set.
struct AdaptiveSelection {
  int n = 0;
  double certificate = 0.0;  // lambda_{n+1}^{-1/2}
  bool flagged = false;
};

inline AdaptiveSelection adaptive_select(const LocalSpectralBasis& basis, double tol_loc) {
  if (!(tol_loc > 0.0)) throw std::invalid_argument("adaptive_select: tolerance must be positive");
  const int n_min = basis.includes_constant ? 1 : 0;
  const int n_max = basis.n_members();
  auto cert_at = [&](int n) {
    if (n == n_max && !basis.certificate_available) return 0.0;  // spectrum exhausted
    const double lam = basis.lambda.at(static_cast<std::size_t>(n));
    return lam > 0.0 ? 1.0 / std::sqrt(lam) : std::numeric_limits<double>::infinity();
  };
  for (int n = n_min; n < n_max; ++n)
    if (cert_at(n) <= tol_loc) return {n, cert_at(n), false};
  const double c = cert_at(n_max);
  return {n_max, c, !(c <= tol_loc)};
}

}  // namespace msgfem

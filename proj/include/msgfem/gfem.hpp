#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "decomp.hpp"
#include "local_solver.hpp"
#include "solvers.hpp"

namespace msgfem {

/// Globally assembled forms of the model problem: stiffness at the actual
/// coefficient, stiffness at unit coefficient and mass (for H1 norms), and
/// the load functional.
struct GlobalSystem {
  SpMat K, Kunit, mass;
  Vec F;
};

inline GlobalSystem assemble_global_system(const Mesh& mesh, const BoundaryTags& tags,
                                           const CoefficientField& coeff,
                                           const ProblemData& data) {
  GlobalSystem g;
  const auto elems = all_elements(mesh);
  const auto num = identity_numbering(mesh);
  g.K = assemble_stiffness(mesh, coeff, elems, num);
  CoefficientField unit;
  unit.value.assign(mesh.num_elements(), 1.0);
  unit.alpha = unit.beta = 1.0;
  g.Kunit = assemble_stiffness(mesh, unit, elems, num);
  g.mass = assemble_mass(mesh, elems, num);
  g.F = assemble_load(mesh, tags, data, elems, num);
  return g;
}

enum class FineSolverKind { Ldlt, Cg };

/// Fine-scale reference solve: essential rows eliminated symmetrically with
/// the lifted boundary data, interior system by sparse direct factorization
/// (or conjugate gradients when requested).
inline Vec fine_solve(const Mesh& mesh, const BoundaryTags& tags, const GlobalSystem& g,
                      const ProblemData& data, FineSolverKind kind = FineSolverKind::Ldlt) {
  const int n = mesh.num_nodes();
  std::vector<int> free_of_node(n, -1);
  std::vector<int> node_of_free;
  Vec lift = Vec::Zero(n);
  for (int k = 0; k < n; ++k) {
    if (tags.node[k] == NodeTag::Dirichlet) {
      const auto [i, j] = mesh.node_coords(k);
      lift[k] = data.q(mesh.node_x(i), mesh.node_y(j));
    } else {
      free_of_node[k] = static_cast<int>(node_of_free.size());
      node_of_free.push_back(k);
    }
  }
  const int nf = static_cast<int>(node_of_free.size());
  if (nf == 0) return lift;

  Vec rhs_full = g.F - g.K * lift;
  Vec rhs(nf);
  for (int f = 0; f < nf; ++f) rhs[f] = rhs_full[node_of_free[f]];

  std::vector<Triplet> trips;
  trips.reserve(g.K.nonZeros());
  for (int k = 0; k < g.K.outerSize(); ++k)
    for (SpMat::InnerIterator it(g.K, k); it; ++it) {
      const int fr = free_of_node[it.row()];
      const int fc = free_of_node[it.col()];
      if (fr >= 0 && fc >= 0) trips.emplace_back(fr, fc, it.value());
    }
  SpMat Kff(nf, nf);
  Kff.setFromTriplets(trips.begin(), trips.end());

  Vec uf;
  if (kind == FineSolverKind::Ldlt) {
    SpdFactor fact;
    fact.factorize(std::move(Kff), "fine_solve");
    uf = fact.solve(rhs, 1e-10);
  } else {
    uf = cg_solve(Kff, rhs, 1e-12);
  }
  Vec u = lift;
  for (int f = 0; f < nf; ++f) u[node_of_free[f]] = uf[f];
  return u;
}

/// What a subdomain solve hands back to the global stage: the spectral basis
/// plus the maps needed to paste it, without the patch matrices.
struct LocalSolveResult {
  LocalSpectralBasis basis;
  std::vector<int> local_to_global;
  Vec chi_local;
  int n1 = 0, n2 = 0;
  bool touches_dirichlet = false;
  double seconds = 0.0;
};

inline LocalSolveResult make_result(const LocalSystem& sys, LocalSpectralBasis basis) {
  LocalSolveResult r;
  r.basis = std::move(basis);
  r.local_to_global = sys.numbering.local_to_global;
  r.chi_local = sys.chi_local;
  r.n1 = sys.n1();
  r.n2 = sys.n2();
  r.touches_dirichlet = sys.touches_dirichlet;
  return r;
}

/// Trial space of the coarse problem: each column is the nodal product of the
/// owner's pou function with one basis member, extended by zero; the
/// particular vector is the pasted sum of the local particular functions.
struct CoarseSpace {
  SpMat Phi;  // num_nodes x num_columns
  Vec u_p;    // global particular vector
  std::vector<std::pair<int, int>> owner;  // column -> (subdomain, member)
};

inline CoarseSpace build_coarse_space(const Mesh& mesh, const std::vector<LocalSolveResult>& locals,
                                      const std::vector<int>& counts) {
  if (locals.size() != counts.size())
    throw std::invalid_argument("build_coarse_space: counts size mismatch");
  CoarseSpace cs;
  cs.u_p = Vec::Zero(mesh.num_nodes());
  std::vector<Triplet> trips;
  int col = 0;
  for (std::size_t s = 0; s < locals.size(); ++s) {
    const auto& loc = locals[s];
    if (loc.basis.subdomain_id != static_cast<int>(s))
      throw std::invalid_argument("build_coarse_space: missing or misordered subdomain basis");
    if (counts[s] > loc.basis.n_members())
      throw std::invalid_argument("build_coarse_space: subdomain " + std::to_string(s) +
                                  " has only " + std::to_string(loc.basis.n_members()) +
                                  " members, " + std::to_string(counts[s]) + " requested");
    const Vec psi = loc.basis.psi();
    const int nl = static_cast<int>(loc.local_to_global.size());
    for (int l = 0; l < nl; ++l) {
      const double chi = loc.chi_local[l];
      if (chi == 0.0) continue;
      const int gnode = loc.local_to_global[l];
      cs.u_p[gnode] += chi * psi[l];
      for (int k = 0; k < counts[s]; ++k) {
        const double v = chi * loc.basis.vectors(l, k);
        if (v != 0.0) trips.emplace_back(gnode, col + k, v);
      }
    }
    for (int k = 0; k < counts[s]; ++k) cs.owner.emplace_back(static_cast<int>(s), k);
    col += counts[s];
  }
  cs.Phi.resize(mesh.num_nodes(), col);
  cs.Phi.setFromTriplets(trips.begin(), trips.end());
  return cs;
}

struct GfemSolution {
  Vec coarse_coeff;           // coefficients in the coarse columns
  Vec u;                      // reconstructed fine-node field
  double galerkin_residual = 0.0;  // |Phi'(F - K u)| / |Phi' F|
};

/// Galerkin solve on the coarse space: dense symmetric factorization of the
/// projected stiffness with a relative pivot guard against near-dependent
/// columns.
inline GfemSolution coarse_solve(const CoarseSpace& cs, const SpMat& K, const Vec& F,
                                 double pivot_tol = 1e-12) {
  GfemSolution sol;
  const int nc = static_cast<int>(cs.Phi.cols());
  if (nc == 0) {
    sol.coarse_coeff = Vec(0);
    sol.u = cs.u_p;
    sol.galerkin_residual = 0.0;
    return sol;
  }
  const SpMat KPhi = K * cs.Phi;
  Mat G = Mat(cs.Phi.transpose() * KPhi);
  G = 0.5 * (G + G.transpose());
  const Vec rhs = cs.Phi.transpose() * (F - K * cs.u_p);

  Eigen::LDLT<Mat> ldlt(G);
  const Vec D = ldlt.vectorD();
  const double dmax = D.cwiseAbs().maxCoeff();
  const double dmin = D.minCoeff();
  if (!(dmin > pivot_tol * dmax)) {
    // Map the offending pivot back to a column to name the culprit.
    Eigen::VectorXi perm = Eigen::VectorXi::LinSpaced(nc, 0, nc - 1);
    perm = ldlt.transpositionsP() * perm;
    int bad = 0;
    D.minCoeff(&bad);
    const auto [sub, member] = cs.owner[perm[bad]];
    throw std::runtime_error("coarse_solve: Gram matrix numerically singular near column of "
                             "subdomain " +
                             std::to_string(sub) + ", member " + std::to_string(member) +
                             " (pivot " + g17(dmin) + " vs max " + g17(dmax) + ")");
  }
  sol.coarse_coeff = ldlt.solve(rhs);
  sol.u = cs.u_p + cs.Phi * sol.coarse_coeff;
  const double ref = (cs.Phi.transpose() * F).norm();
  const double res = (cs.Phi.transpose() * (F - K * sol.u)).norm();
  sol.galerkin_residual = ref > 0 ? res / ref : res;
  return sol;
}

struct ErrorReport {
  double h1_abs = 0.0, h1_rel = 0.0;
  double energy_abs = 0.0, energy_rel = 0.0;
};

inline ErrorReport error_report(const Vec& u_ref, const Vec& u, const GlobalSystem& g) {
  if (u_ref.size() != u.size()) throw std::invalid_argument("error_report: index space mismatch");
  const double ref_h1 = h1_norm(g.Kunit, g.mass, u_ref);
  const double ref_a = energy_norm(g.K, u_ref);
  if (!(ref_h1 > 0.0)) throw std::invalid_argument("error_report: zero reference norm");
  const Vec d = u_ref - u;
  ErrorReport r;
  r.h1_abs = h1_norm(g.Kunit, g.mass, d);
  r.h1_rel = r.h1_abs / ref_h1;
  r.energy_abs = energy_norm(g.K, d);
  r.energy_rel = ref_a > 0.0 ? r.energy_abs / ref_a : r.energy_abs;
  return r;
}

struct BoundReport {
  double lhs = 0.0;  // |u_e - u_G|_a
  double rhs = 0.0;  // sqrt(kappa kappa*) max_i lambda^{-1/2} |u_e|_a
  double certificate_factor = 0.0;  // max_i lambda_{n_i+1}^{-1/2}
  int argmax_subdomain = -1;
  bool holds = false;
  std::vector<double> local_factor;  // per-subdomain lambda^{-1/2}
};

/// Checks the a-posteriori error bound of the pasted approximation against
/// the fine-scale solution: the energy error must not exceed
/// sqrt(kappa*kappa_star) * max_i lambda_{n_i+1}^{-1/2} * |u_e|_a.
inline BoundReport verify_global_bound(const Vec& u_e, const GfemSolution& sol, const SpMat& K,
                                       const Decomposition& decomp,
                                       const std::vector<LocalSolveResult>& locals,
                                       const std::vector<int>& counts, double slack = 1e-8) {
  BoundReport rep;
  rep.lhs = energy_norm(K, u_e - sol.u);
  rep.local_factor.resize(locals.size(), 0.0);
  for (std::size_t s = 0; s < locals.size(); ++s) {
    const auto& b = locals[s].basis;
    if (counts[s] >= static_cast<int>(b.lambda.size()))
      throw std::invalid_argument("verify_global_bound: no certificate for subdomain " +
                                  std::to_string(s));
    const double lam = b.lambda[counts[s]];
    const double f = std::isinf(lam) ? 0.0
                     : lam > 0.0     ? 1.0 / std::sqrt(lam)
                                     : std::numeric_limits<double>::infinity();
    rep.local_factor[s] = f;
    if (f > rep.certificate_factor) {
      rep.certificate_factor = f;
      rep.argmax_subdomain = static_cast<int>(s);
    }
  }
  const double u_norm = energy_norm(K, u_e);
  rep.rhs = std::sqrt(static_cast<double>(decomp.kappa) * decomp.kappa_star) *
            rep.certificate_factor * u_norm;
  // the roundoff floor of the left side covers the exhausted-spectrum case
  // (zero certified remainder against a machine-zero error)
  rep.holds = rep.lhs <= rep.rhs * (1.0 + slack) + 1e-12 * u_norm || std::isinf(rep.rhs);
  return rep;
}

/// Nodal field dump: header "nx ny", then (nx+1)*(ny+1) values, one grid row
/// per line (y outer).
inline void write_solution(std::ostream& out, const Mesh& mesh, const Vec& u) {
  if (u.size() != mesh.num_nodes()) throw std::invalid_argument("write_solution: size mismatch");
  out << mesh.nx << ' ' << mesh.ny << '\n';
  for (int j = 0; j <= mesh.ny; ++j) {
    for (int i = 0; i <= mesh.nx; ++i)
      out << g17(u[mesh.node_index(i, j)]) << (i == mesh.nx ? "" : " ");
    out << '\n';
  }
}

}  // namespace msgfem

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"

namespace msgfem {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Gauss-Legendre rule on [0,1], 1 <= n <= 5 points (exact through degree
/// 2n-1).
inline const std::vector<std::pair<double, double>>& gauss_rule(int n) {
  static const std::vector<std::vector<std::pair<double, double>>> rules = [] {
    std::vector<std::vector<std::pair<double, double>>> r(6);
    r[1] = {{0.5, 1.0}};
    {
      const double a = 0.5 / std::sqrt(3.0);
      r[2] = {{0.5 - a, 0.5}, {0.5 + a, 0.5}};
    }
    {
      const double a = 0.5 * std::sqrt(0.6);
      r[3] = {{0.5 - a, 5.0 / 18.0}, {0.5, 8.0 / 18.0}, {0.5 + a, 5.0 / 18.0}};
    }
    {
      const double a1 = 0.5 * std::sqrt((3.0 + 2.0 * std::sqrt(6.0 / 5.0)) / 7.0);
      const double a2 = 0.5 * std::sqrt((3.0 - 2.0 * std::sqrt(6.0 / 5.0)) / 7.0);
      const double w1 = (18.0 - std::sqrt(30.0)) / 72.0;
      const double w2 = (18.0 + std::sqrt(30.0)) / 72.0;
      r[4] = {{0.5 - a1, w1}, {0.5 - a2, w2}, {0.5 + a2, w2}, {0.5 + a1, w1}};
    }
    {
      const double a1 = 0.5 * std::sqrt(5.0 + 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
      const double a2 = 0.5 * std::sqrt(5.0 - 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
      const double w1 = (322.0 - 13.0 * std::sqrt(70.0)) / 1800.0;
      const double w2 = (322.0 + 13.0 * std::sqrt(70.0)) / 1800.0;
      r[5] = {{0.5 - a1, w1}, {0.5 - a2, w2}, {0.5, 64.0 / 225.0}, {0.5 + a2, w2}, {0.5 + a1, w1}};
    }
    return r;
  }();
  if (n < 1 || n > 5) throw std::invalid_argument("gauss_rule: order must be in 1..5");
  return rules[n];
}

/// Bilinear shape functions on the reference square, counterclockwise node
/// order (0,0),(1,0),(1,1),(0,1).
inline Eigen::Vector4d q1_shape(double xi, double eta) {
  return {(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta};
}
inline Eigen::Vector4d q1_dxi(double eta) { return {-(1 - eta), (1 - eta), eta, -eta}; }
inline Eigen::Vector4d q1_deta(double xi) { return {-(1 - xi), -xi, xi, (1 - xi)}; }

/// Exact Q1 stiffness for coefficient a*I on an hx-by-hy rectangle.
inline Eigen::Matrix4d element_stiffness(double a, double hx, double hy) {
  if (!(a > 0.0)) throw std::invalid_argument("element_stiffness: coefficient must be > 0");
  static const Eigen::Matrix4d Kx = (Eigen::Matrix4d() <<  //
                                         2, -2, -1, 1,     //
                                     -2, 2, 1, -1,         //
                                     -1, 1, 2, -2,         //
                                     1, -1, -2, 2)
                                        .finished();
  static const Eigen::Matrix4d Ky = (Eigen::Matrix4d() <<  //
                                         2, 1, -1, -2,     //
                                     1, 2, -2, -1,         //
                                     -1, -2, 2, 1,         //
                                     -2, -1, 1, 2)
                                        .finished();
  return (a / 6.0) * ((hy / hx) * Kx + (hx / hy) * Ky);
}

/// Exact Q1 mass matrix on an hx-by-hy rectangle.
inline Eigen::Matrix4d element_mass(double hx, double hy) {
  if (!(hx > 0.0) || !(hy > 0.0)) throw std::invalid_argument("element_mass: sides must be > 0");
  static const Eigen::Matrix4d M = (Eigen::Matrix4d() <<  //
                                        4, 2, 1, 2,       //
                                    2, 4, 2, 1,           //
                                    1, 2, 4, 2,           //
                                    2, 1, 2, 4)
                                       .finished();
  return (hx * hy / 36.0) * M;
}

/// Q1 stiffness of the interpolated-product form a*grad(chi u).grad(chi v) on
/// one element, where chi is the bilinear interpolant of the 4 nodal values
/// `chi4`. 3x3 Gauss, exact for elementwise-constant coefficients.
inline Eigen::Matrix4d element_pou_stiffness(double a, double hx, double hy,
                                             const Eigen::Vector4d& chi4) {
  Eigen::Matrix4d out = Eigen::Matrix4d::Zero();
  const auto& rule = gauss_rule(3);
  for (const auto& [xi, wx] : rule) {
    for (const auto& [eta, wy] : rule) {
      const Eigen::Vector4d N = q1_shape(xi, eta);
      const Eigen::Vector4d dxi = q1_dxi(eta) / hx;
      const Eigen::Vector4d deta = q1_deta(xi) / hy;
      const double chi = chi4.dot(N);
      const double chix = chi4.dot(dxi);
      const double chiy = chi4.dot(deta);
      // grad(chi*N_k) = N_k * grad(chi) + chi * grad(N_k)
      const Eigen::Vector4d gx = chix * N + chi * dxi;
      const Eigen::Vector4d gy = chiy * N + chi * deta;
      out += (a * wx * wy * hx * hy) * (gx * gx.transpose() + gy * gy.transpose());
    }
  }
  return out;
}

/// Compact local numbering over the nodes touched by an element region, with
/// an explicit local->global map. Local order is ascending global index,
/// i.e. lexicographic.
struct LocalNumbering {
  std::vector<int> local_to_global;
  std::vector<int> global_to_local;  // size num_nodes, -1 where absent

  int size() const { return static_cast<int>(local_to_global.size()); }
  int to_local(int g) const { return global_to_local[g]; }
};

inline LocalNumbering make_numbering(const Mesh& mesh, std::span<const int> elements) {
  LocalNumbering num;
  num.global_to_local.assign(mesh.num_nodes(), -1);
  for (int e : elements)
    for (int n : mesh.element_nodes(e)) num.global_to_local[n] = 0;
  for (int g = 0; g < mesh.num_nodes(); ++g)
    if (num.global_to_local[g] == 0) {
      num.global_to_local[g] = num.size();
      num.local_to_global.push_back(g);
    }
  return num;
}

inline LocalNumbering identity_numbering(const Mesh& mesh) {
  LocalNumbering num;
  num.local_to_global.resize(mesh.num_nodes());
  num.global_to_local.resize(mesh.num_nodes());
  for (int g = 0; g < mesh.num_nodes(); ++g) {
    num.local_to_global[g] = g;
    num.global_to_local[g] = g;
  }
  return num;
}

inline std::vector<int> all_elements(const Mesh& mesh) {
  std::vector<int> e(mesh.num_elements());
  for (int i = 0; i < mesh.num_elements(); ++i) e[i] = i;
  return e;
}

/// Assembles the stiffness form over the given element region into the local
/// numbering. Contributions are accumulated in the order the elements are
/// listed, so assembly is deterministic.
inline SpMat assemble_stiffness(const Mesh& mesh, const CoefficientField& coeff,
                                std::span<const int> elements, const LocalNumbering& num) {
  if (elements.empty()) throw std::invalid_argument("assemble_stiffness: empty element region");
  std::vector<Triplet> trips;
  trips.reserve(elements.size() * 16);
  for (int e : elements) {
    const Eigen::Matrix4d Ke = element_stiffness(coeff[e], mesh.hx, mesh.hy);
    const auto nodes = mesh.element_nodes(e);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        trips.emplace_back(num.to_local(nodes[r]), num.to_local(nodes[c]), Ke(r, c));
  }
  SpMat K(num.size(), num.size());
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

inline SpMat assemble_mass(const Mesh& mesh, std::span<const int> elements,
                           const LocalNumbering& num) {
  if (elements.empty()) throw std::invalid_argument("assemble_mass: empty element region");
  std::vector<Triplet> trips;
  trips.reserve(elements.size() * 16);
  const Eigen::Matrix4d Me = element_mass(mesh.hx, mesh.hy);
  for (int e : elements) {
    const auto nodes = mesh.element_nodes(e);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        trips.emplace_back(num.to_local(nodes[r]), num.to_local(nodes[c]), Me(r, c));
  }
  SpMat M(num.size(), num.size());
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

/// Load vector over a region: volume term by tensor Gauss quadrature of order
/// `volume_order`, flux term by 1D Gauss on the region's share of the natural
/// boundary.
inline Vec assemble_load(const Mesh& mesh, const BoundaryTags& tags, const ProblemData& data,
                         std::span<const int> elements, const LocalNumbering& num,
                         int volume_order = 3) {
  if (elements.empty()) throw std::invalid_argument("assemble_load: empty element region");
  Vec F = Vec::Zero(num.size());
  const auto& rule = gauss_rule(volume_order);
  for (int e : elements) {
    const auto [ex, ey] = mesh.element_coords(e);
    const double x0 = mesh.node_x(ex), y0 = mesh.node_y(ey);
    const auto nodes = mesh.element_nodes(e);
    for (const auto& [xi, wx] : rule) {
      for (const auto& [eta, wy] : rule) {
        const double fv = data.f(x0 + xi * mesh.hx, y0 + eta * mesh.hy);
        const Eigen::Vector4d N = q1_shape(xi, eta);
        const double w = wx * wy * mesh.hx * mesh.hy * fv;
        for (int r = 0; r < 4; ++r) F[num.to_local(nodes[r])] += w * N[r];
      }
    }
  }
  // Natural-boundary flux on edges whose adjacent element is in the region.
  std::vector<char> in_region(mesh.num_elements(), 0);
  for (int e : elements) in_region[e] = 1;
  const auto& edge_rule = gauss_rule(3);
  for (const auto& edge : tags.edges) {
    if (edge.tag != EdgeTag::Neumann || !in_region[edge.element]) continue;
    const auto [i0, j0] = mesh.node_coords(edge.n0);
    const auto [i1, j1] = mesh.node_coords(edge.n1);
    const double ax = mesh.node_x(i0), ay = mesh.node_y(j0);
    const double bx = mesh.node_x(i1), by = mesh.node_y(j1);
    const double len = std::abs(bx - ax) + std::abs(by - ay);  // axis-aligned
    for (const auto& [t, wt] : edge_rule) {
      const double gv = data.g(ax + t * (bx - ax), ay + t * (by - ay));
      F[num.to_local(edge.n0)] += wt * len * gv * (1.0 - t);
      F[num.to_local(edge.n1)] += wt * len * gv * t;
    }
  }
  return F;
}

/// Nodal interpolant of the product chi*v: the entrywise product of nodal
/// values.
inline Vec pou_scale(const Vec& v, const Vec& chi) {
  if (v.size() != chi.size()) throw std::invalid_argument("pou_scale: length mismatch");
  return v.cwiseProduct(chi);
}

namespace detail {
inline double max_abs_diagonal(const SpMat& K) {
  return K.rows() == 0 ? 0.0 : K.diagonal().cwiseAbs().maxCoeff();
}
}  // namespace detail

/// sqrt(v' K v) for a positive-semidefinite K (stored full symmetric). Small
/// negative values from roundoff are clamped; anything beyond the scaled
/// tolerance is a numerical breakdown.
inline double energy_norm(const SpMat& K, const Vec& v) {
  if (K.rows() != v.size()) throw std::invalid_argument("energy_norm: dimension mismatch");
  const double q = v.dot(K * v);
  const double tol = 1e-12 * v.squaredNorm() * detail::max_abs_diagonal(K);
  if (q < -tol) throw std::runtime_error("energy_norm: quadratic form is negative beyond roundoff");
  return std::sqrt(std::max(q, 0.0));
}

/// Full H1 norm sqrt(v' Kunit v + v' M v), Kunit assembled at unit
/// coefficient.
inline double h1_norm(const SpMat& Kunit, const SpMat& mass, const Vec& v) {
  if (Kunit.rows() != v.size() || mass.rows() != v.size())
    throw std::invalid_argument("h1_norm: dimension mismatch");
  const double qk = v.dot(Kunit * v);
  const double qm = v.dot(mass * v);
  const double tol = 1e-12 * v.squaredNorm() *
                     (detail::max_abs_diagonal(Kunit) + detail::max_abs_diagonal(mass));
  if (qk + qm < -tol) throw std::runtime_error("h1_norm: quadratic form is negative");
  return std::sqrt(std::max(qk + qm, 0.0));
}

}  // namespace msgfem

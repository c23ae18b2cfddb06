#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "assembly.hpp"
#include "grid.hpp"

namespace msgfem {

/// Half-open element index range [x0,x1) x [y0,y1). Node indices of the
/// closed patch run over [x0..x1] x [y0..y1].
struct ElementRect {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  int num_elements() const { return width() * height(); }
  int num_nodes() const { return (width() + 1) * (height() + 1); }
  bool contains_element(int ex, int ey) const {
    return ex >= x0 && ex < x1 && ey >= y0 && ey < y1;
  }
  bool contains_node(int i, int j) const { return i >= x0 && i <= x1 && j >= y0 && j <= y1; }

  ElementRect extended(int layers, int nx, int ny) const {
    return {std::max(x0 - layers, 0), std::min(x1 + layers, nx), std::max(y0 - layers, 0),
            std::min(y1 + layers, ny)};
  }
};

/// One member of the overlapping cover: the overlapping subdomain (omega),
/// its oversampled extension (omega_star), and the DOF partition of the
/// oversampled patch.
///
/// Local node indices below refer to lexicographic numbering of the closed
/// omega_star patch (x fastest), which coincides with make_numbering() over
/// its elements.
struct Subdomain {
  int id = -1;
  int bx = 0, by = 0;  // block coordinates in the m-by-m grid
  ElementRect core;    // nonoverlapping block
  ElementRect omega;   // core extended by overlap_layers, clipped
  ElementRect star;    // omega extended by oversampling_layers, clipped

  // interior DOFs of the oversampled patch (hat functions vanishing on the
  // interior boundary), the DOFs active on the interior boundary, and the
  // essential-boundary nodes, all in patch-local indices
  std::vector<int> b1, b2, dir;
  bool touches_dirichlet = false;
  double H = 0.0;       // mean side length of omega
  double H_star = 0.0;  // mean side length of omega_star

  std::vector<int> star_elements(const Mesh& mesh) const {
    std::vector<int> e;
    e.reserve(star.num_elements());
    for (int ey = star.y0; ey < star.y1; ++ey)
      for (int ex = star.x0; ex < star.x1; ++ex) e.push_back(mesh.element_index(ex, ey));
    return e;
  }
  std::vector<int> omega_elements(const Mesh& mesh) const {
    std::vector<int> e;
    e.reserve(omega.num_elements());
    for (int ey = omega.y0; ey < omega.y1; ++ey)
      for (int ex = omega.x0; ex < omega.x1; ++ex) e.push_back(mesh.element_index(ex, ey));
    return e;
  }

  int star_local_node(int i, int j) const {
    return (i - star.x0) + (j - star.y0) * (star.width() + 1);
  }
  /// True when the oversampled patch was not clipped by the domain boundary.
  bool is_interior(const Mesh& mesh) const {
    return star.x0 > 0 && star.x1 < mesh.nx && star.y0 > 0 && star.y1 < mesh.ny;
  }
};

/// Nodal partition-of-unity fields, one per subdomain, stored on the closed
/// omega patch of each owner.
struct PartitionOfUnity {
  struct ChiField {
    ElementRect nodes;          // the omega rect of the owner
    std::vector<double> value;  // (w+1)*(h+1) nodal values, x fastest

    double at(int i, int j) const {
      if (!nodes.contains_node(i, j)) return 0.0;
      return value[(i - nodes.x0) + (j - nodes.y0) * (nodes.width() + 1)];
    }
  };
  std::vector<ChiField> chi;     // indexed by subdomain id
  std::vector<double> max_grad;  // per subdomain, max |grad chi| over elements

  double at(int sub, int i, int j) const { return chi[sub].at(i, j); }
};

struct Decomposition {
  int m = 0;
  int overlap_layers = 0;
  int oversampling_layers = 0;
  std::vector<Subdomain> subdomains;
  PartitionOfUnity pou;
  int kappa = 0;       // max element membership count over the omega cover
  int kappa_star = 0;  // same over the oversampled cover

  int size() const { return static_cast<int>(subdomains.size()); }
};

namespace detail {

inline int block_start(int count, int m, int s) {
  return static_cast<int>((static_cast<long long>(s) * count) / m);
}

/// Integer ramp weight: element-layer distance to the interior part of the
/// omega boundary, capped at the overlap width.
inline int ramp_weight(const ElementRect& omega, const Mesh& mesh, int cap, int i, int j) {
  int d = std::numeric_limits<int>::max();
  if (omega.x0 > 0) d = std::min(d, i - omega.x0);
  if (omega.x1 < mesh.nx) d = std::min(d, omega.x1 - i);
  if (omega.y0 > 0) d = std::min(d, j - omega.y0);
  if (omega.y1 < mesh.ny) d = std::min(d, omega.y1 - j);
  return std::min(d, cap);
}

}  // namespace detail

/// Normalized distance-ramp partition of unity subordinate to the omega
/// cover: raw weight = capped layer distance to the interior boundary of
/// omega_i, then chi_i = w_i / sum_j w_j.
inline PartitionOfUnity build_pou(const Mesh& mesh, const std::vector<Subdomain>& subs,
                                  int overlap_layers) {
  PartitionOfUnity pou;
  pou.chi.resize(subs.size());
  pou.max_grad.assign(subs.size(), 0.0);

  std::vector<double> wsum(mesh.num_nodes(), 0.0);
  std::vector<std::vector<int>> weights(subs.size());
  for (const auto& s : subs) {
    auto& w = weights[s.id];
    const ElementRect& om = s.omega;
    w.resize(om.num_nodes());
    int idx = 0;
    for (int j = om.y0; j <= om.y1; ++j)
      for (int i = om.x0; i <= om.x1; ++i, ++idx) {
        w[idx] = detail::ramp_weight(om, mesh, overlap_layers, i, j);
        wsum[mesh.node_index(i, j)] += w[idx];
      }
  }
  for (const auto& s : subs) {
    auto& field = pou.chi[s.id];
    field.nodes = s.omega;
    field.value.resize(s.omega.num_nodes());
    int idx = 0;
    for (int j = s.omega.y0; j <= s.omega.y1; ++j)
      for (int i = s.omega.x0; i <= s.omega.x1; ++i, ++idx) {
        const double total = wsum[mesh.node_index(i, j)];
        if (!(total > 0.0))
          throw std::runtime_error("build_pou: node not covered by any ramp weight");
        field.value[idx] = weights[s.id][idx] / total;
      }
  }
  // Max gradient of the bilinear interpolant; for a bilinear function the
  // componentwise gradient extremes sit at element corners.
  for (const auto& s : subs) {
    double mg = 0.0;
    const auto& f = pou.chi[s.id];
    for (int ey = s.omega.y0; ey < s.omega.y1; ++ey)
      for (int ex = s.omega.x0; ex < s.omega.x1; ++ex) {
        const double c00 = f.at(ex, ey), c10 = f.at(ex + 1, ey);
        const double c01 = f.at(ex, ey + 1), c11 = f.at(ex + 1, ey + 1);
        const double gxb = (c10 - c00) / mesh.hx, gxt = (c11 - c01) / mesh.hx;
        const double gyl = (c01 - c00) / mesh.hy, gyr = (c11 - c10) / mesh.hy;
        mg = std::max({mg, std::hypot(gxb, gyl), std::hypot(gxb, gyr), std::hypot(gxt, gyl),
                       std::hypot(gxt, gyr)});
      }
    pou.max_grad[s.id] = mg;
  }
  return pou;
}

/// Exact per-element membership maxima over the two covers.
inline std::pair<int, int> overlap_constants(const Mesh& mesh, const std::vector<Subdomain>& subs) {
  std::vector<int> count(mesh.num_elements(), 0), count_star(mesh.num_elements(), 0);
  for (const auto& s : subs) {
    for (int ey = s.omega.y0; ey < s.omega.y1; ++ey)
      for (int ex = s.omega.x0; ex < s.omega.x1; ++ex) ++count[mesh.element_index(ex, ey)];
    for (int ey = s.star.y0; ey < s.star.y1; ++ey)
      for (int ex = s.star.x0; ex < s.star.x1; ++ex) ++count_star[mesh.element_index(ex, ey)];
  }
  int kappa = 0, kappa_star = 0;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    kappa = std::max(kappa, count[e]);
    kappa_star = std::max(kappa_star, count_star[e]);
    if (count[e] == 0) throw std::runtime_error("overlap_constants: uncovered element");
  }
  return {kappa, kappa_star};
}

/// Builds the m-by-m overlapping decomposition with oversampling. Blocks are
/// distributed as evenly as possible (floor/ceil widths); overlap and
/// oversampling extensions are clipped at the domain boundary. Subdomains are
/// ordered row-major over the block grid.
inline Decomposition decompose(const Mesh& mesh, const BoundaryTags& tags, int m,
                               int overlap_layers, int oversampling_layers) {
  if (m < 1) throw std::invalid_argument("decompose: m must be >= 1");
  if (m > mesh.nx || m > mesh.ny)
    throw std::invalid_argument("decompose: m exceeds the element count per axis");
  if (overlap_layers < 1) throw std::invalid_argument("decompose: overlap_layers must be >= 1");
  if (oversampling_layers < 1)
    throw std::invalid_argument("decompose: oversampling_layers must be >= 1");

  Decomposition d;
  d.m = m;
  d.overlap_layers = overlap_layers;
  d.oversampling_layers = oversampling_layers;
  d.subdomains.resize(static_cast<std::size_t>(m) * m);

  for (int by = 0; by < m; ++by)
    for (int bx = 0; bx < m; ++bx) {
      Subdomain s;
      s.id = by * m + bx;
      s.bx = bx;
      s.by = by;
      s.core = {detail::block_start(mesh.nx, m, bx), detail::block_start(mesh.nx, m, bx + 1),
                detail::block_start(mesh.ny, m, by), detail::block_start(mesh.ny, m, by + 1)};
      s.omega = s.core.extended(overlap_layers, mesh.nx, mesh.ny);
      s.star = s.omega.extended(oversampling_layers, mesh.nx, mesh.ny);
      s.H = 0.5 * (s.omega.width() * mesh.hx + s.omega.height() * mesh.hy);
      s.H_star = 0.5 * (s.star.width() * mesh.hx + s.star.height() * mesh.hy);

      // Partition the patch nodes: essential nodes, then the DOFs active on
      // the closure of the interior boundary of the patch, then the interior
      // DOFs. A node where the patch boundary meets the domain boundary
      // belongs to the interior-boundary set: its hat function does not
      // vanish on the interior boundary.
      const ElementRect& st = s.star;
      for (int j = st.y0; j <= st.y1; ++j)
        for (int i = st.x0; i <= st.x1; ++i) {
          const int loc = s.star_local_node(i, j);
          if (tags.node[mesh.node_index(i, j)] == NodeTag::Dirichlet) {
            s.dir.push_back(loc);
            continue;
          }
          const bool on_interior_boundary =
              (i == st.x0 && st.x0 > 0) || (i == st.x1 && st.x1 < mesh.nx) ||
              (j == st.y0 && st.y0 > 0) || (j == st.y1 && st.y1 < mesh.ny);
          (on_interior_boundary ? s.b2 : s.b1).push_back(loc);
        }
      s.touches_dirichlet = !s.dir.empty();
      d.subdomains[s.id] = std::move(s);
    }

  d.pou = build_pou(mesh, d.subdomains, overlap_layers);
  std::tie(d.kappa, d.kappa_star) = overlap_constants(mesh, d.subdomains);
  return d;
}

inline void dump_decomposition(std::ostream& out, const Mesh& mesh, const Decomposition& d) {
  out << "m=" << d.m << " overlap=" << d.overlap_layers << " ell=" << d.oversampling_layers
      << " kappa=" << d.kappa << " kappa_star=" << d.kappa_star << '\n';
  for (const auto& s : d.subdomains) {
    out << "subdomain " << s.id << ": core=[" << s.core.x0 << ',' << s.core.x1 << ")x[" << s.core.y0
        << ',' << s.core.y1 << ")"
        << " omega=[" << s.omega.x0 << ',' << s.omega.x1 << ")x[" << s.omega.y0 << ',' << s.omega.y1
        << ")"
        << " omega_star=[" << s.star.x0 << ',' << s.star.x1 << ")x[" << s.star.y0 << ',' << s.star.y1
        << ")"
        << " |B1|=" << s.b1.size() << " |B2|=" << s.b2.size()
        << " dirichlet=" << (s.touches_dirichlet ? 1 : 0)
        << " interior=" << (s.is_interior(mesh) ? 1 : 0) << '\n';
  }
}

/// The chi field of one subdomain scattered into a global nodal vector.
inline Vec pou_global_vector(const Mesh& mesh, const Decomposition& d, int sub) {
  Vec chi = Vec::Zero(mesh.num_nodes());
  const auto& f = d.pou.chi[sub];
  for (int j = f.nodes.y0; j <= f.nodes.y1; ++j)
    for (int i = f.nodes.x0; i <= f.nodes.x1; ++i) chi[mesh.node_index(i, j)] = f.at(i, j);
  return chi;
}

}  // namespace msgfem

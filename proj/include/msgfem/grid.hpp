#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace msgfem {

struct Rect {
  double x0 = 0.0, y0 = 0.0;
  double width = 1.0, height = 1.0;
};

/// Structured Q1 grid on an axis-aligned rectangle.
///
/// Nodes and elements are numbered lexicographically with x running fastest:
/// node (i,j) has index i + j*(nx+1), element (ex,ey) has index ex + ey*nx.
struct Mesh {
  int nx = 0, ny = 0;
  Rect domain;
  double hx = 0.0, hy = 0.0;

  int num_nodes() const { return (nx + 1) * (ny + 1); }
  int num_elements() const { return nx * ny; }

  int node_index(int i, int j) const { return i + j * (nx + 1); }
  int element_index(int ex, int ey) const { return ex + ey * nx; }

  std::array<int, 2> node_coords(int k) const { return {k % (nx + 1), k / (nx + 1)}; }
  std::array<int, 2> element_coords(int e) const { return {e % nx, e / nx}; }

  double node_x(int i) const { return domain.x0 + i * hx; }
  double node_y(int j) const { return domain.y0 + j * hy; }

  /// Corner nodes of element e in counterclockwise order, starting at the
  /// lower-left corner.
  std::array<int, 4> element_nodes(int e) const {
    const auto [ex, ey] = element_coords(e);
    const int n00 = node_index(ex, ey);
    return {n00, n00 + 1, n00 + 1 + (nx + 1), n00 + (nx + 1)};
  }

  bool is_boundary_node(int k) const {
    const auto [i, j] = node_coords(k);
    return i == 0 || i == nx || j == 0 || j == ny;
  }
};

inline Mesh build_mesh(int nx, int ny, Rect rect = {}) {
  if (nx < 1 || ny < 1)
    throw std::invalid_argument("build_mesh: element counts must be positive");
  if (!(rect.width > 0.0) || !(rect.height > 0.0))
    throw std::invalid_argument("build_mesh: domain must have positive extent");
  Mesh m;
  m.nx = nx;
  m.ny = ny;
  m.domain = rect;
  m.hx = rect.width / nx;
  m.hy = rect.height / ny;
  return m;
}

enum class NodeTag : std::uint8_t { Interior, Dirichlet, Neumann };
enum class EdgeTag : std::uint8_t { Dirichlet, Neumann };

/// One of the four faces of the rectangular domain.
enum class Face : std::uint8_t { Left, Right, Bottom, Top };

/// Assignment of the four domain faces to essential/natural conditions.
struct BoundarySpec {
  EdgeTag left = EdgeTag::Dirichlet;
  EdgeTag right = EdgeTag::Dirichlet;
  EdgeTag bottom = EdgeTag::Neumann;
  EdgeTag top = EdgeTag::Neumann;

  /// Benchmark layout: Dirichlet on x1 in {0,1}, Neumann on x2 in {0,1}.
  static BoundarySpec left_right_dirichlet() { return {}; }

  static BoundarySpec all_dirichlet() {
    return {EdgeTag::Dirichlet, EdgeTag::Dirichlet, EdgeTag::Dirichlet, EdgeTag::Dirichlet};
  }
  static BoundarySpec all_neumann() {
    return {EdgeTag::Neumann, EdgeTag::Neumann, EdgeTag::Neumann, EdgeTag::Neumann};
  }

  EdgeTag face(Face f) const {
    switch (f) {
      case Face::Left: return left;
      case Face::Right: return right;
      case Face::Bottom: return bottom;
      default: return top;
    }
  }
};

/// A boundary edge between two consecutive boundary nodes.
struct BoundaryEdge {
  int n0 = -1, n1 = -1;  // node indices, n0 -> n1 in positive axis direction
  Face face = Face::Bottom;
  EdgeTag tag = EdgeTag::Neumann;
  int element = -1;  // the unique adjacent element
};

struct BoundaryTags {
  std::vector<NodeTag> node;        // size num_nodes
  std::vector<BoundaryEdge> edges;  // boundary edges only
  std::vector<int> dirichlet_nodes;
  std::vector<int> neumann_nodes;

  bool is_dirichlet(int k) const { return node[k] == NodeTag::Dirichlet; }
};

/// Tags every node and boundary edge. A node shared by a Dirichlet face and a
/// Neumann face is tagged Dirichlet (essential conditions win).
inline BoundaryTags classify_boundary(const Mesh& mesh, const BoundarySpec& spec) {
  BoundaryTags tags;
  tags.node.assign(mesh.num_nodes(), NodeTag::Interior);

  auto mark = [&](int k, EdgeTag t) {
    if (t == EdgeTag::Dirichlet)
      tags.node[k] = NodeTag::Dirichlet;
    else if (tags.node[k] != NodeTag::Dirichlet)
      tags.node[k] = NodeTag::Neumann;
  };

  for (int j = 0; j <= mesh.ny; ++j) {
    mark(mesh.node_index(0, j), spec.left);
    mark(mesh.node_index(mesh.nx, j), spec.right);
  }
  for (int i = 0; i <= mesh.nx; ++i) {
    mark(mesh.node_index(i, 0), spec.bottom);
    mark(mesh.node_index(i, mesh.ny), spec.top);
  }

  for (int i = 0; i < mesh.nx; ++i) {
    tags.edges.push_back({mesh.node_index(i, 0), mesh.node_index(i + 1, 0), Face::Bottom,
                          spec.bottom, mesh.element_index(i, 0)});
    tags.edges.push_back({mesh.node_index(i, mesh.ny), mesh.node_index(i + 1, mesh.ny), Face::Top,
                          spec.top, mesh.element_index(i, mesh.ny - 1)});
  }
  for (int j = 0; j < mesh.ny; ++j) {
    tags.edges.push_back({mesh.node_index(0, j), mesh.node_index(0, j + 1), Face::Left, spec.left,
                          mesh.element_index(0, j)});
    tags.edges.push_back({mesh.node_index(mesh.nx, j), mesh.node_index(mesh.nx, j + 1), Face::Right,
                          spec.right, mesh.element_index(mesh.nx - 1, j)});
  }

  for (int k = 0; k < mesh.num_nodes(); ++k) {
    if (tags.node[k] == NodeTag::Dirichlet) tags.dirichlet_nodes.push_back(k);
    if (tags.node[k] == NodeTag::Neumann) tags.neumann_nodes.push_back(k);
  }
  return tags;
}

/// Per-element scalar coefficient a_e, so A(x) = a_e * I on element e.
struct CoefficientField {
  std::vector<double> value;  // size num_elements, element-index order
  double alpha = 0.0;         // min over elements
  double beta = 0.0;          // max over elements

  double operator[](int e) const { return value[e]; }
};

inline CoefficientField make_coefficient(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("coefficient: empty value list");
  CoefficientField f;
  f.alpha = std::numeric_limits<double>::infinity();
  f.beta = 0.0;
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("coefficient: non-positive value");
    f.alpha = std::min(f.alpha, v);
    f.beta = std::max(f.beta, v);
  }
  f.value = std::move(values);
  return f;
}

/// Reads the text coefficient format: first line "nx ny", then nx*ny positive
/// decimals in element-row-major order (y outer, x inner).
inline CoefficientField load_coefficient(std::istream& in, const Mesh& mesh) {
  int fnx = 0, fny = 0;
  if (!(in >> fnx >> fny))
    throw std::runtime_error("coefficient file: malformed header, expected \"nx ny\"");
  if (fnx != mesh.nx || fny != mesh.ny)
    throw std::runtime_error("coefficient file: dimension mismatch (file " + std::to_string(fnx) +
                             "x" + std::to_string(fny) + ", mesh " + std::to_string(mesh.nx) + "x" +
                             std::to_string(mesh.ny) + ")");
  std::vector<double> vals;
  vals.reserve(mesh.num_elements());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    std::string tok;
    if (!(in >> tok))
      throw std::runtime_error("coefficient file: dimension mismatch (fewer than " +
                               std::to_string(mesh.num_elements()) + " values)");
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error("coefficient file: malformed value \"" + tok + "\"");
    }
    if (pos != tok.size())
      throw std::runtime_error("coefficient file: malformed value \"" + tok + "\"");
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::runtime_error("coefficient file: non-positive value \"" + tok + "\"");
    vals.push_back(v);
  }
  std::string extra;
  if (in >> extra)
    throw std::runtime_error("coefficient file: dimension mismatch (trailing data \"" + extra +
                             "\")");
  return make_coefficient(std::move(vals));
}

inline CoefficientField load_coefficient(const std::string& path, const Mesh& mesh) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("coefficient file: cannot open " + path);
  return load_coefficient(in, mesh);
}

/// Writer emits 17-significant-digit decimals so a load/save round trip is
/// bit-exact.
inline void save_coefficient(std::ostream& out, const Mesh& mesh, const CoefficientField& field) {
  out << mesh.nx << ' ' << mesh.ny << '\n';
  char buf[64];
  for (int ey = 0; ey < mesh.ny; ++ey) {
    for (int ex = 0; ex < mesh.nx; ++ex) {
      std::snprintf(buf, sizeof(buf), "%.17g", field.value[mesh.element_index(ex, ey)]);
      out << buf << (ex + 1 == mesh.nx ? "" : " ");
    }
    out << '\n';
  }
}

inline void save_coefficient(const std::string& path, const Mesh& mesh,
                             const CoefficientField& field) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("coefficient file: cannot open " + path + " for writing");
  save_coefficient(out, mesh, field);
}

/// Shortest round-trippable decimal formatting (17 significant digits).
inline std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {
// splitmix64: cross-platform deterministic hash/PRNG step.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
inline double uniform01(std::uint64_t x) {
  return static_cast<double>(splitmix64(x) >> 11) * 0x1.0p-53;
}
}  // namespace detail

struct CoefficientParams {
  double value = 1.0;      // "constant"
  double contrast = 1e4;   // high value of the two-phase generators
  int period = 8;          // stripe width / inclusion cell size, in elements
  bool vertical = false;   // "channels": stripes along y instead of x
  std::uint64_t seed = 7;  // "inclusions"
  double fraction = 0.2;   // "inclusions": probability a cell is high-contrast
};

/// Deterministic built-in coefficient generators: "constant", "channels"
/// (stripes alternating 1 and `contrast` with stripe width `period`), and
/// "inclusions" (random cells of size `period` set to `contrast` with
/// probability `fraction`, reproducible from `seed`).
inline CoefficientField builtin_coefficient(const std::string& name, const CoefficientParams& p,
                                            const Mesh& mesh) {
  std::vector<double> vals(mesh.num_elements(), 1.0);
  if (name == "constant") {
    if (!(p.value > 0.0)) throw std::invalid_argument("builtin_coefficient: value must be > 0");
    std::fill(vals.begin(), vals.end(), p.value);
  } else if (name == "channels") {
    if (p.period < 1) throw std::invalid_argument("builtin_coefficient: period must be >= 1");
    if (!(p.contrast > 0.0))
      throw std::invalid_argument("builtin_coefficient: contrast must be > 0");
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const auto [ex, ey] = mesh.element_coords(e);
      const int band = (p.vertical ? ex : ey) / p.period;
      vals[e] = (band % 2 == 1) ? p.contrast : 1.0;
    }
  } else if (name == "inclusions") {
    if (p.period < 1) throw std::invalid_argument("builtin_coefficient: period must be >= 1");
    if (!(p.contrast > 0.0))
      throw std::invalid_argument("builtin_coefficient: contrast must be > 0");
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const auto [ex, ey] = mesh.element_coords(e);
      const std::uint64_t cell =
          static_cast<std::uint64_t>(ex / p.period) * 0x100000000ULL +
          static_cast<std::uint64_t>(ey / p.period);
      const double u = detail::uniform01(detail::splitmix64(p.seed) ^ cell);
      vals[e] = (u < p.fraction) ? p.contrast : 1.0;
    }
  } else {
    throw std::invalid_argument("builtin_coefficient: unknown generator \"" + name + "\"");
  }
  return make_coefficient(std::move(vals));
}

/// Gaussian heat source of the built-in benchmark problem, peaking at
/// (0.15, 0.55) with value 1000.
inline double eval_source(double x1, double x2) {
  const double d1 = x1 - 0.15, d2 = x2 - 0.55;
  return 1e3 * std::exp(-10.0 * d1 * d1 - 10.0 * d2 * d2);
}

/// Problem data: volume source f(x1,x2), Neumann flux g(x1,x2), Dirichlet
/// value q(x1,x2). All evaluable anywhere they are needed by assembly.
struct ProblemData {
  std::function<double(double, double)> f = [](double, double) { return 0.0; };
  std::function<double(double, double)> g = [](double, double) { return 0.0; };
  std::function<double(double, double)> q = [](double, double) { return 0.0; };

  /// Benchmark heat-conduction data: Gaussian source, unit flux, unit
  /// Dirichlet value.
  static ProblemData benchmark() {
    ProblemData d;
    d.f = [](double x, double y) { return eval_source(x, y); };
    d.g = [](double, double) { return 1.0; };
    d.q = [](double, double) { return 1.0; };
    return d;
  }

  static ProblemData zero() { return ProblemData{}; }
};

}  // namespace msgfem

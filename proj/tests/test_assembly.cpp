#include <doctest.h>

#include <cmath>

#include "msgfem/assembly.hpp"

using namespace msgfem;

namespace {

// Independent quadrature route for the element matrices: integrate the shape
// gradients / products with a high-order tensor Gauss rule.
Eigen::Matrix4d stiffness_by_quadrature(double a, double hx, double hy) {
  Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
  for (const auto& [xi, wx] : gauss_rule(5))
    for (const auto& [eta, wy] : gauss_rule(5)) {
      const Eigen::Vector4d dx = q1_dxi(eta) / hx;
      const Eigen::Vector4d dy = q1_deta(xi) / hy;
      K += (a * wx * wy * hx * hy) * (dx * dx.transpose() + dy * dy.transpose());
    }
  return K;
}

Eigen::Matrix4d mass_by_quadrature(double hx, double hy) {
  Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
  for (const auto& [xi, wx] : gauss_rule(5))
    for (const auto& [eta, wy] : gauss_rule(5)) {
      const Eigen::Vector4d N = q1_shape(xi, eta);
      M += (wx * wy * hx * hy) * (N * N.transpose());
    }
  return M;
}

CoefficientField unit_field(const Mesh& m) {
  CoefficientField f;
  f.value.assign(m.num_elements(), 1.0);
  f.alpha = f.beta = 1.0;
  return f;
}

Vec interpolate(const Mesh& m, double (*f)(double, double)) {
  Vec v(m.num_nodes());
  for (int j = 0; j <= m.ny; ++j)
    for (int i = 0; i <= m.nx; ++i) v[m.node_index(i, j)] = f(m.node_x(i), m.node_y(j));
  return v;
}

}  // namespace

TEST_CASE("element stiffness matches the frozen closed form and the quadrature oracle") {
  const Eigen::Matrix4d K = element_stiffness(1.0, 0.25, 0.25);
  Eigen::Matrix4d expected;
  expected << 4, -1, -2, -1, -1, 4, -1, -2, -2, -1, 4, -1, -1, -2, -1, 4;
  expected /= 6.0;
  CHECK((K - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((K - stiffness_by_quadrature(1.0, 0.25, 0.25)).cwiseAbs().maxCoeff() < 1e-14);

  // anisotropic element against the quadrature route
  const Eigen::Matrix4d Ka = element_stiffness(2.5, 0.5, 0.125);
  CHECK((Ka - stiffness_by_quadrature(2.5, 0.5, 0.125)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("element stiffness is linear in the coefficient and annihilates constants") {
  const Eigen::Matrix4d K1 = element_stiffness(1.0, 0.3, 0.7);
  const Eigen::Matrix4d Kc = element_stiffness(17.0, 0.3, 0.7);
  CHECK((Kc - 17.0 * K1).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((K1 * Eigen::Vector4d::Ones()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(element_stiffness(0.0, 1, 1), std::invalid_argument);
}

TEST_CASE("element mass matches the frozen form, the quadrature oracle, and scalings") {
  const Eigen::Matrix4d M = element_mass(1.0, 1.0);
  Eigen::Matrix4d expected;
  expected << 4, 2, 1, 2, 2, 4, 2, 1, 1, 2, 4, 2, 2, 1, 2, 4;
  expected /= 36.0;
  CHECK((M - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((M - mass_by_quadrature(1.0, 1.0)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(M.sum() == doctest::Approx(1.0).epsilon(1e-14));  // integrates 1*1

  const Eigen::Matrix4d Mh = element_mass(0.2, 0.4);
  CHECK(Mh.sum() == doctest::Approx(0.08).epsilon(1e-14));
  CHECK(((element_mass(0.4, 0.4) - 2.0 * Mh).cwiseAbs().maxCoeff()) < 1e-15);
}

TEST_CASE("assembled Neumann stiffness annihilates constants") {
  const Mesh m = build_mesh(2, 2);
  const auto elems = all_elements(m);
  const SpMat K = assemble_stiffness(m, unit_field(m), elems, identity_numbering(m));
  const Vec ones = Vec::Ones(m.num_nodes());
  CHECK((K * ones).cwiseAbs().maxCoeff() < 1e-14);
  // symmetry of the stored matrix
  CHECK((Mat(K) - Mat(K).transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-element region scatters the element matrix") {
  const Mesh m = build_mesh(3, 3);
  const std::vector<int> region = {m.element_index(1, 1)};
  const LocalNumbering num = make_numbering(m, region);
  CHECK(num.size() == 4);
  const SpMat K = assemble_stiffness(m, unit_field(m), region, num);
  const Eigen::Matrix4d Ke = element_stiffness(1.0, m.hx, m.hy);
  // local numbering is lexicographic: (1,1),(2,1),(1,2),(2,2) -> ccw order 0,1,3,2
  const int p[4] = {0, 1, 3, 2};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(K.coeff(p[r], p[c]) == doctest::Approx(Ke(r, c)).epsilon(1e-14));
}

TEST_CASE("empty region is rejected") {
  const Mesh m = build_mesh(2, 2);
  const std::vector<int> none;
  CHECK_THROWS_AS(assemble_stiffness(m, unit_field(m), none, identity_numbering(m)),
                  std::invalid_argument);
}

TEST_CASE("energy of the linear interpolant is exactly one") {
  const Mesh m = build_mesh(4, 4);
  const SpMat K = assemble_stiffness(m, unit_field(m), all_elements(m), identity_numbering(m));
  const Vec x1 = interpolate(m, [](double x, double) { return x; });
  CHECK(x1.dot(K * x1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(energy_norm(K, x1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("load assembly: constants are exact") {
  const Mesh m = build_mesh(1, 1);
  const BoundaryTags tags = classify_boundary(m, BoundarySpec::all_dirichlet());
  ProblemData data;
  data.f = [](double, double) { return 1.0; };
  const Vec F = assemble_load(m, tags, data, all_elements(m), identity_numbering(m));
  for (int k = 0; k < 4; ++k) CHECK(F[k] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("load assembly: unit flux puts half the edge length on each node") {
  const Mesh m = build_mesh(2, 2);
  BoundarySpec spec = BoundarySpec::all_dirichlet();
  spec.bottom = EdgeTag::Neumann;
  const BoundaryTags tags = classify_boundary(m, spec);
  ProblemData data;
  data.g = [](double, double) { return 1.0; };
  const Vec F = assemble_load(m, tags, data, all_elements(m), identity_numbering(m));
  // two bottom edges of length 1/2: end nodes get h/2, the shared node h
  CHECK(F[m.node_index(0, 0)] == doctest::Approx(0.25).epsilon(1e-13));
  CHECK(F[m.node_index(1, 0)] == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(F[m.node_index(2, 0)] == doctest::Approx(0.25).epsilon(1e-13));
  CHECK(F[m.node_index(1, 1)] == 0.0);
}

TEST_CASE("volume quadrature refinement: orders 3 and 5 agree on the smooth source") {
  const Mesh m = build_mesh(16, 16);
  const BoundaryTags tags = classify_boundary(m, BoundarySpec::left_right_dirichlet());
  ProblemData data;
  data.f = [](double x, double y) { return eval_source(x, y); };
  const Vec F3 = assemble_load(m, tags, data, all_elements(m), identity_numbering(m), 3);
  const Vec F5 = assemble_load(m, tags, data, all_elements(m), identity_numbering(m), 5);
  const double scale = F5.cwiseAbs().maxCoeff();
  CHECK((F3 - F5).cwiseAbs().maxCoeff() / scale < 1e-6);
}

TEST_CASE("stiffness assembly over a disjoint union is additive") {
  const Mesh m = build_mesh(6, 4);
  CoefficientField coeff;
  for (int e = 0; e < m.num_elements(); ++e)
    coeff.value.push_back(1.0 + 10.0 * detail::uniform01(detail::splitmix64(e)));
  coeff.alpha = 1.0;
  coeff.beta = 11.0;
  std::vector<int> left, right;
  for (int e = 0; e < m.num_elements(); ++e)
    (m.element_coords(e)[0] < 3 ? left : right).push_back(e);
  const LocalNumbering num = identity_numbering(m);
  const SpMat K = assemble_stiffness(m, coeff, all_elements(m), num);
  const SpMat Kl = assemble_stiffness(m, coeff, left, num);
  const SpMat Kr = assemble_stiffness(m, coeff, right, num);
  CHECK((Mat(K) - Mat(Kl) - Mat(Kr)).cwiseAbs().maxCoeff() < 1e-12 * coeff.beta);
}

TEST_CASE("global quadratic form equals the sum of element forms") {
  const Mesh m = build_mesh(5, 5);
  CoefficientField coeff;
  for (int e = 0; e < m.num_elements(); ++e)
    coeff.value.push_back(std::exp(3.0 * detail::uniform01(detail::splitmix64(e + 5))));
  coeff.alpha = 1.0;
  coeff.beta = std::exp(3.0);
  const SpMat K = assemble_stiffness(m, coeff, all_elements(m), identity_numbering(m));
  Vec v(m.num_nodes());
  for (int k = 0; k < m.num_nodes(); ++k)
    v[k] = 2.0 * detail::uniform01(detail::splitmix64(999 + k)) - 1.0;
  double per_element = 0.0, per_element_abs = 0.0;
  for (int e = 0; e < m.num_elements(); ++e) {
    const Eigen::Matrix4d Ke = element_stiffness(coeff[e], m.hx, m.hy);
    Eigen::Vector4d ve;
    const auto nodes = m.element_nodes(e);
    for (int r = 0; r < 4; ++r) ve[r] = v[nodes[r]];
    const double q = ve.dot(Ke * ve);
    per_element += q;
    per_element_abs += std::abs(q);
  }
  CHECK(std::abs(v.dot(K * v) - per_element) <= 1e-12 * per_element_abs);
}

TEST_CASE("pou_scale behaves as the nodal product") {
  Vec v(4), chi(4);
  v << 1, 2, 3, 4;
  chi << 1, 1, 1, 1;
  CHECK((pou_scale(v, chi) - v).norm() == 0.0);
  chi << 0.5, 0, 1, 0.25;
  const Vec w = pou_scale(Vec::Ones(4), chi);
  CHECK((w - chi).norm() == 0.0);
  CHECK(pou_scale(v, chi)[1] == 0.0);  // support property
  Vec bad(3);
  CHECK_THROWS_AS(pou_scale(v, bad), std::invalid_argument);
}

TEST_CASE("pou_scale is bilinear") {
  Vec a(5), b(5), chi(5);
  for (int k = 0; k < 5; ++k) {
    a[k] = detail::uniform01(detail::splitmix64(k));
    b[k] = detail::uniform01(detail::splitmix64(100 + k));
    chi[k] = detail::uniform01(detail::splitmix64(200 + k));
  }
  const Vec lhs = pou_scale(2.0 * a + 3.0 * b, chi);
  const Vec rhs = 2.0 * pou_scale(a, chi) + 3.0 * pou_scale(b, chi);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("energy norm edge cases") {
  const Mesh m = build_mesh(3, 3);
  const SpMat K = assemble_stiffness(m, unit_field(m), all_elements(m), identity_numbering(m));
  CHECK(energy_norm(K, Vec::Zero(m.num_nodes())) == 0.0);
  CHECK(energy_norm(K, Vec::Constant(m.num_nodes(), 4.2)) < 1e-12);

  const SpMat M = assemble_mass(m, all_elements(m), identity_numbering(m));
  const Vec c = Vec::Constant(m.num_nodes(), 2.0);
  // constants carry no seminorm but a full H1 norm
  CHECK(h1_norm(K, M, c) == doctest::Approx(2.0).epsilon(1e-13));
}

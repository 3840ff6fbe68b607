#include <doctest.h>

#include <cmath>
#include <functional>

#include "kno/errors.hpp"
#include "kno/quadrature.hpp"

using namespace kno;

namespace {

// Exact integral of u^a v^b over the unit simplex: a! b! / (a+b+2)!.
double unit_simplex_moment(int a, int b) {
  double v = 1.0;
  // a! b! / (a+b+2)! computed as a stable product
  for (int k = 1; k <= a + b + 2; ++k) v /= static_cast<double>(k);
  for (int k = 1; k <= a; ++k) v *= static_cast<double>(k);
  for (int k = 1; k <= b; ++k) v *= static_cast<double>(k);
  return v;
}

double binomial(int n, int k) {
  double v = 1.0;
  for (int i = 0; i < k; ++i) v = v * static_cast<double>(n - i) / static_cast<double>(i + 1);
  return v;
}

// Exact integral of x^i y^j over an arbitrary triangle, via the affine map
// from the unit simplex and trinomial expansion. Independent of any
// quadrature rule.
double exact_monomial_over_triangle(double x0, double y0, double x1, double y1, double x2,
                                    double y2, int i, int j) {
  const double a11 = x1 - x0, a12 = x2 - x0;
  const double a21 = y1 - y0, a22 = y2 - y0;
  const double jac = std::abs(a11 * a22 - a12 * a21);
  // expand (x0 + a11 u + a12 v)^i and (y0 + a21 u + a22 v)^j
  double total = 0.0;
  for (int p = 0; p <= i; ++p)
    for (int q = 0; q <= i - p; ++q) {
      const double cx = binomial(i, p) * binomial(i - p, q) * std::pow(x0, i - p - q) *
                        std::pow(a11, p) * std::pow(a12, q);
      if (cx == 0.0) continue;
      for (int r = 0; r <= j; ++r)
        for (int s = 0; s <= j - r; ++s) {
          const double cy = binomial(j, r) * binomial(j - r, s) * std::pow(y0, j - r - s) *
                            std::pow(a21, r) * std::pow(a22, s);
          if (cy == 0.0) continue;
          total += cx * cy * unit_simplex_moment(p + r, q + s);
        }
    }
  return total * jac;
}

// Recursive-subdivision oracle: split the triangle into 4^depth children and
// sum the exact per-cell integrals.
double subdivision_monomial_oracle(double x0, double y0, double x1, double y1, double x2, double y2,
                                   int i, int j, int depth) {
  if (depth == 0) return exact_monomial_over_triangle(x0, y0, x1, y1, x2, y2, i, j);
  const double mx01 = 0.5 * (x0 + x1), my01 = 0.5 * (y0 + y1);
  const double mx12 = 0.5 * (x1 + x2), my12 = 0.5 * (y1 + y2);
  const double mx20 = 0.5 * (x2 + x0), my20 = 0.5 * (y2 + y0);
  return subdivision_monomial_oracle(x0, y0, mx01, my01, mx20, my20, i, j, depth - 1) +
         subdivision_monomial_oracle(x1, y1, mx12, my12, mx01, my01, i, j, depth - 1) +
         subdivision_monomial_oracle(x2, y2, mx20, my20, mx12, my12, i, j, depth - 1) +
         subdivision_monomial_oracle(mx01, my01, mx12, my12, mx20, my20, i, j, depth - 1);
}

double ref_monomial_oracle(int i, int j) {
  return subdivision_monomial_oracle(kRefTriV0[0], kRefTriV0[1], kRefTriV1[0], kRefTriV1[1],
                                     kRefTriV2[0], kRefTriV2[1], i, j, 2);
}

double apply_rule_monomial(const QuadRule& rule, int i, int j) {
  double s = 0.0;
  for (std::int64_t k = 0; k < rule.size(); ++k)
    s += rule.weights[k] * std::pow(rule.points.at(k, 0), i) * std::pow(rule.points.at(k, 1), j);
  return s;
}

}  // namespace

TEST_CASE("gauss-legendre n=2 nodes and weights") {
  QuadRule r = gauss_legendre(2, -1.0, 1.0);
  CHECK(r.points.at(0, 0) == doctest::Approx(-0.5773502691896257).epsilon(1e-12));
  CHECK(r.points.at(1, 0) == doctest::Approx(0.5773502691896257).epsilon(1e-12));
  CHECK(r.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(gauss_legendre(0, -1, 1), ContractViolation);
  CHECK_THROWS_AS(gauss_legendre(2, 1, 1), ContractViolation);
}

TEST_CASE("gauss-legendre odd monomials vanish and x^4 integrates to 2/5") {
  QuadRule r2 = gauss_legendre(2, -1.0, 1.0);
  CHECK(integrate(r2, [](const double* x) { return x[0] * x[0] * x[0]; }) ==
        doctest::Approx(0.0).epsilon(1e-14));
  QuadRule r3 = gauss_legendre(3, -1.0, 1.0);
  CHECK(integrate(r3, [](const double* x) { return std::pow(x[0], 4); }) ==
        doctest::Approx(0.4).epsilon(1e-13));
}

TEST_CASE("gauss-legendre exactness for degrees <= 2n-1, n in 1..20") {
  for (int n = 1; n <= 20; ++n) {
    QuadRule r = gauss_legendre(n, -1.0, 1.0);
    for (int k = 0; k <= 2 * n - 1; ++k) {
      const double exact = (k % 2 == 1) ? 0.0 : 2.0 / static_cast<double>(k + 1);
      const double got = integrate(r, [k](const double* x) { return std::pow(x[0], k); });
      CHECK(std::abs(got - exact) < 1e-12);
    }
  }
}

TEST_CASE("triangle reference rules: weights sum to the area 1/4") {
  for (int degree = 1; degree <= 10; ++degree) {
    QuadRule r = triangle_reference_rule(degree);
    double s = 0.0;
    for (std::int64_t k = 0; k < r.size(); ++k) {
      s += r.weights[k];
      CHECK(r.weights[k] > 0.0);  // stability: positive weights only
    }
    CHECK(s == doctest::Approx(0.25).epsilon(1e-13));
  }
  CHECK_THROWS_AS(triangle_reference_rule(0), ContractViolation);
  CHECK_THROWS_AS(triangle_reference_rule(11), ContractViolation);
}

TEST_CASE("degree-1 rule is the centroid rule") {
  QuadRule r = triangle_reference_rule(1);
  REQUIRE(r.size() == 1);
  CHECK(r.points.at(0, 0) == doctest::Approx((1.0 + std::sqrt(3.0) / 2.0) / 3.0).epsilon(1e-14));
  CHECK(r.points.at(0, 1) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(r.weights[0] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("triangle rules are exact to their stated degree (subdivision oracle)") {
  for (int degree = 1; degree <= 10; ++degree) {
    QuadRule r = triangle_reference_rule(degree);
    for (int i = 0; i + 0 <= degree; ++i)
      for (int j = 0; i + j <= degree; ++j) {
        const double exact = ref_monomial_oracle(i, j);
        const double got = apply_rule_monomial(r, i, j);
        CAPTURE(degree);
        CAPTURE(i);
        CAPTURE(j);
        CHECK(std::abs(got - exact) < 1e-12);
      }
  }
}

TEST_CASE("degree-5 rule integrates x^2 y^2 to the oracle") {
  QuadRule r = triangle_reference_rule(5);
  const double got = apply_rule_monomial(r, 2, 2);
  CHECK(std::abs(got - ref_monomial_oracle(2, 2)) < 1e-12);
}

TEST_CASE("conical rules are exact to 2n-1 with positive weights") {
  for (int n : {1, 2, 3, 5, 8, 12, 18}) {
    QuadRule r = triangle_conical_rule(n);
    CHECK(r.size() == static_cast<std::int64_t>(n) * n);
    for (std::int64_t k = 0; k < r.size(); ++k) CHECK(r.weights[k] > 0.0);
    const int degree = 2 * n - 1;
    for (int i = 0; i <= std::min(degree, 6); ++i)
      for (int j = 0; i + j <= std::min(degree, 6); ++j)
        CHECK(std::abs(apply_rule_monomial(r, i, j) - ref_monomial_oracle(i, j)) < 1e-12);
  }
}

TEST_CASE("identity mesh reproduces the reference rule") {
  Tensor verts({3, 2},
               {kRefTriV0[0], kRefTriV0[1], kRefTriV1[0], kRefTriV1[1], kRefTriV2[0], kRefTriV2[1]});
  Mesh mesh = make_mesh(verts, {{0, 1, 2}});
  QuadRule ref = triangle_reference_rule(5);
  QuadRule mapped = map_rule_to_mesh(ref, mesh);
  REQUIRE(mapped.size() == ref.size());
  for (std::int64_t k = 0; k < ref.size(); ++k) {
    CHECK(std::abs(mapped.points.at(k, 0) - ref.points.at(k, 0)) < 1e-14);
    CHECK(std::abs(mapped.points.at(k, 1) - ref.points.at(k, 1)) < 1e-14);
    CHECK(std::abs(mapped.weights[k] - ref.weights[k]) < 1e-14);
  }
}

TEST_CASE("unit square meshes: constants and x+y integrate exactly") {
  QuadRule ref = triangle_reference_rule(4);
  for (int k : {1, 2}) {
    Mesh mesh = unit_square_mesh(k);
    QuadRule rule = map_rule_to_mesh(ref, mesh);
    CHECK(integrate(rule, [](const double*) { return 1.0; }) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(integrate(rule, [](const double* x) { return x[0] + x[1]; }) ==
          doctest::Approx(1.0).epsilon(1e-13));
  }
  CHECK(unit_square_mesh(2).triangle_count() == 8);
}

TEST_CASE("composite rules keep the reference exactness degree on affine meshes") {
  Mesh mesh = unit_square_mesh(2);
  for (int degree : {2, 4, 6}) {
    QuadRule rule = map_rule_to_mesh(triangle_reference_rule(degree), mesh);
    for (int i = 0; i <= degree; ++i)
      for (int j = 0; i + j <= degree; ++j) {
        double exact = 1.0 / ((i + 1.0) * (j + 1.0));  // over [0,1]^2
        double got = integrate(rule, [i, j](const double* x) {
          return std::pow(x[0], i) * std::pow(x[1], j);
        });
        CHECK(std::abs(got - exact) < 1e-12);
      }
  }
}

TEST_CASE("integrate: analytic checks and NaN propagation") {
  QuadRule r = gauss_legendre(5, 0.0, 1.0);
  CHECK(integrate(r, [](const double* x) { return std::exp(x[0]); }) ==
        doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-9));
  CHECK(integrate(r, [](const double*) { return 2.5; }) == doctest::Approx(2.5).epsilon(1e-14));

  Mesh mesh = unit_square_mesh(2);
  QuadRule rule = map_rule_to_mesh(triangle_reference_rule(5), mesh);
  const double got =
      integrate(rule, [](const double* x) { return std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]); });
  CHECK(std::abs(got - 4.0 / (M_PI * M_PI)) < 1e-3);

  CHECK_THROWS_AS(integrate(r, [](const double*) { return std::nan(""); }), NumericError);
}

TEST_CASE("triangle_rule_for_budget reaches the requested point count") {
  struct Case {
    std::int64_t budget, n_tris;
  } cases[] = {{30, 1}, {300, 1}, {864, 8}, {294, 2}, {375, 5}};
  for (const auto& c : cases) {
    QuadRule r = triangle_rule_for_budget(c.budget, c.n_tris);
    CHECK(r.size() * c.n_tris >= c.budget);
  }
}

TEST_CASE("degenerate triangles are rejected with the triangle index") {
  Tensor verts({4, 2}, {0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 2.0, 0.0});
  CHECK_THROWS_AS(make_mesh(verts, {{0, 1, 2}, {0, 1, 3}}), ContractViolation);
  try {
    make_mesh(verts, {{0, 1, 2}, {0, 1, 3}});
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("mesh loader round trip, orientation fix and boundary detection") {
  Mesh square = unit_square_mesh(2);
  const std::string path = "test_mesh_roundtrip.txt";
  save_mesh(square, path);
  Mesh loaded = load_mesh(path);
  CHECK(loaded.vertex_count() == square.vertex_count());
  CHECK(loaded.triangle_count() == square.triangle_count());
  CHECK(loaded.boundary_vertices == square.boundary_vertices);
  // boundary of the 3x3 grid: all but the center vertex
  CHECK(loaded.boundary_vertices.size() == 8);

  // clockwise input gets flipped to positive area
  Tensor verts({3, 2}, {0.0, 0.0, 1.0, 0.0, 0.5, 0.5});
  Mesh flipped = make_mesh(verts, {{0, 2, 1}});
  CHECK(flipped.triangle_area(0) > 0.0);
  std::remove(path.c_str());
}

TEST_CASE("notch mesh: five triangles, every vertex on the boundary") {
  Mesh m = notch_mesh();
  CHECK(m.triangle_count() == 5);
  CHECK(m.vertex_count() == 7);
  CHECK(m.boundary_vertices.size() == 7);
  // area: equilateral triangle minus the notch rectangle overlap
  const double tri_area = std::sqrt(3.0) / 4.0;
  const double notch_area = 0.02 * 0.4;
  CHECK(m.area() == doctest::Approx(tri_area - notch_area).epsilon(1e-12));
}

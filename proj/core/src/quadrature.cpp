#include "kno/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "kno/errors.hpp"

namespace kno {

namespace {

// Golub-Welsch: nodes/weights of the n-point rule for the weight with monic
// three-term recurrence diag(alpha), offdiag sqrt(beta); mu0 = integral of the
// weight. Nodes come out ascending (Eigen sorts eigenvalues).
void golub_welsch(int n, const std::vector<double>& alpha, const std::vector<double>& beta,
                  double mu0, std::vector<double>& x, std::vector<double>& w) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    J(i, i) = alpha[static_cast<std::size_t>(i)];
    if (i + 1 < n) {
      const double b = std::sqrt(beta[static_cast<std::size_t>(i) + 1]);
      J(i, i + 1) = b;
      J(i + 1, i) = b;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  x.resize(static_cast<std::size_t>(n));
  w.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    w[static_cast<std::size_t>(i)] = mu0 * v0 * v0;
  }
}

// Legendre weight 1 on [-1,1].
void gauss_legendre_nodes(int n, std::vector<double>& x, std::vector<double>& w) {
  std::vector<double> alpha(static_cast<std::size_t>(n), 0.0);
  std::vector<double> beta(static_cast<std::size_t>(n), 0.0);
  for (int k = 1; k < n; ++k) {
    const double kk = static_cast<double>(k);
    beta[static_cast<std::size_t>(k)] = kk * kk / (4.0 * kk * kk - 1.0);
  }
  golub_welsch(n, alpha, beta, 2.0, x, w);
}

// Jacobi weight (1-x) on [-1,1] (alpha=1, beta=0); used by the conical rule.
void gauss_jacobi10_nodes(int n, std::vector<double>& x, std::vector<double>& w) {
  std::vector<double> alpha(static_cast<std::size_t>(n));
  std::vector<double> beta(static_cast<std::size_t>(n), 0.0);
  for (int k = 0; k < n; ++k) {
    const double kk = static_cast<double>(k);
    alpha[static_cast<std::size_t>(k)] = -1.0 / ((2.0 * kk + 1.0) * (2.0 * kk + 3.0));
    if (k >= 1) beta[static_cast<std::size_t>(k)] = kk * (kk + 1.0) / ((2.0 * kk + 1.0) * (2.0 * kk + 1.0));
  }
  golub_welsch(n, alpha, beta, 2.0, x, w);
}

constexpr double kRefArea = 0.25;

void push_barycentric(std::vector<double>& pts, std::vector<double>& wts, double l1, double l2,
                      double l3, double w) {
  pts.push_back(l1 * kRefTriV0[0] + l2 * kRefTriV1[0] + l3 * kRefTriV2[0]);
  pts.push_back(l1 * kRefTriV0[1] + l2 * kRefTriV1[1] + l3 * kRefTriV2[1]);
  wts.push_back(w * kRefArea);
}

// Symmetric orbits in barycentric coordinates; weights normalized to sum 1.
void orbit1(std::vector<double>& p, std::vector<double>& w, double wt) {
  push_barycentric(p, w, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, wt);
}

void orbit3(std::vector<double>& p, std::vector<double>& w, double a, double wt) {
  const double c = 1.0 - 2.0 * a;
  push_barycentric(p, w, c, a, a, wt);
  push_barycentric(p, w, a, c, a, wt);
  push_barycentric(p, w, a, a, c, wt);
}

void orbit6(std::vector<double>& p, std::vector<double>& w, double a, double b, double wt) {
  const double c = 1.0 - a - b;
  push_barycentric(p, w, c, a, b, wt);
  push_barycentric(p, w, c, b, a, wt);
  push_barycentric(p, w, a, c, b, wt);
  push_barycentric(p, w, b, c, a, wt);
  push_barycentric(p, w, a, b, c, wt);
  push_barycentric(p, w, b, a, c, wt);
}

QuadRule rule_from(std::vector<double> pts, std::vector<double> wts) {
  QuadRule r;
  const std::int64_t n = static_cast<std::int64_t>(wts.size());
  r.points = Tensor({n, 2}, std::move(pts));
  r.weights = Tensor({n}, std::move(wts));
  r.domain_measure = kRefArea;
  return r;
}

}  // namespace

QuadRule gauss_legendre(int n, double a, double b) {
  if (n < 1) throw ContractViolation("gauss_legendre: n must be >= 1");
  if (!(a < b)) throw ContractViolation("gauss_legendre: need a < b");
  std::vector<double> x, w;
  gauss_legendre_nodes(n, x, w);
  QuadRule r;
  r.points = Tensor::zeros({n, 1});
  r.weights = Tensor::zeros({n});
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (int i = 0; i < n; ++i) {
    r.points.at(i, 0) = mid + half * x[static_cast<std::size_t>(i)];
    r.weights[i] = half * w[static_cast<std::size_t>(i)];
  }
  r.domain_measure = b - a;
  return r;
}

QuadRule triangle_conical_rule(int n) {
  if (n < 1) throw ContractViolation("triangle_conical_rule: n must be >= 1");
  std::vector<double> xs, ws, xt, wt;
  gauss_jacobi10_nodes(n, xs, ws);  // s direction, weight (1-s) after mapping
  gauss_legendre_nodes(n, xt, wt);  // t direction
  std::vector<double> pts, wts;
  pts.reserve(static_cast<std::size_t>(n) * n * 2);
  wts.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const double s = 0.5 * (1.0 + xs[static_cast<std::size_t>(i)]);
    const double wsi = ws[static_cast<std::size_t>(i)] / 4.0;
    for (int j = 0; j < n; ++j) {
      const double t = 0.5 * (1.0 + xt[static_cast<std::size_t>(j)]);
      const double wtj = wt[static_cast<std::size_t>(j)] / 2.0;
      // (u,v) on the unit simplex, then affine to the reference triangle.
      const double u = s;
      const double v = t * (1.0 - s);
      pts.push_back(u * 1.0 + v * kRefTriV2[0]);
      pts.push_back(v * kRefTriV2[1]);
      // unit-simplex weight wsi*wtj has measure 1/2; reference area is 1/4.
      wts.push_back(wsi * wtj * (kRefArea / 0.5));
    }
  }
  QuadRule r;
  const std::int64_t m = static_cast<std::int64_t>(wts.size());
  r.points = Tensor({m, 2}, std::move(pts));
  r.weights = Tensor({m}, std::move(wts));
  r.domain_measure = kRefArea;
  return r;
}

QuadRule triangle_reference_rule(int degree) {
  if (degree < 1 || degree > 10)
    throw ContractViolation("triangle_reference_rule: degree must be in [1,10]");
  std::vector<double> p, w;
  switch (degree) {
    case 1:
      orbit1(p, w, 1.0);
      break;
    case 2:
      orbit3(p, w, 1.0 / 6.0, 1.0 / 3.0);
      break;
    case 3:
    case 4:
      // 6-point degree-4 rule (serves degree 3 as well; the classical 4-point
      // degree-3 rule has a negative weight).
      orbit3(p, w, 0.445948490915965, 0.223381589678011);
      orbit3(p, w, 0.091576213509771, 0.109951743655322);
      break;
    case 5:
      orbit1(p, w, 0.225);
      orbit3(p, w, 0.470142064105115, 0.132394152788506);
      orbit3(p, w, 0.101286507323456, 0.125939180544827);
      break;
    case 6:
      orbit3(p, w, 0.249286745170910, 0.116786275726379);
      orbit3(p, w, 0.063089014491502, 0.050844906370207);
      orbit6(p, w, 0.310352451033785, 0.053145049844816, 0.082851075618374);
      break;
    // Above degree 6 the tabulated symmetric rules either carry negative
    // weights or digits short of 1e-12 exactness; conical-product rules are
    // exact by construction and stay positive.
    case 7:
      return triangle_conical_rule(4);  // 16 points, exact to degree 7
    case 8:
    case 9:
      return triangle_conical_rule(5);  // 25 points, exact to degree 9
    case 10:
      return triangle_conical_rule(6);  // 36 points, exact to degree 11
  }
  return rule_from(std::move(p), std::move(w));
}

QuadRule map_rule_to_mesh(const QuadRule& ref_rule, const Mesh& mesh) {
  if (ref_rule.dim() != 2) throw ContractViolation("map_rule_to_mesh: reference rule must be 2-D");
  const std::int64_t nref = ref_rule.size();
  const std::int64_t nt = mesh.triangle_count();
  QuadRule out;
  out.points = Tensor::zeros({nt * nref, 2});
  out.weights = Tensor::zeros({nt * nref});

  // Affine map from the reference triangle to each mesh triangle.
  const double r1x = kRefTriV1[0] - kRefTriV0[0], r1y = kRefTriV1[1] - kRefTriV0[1];
  const double r2x = kRefTriV2[0] - kRefTriV0[0], r2y = kRefTriV2[1] - kRefTriV0[1];
  const double det_ref = r1x * r2y - r2x * r1y;

  for (std::int64_t t = 0; t < nt; ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const double ax = mesh.vertices.at(tri[0], 0), ay = mesh.vertices.at(tri[0], 1);
    const double e1x = mesh.vertices.at(tri[1], 0) - ax, e1y = mesh.vertices.at(tri[1], 1) - ay;
    const double e2x = mesh.vertices.at(tri[2], 0) - ax, e2y = mesh.vertices.at(tri[2], 1) - ay;
    const double det_tri = e1x * e2y - e2x * e1y;
    if (std::abs(det_tri) <= 1e-14)
      throw ContractViolation("map_rule_to_mesh: degenerate triangle " + std::to_string(t));
    // J = [e1 e2] * [r1 r2]^{-1}
    const double inv = 1.0 / det_ref;
    const double j11 = (e1x * r2y - e2x * r1y) * inv;
    const double j12 = (-e1x * r2x + e2x * r1x) * inv;
    const double j21 = (e1y * r2y - e2y * r1y) * inv;
    const double j22 = (-e1y * r2x + e2y * r1x) * inv;
    const double scale = std::abs(det_tri / det_ref);
    for (std::int64_t i = 0; i < nref; ++i) {
      const double px = ref_rule.points.at(i, 0) - kRefTriV0[0];
      const double py = ref_rule.points.at(i, 1) - kRefTriV0[1];
      out.points.at(t * nref + i, 0) = ax + j11 * px + j12 * py;
      out.points.at(t * nref + i, 1) = ay + j21 * px + j22 * py;
      out.weights[t * nref + i] = ref_rule.weights[i] * scale;
    }
  }
  out.domain_measure = mesh.area();
  return out;
}

double integrate(const QuadRule& rule, const std::function<double(const double*)>& f) {
  double s = 0.0;
  for (std::int64_t i = 0; i < rule.size(); ++i) {
    const double v = f(&rule.points.at(i, 0));
    if (std::isnan(v)) throw NumericError("integrate: integrand returned NaN");
    s += rule.weights[i] * v;
  }
  return s;
}

QuadRule triangle_rule_for_budget(std::int64_t point_budget, std::int64_t n_triangles) {
  if (point_budget < 1 || n_triangles < 1)
    throw ContractViolation("triangle_rule_for_budget: bad budget or triangle count");
  const std::int64_t per_tri = (point_budget + n_triangles - 1) / n_triangles;
  // Embedded symmetric rules first, then conical-product rules of any size.
  const std::pair<int, std::int64_t> table[] = {{1, 1}, {2, 3}, {4, 6}, {5, 7}, {6, 12}};
  for (auto [deg, count] : table)
    if (count >= per_tri) return triangle_reference_rule(deg);
  const int n = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(per_tri))));
  return triangle_conical_rule(n);
}

}  // namespace kno

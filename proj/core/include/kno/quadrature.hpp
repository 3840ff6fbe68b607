#pragma once

#include <functional>

#include "kno/mesh.hpp"
#include "kno/tensor.hpp"

namespace kno {

/// Quadrature points and weights over a domain; sum(weights) equals the
/// domain measure (exactness for constants).
struct QuadRule {
  Tensor points;   // [N_Q, d]
  Tensor weights;  // [N_Q]
  double domain_measure = 0.0;

  std::int64_t size() const { return points.shape[0]; }
  int dim() const { return static_cast<int>(points.shape[1]); }
};

/// n-point Gauss-Legendre rule mapped to [a,b]; exact for degree <= 2n-1.
QuadRule gauss_legendre(int n, double a, double b);

/// Positive-weight rule on the reference triangle (0,0),(1,0),(sqrt(3)/2,1/2),
/// exact for bivariate polynomials up to `degree`; degree in [1,10].
/// Low degrees come from embedded symmetric tables; the rest are built as
/// conical-product rules.
QuadRule triangle_reference_rule(int degree);

/// Conical-product (Duffy) rule on the reference triangle with n^2 points,
/// exact to total degree 2n-1. Positive weights for any n >= 1.
QuadRule triangle_conical_rule(int n);

/// Composite rule: the reference rule affinely mapped to every mesh triangle,
/// weights scaled by the Jacobian ratio. sum(weights) = mesh area.
QuadRule map_rule_to_mesh(const QuadRule& ref_rule, const Mesh& mesh);

/// Sum of w_i f(y_i). Throws NumericError if f returns NaN.
double integrate(const QuadRule& rule, const std::function<double(const double*)>& f);

/// Smallest rule on the reference triangle such that `n_triangles` mapped
/// copies reach `point_budget` total points (the way presets pick 2-D rules).
QuadRule triangle_rule_for_budget(std::int64_t point_budget, std::int64_t n_triangles);

}  // namespace kno

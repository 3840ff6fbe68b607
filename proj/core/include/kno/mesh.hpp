#pragma once

#include <array>
#include <string>
#include <vector>

#include "kno/tensor.hpp"

namespace kno {

/// Simplicial tessellation of a 2-D domain. Triangles are stored
/// counterclockwise (orientation is fixed on construction); boundary vertices
/// are those on edges that belong to exactly one triangle.
struct Mesh {
  Tensor vertices;  // [V, 2]
  std::vector<std::array<int, 3>> triangles;
  std::vector<int> boundary_vertices;  // ascending

  std::int64_t vertex_count() const { return vertices.shape[0]; }
  std::int64_t triangle_count() const { return static_cast<std::int64_t>(triangles.size()); }
  double triangle_area(std::int64_t t) const;
  double area() const;
};

/// Validates indices, rejects duplicate vertices (< 1e-12 apart), orients all
/// triangles counterclockwise and computes the boundary vertex list.
Mesh make_mesh(Tensor vertices, std::vector<std::array<int, 3>> triangles);

/// Text format: line 1 "V T"; V lines "x y"; T lines "i j k" (zero-based).
Mesh load_mesh(const std::string& path);
void save_mesh(const Mesh& mesh, const std::string& path);

/// Each triangle split into 4 through edge midpoints.
Mesh refine_uniform(const Mesh& mesh);

/// Barycentric n-subdivision of one triangle: (n+1)(n+2)/2 vertices, n^2 triangles.
Mesh structured_triangle_mesh(const std::array<double, 2>& v0, const std::array<double, 2>& v1,
                              const std::array<double, 2>& v2, int n);

/// [0,1]^2 as k x k squares, each square split into two triangles.
/// k=1 gives 2 triangles; k=2 the eight-triangle layout.
Mesh unit_square_mesh(int k);

// Quadrature reference triangle and problem domains.
inline constexpr std::array<double, 2> kRefTriV0{0.0, 0.0};
inline constexpr std::array<double, 2> kRefTriV1{1.0, 0.0};
inline constexpr std::array<double, 2> kRefTriV2{0.8660254037844386468, 0.5};  // (sqrt(3)/2, 1/2)

/// Five-triangle mesh of the equilateral triangle (0,0),(1,0),(1/2,sqrt(3)/2)
/// with the notch [0.49,0.51]x[0,0.4] removed.
Mesh notch_mesh();

/// Largest circumradius over triangles; a fill-distance proxy for the vertex set.
double mesh_fill_distance(const Mesh& mesh);

}  // namespace kno

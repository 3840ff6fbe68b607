#include "kno/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "kno/errors.hpp"

namespace kno {

namespace {

double signed_area(const Tensor& v, const std::array<int, 3>& t) {
  const double x1 = v.at(t[0], 0), y1 = v.at(t[0], 1);
  const double x2 = v.at(t[1], 0), y2 = v.at(t[1], 1);
  const double x3 = v.at(t[2], 0), y3 = v.at(t[2], 1);
  return 0.5 * ((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1));
}

}  // namespace

double Mesh::triangle_area(std::int64_t t) const {
  return signed_area(vertices, triangles[static_cast<std::size_t>(t)]);
}

double Mesh::area() const {
  double a = 0.0;
  for (std::int64_t t = 0; t < triangle_count(); ++t) a += triangle_area(t);
  return a;
}

Mesh make_mesh(Tensor vertices, std::vector<std::array<int, 3>> triangles) {
  if (vertices.rank() != 2 || vertices.shape[1] != 2)
    throw ContractViolation("make_mesh: vertices must be [V,2]");
  const std::int64_t nv = vertices.shape[0];
  if (nv < 3 || triangles.empty()) throw ContractViolation("make_mesh: need >= 3 vertices and >= 1 triangle");

  // Duplicate vertices indicate a construction bug, not something to merge.
  for (std::int64_t i = 0; i < nv; ++i)
    for (std::int64_t j = i + 1; j < nv; ++j) {
      const double dx = vertices.at(i, 0) - vertices.at(j, 0);
      const double dy = vertices.at(i, 1) - vertices.at(j, 1);
      if (std::sqrt(dx * dx + dy * dy) < 1e-12)
        throw ContractViolation("make_mesh: duplicate vertices " + std::to_string(i) + " and " +
                                std::to_string(j));
    }

  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (int k = 0; k < 3; ++k)
      if (triangles[t][k] < 0 || triangles[t][k] >= nv)
        throw ContractViolation("make_mesh: vertex index out of range in triangle " +
                                std::to_string(t));
    double a = signed_area(vertices, triangles[t]);
    if (a < 0.0) {
      std::swap(triangles[t][1], triangles[t][2]);
      a = -a;
    }
    if (a <= 1e-14)
      throw ContractViolation("make_mesh: degenerate triangle " + std::to_string(t));
  }

  Mesh m;
  m.vertices = std::move(vertices);
  m.triangles = std::move(triangles);

  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edge_count[{a, b}] += 1;
    }
  std::vector<bool> on_boundary(static_cast<std::size_t>(nv), false);
  for (const auto& [e, c] : edge_count)
    if (c == 1) {
      on_boundary[static_cast<std::size_t>(e.first)] = true;
      on_boundary[static_cast<std::size_t>(e.second)] = true;
    }
  for (std::int64_t i = 0; i < nv; ++i)
    if (on_boundary[static_cast<std::size_t>(i)]) m.boundary_vertices.push_back(static_cast<int>(i));
  return m;
}

Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_mesh: cannot open " + path);
  std::int64_t nv = 0, nt = 0;
  if (!(in >> nv >> nt)) throw IoError("load_mesh: bad header in " + path);
  Tensor verts = Tensor::zeros({nv, 2});
  for (std::int64_t i = 0; i < nv; ++i)
    if (!(in >> verts.at(i, 0) >> verts.at(i, 1)))
      throw IoError("load_mesh: bad vertex line in " + path);
  std::vector<std::array<int, 3>> tris(static_cast<std::size_t>(nt));
  for (auto& t : tris)
    if (!(in >> t[0] >> t[1] >> t[2])) throw IoError("load_mesh: bad triangle line in " + path);
  return make_mesh(std::move(verts), std::move(tris));
}

void save_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_mesh: cannot open " + path);
  out.precision(17);
  out << mesh.vertex_count() << " " << mesh.triangle_count() << "\n";
  for (std::int64_t i = 0; i < mesh.vertex_count(); ++i)
    out << mesh.vertices.at(i, 0) << " " << mesh.vertices.at(i, 1) << "\n";
  for (const auto& t : mesh.triangles) out << t[0] << " " << t[1] << " " << t[2] << "\n";
  if (!out) throw IoError("save_mesh: write failed for " + path);
}

Mesh refine_uniform(const Mesh& mesh) {
  std::vector<double> verts(mesh.vertices.data);
  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int a, int b) {
    int lo = std::min(a, b), hi = std::max(a, b);
    auto it = midpoint.find({lo, hi});
    if (it != midpoint.end()) return it->second;
    const int idx = static_cast<int>(verts.size() / 2);
    verts.push_back(0.5 * (mesh.vertices.at(a, 0) + mesh.vertices.at(b, 0)));
    verts.push_back(0.5 * (mesh.vertices.at(a, 1) + mesh.vertices.at(b, 1)));
    midpoint[{lo, hi}] = idx;
    return idx;
  };
  std::vector<std::array<int, 3>> tris;
  tris.reserve(mesh.triangles.size() * 4);
  for (const auto& t : mesh.triangles) {
    const int m01 = mid(t[0], t[1]), m12 = mid(t[1], t[2]), m20 = mid(t[2], t[0]);
    tris.push_back({t[0], m01, m20});
    tris.push_back({t[1], m12, m01});
    tris.push_back({t[2], m20, m12});
    tris.push_back({m01, m12, m20});
  }
  const std::int64_t nverts = static_cast<std::int64_t>(verts.size() / 2);
  Tensor v({nverts, 2}, std::move(verts));
  return make_mesh(std::move(v), std::move(tris));
}

Mesh structured_triangle_mesh(const std::array<double, 2>& v0, const std::array<double, 2>& v1,
                              const std::array<double, 2>& v2, int n) {
  if (n < 1) throw ContractViolation("structured_triangle_mesh: n must be >= 1");
  std::vector<double> verts;
  std::vector<std::vector<int>> id(static_cast<std::size_t>(n) + 1);
  int next = 0;
  for (int i = 0; i <= n; ++i) {
    id[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(n - i) + 1);
    for (int j = 0; j <= n - i; ++j) {
      const double a = static_cast<double>(i) / n, b = static_cast<double>(j) / n;
      verts.push_back(v0[0] + a * (v1[0] - v0[0]) + b * (v2[0] - v0[0]));
      verts.push_back(v0[1] + a * (v1[1] - v0[1]) + b * (v2[1] - v0[1]));
      id[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = next++;
    }
  }
  std::vector<std::array<int, 3>> tris;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n - i; ++j) {
      tris.push_back({id[i][j], id[i + 1][j], id[i][j + 1]});
      if (j < n - i - 1) tris.push_back({id[i + 1][j], id[i + 1][j + 1], id[i][j + 1]});
    }
  const std::int64_t nverts = static_cast<std::int64_t>(verts.size() / 2);
  Tensor v({nverts, 2}, std::move(verts));
  return make_mesh(std::move(v), std::move(tris));
}

Mesh unit_square_mesh(int k) {
  if (k < 1) throw ContractViolation("unit_square_mesh: k must be >= 1");
  std::vector<double> verts;
  for (int j = 0; j <= k; ++j)
    for (int i = 0; i <= k; ++i) {
      verts.push_back(static_cast<double>(i) / k);
      verts.push_back(static_cast<double>(j) / k);
    }
  auto id = [k](int i, int j) { return j * (k + 1) + i; };
  std::vector<std::array<int, 3>> tris;
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < k; ++i) {
      tris.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      tris.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  const std::int64_t nverts = static_cast<std::int64_t>(verts.size() / 2);
  Tensor v({nverts, 2}, std::move(verts));
  return make_mesh(std::move(v), std::move(tris));
}

Mesh notch_mesh() {
  const double h = 0.8660254037844386468;  // sqrt(3)/2
  Tensor v({7, 2}, {
                       0.0, 0.0,    // 0: left corner
                       0.49, 0.0,   // 1: notch bottom-left
                       0.51, 0.0,   // 2: notch bottom-right
                       0.51, 0.4,   // 3: notch top-right
                       0.49, 0.4,   // 4: notch top-left
                       1.0, 0.0,    // 5: right corner
                       0.5, h       // 6: apex
                   });
  std::vector<std::array<int, 3>> tris = {
      {0, 1, 4}, {3, 2, 5}, {0, 4, 6}, {3, 5, 6}, {4, 3, 6},
  };
  return make_mesh(std::move(v), std::move(tris));
}

double mesh_fill_distance(const Mesh& mesh) {
  double h = 0.0;
  for (const auto& t : mesh.triangles) {
    const double ax = mesh.vertices.at(t[0], 0), ay = mesh.vertices.at(t[0], 1);
    const double bx = mesh.vertices.at(t[1], 0), by = mesh.vertices.at(t[1], 1);
    const double cx = mesh.vertices.at(t[2], 0), cy = mesh.vertices.at(t[2], 1);
    const double a = std::hypot(bx - cx, by - cy);
    const double b = std::hypot(ax - cx, ay - cy);
    const double c = std::hypot(ax - bx, ay - by);
    const double area = std::abs(0.5 * ((bx - ax) * (cy - ay) - (cx - ax) * (by - ay)));
    h = std::max(h, a * b * c / (4.0 * area));
  }
  return h;
}

}  // namespace kno

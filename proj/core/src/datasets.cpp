#include "kno/datasets.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kno/errors.hpp"
#include "kno/fft.hpp"
#include "kno/io.hpp"

namespace kno {

using nlohmann::json;

const char* problem_name(Problem p) {
  switch (p) {
    case Problem::burgers: return "burgers";
    case Problem::advection1: return "advection1";
    case Problem::darcy_pwc: return "darcy_pwc";
    case Problem::darcy_cont: return "darcy_cont";
    case Problem::darcy_tri: return "darcy_tri";
    case Problem::darcy_tri_notch: return "darcy_tri_notch";
  }
  return "?";
}

Problem problem_from_name(const std::string& name) {
  for (Problem p : {Problem::burgers, Problem::advection1, Problem::darcy_pwc, Problem::darcy_cont,
                    Problem::darcy_tri, Problem::darcy_tri_notch})
    if (name == problem_name(p)) return p;
  throw ContractViolation("unknown problem: " + name);
}

std::vector<std::string> problem_names() {
  std::vector<std::string> out;
  for (Problem p : {Problem::burgers, Problem::advection1, Problem::darcy_pwc, Problem::darcy_cont,
                    Problem::darcy_tri, Problem::darcy_tri_notch})
    out.emplace_back(problem_name(p));
  return out;
}

// ---- 1-D periodic Gaussian fields --------------------------------------------

PeriodicField1d sample_periodic_field_1d(long n_modes_grid, double scale, double shift,
                                         double power, Rng& rng) {
  if (n_modes_grid < 2 || (n_modes_grid & (n_modes_grid - 1)) != 0)
    throw ContractViolation("sample_periodic_field_1d: grid size must be a power of two");
  const long kmax = n_modes_grid / 2 - 1;
  PeriodicField1d f;
  f.a.resize(static_cast<std::size_t>(kmax) + 1, 0.0);
  f.b.resize(static_cast<std::size_t>(kmax) + 1, 0.0);
  const double sqrt_scale = std::sqrt(scale);
  // Mean mode, then (cos, sin) pairs per wavenumber; order is part of the
  // determinism contract.
  f.a[0] = sqrt_scale / std::pow(shift, power / 2.0) * rng.normal();
  const double sqrt2 = std::sqrt(2.0);
  for (long k = 1; k <= kmax; ++k) {
    const double wk = 2.0 * M_PI * static_cast<double>(k);
    const double sigma = sqrt_scale / std::pow(wk * wk + shift, power / 2.0);
    f.a[static_cast<std::size_t>(k)] = sigma * sqrt2 * rng.normal();
    f.b[static_cast<std::size_t>(k)] = sigma * sqrt2 * rng.normal();
  }
  return f;
}

std::vector<double> PeriodicField1d::evaluate(long n) const {
  std::vector<double> u(static_cast<std::size_t>(n), 0.0);
  const long kmax = static_cast<long>(a.size()) - 1;
  for (long j = 0; j < n; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(n);
    double s = a[0];
    for (long k = 1; k <= kmax; ++k) {
      const double ang = 2.0 * M_PI * static_cast<double>(k) * x;
      s += a[static_cast<std::size_t>(k)] * std::cos(ang) +
           b[static_cast<std::size_t>(k)] * std::sin(ang);
    }
    u[static_cast<std::size_t>(j)] = s;
  }
  return u;
}

std::vector<double> sample_periodic_gp_1d(long n, double scale, double shift, double power,
                                          Rng& rng) {
  return sample_periodic_field_1d(n, scale, shift, power, rng).evaluate(n);
}

// ---- Burgers ------------------------------------------------------------------

std::vector<double> solve_burgers(const std::vector<double>& u0, double nu, double t_end,
                                  double dt_scale) {
  const long n = static_cast<long>(u0.size());
  if (n < 4 || (n & (n - 1)) != 0)
    throw ContractViolation("solve_burgers: grid size must be a power of two");
  if (t_end < 0.0) throw ContractViolation("solve_burgers: t_end must be >= 0");
  const long N = 4 * n;  // internal resolution

  // Spectral coefficients c_k of u0, zero-padded to the internal grid.
  std::vector<std::complex<double>> c(static_cast<std::size_t>(N), {0.0, 0.0});
  {
    auto hat = fft_real(u0);
    for (auto& z : hat) z /= static_cast<double>(n);
    for (long k = 0; k < n / 2; ++k) c[static_cast<std::size_t>(k)] = hat[static_cast<std::size_t>(k)];
    for (long k = 1; k < n / 2; ++k)
      c[static_cast<std::size_t>(N - k)] = hat[static_cast<std::size_t>(n - k)];
  }

  double umax0 = 1e-9;
  for (double v : u0) umax0 = std::max(umax0, std::abs(v));
  if (t_end == 0.0) return u0;

  const double dx = 1.0 / static_cast<double>(N);
  double dt = 0.25 * dt_scale * dx / umax0;
  const long steps = static_cast<long>(std::ceil(t_end / dt));
  dt = t_end / static_cast<double>(steps);

  auto wavenumber = [N](long j) {
    const long js = j <= N / 2 ? j : j - N;
    return 2.0 * M_PI * static_cast<double>(js);
  };
  const long dealias_cut = N / 3;

  std::vector<double> Ehalf(static_cast<std::size_t>(N)), Efull(static_cast<std::size_t>(N));
  for (long j = 0; j < N; ++j) {
    const double k = wavenumber(j);
    Ehalf[static_cast<std::size_t>(j)] = std::exp(-nu * k * k * dt * 0.5);
    Efull[static_cast<std::size_t>(j)] = Ehalf[static_cast<std::size_t>(j)] *
                                         Ehalf[static_cast<std::size_t>(j)];
  }

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(N));
  const double blowup_limit = 100.0 * (umax0 + 1.0);
  auto nonlinear = [&](const std::vector<std::complex<double>>& v,
                       std::vector<std::complex<double>>& out, bool check) {
    buf = v;
    fft_inplace(buf, true);  // physical u / N scaling folded below
    double umax = 0.0;
    for (long j = 0; j < N; ++j) {
      const double u = buf[static_cast<std::size_t>(j)].real() * static_cast<double>(N);
      if (check) umax = std::max(umax, std::abs(u));
      buf[static_cast<std::size_t>(j)] = std::complex<double>(u * u, 0.0);
    }
    if (check && (!std::isfinite(umax) || umax > blowup_limit))
      throw NumericError("solve_burgers: blowup detected (CFL violation)");
    fft_inplace(buf, false);
    for (long j = 0; j < N; ++j) {
      const long js = j <= N / 2 ? j : j - N;
      if (std::abs(js) > dealias_cut) {
        out[static_cast<std::size_t>(j)] = {0.0, 0.0};
        continue;
      }
      const double k = wavenumber(j);
      // -1/2 d/dx (u^2), spectral; fft normalization 1/N
      out[static_cast<std::size_t>(j)] = std::complex<double>(0.0, -0.5 * k) *
                                         buf[static_cast<std::size_t>(j)] /
                                         static_cast<double>(N);
    }
  };

  std::vector<std::complex<double>> k1(c.size()), k2(c.size()), k3(c.size()), k4(c.size()),
      tmp(c.size());
  for (long s = 0; s < steps; ++s) {
    const bool check = (s % 64) == 0;
    nonlinear(c, k1, check);
    for (std::size_t j = 0; j < c.size(); ++j) tmp[j] = Ehalf[j] * (c[j] + 0.5 * dt * k1[j]);
    nonlinear(tmp, k2, false);
    for (std::size_t j = 0; j < c.size(); ++j) tmp[j] = Ehalf[j] * c[j] + 0.5 * dt * k2[j];
    nonlinear(tmp, k3, false);
    for (std::size_t j = 0; j < c.size(); ++j) tmp[j] = Efull[j] * c[j] + dt * Ehalf[j] * k3[j];
    nonlinear(tmp, k4, false);
    for (std::size_t j = 0; j < c.size(); ++j)
      c[j] = Efull[j] * c[j] +
             dt / 6.0 * (Efull[j] * k1[j] + 2.0 * Ehalf[j] * (k2[j] + k3[j]) + k4[j]);
  }

  buf = c;
  fft_inplace(buf, true);
  std::vector<double> out(static_cast<std::size_t>(n));
  const long stride = N / n;
  for (long j = 0; j < n; ++j) {
    const double v = buf[static_cast<std::size_t>(j * stride)].real() * static_cast<double>(N);
    if (!std::isfinite(v)) throw NumericError("solve_burgers: non-finite solution");
    out[static_cast<std::size_t>(j)] = v;
  }
  return out;
}

// ---- advection ------------------------------------------------------------------

void advection_pair(double center, double width, double height, double t, long n,
                    std::vector<double>& u0, std::vector<double>& ut) {
  if (n < 1) throw ContractViolation("advection_pair: n must be >= 1");
  u0.assign(static_cast<std::size_t>(n), 0.0);
  ut.assign(static_cast<std::size_t>(n), 0.0);
  auto wave = [&](double x) {
    return std::abs(x - center) < 0.5 * width ? height : 0.0;
  };
  for (long j = 0; j < n; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(n);
    u0[static_cast<std::size_t>(j)] = wave(x);
    double xs = x - t;
    xs -= std::floor(xs);
    ut[static_cast<std::size_t>(j)] = wave(xs);
  }
}

// ---- 2-D Gaussian field and Darcy grid solves -------------------------------------

double darcy_pwc_threshold(double mu) { return mu >= 0.0 ? 12.0 : 3.0; }

std::vector<double> darcy_grf_2d(long n, Rng& rng) {
  if (n < 2) throw ContractViolation("darcy_grf_2d: n must be >= 2");
  // Mode cap keeps the continuum field independent of the sampling grid for
  // n >= 41 (super-resolution references reuse the same draw).
  const long K = std::min<long>((n - 1) / 2, 20);
  struct Mode {
    double k1, k2, sigma, xi, eta;
  };
  std::vector<Mode> modes;
  const double twopi = 2.0 * M_PI;
  double mean_coeff = (1.0 / 9.0) * rng.normal();
  for (long k1 = 0; k1 <= K; ++k1)
    for (long k2 = (k1 == 0 ? 1 : -K); k2 <= K; ++k2) {
      const double kk = twopi * twopi * static_cast<double>(k1 * k1 + k2 * k2);
      const double sigma = 1.0 / (kk + 9.0);
      modes.push_back({static_cast<double>(k1), static_cast<double>(k2), sigma * std::sqrt(2.0),
                       rng.normal(), rng.normal()});
    }
  std::vector<double> u(static_cast<std::size_t>(n * n), 0.0);
  for (long iy = 0; iy < n; ++iy) {
    const double y = static_cast<double>(iy) / static_cast<double>(n - 1);
    for (long ix = 0; ix < n; ++ix) {
      const double x = static_cast<double>(ix) / static_cast<double>(n - 1);
      double s = mean_coeff;
      for (const Mode& m : modes) {
        const double ang = twopi * (m.k1 * x + m.k2 * y);
        s += m.sigma * (m.xi * std::cos(ang) + m.eta * std::sin(ang));
      }
      u[static_cast<std::size_t>(iy * n + ix)] = s;
    }
  }
  return u;
}

std::vector<double> darcy_pwc_field(long n, Rng& rng) {
  std::vector<double> u = darcy_grf_2d(n, rng);
  for (double& v : u) v = darcy_pwc_threshold(v);
  return u;
}

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

using SpMat = Eigen::SparseMatrix<double>;

std::vector<double> solve_darcy_5pt(const std::vector<double>& K, double f, long n,
                                    bool neumann_tb) {
  if (n < 3) throw ContractViolation("solve_darcy: n must be >= 3");
  if (K.size() != static_cast<std::size_t>(n * n))
    throw ContractViolation("solve_darcy: K must have n*n entries");
  for (double v : K)
    if (!(v > 0.0)) throw ContractViolation("solve_darcy: K must be positive everywhere");
  const double h = 1.0 / static_cast<double>(n - 1);
  const double inv_h2 = 1.0 / (h * h);

  // Unknowns: interior in x always; in y too unless zero-flux top/bottom.
  const long ix0 = 1, ix1 = n - 2;
  const long iy0 = neumann_tb ? 0 : 1;
  const long iy1 = neumann_tb ? n - 1 : n - 2;
  const long nx = ix1 - ix0 + 1, ny = iy1 - iy0 + 1;
  auto uid = [&](long ix, long iy) { return (iy - iy0) * nx + (ix - ix0); };
  auto kat = [&](long ix, long iy) { return K[static_cast<std::size_t>(iy * n + ix)]; };

  std::vector<Eigen::Triplet<double>> trips;
  Eigen::VectorXd b = Eigen::VectorXd::Constant(nx * ny, f);
  for (long iy = iy0; iy <= iy1; ++iy)
    for (long ix = ix0; ix <= ix1; ++ix) {
      const long row = uid(ix, iy);
      double diag = 0.0;
      auto face = [&](long jx, long jy, bool active) {
        if (!active) return;
        const double a = harmonic(kat(ix, iy), kat(jx, jy)) * inv_h2;
        diag += a;
        const bool nb_unknown = jx >= ix0 && jx <= ix1 && jy >= iy0 && jy <= iy1;
        if (nb_unknown)
          trips.emplace_back(static_cast<int>(row), static_cast<int>(uid(jx, jy)), -a);
        // Dirichlet neighbors carry value 0, nothing moves to the RHS.
      };
      face(ix - 1, iy, true);
      face(ix + 1, iy, true);
      face(ix, iy - 1, !(neumann_tb && iy == 0));
      face(ix, iy + 1, !(neumann_tb && iy == n - 1));
      trips.emplace_back(static_cast<int>(row), static_cast<int>(row), diag);
    }

  SpMat A(nx * ny, nx * ny);
  A.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<SpMat> solver(A);
  if (solver.info() != Eigen::Success)
    throw ConditioningError("solve_darcy: factorization failed");
  Eigen::VectorXd x = solver.solve(b);
  if (solver.info() != Eigen::Success) throw ConditioningError("solve_darcy: solve failed");

  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (long iy = iy0; iy <= iy1; ++iy)
    for (long ix = ix0; ix <= ix1; ++ix)
      out[static_cast<std::size_t>(iy * n + ix)] = x(uid(ix, iy));
  return out;
}

}  // namespace

std::vector<double> solve_darcy_grid(const std::vector<double>& K, double f, long n) {
  return solve_darcy_5pt(K, f, n, false);
}

std::vector<double> solve_darcy_mixed(const std::vector<double>& K, double f, long n) {
  return solve_darcy_5pt(K, f, n, true);
}

double darcy_grid_residual_max(const std::vector<double>& K, const std::vector<double>& h,
                               double f, long n) {
  const double dx = 1.0 / static_cast<double>(n - 1);
  const double inv_h2 = 1.0 / (dx * dx);
  auto kat = [&](long ix, long iy) { return K[static_cast<std::size_t>(iy * n + ix)]; };
  auto hat = [&](long ix, long iy) { return h[static_cast<std::size_t>(iy * n + ix)]; };
  double worst = 0.0;
  for (long iy = 1; iy <= n - 2; ++iy)
    for (long ix = 1; ix <= n - 2; ++ix) {
      double lhs = 0.0;
      lhs += harmonic(kat(ix, iy), kat(ix - 1, iy)) * (hat(ix, iy) - hat(ix - 1, iy)) * inv_h2;
      lhs += harmonic(kat(ix, iy), kat(ix + 1, iy)) * (hat(ix, iy) - hat(ix + 1, iy)) * inv_h2;
      lhs += harmonic(kat(ix, iy), kat(ix, iy - 1)) * (hat(ix, iy) - hat(ix, iy - 1)) * inv_h2;
      lhs += harmonic(kat(ix, iy), kat(ix, iy + 1)) * (hat(ix, iy) - hat(ix, iy + 1)) * inv_h2;
      worst = std::max(worst, std::abs(lhs - f) / std::max(1.0, std::abs(f)));
    }
  return worst;
}

// ---- boundary GP + FEM -------------------------------------------------------------

std::vector<double> boundary_gp_sample(const Mesh& mesh, double l, Rng& rng) {
  if (mesh.boundary_vertices.empty())
    throw ContractViolation("boundary_gp_sample: mesh has no boundary vertices");
  // The field is a 1-D function of x; draw it at the distinct x-coordinates so
  // boundary points with equal x receive exactly equal values.
  std::vector<double> xs;
  xs.reserve(mesh.boundary_vertices.size());
  for (int v : mesh.boundary_vertices) xs.push_back(mesh.vertices.at(v, 0));
  std::vector<double> ux = xs;
  std::sort(ux.begin(), ux.end());
  ux.erase(std::unique(ux.begin(), ux.end(),
                       [](double a, double b) { return std::abs(a - b) < 1e-12; }),
           ux.end());
  const long m = static_cast<long>(ux.size());

  Eigen::MatrixXd C(m, m);
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < m; ++j) {
      const double d = ux[static_cast<std::size_t>(i)] - ux[static_cast<std::size_t>(j)];
      C(i, j) = std::exp(-d * d / (2.0 * l * l));
    }
  Eigen::LLT<Eigen::MatrixXd> llt;
  bool ok = false;
  for (double jitter : {0.0, 1e-12, 1e-10, 1e-8}) {
    Eigen::MatrixXd Cj = C;
    for (long i = 0; i < m; ++i) Cj(i, i) += jitter;
    llt.compute(Cj);
    if (llt.info() == Eigen::Success) {
      ok = true;
      break;
    }
  }
  if (!ok)
    throw ConditioningError("boundary_gp_sample: covariance factorization failed at jitter 1e-8");

  Eigen::VectorXd z(m);
  for (long i = 0; i < m; ++i) z(i) = rng.normal();
  Eigen::VectorXd vals = llt.matrixL() * z;

  std::vector<double> out;
  out.reserve(mesh.boundary_vertices.size());
  for (double x : xs) {
    const auto it = std::lower_bound(ux.begin(), ux.end(), x - 1e-12);
    out.push_back(vals(static_cast<long>(it - ux.begin())));
  }
  return out;
}

namespace {

struct FemSystem {
  SpMat A;                 // interior x interior
  Eigen::MatrixXd A_ib;    // interior x boundary (dense; boundary sets are small)
  std::vector<long> interior;        // vertex -> position handled via maps below
  std::vector<long> unknown_of;      // vertex -> unknown index or -1
  std::vector<long> boundary_pos;  // vertex -> boundary position or -1
  Eigen::VectorXd load;              // f * area/3 accumulated on interior vertices
};

FemSystem assemble_fem(const Mesh& mesh, double K, double f) {
  const long nv = mesh.vertex_count();
  FemSystem sys;
  sys.unknown_of.assign(static_cast<std::size_t>(nv), -1);
  sys.boundary_pos.assign(static_cast<std::size_t>(nv), -1);
  for (std::size_t i = 0; i < mesh.boundary_vertices.size(); ++i)
    sys.boundary_pos[static_cast<std::size_t>(mesh.boundary_vertices[i])] =
        static_cast<long>(i);
  long n_int = 0;
  for (long v = 0; v < nv; ++v)
    if (sys.boundary_pos[static_cast<std::size_t>(v)] < 0) {
      sys.unknown_of[static_cast<std::size_t>(v)] = n_int++;
      sys.interior.push_back(v);
    }

  const long nb = static_cast<long>(mesh.boundary_vertices.size());
  std::vector<Eigen::Triplet<double>> trips;
  sys.A_ib = Eigen::MatrixXd::Zero(n_int, nb);
  sys.load = Eigen::VectorXd::Zero(n_int);

  for (const auto& tri : mesh.triangles) {
    const double x0 = mesh.vertices.at(tri[0], 0), y0 = mesh.vertices.at(tri[0], 1);
    const double x1 = mesh.vertices.at(tri[1], 0), y1 = mesh.vertices.at(tri[1], 1);
    const double x2 = mesh.vertices.at(tri[2], 0), y2 = mesh.vertices.at(tri[2], 1);
    const double area = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0));
    const double gx[3] = {(y1 - y2) / (2 * area), (y2 - y0) / (2 * area), (y0 - y1) / (2 * area)};
    const double gy[3] = {(x2 - x1) / (2 * area), (x0 - x2) / (2 * area), (x1 - x0) / (2 * area)};
    for (int a = 0; a < 3; ++a) {
      const long va = tri[a];
      const long ua = sys.unknown_of[static_cast<std::size_t>(va)];
      if (ua >= 0) sys.load(ua) += f * area / 3.0;
      for (int b = 0; b < 3; ++b) {
        const long vb = tri[b];
        const double kab = K * area * (gx[a] * gx[b] + gy[a] * gy[b]);
        const long ub = sys.unknown_of[static_cast<std::size_t>(vb)];
        if (ua >= 0 && ub >= 0)
          trips.emplace_back(static_cast<int>(ua), static_cast<int>(ub), kab);
        else if (ua >= 0 && ub < 0)
          sys.A_ib(ua, sys.boundary_pos[static_cast<std::size_t>(vb)]) += kab;
      }
    }
  }
  sys.A.resize(static_cast<int>(sys.interior.size()), static_cast<int>(sys.interior.size()));
  sys.A.setFromTriplets(trips.begin(), trips.end());
  return sys;
}

}  // namespace

std::vector<double> solve_darcy_fem(const Mesh& mesh, double K, double f,
                                    const std::vector<double>& bc) {
  if (bc.size() != mesh.boundary_vertices.size())
    throw ContractViolation("solve_darcy_fem: bc must match boundary vertex count");
  FemSystem sys = assemble_fem(mesh, K, f);
  Eigen::VectorXd hb(static_cast<long>(bc.size()));
  for (std::size_t i = 0; i < bc.size(); ++i) hb(static_cast<long>(i)) = bc[i];
  Eigen::VectorXd rhs = sys.load - sys.A_ib * hb;
  Eigen::SimplicialLDLT<SpMat> solver(sys.A);
  if (solver.info() != Eigen::Success)
    throw ConditioningError("solve_darcy_fem: factorization failed");
  Eigen::VectorXd hi = solver.solve(rhs);

  std::vector<double> h(static_cast<std::size_t>(mesh.vertex_count()), 0.0);
  for (std::size_t i = 0; i < bc.size(); ++i)
    h[static_cast<std::size_t>(mesh.boundary_vertices[i])] = bc[i];
  for (std::size_t i = 0; i < sys.interior.size(); ++i)
    h[static_cast<std::size_t>(sys.interior[i])] = hi(static_cast<long>(i));
  return h;
}

double fem_residual_max(const Mesh& mesh, double K, double f, const std::vector<double>& bc,
                        const std::vector<double>& h) {
  FemSystem sys = assemble_fem(mesh, K, f);
  Eigen::VectorXd hb(static_cast<long>(bc.size()));
  for (std::size_t i = 0; i < bc.size(); ++i) hb(static_cast<long>(i)) = bc[i];
  Eigen::VectorXd hi(static_cast<long>(sys.interior.size()));
  for (std::size_t i = 0; i < sys.interior.size(); ++i)
    hi(static_cast<long>(i)) = h[static_cast<std::size_t>(sys.interior[i])];
  Eigen::VectorXd stiff = sys.A * hi;
  Eigen::VectorXd lift = sys.A_ib * hb;
  Eigen::VectorXd r = stiff + lift - sys.load;
  const double scale = std::max({1e-14, stiff.cwiseAbs().maxCoeff(), lift.cwiseAbs().maxCoeff(),
                                 sys.load.cwiseAbs().maxCoeff()});
  return r.cwiseAbs().maxCoeff() / scale;
}

// ---- dataset assembly ----------------------------------------------------------

Mesh dataset_mesh(const DatasetSpec& spec) {
  if (!spec.mesh_path.empty()) return load_mesh(spec.mesh_path);
  if (spec.problem == Problem::darcy_tri)
    return structured_triangle_mesh(kRefTriV0, kRefTriV1, kRefTriV2,
                                    static_cast<int>(spec.mesh_subdiv));
  if (spec.problem == Problem::darcy_tri_notch) {
    Mesh m = notch_mesh();
    for (long r = 0; r < spec.notch_refine; ++r) m = refine_uniform(m);
    return m;
  }
  throw ContractViolation("dataset_mesh: not a mesh-based problem");
}

namespace {

Tensor grid_1d(long n) {
  Tensor g = Tensor::zeros({n, 1});
  for (long j = 0; j < n; ++j) g.at(j, 0) = static_cast<double>(j) / static_cast<double>(n);
  return g;
}

Tensor grid_2d(long n) {
  Tensor g = Tensor::zeros({n * n, 2});
  for (long iy = 0; iy < n; ++iy)
    for (long ix = 0; ix < n; ++ix) {
      g.at(iy * n + ix, 0) = static_cast<double>(ix) / static_cast<double>(n - 1);
      g.at(iy * n + ix, 1) = static_cast<double>(iy) / static_cast<double>(n - 1);
    }
  return g;
}

}  // namespace

std::pair<Dataset, Dataset> build_dataset(const DatasetSpec& spec) {
  const long m_total = spec.m_train + spec.m_test;
  if (spec.m_train < 1 || spec.m_test < 0)
    throw ContractViolation("build_dataset: need m_train >= 1, m_test >= 0");

  Dataset all;
  all.problem = problem_name(spec.problem);

  switch (spec.problem) {
    case Problem::burgers: {
      const long n = spec.resolution;
      all.d = 1;
      all.d_u = all.d_y = 1;
      all.grid = grid_1d(n);
      all.inputs = Tensor::zeros({m_total, n, 1});
      all.outputs = Tensor::zeros({m_total, n, 1});
      const long mode_grid = spec.mode_grid > 0 ? spec.mode_grid : n;
      for (long m = 0; m < m_total; ++m) {
        Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(m));
        auto field = sample_periodic_field_1d(mode_grid, 625.0, 25.0, 2.0, rng);
        auto u0 = field.evaluate(n);
        auto u1 = solve_burgers(u0, spec.nu, spec.t_end);
        for (long j = 0; j < n; ++j) {
          all.inputs.at(m, j, 0) = u0[static_cast<std::size_t>(j)];
          all.outputs.at(m, j, 0) = u1[static_cast<std::size_t>(j)];
        }
      }
      break;
    }
    case Problem::advection1: {
      const long n = spec.resolution;
      all.d = 1;
      all.d_u = all.d_y = 1;
      all.grid = grid_1d(n);
      all.inputs = Tensor::zeros({m_total, n, 1});
      all.outputs = Tensor::zeros({m_total, n, 1});
      std::vector<double> u0, ut;
      for (long m = 0; m < m_total; ++m) {
        Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(m));
        const double center = rng.uniform(0.3, 0.7);
        const double width = rng.uniform(0.3, 0.6);
        const double height = rng.uniform(1.0, 2.0);
        advection_pair(center, width, height, 0.5, n, u0, ut);
        for (long j = 0; j < n; ++j) {
          all.inputs.at(m, j, 0) = u0[static_cast<std::size_t>(j)];
          all.outputs.at(m, j, 0) = ut[static_cast<std::size_t>(j)];
        }
      }
      break;
    }
    case Problem::darcy_pwc: {
      const long n = spec.resolution;          // training grid per side
      const long fine = 2 * (n - 1) + 1;       // generation grid, stride-2 subsample
      all.d = 2;
      all.d_u = all.d_y = 1;
      all.grid = grid_2d(n);
      all.inputs = Tensor::zeros({m_total, n * n, 1});
      all.outputs = Tensor::zeros({m_total, n * n, 1});
      for (long m = 0; m < m_total; ++m) {
        Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(m));
        auto K = darcy_pwc_field(fine, rng);
        auto h = solve_darcy_grid(K, 1.0, fine);
        for (long iy = 0; iy < n; ++iy)
          for (long ix = 0; ix < n; ++ix) {
            const long src = (2 * iy) * fine + (2 * ix);
            all.inputs.at(m, iy * n + ix, 0) = K[static_cast<std::size_t>(src)];
            all.outputs.at(m, iy * n + ix, 0) = h[static_cast<std::size_t>(src)];
          }
      }
      break;
    }
    case Problem::darcy_cont: {
      const long n = spec.resolution;
      all.d = 2;
      all.d_u = all.d_y = 1;
      all.grid = grid_2d(n);
      all.inputs = Tensor::zeros({m_total, n * n, 1});
      all.outputs = Tensor::zeros({m_total, n * n, 1});
      // Log-normal continuous permeability: K = exp(mu) with mu drawn from a
      // zero-mean GP with squared-exponential covariance. One covariance
      // factorization serves all samples.
      const long nn = n * n;
      Eigen::MatrixXd C(nn, nn);
      const double l2 = 2.0 * spec.cont_length * spec.cont_length;
      const Tensor& g2 = all.grid;
      for (long i = 0; i < nn; ++i)
        for (long j = 0; j < nn; ++j) {
          const double dx = g2.at(i, 0) - g2.at(j, 0);
          const double dy = g2.at(i, 1) - g2.at(j, 1);
          C(i, j) = std::exp(-(dx * dx + dy * dy) / l2);
        }
      Eigen::LLT<Eigen::MatrixXd> llt;
      bool ok = false;
      for (double jitter : {1e-10, 1e-8, 1e-6}) {
        Eigen::MatrixXd Cj = C;
        for (long i = 0; i < nn; ++i) Cj(i, i) += jitter;
        llt.compute(Cj);
        if (llt.info() == Eigen::Success) {
          ok = true;
          break;
        }
      }
      if (!ok) throw ConditioningError("darcy_cont: covariance factorization failed");
      for (long m = 0; m < m_total; ++m) {
        Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(m));
        Eigen::VectorXd z(nn);
        for (long i = 0; i < nn; ++i) z(i) = rng.normal();
        Eigen::VectorXd mu = llt.matrixL() * z;
        std::vector<double> K(static_cast<std::size_t>(nn));
        for (long i = 0; i < nn; ++i) K[static_cast<std::size_t>(i)] = std::exp(mu(i));
        auto h = solve_darcy_mixed(K, 1.0, n);
        for (long j = 0; j < nn; ++j) {
          all.inputs.at(m, j, 0) = K[static_cast<std::size_t>(j)];
          all.outputs.at(m, j, 0) = h[static_cast<std::size_t>(j)];
        }
      }
      break;
    }
    case Problem::darcy_tri:
    case Problem::darcy_tri_notch: {
      Mesh mesh = dataset_mesh(spec);
      const long nv = mesh.vertex_count();
      all.d = 2;
      all.d_u = 2;  // zero-extended boundary values + boundary indicator
      all.d_y = 1;
      all.grid = mesh.vertices;
      all.inputs = Tensor::zeros({m_total, nv, 2});
      all.outputs = Tensor::zeros({m_total, nv, 1});
      for (long m = 0; m < m_total; ++m) {
        Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(m));
        auto bc = boundary_gp_sample(mesh, spec.gp_length, rng);
        auto h = solve_darcy_fem(mesh, 0.1, -1.0, bc);
        for (std::size_t i = 0; i < mesh.boundary_vertices.size(); ++i) {
          all.inputs.at(m, mesh.boundary_vertices[i], 0) = bc[i];
          all.inputs.at(m, mesh.boundary_vertices[i], 1) = 1.0;
        }
        for (long v = 0; v < nv; ++v) all.outputs.at(m, v, 0) = h[static_cast<std::size_t>(v)];
      }
      break;
    }
  }

  all.inputs.check_finite("dataset inputs");
  all.outputs.check_finite("dataset outputs");

  Dataset train, test;
  train.problem = test.problem = all.problem;
  train.d = test.d = all.d;
  train.d_u = test.d_u = all.d_u;
  train.d_y = test.d_y = all.d_y;
  train.grid = all.grid;
  test.grid = all.grid;
  const long nt = all.grid.shape[0];
  train.inputs = Tensor::zeros({spec.m_train, nt, all.d_u});
  train.outputs = Tensor::zeros({spec.m_train, nt, all.d_y});
  test.inputs = Tensor::zeros({spec.m_test, nt, all.d_u});
  test.outputs = Tensor::zeros({spec.m_test, nt, all.d_y});
  auto copy_sample = [&](Dataset& dst, long dst_m, long src_m) {
    for (long j = 0; j < nt; ++j) {
      for (int c = 0; c < all.d_u; ++c) dst.inputs.at(dst_m, j, c) = all.inputs.at(src_m, j, c);
      for (int c = 0; c < all.d_y; ++c) dst.outputs.at(dst_m, j, c) = all.outputs.at(src_m, j, c);
    }
  };
  for (long m = 0; m < spec.m_train; ++m) copy_sample(train, m, m);
  for (long m = 0; m < spec.m_test; ++m) copy_sample(test, m, spec.m_train + m);
  return {std::move(train), std::move(test)};
}

void write_dataset(const Dataset& ds, const std::string& path) {
  json header;
  header["problem"] = ds.problem;
  header["M"] = ds.sample_count();
  header["N_T"] = ds.grid_size();
  header["d"] = ds.d;
  header["d_u"] = ds.d_u;
  header["d_y"] = ds.d_y;
  std::ostringstream body;
  body << header.dump() << "\n";
  write_f64_block(body, ds.grid.data.data(), ds.grid.data.size());
  write_f64_block(body, ds.inputs.data.data(), ds.inputs.data.size());
  write_f64_block(body, ds.outputs.data.data(), ds.outputs.data.size());
  write_file_atomic(path, body.str());
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("read_dataset: missing header in " + path);
  json header = json::parse(line);
  Dataset ds;
  ds.problem = header.at("problem").get<std::string>();
  const long M = header.at("M").get<long>();
  const long nt = header.at("N_T").get<long>();
  ds.d = header.at("d").get<int>();
  ds.d_u = header.at("d_u").get<int>();
  ds.d_y = header.at("d_y").get<int>();
  ds.grid = Tensor::zeros({nt, ds.d});
  ds.inputs = Tensor::zeros({M, nt, ds.d_u});
  ds.outputs = Tensor::zeros({M, nt, ds.d_y});
  read_f64_block(in, ds.grid.data.data(), ds.grid.data.size(), path);
  read_f64_block(in, ds.inputs.data.data(), ds.inputs.data.size(), path);
  read_f64_block(in, ds.outputs.data.data(), ds.outputs.data.size(), path);
  return ds;
}

std::pair<std::string, std::string> build_and_write_dataset(const DatasetSpec& spec,
                                                            const std::string& out_dir) {
  auto [train, test] = build_dataset(spec);
  const std::string base = out_dir + "/" + problem_name(spec.problem);
  const std::string train_path = base + "_train.knod";
  const std::string test_path = base + "_test.knod";
  write_dataset(train, train_path);
  write_dataset(test, test_path);
  return {train_path, test_path};
}

}  // namespace kno

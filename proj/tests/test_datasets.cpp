#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>

#include "kno/datasets.hpp"
#include "kno/errors.hpp"
#include "kno/fft.hpp"
#include "kno/io.hpp"
#include "kno/rng.hpp"

using namespace kno;

TEST_CASE("periodic GP sampler: spectrum and mean statistics") {
  const long n = 64;
  const long trials = 5000;
  // variance of the k=1 Fourier coefficient should match the closed form
  const double sigma1 = 25.0 / (std::pow(2.0 * M_PI, 2) + 25.0);
  double acc = 0.0;
  std::vector<double> mean(static_cast<std::size_t>(n), 0.0);
  for (long s = 0; s < trials; ++s) {
    Rng rng = Rng::stream(11, static_cast<std::uint64_t>(s));
    auto u = sample_periodic_gp_1d(n, 625.0, 25.0, 2.0, rng);
    auto hat = fft_real(u);
    const std::complex<double> c1 = hat[1] / static_cast<double>(n);
    acc += std::norm(c1);
    for (long j = 0; j < n; ++j) mean[static_cast<std::size_t>(j)] += u[static_cast<std::size_t>(j)];
  }
  const double var1 = acc / trials;
  CHECK(std::abs(var1 - sigma1 * sigma1) < 0.1 * sigma1 * sigma1);

  double field_var = 1.0;  // k=0 mode variance (25/25)^2
  for (long k = 1; k < n / 2; ++k) {
    const double sk = 25.0 / (std::pow(2.0 * M_PI * k, 2) + 25.0);
    field_var += 2.0 * sk * sk;
  }
  const double bound = 3.0 * std::sqrt(field_var) / std::sqrt(static_cast<double>(trials));
  for (long j = 0; j < n; ++j)
    CHECK(std::abs(mean[static_cast<std::size_t>(j)] / trials) < bound);

  Rng rng(0);
  CHECK_THROWS_AS(sample_periodic_gp_1d(48, 625, 25, 2, rng), ContractViolation);
}

TEST_CASE("field evaluation is resolution consistent") {
  Rng rng(3);
  auto field = sample_periodic_field_1d(32, 625, 25, 2, rng);
  auto coarse = field.evaluate(32);
  auto fine = field.evaluate(64);
  for (long j = 0; j < 32; ++j)
    CHECK(coarse[static_cast<std::size_t>(j)] ==
          doctest::Approx(fine[static_cast<std::size_t>(2 * j)]).epsilon(1e-13));
}

TEST_CASE("burgers: steady states, viscous decay, dt self-convergence") {
  const long n = 64;
  std::vector<double> zero(n, 0.0);
  auto z1 = solve_burgers(zero, 0.1, 1.0);
  for (double v : z1) CHECK(std::abs(v) < 1e-12);
  std::vector<double> c0(n, 0.7);
  auto c1 = solve_burgers(c0, 0.1, 1.0);
  for (double v : c1) CHECK(v == doctest::Approx(0.7).epsilon(1e-9));

  for (long s = 0; s < 100; ++s) {
    Rng rng = Rng::stream(5, static_cast<std::uint64_t>(s));
    auto u0 = sample_periodic_gp_1d(n, 625, 25, 2, rng);
    auto u1 = solve_burgers(u0, 0.1, 1.0);
    double e0 = 0.0, e1 = 0.0;
    for (long j = 0; j < n; ++j) {
      e0 += u0[static_cast<std::size_t>(j)] * u0[static_cast<std::size_t>(j)];
      e1 += u1[static_cast<std::size_t>(j)] * u1[static_cast<std::size_t>(j)];
    }
    CHECK(e1 <= e0 + 1e-12);
  }

  Rng rng = Rng::stream(5, 3);
  auto u0 = sample_periodic_gp_1d(n, 625, 25, 2, rng);
  auto a = solve_burgers(u0, 0.1, 1.0);
  auto b = solve_burgers(u0, 0.1, 1.0, 0.5);
  double num = 0.0, den = 0.0;
  for (long j = 0; j < n; ++j) {
    num += (a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]) *
           (a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]);
    den += a[static_cast<std::size_t>(j)] * a[static_cast<std::size_t>(j)];
  }
  CHECK(std::sqrt(num / den) < 1e-6);
}

TEST_CASE("advection pairs are exact characteristics") {
  std::vector<double> u0, ut;
  advection_pair(0.3, 0.4, 1.5, 0.5, 40, u0, ut);
  for (long j = 0; j < 40; ++j) {
    const double x = j / 40.0;
    const double expect_u0 = std::abs(x - 0.3) < 0.2 ? 1.5 : 0.0;
    const double expect_ut = std::abs(x - 0.8) < 0.2 ? 1.5 : 0.0;
    CHECK(u0[static_cast<std::size_t>(j)] == expect_u0);
    CHECK(ut[static_cast<std::size_t>(j)] == expect_ut);
  }
  std::vector<double> a, b;
  advection_pair(0.5, 0.35, 2.0, 0.0, 40, u0, a);
  advection_pair(0.5, 0.35, 2.0, 1.0, 40, u0, b);
  CHECK(a == u0);
  CHECK(b == u0);
}

TEST_CASE("darcy PWC threshold and field statistics") {
  CHECK(darcy_pwc_threshold(0.1) == 12.0);
  CHECK(darcy_pwc_threshold(-0.1) == 3.0);
  CHECK(darcy_pwc_threshold(0.0) == 12.0);

  long high = 0, total = 0;
  for (long s = 0; s < 1000; ++s) {
    Rng rng = Rng::stream(17, static_cast<std::uint64_t>(s));
    auto K = darcy_pwc_field(16, rng);
    for (double v : K) {
      CHECK((v == 3.0 || v == 12.0));
      if (v == 12.0) ++high;
      ++total;
    }
  }
  const double frac = static_cast<double>(high) / static_cast<double>(total);
  CHECK(frac > 0.45);
  CHECK(frac < 0.55);
}

TEST_CASE("darcy grid solver: Poisson center value, zero forcing, homogeneity") {
  const long n = 29;
  std::vector<double> K1(static_cast<std::size_t>(n * n), 1.0);
  auto h = solve_darcy_grid(K1, 1.0, n);
  const long c = (n / 2) * n + (n / 2);
  CHECK(std::abs(h[static_cast<std::size_t>(c)] - 0.0736713) < 2e-3);

  auto h0 = solve_darcy_grid(K1, 0.0, n);
  for (double v : h0) CHECK(v == 0.0);

  Rng rng(9);
  std::vector<double> K(static_cast<std::size_t>(n * n));
  for (auto& v : K) v = rng.uniform(0.5, 2.0);
  auto ha = solve_darcy_grid(K, 1.0, n);
  std::vector<double> K2(K);
  for (auto& v : K2) v *= 2.0;
  auto hb = solve_darcy_grid(K2, 1.0, n);
  for (std::size_t i = 0; i < ha.size(); ++i)
    CHECK(hb[i] == doctest::Approx(0.5 * ha[i]).epsilon(1e-11));

  CHECK(darcy_grid_residual_max(K, ha, 1.0, n) < 1e-8);
}

TEST_CASE("boundary GP: equal x gives equal values, unit variance, covariance decay") {
  Mesh mesh = notch_mesh();  // has vertex pairs sharing x-coordinates
  {
    Rng rng(4);
    auto bc = boundary_gp_sample(mesh, 0.2, rng);
    auto pos = [&](int v) {
      for (std::size_t i = 0; i < mesh.boundary_vertices.size(); ++i)
        if (mesh.boundary_vertices[i] == v) return i;
      return std::size_t(999);
    };
    CHECK(bc[pos(1)] == bc[pos(4)]);
    CHECK(bc[pos(2)] == bc[pos(3)]);
  }

  Mesh fine = refine_uniform(notch_mesh());
  const long trials = 5000;
  std::size_t i0 = 0, i1 = 0;
  for (std::size_t a = 0; a < fine.boundary_vertices.size(); ++a)
    for (std::size_t b = 0; b < fine.boundary_vertices.size(); ++b) {
      const double dx = std::abs(fine.vertices.at(fine.boundary_vertices[a], 0) -
                                 fine.vertices.at(fine.boundary_vertices[b], 0));
      if (a != b && std::abs(dx - 0.2) < 0.05 && i0 == i1) {
        i0 = a;
        i1 = b;
      }
    }
  REQUIRE(i0 != i1);
  std::vector<double> s0(trials), s1(trials);
  double m0 = 0.0, m1 = 0.0;
  for (long t = 0; t < trials; ++t) {
    Rng rng = Rng::stream(77, static_cast<std::uint64_t>(t));
    auto bc = boundary_gp_sample(fine, 0.2, rng);
    s0[static_cast<std::size_t>(t)] = bc[i0];
    s1[static_cast<std::size_t>(t)] = bc[i1];
    m0 += bc[i0];
    m1 += bc[i1];
  }
  m0 /= trials;
  m1 /= trials;
  double var0 = 0.0, cov = 0.0;
  for (long t = 0; t < trials; ++t) {
    var0 += (s0[static_cast<std::size_t>(t)] - m0) * (s0[static_cast<std::size_t>(t)] - m0);
    cov += (s0[static_cast<std::size_t>(t)] - m0) * (s1[static_cast<std::size_t>(t)] - m1);
  }
  var0 /= trials;
  cov /= trials;
  CHECK(var0 > 0.9);
  CHECK(var0 < 1.1);
  const double dx = std::abs(fine.vertices.at(fine.boundary_vertices[i0], 0) -
                             fine.vertices.at(fine.boundary_vertices[i1], 0));
  const double expected = std::exp(-dx * dx / (2.0 * 0.2 * 0.2));
  CHECK(std::abs(cov / var0 - expected) < 0.06);
}

TEST_CASE("FEM solver: constants, linear exactness, self-convergence, residual") {
  Mesh mesh = structured_triangle_mesh(kRefTriV0, kRefTriV1, kRefTriV2, 8);

  std::vector<double> bc_const(mesh.boundary_vertices.size(), 2.5);
  auto h_const = solve_darcy_fem(mesh, 0.1, 0.0, bc_const);
  for (double v : h_const) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

  std::vector<double> bc_lin;
  for (int v : mesh.boundary_vertices)
    bc_lin.push_back(mesh.vertices.at(v, 0) + mesh.vertices.at(v, 1));
  auto h_lin = solve_darcy_fem(mesh, 0.1, 0.0, bc_lin);
  for (std::int64_t v = 0; v < mesh.vertex_count(); ++v)
    CHECK(h_lin[static_cast<std::size_t>(v)] ==
          doctest::Approx(mesh.vertices.at(v, 0) + mesh.vertices.at(v, 1)).epsilon(1e-10));

  CHECK(fem_residual_max(mesh, 0.1, 0.0, bc_lin, h_lin) < 1e-8);

  Mesh m0 = structured_triangle_mesh(kRefTriV0, kRefTriV1, kRefTriV2, 4);
  Mesh m1 = refine_uniform(m0);
  Mesh m2 = refine_uniform(m1);
  auto bc_of = [](const Mesh& m) {
    std::vector<double> bc;
    for (int v : m.boundary_vertices) bc.push_back(std::sin(2.0 * m.vertices.at(v, 0)));
    return bc;
  };
  auto h0 = solve_darcy_fem(m0, 0.1, -1.0, bc_of(m0));
  auto h1 = solve_darcy_fem(m1, 0.1, -1.0, bc_of(m1));
  auto h2 = solve_darcy_fem(m2, 0.1, -1.0, bc_of(m2));
  double e0 = 0.0, e1 = 0.0;
  for (std::int64_t v = 0; v < m0.vertex_count(); ++v) {
    e0 += std::pow(h0[static_cast<std::size_t>(v)] - h2[static_cast<std::size_t>(v)], 2);
    e1 += std::pow(h1[static_cast<std::size_t>(v)] - h2[static_cast<std::size_t>(v)], 2);
  }
  // order-2 self-convergence against the twice-refined reference
  CHECK(std::sqrt(e0 / e1) > 2.5);
}

TEST_CASE("dataset build: sizes, determinism, prefix property, format round trip") {
  DatasetSpec spec;
  spec.problem = Problem::advection1;
  spec.m_train = 10;
  spec.m_test = 4;
  spec.resolution = 40;
  spec.seed = 7;
  spec.t_end = 0.5;
  auto [train, test] = build_dataset(spec);
  CHECK(train.sample_count() == 10);
  CHECK(test.sample_count() == 4);
  CHECK(train.grid_size() == 40);

  std::vector<double> u0, ut;
  for (long m = 0; m < 10; ++m) {
    Rng rng = Rng::stream(7, static_cast<std::uint64_t>(m));
    const double center = rng.uniform(0.3, 0.7);
    const double width = rng.uniform(0.3, 0.6);
    const double height = rng.uniform(1.0, 2.0);
    advection_pair(center, width, height, 0.5, 40, u0, ut);
    for (long j = 0; j < 40; ++j) {
      CHECK(train.inputs.at(m, j, 0) == u0[static_cast<std::size_t>(j)]);
      CHECK(train.outputs.at(m, j, 0) == ut[static_cast<std::size_t>(j)]);
    }
  }

  DatasetSpec bigger = spec;
  bigger.m_train = 14;
  auto [train2, test2] = build_dataset(bigger);
  for (long m = 0; m < 10; ++m)
    for (long j = 0; j < 40; ++j)
      CHECK(train2.inputs.at(m, j, 0) == train.inputs.at(m, j, 0));

  const std::string dir = ".";
  auto [p1, p2] = build_and_write_dataset(spec, dir);
  const std::uint64_t h1 = fnv1a_file(p1);
  auto [p3, p4] = build_and_write_dataset(spec, dir);
  CHECK(fnv1a_file(p3) == h1);

  Dataset back = read_dataset(p1);
  CHECK(back.sample_count() == 10);
  CHECK(back.problem == "advection1");
  CHECK(back.grid.data == train.grid.data);
  CHECK(back.inputs.data == train.inputs.data);
  CHECK(back.outputs.data == train.outputs.data);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("triangular dataset encodes boundary data as two channels") {
  DatasetSpec spec;
  spec.problem = Problem::darcy_tri;
  spec.m_train = 3;
  spec.m_test = 1;
  spec.mesh_subdiv = 6;
  spec.seed = 1;
  auto [train, test] = build_dataset(spec);
  Mesh mesh = dataset_mesh(spec);
  CHECK(train.d_u == 2);
  CHECK(train.grid_size() == mesh.vertex_count());
  std::vector<bool> on_boundary(static_cast<std::size_t>(mesh.vertex_count()), false);
  for (int v : mesh.boundary_vertices) on_boundary[static_cast<std::size_t>(v)] = true;
  for (long m = 0; m < 3; ++m)
    for (std::int64_t v = 0; v < mesh.vertex_count(); ++v) {
      const double mask = train.inputs.at(m, v, 1);
      CHECK(mask == (on_boundary[static_cast<std::size_t>(v)] ? 1.0 : 0.0));
      if (!on_boundary[static_cast<std::size_t>(v)])
        CHECK(train.inputs.at(m, v, 0) == 0.0);
      else
        CHECK(train.outputs.at(m, v, 0) == train.inputs.at(m, v, 0));
    }
}

TEST_CASE("darcy pwc dataset: values and zero Dirichlet boundary") {
  DatasetSpec spec;
  spec.problem = Problem::darcy_pwc;
  spec.m_train = 2;
  spec.m_test = 1;
  spec.resolution = 15;
  spec.seed = 2;
  auto [train, test] = build_dataset(spec);
  CHECK(train.grid_size() == 15 * 15);
  for (std::int64_t i = 0; i < train.inputs.size(); ++i)
    CHECK((train.inputs[i] == 3.0 || train.inputs[i] == 12.0));
  for (long m = 0; m < 2; ++m)
    for (long ix = 0; ix < 15; ++ix) CHECK(train.outputs.at(m, ix, 0) == 0.0);
}

TEST_CASE("mixed-boundary darcy solve is y-independent for constant K") {
  const long n = 12;
  std::vector<double> K(static_cast<std::size_t>(n * n), 1.0);
  auto h = solve_darcy_mixed(K, 1.0, n);
  for (long iy = 0; iy < n; ++iy) {
    CHECK(h[static_cast<std::size_t>(iy * n)] == 0.0);
    CHECK(h[static_cast<std::size_t>(iy * n + n - 1)] == 0.0);
  }
  for (long iy = 0; iy < n; ++iy)
    for (long ix = 1; ix < n - 1; ++ix) {
      CHECK(h[static_cast<std::size_t>(iy * n + ix)] > 0.0);
      CHECK(h[static_cast<std::size_t>(iy * n + ix)] ==
            doctest::Approx(h[static_cast<std::size_t>(ix)]).epsilon(1e-10));
    }
}

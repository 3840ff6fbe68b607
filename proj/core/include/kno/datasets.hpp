#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kno/mesh.hpp"
#include "kno/rng.hpp"
#include "kno/tensor.hpp"

namespace kno {

enum class Problem { burgers, advection1, darcy_pwc, darcy_cont, darcy_tri, darcy_tri_notch };

const char* problem_name(Problem p);
Problem problem_from_name(const std::string& name);
std::vector<std::string> problem_names();

struct DatasetSpec {
  Problem problem = Problem::burgers;
  long m_train = 1000;
  long m_test = 200;
  long resolution = 128;  // 1-D grid size / 2-D nodes per side
  long mode_grid = 0;     // 1-D sampler mode budget (0 = resolution); lets a
                          // super-resolution run reuse the coarse-grid draw
  std::uint64_t seed = 0;
  // problem-specific knobs
  double nu = 0.1;           // Burgers viscosity
  double t_end = 1.0;        // Burgers end time (advection uses 0.5)
  std::string mesh_path;     // external mesh for the triangular problems
  long mesh_subdiv = 19;     // darcy_tri structured subdivision (210 vertices at 19)
  long notch_refine = 3;     // uniform refinements of the five-triangle notch mesh
  double gp_length = 0.2;    // boundary GP length scale (triangular problems)
  double cont_length = 0.1;  // log-permeability GP length scale (darcy_cont)
};

/// Function pairs sampled on a shared training grid.
struct Dataset {
  Tensor grid;     // [N_T, d]
  Tensor inputs;   // [M, N_T, d_u], node-major within a sample
  Tensor outputs;  // [M, N_T, d_y]
  int d = 1, d_u = 1, d_y = 1;
  std::string problem;

  long sample_count() const { return inputs.shape[0]; }
  long grid_size() const { return grid.shape[0]; }
};

// ---- samplers and solvers ----------------------------------------------------

/// Periodic Gaussian field on n grid points x_j = j/n with covariance
/// scale (-Laplacian + shift I)^(-power): Fourier mode k has standard
/// deviation sqrt(scale) / ((2 pi k)^2 + shift)^(power/2). n must be a power
/// of two. Returns n values (no duplicate endpoint).
std::vector<double> sample_periodic_gp_1d(long n, double scale, double shift, double power,
                                          Rng& rng);

/// Evaluates the same field stored as Fourier data at an arbitrary grid size
/// (used for super-resolution references). The returned sampler draws the
/// random modes once; evaluate(n) gives values on x_j = j/n.
struct PeriodicField1d {
  std::vector<double> a;  // cosine coefficients, index k
  std::vector<double> b;  // sine coefficients
  std::vector<double> evaluate(long n) const;
};
PeriodicField1d sample_periodic_field_1d(long n_modes_grid, double scale, double shift,
                                         double power, Rng& rng);

/// Viscous Burgers on the periodic unit interval, pseudo-spectral with 2/3
/// dealiasing and integrating-factor RK4; internal resolution is 4x the input
/// and the result is subsampled back. dt_scale < 1 refines the step (used by
/// the self-convergence check).
std::vector<double> solve_burgers(const std::vector<double>& u0, double nu, double t_end,
                                  double dt_scale = 1.0);

/// Square-wave advection at unit speed: u0 and the exact solution at time t
/// on the periodic grid x_j = j/n.
void advection_pair(double center, double width, double height, double t, long n,
                    std::vector<double>& u0, std::vector<double>& ut);

/// Piecewise-constant permeability: thresholded zero-mean Gaussian field.
double darcy_pwc_threshold(double mu);  // >= 0 -> 12, < 0 -> 3
/// Gaussian field N(0, (-Laplacian + 9 I)^(-2)) on the n x n unit-square grid
/// (boundary anchored), returned row-major with x fastest.
std::vector<double> darcy_grf_2d(long n, Rng& rng);
std::vector<double> darcy_pwc_field(long n, Rng& rng);

/// 5-point finite differences with harmonic face averaging, zero Dirichlet
/// boundary everywhere; K and the result live on the n x n node grid.
std::vector<double> solve_darcy_grid(const std::vector<double>& K, double f, long n);
/// Max interior residual |A h - f| relative to |f| (solver check).
double darcy_grid_residual_max(const std::vector<double>& K, const std::vector<double>& h,
                               double f, long n);

/// Same operator with Dirichlet h=0 on left/right and zero-flux top/bottom
/// (darcy_cont boundary layout).
std::vector<double> solve_darcy_mixed(const std::vector<double>& K, double f, long n);

/// Draws h(x) ~ GP(0, exp(-(x-x')^2 / (2 l^2))) over the boundary vertex
/// x-coordinates; vertices sharing an x-coordinate receive equal values.
/// Returns one value per mesh.boundary_vertices entry.
std::vector<double> boundary_gp_sample(const Mesh& mesh, double l, Rng& rng);

/// P1 finite elements for -div(K grad h) = f with Dirichlet data on the
/// boundary vertices (aligned with mesh.boundary_vertices). Returns h at all
/// vertices.
std::vector<double> solve_darcy_fem(const Mesh& mesh, double K, double f,
                                    const std::vector<double>& bc);
double fem_residual_max(const Mesh& mesh, double K, double f, const std::vector<double>& bc,
                        const std::vector<double>& h);

// ---- dataset assembly ---------------------------------------------------------

/// Generates m_train + m_test samples with independent per-sample RNG streams
/// (stream = seed + sample index), split in order.
std::pair<Dataset, Dataset> build_dataset(const DatasetSpec& spec);

/// The mesh a triangular-problem spec resolves to (shared with presets).
Mesh dataset_mesh(const DatasetSpec& spec);

/// File format: one JSON header line {M, N_T, d, d_u, d_y, problem} then
/// little-endian float64 blocks: grid (N_T*d), inputs (M*N_T*d_u), outputs
/// (M*N_T*d_y).
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

/// Writes <problem>_train.knod and <problem>_test.knod under out_dir;
/// returns the two paths.
std::pair<std::string, std::string> build_and_write_dataset(const DatasetSpec& spec,
                                                            const std::string& out_dir);

}  // namespace kno

#pragma once

#include <string>
#include <vector>

#include "kno/model.hpp"
#include "kno/presets.hpp"

namespace kno {

/// 100 * ||pred - truth||_2 / ||truth||_2 for one prediction/target pair.
double relative_l2_percent(const Tensor& pred, const Tensor& truth);

/// Empirical neural tangent kernel spectrum: J J^T over a probe batch with
/// the outputs restricted to a few grid points.
struct NtkReport {
  std::vector<double> eigenvalues;  // descending
  double lambda_max = 0.0;
  double lambda_min_plus = 0.0;  // smallest eigenvalue above 1e-12 * lambda_max
  double condition_proxy = 0.0;  // lambda_max / lambda_min_plus
  std::string label;
  long n_outputs = 0;
  long n_params = 0;
};

/// probe_inputs_cf: [B, d_u, N_T]. Outputs are restricted to n_probe_points
/// evenly strided grid points. One backward pass per output row.
NtkReport ntk_spectrum(KnoModel& model, const Tensor& probe_inputs_cf, long n_probe_points,
                       const std::string& label);

void write_ntk_report(const NtkReport& report, const std::string& json_path,
                      const std::string& csv_path);

/// The pinned kernel-comparison probe: a small 1-D setup (p=q=8, depth 2,
/// 16 quadrature points, 32-point grid) with Gaussian-field probe inputs.
/// kernel_config is "wendland-sm" or "gaussian-all". The default probe is
/// 4 inputs x 4 output points: large enough to expose the spectral-decay
/// difference between kernel families, small enough that the compactly
/// supported config's spectrum stays resolved above the 1e-12 cutoff.
NtkReport ntk_probe_run(const std::string& kernel_config, std::uint64_t seed = 0,
                        long probe_samples = 4, long probe_points = 4);

/// Per-layer fraction of zeros in the Wendland kernel evaluation matrices.
struct SparsityReport {
  std::vector<double> per_layer;  // in [0,1]
  double mean = 0.0;
};

SparsityReport sparsity_report(const KnoModel& model);
void write_sparsity_report(const SparsityReport& report, const std::string& json_path,
                           const std::string& csv_path);

// ---- ablations ---------------------------------------------------------------

enum class AblationAxis { q_ratio, n_quad, depth };
AblationAxis ablation_axis_from_name(const std::string& name);

struct AblationRow {
  double value;
  double train_err_pct;
  double test_err_pct;
  std::int64_t params;
  double seconds;
};

/// Trains one model per axis value at the preset's (desk) scale and records
/// final train/test relative errors.
std::vector<AblationRow> ablation_sweep(const RunPreset& base, AblationAxis axis,
                                        const std::vector<double>& values);

/// CSV columns: value, train_err, test_err, params, seconds.
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

// ---- super-resolution ----------------------------------------------------------

struct SuperresReport {
  long factor = 1;
  double coarse_err_pct = 0.0;       // standard evaluation on the training grid
  double fine_err_pct = -1.0;        // against regenerated fine references (-1 if n/a)
  double restriction_max_abs = 0.0;  // |fine prediction restricted - coarse prediction|
  long n_fine = 0;
};

/// Evaluates a trained model at a factor-refined grid. Fine references are
/// regenerated with the dataset solvers for the grid-based problems; the
/// restriction-consistency check runs for every problem.
SuperresReport superres_eval(KnoModel& model, const RunPreset& preset, const Dataset& train_data,
                             const Dataset& test_data, long factor);

void write_superres_report(const SuperresReport& report, const std::string& json_path,
                           const std::string& csv_path);

}  // namespace kno

#include "kno/diagnostics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kno/errors.hpp"
#include "kno/io.hpp"

namespace kno {

using nlohmann::json;

double relative_l2_percent(const Tensor& pred, const Tensor& truth) {
  if (!pred.same_shape(truth)) throw ContractViolation("relative_l2_percent: shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    num += d * d;
    den += truth[i] * truth[i];
  }
  if (den <= 0.0) throw ContractViolation("relative_l2_percent: truth has zero norm");
  return 100.0 * std::sqrt(num / den);
}

NtkReport ntk_spectrum(KnoModel& model, const Tensor& probe_inputs_cf, long n_probe_points,
                       const std::string& label) {
  if (probe_inputs_cf.rank() != 3)
    throw ContractViolation("ntk_spectrum: probe inputs must be [B, d_u, N_T]");
  const std::int64_t B = probe_inputs_cf.shape[0];
  const std::int64_t nt = model.train_grid.shape[0];
  n_probe_points = std::min<long>(n_probe_points, nt);

  // Restrict outputs to evenly strided training-grid points.
  Tensor probe_pts = Tensor::zeros({n_probe_points, model.config.d});
  for (long k = 0; k < n_probe_points; ++k) {
    const std::int64_t idx = (static_cast<std::int64_t>(k) * nt) / n_probe_points;
    for (int a = 0; a < model.config.d; ++a) probe_pts.at(k, a) = model.train_grid.at(idx, a);
  }

  const std::int64_t n_params = count_parameters(model);
  const std::int64_t rows = B * model.config.d_y * n_probe_points;
  if (rows * n_params > 40'000'000)
    throw ContractViolation("ntk_spectrum: probe too large (" + std::to_string(rows) + " outputs x " +
                            std::to_string(n_params) + " parameters); shrink the probe");

  ForwardGraph fg = build_forward(model, probe_inputs_cf, &probe_pts);
  Tape& t = *fg.tape;
  auto registry = model_parameters(model);

  Eigen::MatrixXd J(rows, n_params);
  for (std::int64_t o = 0; o < rows; ++o) {
    VarId comp = pick(t, fg.prediction, o);
    auto grads = grad(t, comp, fg.leaves);
    std::int64_t col = 0;
    for (std::size_t k = 0; k < registry.size(); ++k) {
      const Tensor& g = grads.at(fg.leaves[k]);
      for (std::int64_t i = 0; i < g.size(); ++i) J(o, col++) = g[i];
    }
  }

  Eigen::MatrixXd ntk = J * J.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ntk);

  NtkReport report;
  report.label = label;
  report.n_outputs = rows;
  report.n_params = n_params;
  report.eigenvalues.resize(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i)
    report.eigenvalues[static_cast<std::size_t>(i)] = es.eigenvalues()(rows - 1 - i);
  report.lambda_max = report.eigenvalues.front();
  report.lambda_min_plus = report.lambda_max;
  for (double ev : report.eigenvalues)
    if (ev > 1e-12 * report.lambda_max) report.lambda_min_plus = ev;
  report.condition_proxy = report.lambda_max / report.lambda_min_plus;
  return report;
}

NtkReport ntk_probe_run(const std::string& kernel_config, std::uint64_t seed, long probe_samples,
                        long probe_points) {
  RunPreset preset = get_preset("burgers-desk");
  preset.arch.p = 8;
  preset.arch.q = 8;
  preset.arch.L_minus_1 = 2;
  preset.x_q_budget = 16;
  preset.data.resolution = 32;
  if (kernel_config == "gaussian-all") {
    preset.arch.block_kind = KernelKind::gaussian;
    preset.arch.final_kind = KernelKind::gaussian;
  } else if (kernel_config != "wendland-sm") {
    throw ContractViolation("ntk_probe_run: kernel-config must be wendland-sm or gaussian-all");
  }
  Rng rng(seed);
  KnoModel model = build_preset_model(preset, rng);

  Tensor probe = Tensor::zeros({probe_samples, 1, preset.data.resolution});
  for (long m = 0; m < probe_samples; ++m) {
    Rng srng = Rng::stream(seed, static_cast<std::uint64_t>(m));
    auto u = sample_periodic_gp_1d(preset.data.resolution, 625.0, 25.0, 2.0, srng);
    for (long j = 0; j < preset.data.resolution; ++j)
      probe.at(m, 0, j) = u[static_cast<std::size_t>(j)];
  }
  return ntk_spectrum(model, probe, probe_points, kernel_config);
}

void write_ntk_report(const NtkReport& report, const std::string& json_path,
                      const std::string& csv_path) {
  json j;
  j["label"] = report.label;
  j["lambda_max"] = report.lambda_max;
  j["lambda_min_plus"] = report.lambda_min_plus;
  j["condition_proxy"] = report.condition_proxy;
  j["n_outputs"] = report.n_outputs;
  j["n_params"] = report.n_params;
  j["eigenvalues"] = report.eigenvalues;
  write_file_atomic(json_path, j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "index,eigenvalue\n";
  csv.precision(17);
  for (std::size_t i = 0; i < report.eigenvalues.size(); ++i)
    csv << i << "," << report.eigenvalues[i] << "\n";
  write_file_atomic(csv_path, csv.str());
}

SparsityReport sparsity_report(const KnoModel& model) {
  SparsityReport report;
  bool any = false;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    if (model.blocks[l].kind != KernelKind::wendland_c4) continue;
    any = true;
    report.per_layer.push_back(block_gram_zero_fraction(model, static_cast<int>(l)));
  }
  if (!any)
    throw ContractViolation("sparsity_report: model has no Wendland blocks");
  double s = 0.0;
  for (double v : report.per_layer) s += v;
  report.mean = s / static_cast<double>(report.per_layer.size());
  return report;
}

void write_sparsity_report(const SparsityReport& report, const std::string& json_path,
                           const std::string& csv_path) {
  json j;
  j["per_layer"] = report.per_layer;
  j["mean"] = report.mean;
  write_file_atomic(json_path, j.dump(2) + "\n");
  std::ostringstream csv;
  csv << "layer,zero_fraction\n";
  csv.precision(17);
  for (std::size_t i = 0; i < report.per_layer.size(); ++i)
    csv << i << "," << report.per_layer[i] << "\n";
  write_file_atomic(csv_path, csv.str());
}

// ---- ablations ----------------------------------------------------------------

AblationAxis ablation_axis_from_name(const std::string& name) {
  if (name == "q_ratio") return AblationAxis::q_ratio;
  if (name == "n_quad") return AblationAxis::n_quad;
  if (name == "depth") return AblationAxis::depth;
  throw ContractViolation("unknown ablation axis: " + name + " (q_ratio | n_quad | depth)");
}

std::vector<AblationRow> ablation_sweep(const RunPreset& base, AblationAxis axis,
                                        const std::vector<double>& values) {
  if (values.empty()) throw ContractViolation("ablation_sweep: no values");
  std::vector<AblationRow> rows;
  for (double v : values) {
    RunPreset preset = base;
    switch (axis) {
      case AblationAxis::q_ratio: {
        if (v <= 0.0 || v > 1.0)
          throw ContractViolation("ablation_sweep: q_ratio values must be in (0,1]");
        preset.arch.q = std::max(1, static_cast<int>(std::lround(v * preset.arch.p)));
        break;
      }
      case AblationAxis::n_quad: {
        if (v < 1.0) throw ContractViolation("ablation_sweep: n_quad values must be >= 1");
        preset.x_q_budget = static_cast<long>(std::lround(v));
        break;
      }
      case AblationAxis::depth: {
        if (v < 1.0) throw ContractViolation("ablation_sweep: depth values must be >= 1");
        preset.arch.L_minus_1 = static_cast<int>(std::lround(v));
        break;
      }
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto [train_data, test_data] = build_dataset(preset.data);
    Rng rng(preset.train.seed);
    KnoModel model = build_preset_model(preset, rng);
    freeze_train(model, train_data, preset.train);
    train(model, train_data, test_data, preset.train);

    Normalizer nz = fit_normalizer(to_channels_first(train_data.inputs),
                                   to_channels_first(train_data.outputs),
                                   preset.train.normalization == "zscore");
    AblationRow row;
    row.value = v;
    row.train_err_pct = evaluate_model(model, train_data, nz);
    row.test_err_pct = evaluate_model(model, test_data, nz);
    row.params = count_parameters(model);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ostringstream csv;
  csv << "value,train_err,test_err,params,seconds\n";
  csv.precision(12);
  for (const auto& r : rows)
    csv << r.value << "," << r.train_err_pct << "," << r.test_err_pct << "," << r.params << ","
        << r.seconds << "\n";
  write_file_atomic(path, csv.str());
}

// ---- super-resolution -----------------------------------------------------------

namespace {

bool is_power_of_two(long v) { return v >= 1 && (v & (v - 1)) == 0; }

struct FineGrid {
  Tensor points;                        // [N_fine, d]
  std::vector<std::int64_t> restrict_idx;  // coarse node -> fine node
};

FineGrid refine_grid(const RunPreset& preset, const Tensor& coarse, long factor) {
  FineGrid fg;
  switch (preset.problem) {
    case Problem::burgers:
    case Problem::advection1: {
      const long n = coarse.shape[0];
      const long nf = n * factor;
      fg.points = Tensor::zeros({nf, 1});
      for (long j = 0; j < nf; ++j)
        fg.points.at(j, 0) = static_cast<double>(j) / static_cast<double>(nf);
      for (long j = 0; j < n; ++j) fg.restrict_idx.push_back(j * factor);
      return fg;
    }
    case Problem::darcy_pwc:
    case Problem::darcy_cont: {
      const long n = static_cast<long>(std::lround(std::sqrt(static_cast<double>(coarse.shape[0]))));
      const long nf = factor * (n - 1) + 1;
      fg.points = Tensor::zeros({nf * nf, 2});
      for (long iy = 0; iy < nf; ++iy)
        for (long ix = 0; ix < nf; ++ix) {
          fg.points.at(iy * nf + ix, 0) = static_cast<double>(ix) / static_cast<double>(nf - 1);
          fg.points.at(iy * nf + ix, 1) = static_cast<double>(iy) / static_cast<double>(nf - 1);
        }
      for (long iy = 0; iy < n; ++iy)
        for (long ix = 0; ix < n; ++ix)
          fg.restrict_idx.push_back((factor * iy) * nf + factor * ix);
      return fg;
    }
    case Problem::darcy_tri:
    case Problem::darcy_tri_notch: {
      if (!is_power_of_two(factor))
        throw ContractViolation("superres_eval: mesh problems need a power-of-two factor");
      Mesh mesh = dataset_mesh(preset.data);
      for (long f = factor; f > 1; f /= 2) mesh = refine_uniform(mesh);
      fg.points = mesh.vertices;
      // refine_uniform keeps the original vertices first
      for (std::int64_t v = 0; v < coarse.shape[0]; ++v) fg.restrict_idx.push_back(v);
      return fg;
    }
  }
  throw ContractViolation("superres_eval: unhandled problem");
}

// Output z-score statistics live on the coarse grid; interpolate them to the
// fine points (linear in 1-D, bilinear on 2-D grids).
bool interp_stats(const RunPreset& preset, const Normalizer& nz, const Tensor& fine_pts,
                  long coarse_n, Tensor& mean_f, Tensor& scale_f) {
  if (!nz.active) return false;
  const std::int64_t nf = fine_pts.shape[0];
  const std::int64_t dy = nz.out_mean.shape[0];
  mean_f = Tensor::zeros({dy, nf});
  scale_f = Tensor::full({dy, nf}, 1.0);
  switch (preset.problem) {
    case Problem::burgers:
    case Problem::advection1: {
      const long n = coarse_n;
      for (std::int64_t i = 0; i < nf; ++i) {
        const double xj = fine_pts.at(i, 0) * static_cast<double>(n);
        const long j0 = static_cast<long>(std::floor(xj)) % n;
        const long j1 = (j0 + 1) % n;  // periodic wrap
        const double t = xj - std::floor(xj);
        for (std::int64_t c = 0; c < dy; ++c) {
          mean_f.at(c, i) = (1 - t) * nz.out_mean.at(c, j0) + t * nz.out_mean.at(c, j1);
          scale_f.at(c, i) = (1 - t) * nz.out_scale.at(c, j0) + t * nz.out_scale.at(c, j1);
        }
      }
      return true;
    }
    case Problem::darcy_pwc:
    case Problem::darcy_cont: {
      const long n = coarse_n;
      for (std::int64_t i = 0; i < nf; ++i) {
        const double xs = fine_pts.at(i, 0) * static_cast<double>(n - 1);
        const double ys = fine_pts.at(i, 1) * static_cast<double>(n - 1);
        const long ix = std::min<long>(n - 2, static_cast<long>(std::floor(xs)));
        const long iy = std::min<long>(n - 2, static_cast<long>(std::floor(ys)));
        const double tx = xs - ix, ty = ys - iy;
        for (std::int64_t c = 0; c < dy; ++c) {
          auto at = [&](long jx, long jy, const Tensor& f) { return f.at(c, jy * n + jx); };
          mean_f.at(c, i) = (1 - tx) * (1 - ty) * at(ix, iy, nz.out_mean) +
                            tx * (1 - ty) * at(ix + 1, iy, nz.out_mean) +
                            (1 - tx) * ty * at(ix, iy + 1, nz.out_mean) +
                            tx * ty * at(ix + 1, iy + 1, nz.out_mean);
          scale_f.at(c, i) = (1 - tx) * (1 - ty) * at(ix, iy, nz.out_scale) +
                             tx * (1 - ty) * at(ix + 1, iy, nz.out_scale) +
                             (1 - tx) * ty * at(ix, iy + 1, nz.out_scale) +
                             tx * ty * at(ix + 1, iy + 1, nz.out_scale);
        }
      }
      return true;
    }
    default:
      return false;  // mesh problems skip the fine-error metric
  }
}

}  // namespace

SuperresReport superres_eval(KnoModel& model, const RunPreset& preset, const Dataset& train_data,
                             const Dataset& test_data, long factor) {
  if (factor < 1) throw ContractViolation("superres_eval: factor must be >= 1");
  SuperresReport report;
  report.factor = factor;

  Normalizer nz = fit_normalizer(to_channels_first(train_data.inputs),
                                 to_channels_first(train_data.outputs),
                                 model.config.normalization == "zscore");
  Tensor test_in_n = normalize_inputs(nz, to_channels_first(test_data.inputs));
  Tensor test_out = to_channels_first(test_data.outputs);

  // Coarse path: the standard evaluation.
  ForwardGraph coarse_fg = build_forward(model, test_in_n);
  Tensor coarse_pred_n = coarse_fg.tape->val(coarse_fg.prediction);
  report.coarse_err_pct =
      mean_relative_l2_percent(denormalize_outputs(nz, coarse_pred_n), test_out);
  if (factor == 1) {
    report.fine_err_pct = report.coarse_err_pct;
    report.n_fine = model.train_grid.shape[0];
    return report;
  }

  FineGrid fine = refine_grid(preset, model.train_grid, factor);
  report.n_fine = fine.points.shape[0];
  ForwardGraph fine_fg = build_forward(model, test_in_n, &fine.points);
  const Tensor& fine_pred_n = fine_fg.tape->val(fine_fg.prediction);

  // Restriction consistency in the model's output space (normalization is a
  // per-coarse-point map and cancels on the shared points).
  const std::int64_t M = fine_pred_n.shape[0];
  const std::int64_t dy = fine_pred_n.shape[1];
  double worst = 0.0;
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < dy; ++c)
      for (std::size_t j = 0; j < fine.restrict_idx.size(); ++j)
        worst = std::max(worst,
                         std::abs(fine_pred_n.at(m, c, fine.restrict_idx[j]) -
                                  coarse_pred_n.at(m, c, static_cast<std::int64_t>(j))));
  report.restriction_max_abs = worst;

  // Fine references for the problems whose generators are resolution
  // consistent under a fixed seed.
  DatasetSpec fine_spec = preset.data;
  bool have_refs = false;
  switch (preset.problem) {
    case Problem::burgers:
    case Problem::advection1:
      fine_spec.mode_grid = preset.data.resolution;
      fine_spec.resolution = preset.data.resolution * factor;
      have_refs = true;
      break;
    case Problem::darcy_pwc:
      fine_spec.resolution = factor * (preset.data.resolution - 1) + 1;
      have_refs = true;
      break;
    default:
      break;
  }
  if (have_refs) {
    auto [fine_train, fine_test] = build_dataset(fine_spec);
    (void)fine_train;
    Tensor mean_f, scale_f;
    Tensor fine_pred = fine_pred_n;
    if (interp_stats(preset, nz, fine.points, preset.data.resolution, mean_f, scale_f)) {
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t c = 0; c < dy; ++c)
          for (std::int64_t i = 0; i < fine.points.shape[0]; ++i)
            fine_pred.at(m, c, i) = fine_pred_n.at(m, c, i) * scale_f.at(c, i) + mean_f.at(c, i);
    }
    report.fine_err_pct =
        mean_relative_l2_percent(fine_pred, to_channels_first(fine_test.outputs));
  }
  return report;
}

void write_superres_report(const SuperresReport& report, const std::string& json_path,
                           const std::string& csv_path) {
  json j;
  j["factor"] = report.factor;
  j["coarse_err_pct"] = report.coarse_err_pct;
  j["fine_err_pct"] = report.fine_err_pct;
  j["restriction_max_abs"] = report.restriction_max_abs;
  j["n_fine"] = report.n_fine;
  write_file_atomic(json_path, j.dump(2) + "\n");
  std::ostringstream csv;
  csv << "factor,coarse_err_pct,fine_err_pct,restriction_max_abs,n_fine\n";
  csv.precision(12);
  csv << report.factor << "," << report.coarse_err_pct << "," << report.fine_err_pct << ","
      << report.restriction_max_abs << "," << report.n_fine << "\n";
  write_file_atomic(csv_path, csv.str());
}

}  // namespace kno

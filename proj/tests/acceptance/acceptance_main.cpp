// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code 0 iff all pass.
//
// `--smoke` shrinks the training runs for a quick plumbing check; smoke mode
// never reports success (exit code 2) since it does not run the real
// configurations.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kno/autodiff.hpp"
#include "kno/datasets.hpp"
#include "kno/diagnostics.hpp"
#include "kno/interpolation.hpp"
#include "kno/io.hpp"
#include "kno/model.hpp"
#include "kno/presets.hpp"
#include "kno/quadrature.hpp"
#include "kno/training.hpp"

using namespace kno;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

bool g_smoke = false;
int g_index = 0;
int g_failures = 0;

struct Criterion {
  std::string name;
  bool ok = true;
  std::string detail;
  double seconds = 0.0;
};

void report(const Criterion& c) {
  ++g_index;
  if (!c.ok) ++g_failures;
  std::printf("[%2d] %-4s %-28s (%.1f s)%s%s\n", g_index, c.ok ? "PASS" : "FAIL", c.name.c_str(),
              c.seconds, c.detail.empty() ? "" : "  ", c.detail.c_str());
  std::fflush(stdout);
}

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

// ---- criterion 1: quadrature exactness ---------------------------------------

double binomial(int n, int k) {
  double v = 1.0;
  for (int i = 0; i < k; ++i) v = v * (n - i) / (i + 1);
  return v;
}

double unit_simplex_moment(int a, int b) {
  double v = 1.0;
  for (int k = 1; k <= a + b + 2; ++k) v /= k;
  for (int k = 1; k <= a; ++k) v *= k;
  for (int k = 1; k <= b; ++k) v *= k;
  return v;
}

double exact_monomial_over_triangle(double x0, double y0, double x1, double y1, double x2,
                                    double y2, int i, int j) {
  const double a11 = x1 - x0, a12 = x2 - x0;
  const double a21 = y1 - y0, a22 = y2 - y0;
  const double jac = std::abs(a11 * a22 - a12 * a21);
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

double subdivision_oracle(double x0, double y0, double x1, double y1, double x2, double y2, int i,
                          int j, int depth) {
  if (depth == 0) return exact_monomial_over_triangle(x0, y0, x1, y1, x2, y2, i, j);
  const double mx01 = 0.5 * (x0 + x1), my01 = 0.5 * (y0 + y1);
  const double mx12 = 0.5 * (x1 + x2), my12 = 0.5 * (y1 + y2);
  const double mx20 = 0.5 * (x2 + x0), my20 = 0.5 * (y2 + y0);
  return subdivision_oracle(x0, y0, mx01, my01, mx20, my20, i, j, depth - 1) +
         subdivision_oracle(x1, y1, mx12, my12, mx01, my01, i, j, depth - 1) +
         subdivision_oracle(x2, y2, mx20, my20, mx12, my12, i, j, depth - 1) +
         subdivision_oracle(mx01, my01, mx12, my12, mx20, my20, i, j, depth - 1);
}

Criterion check_quadrature() {
  Criterion c{"quadrature exactness"};
  const auto t0 = clk::now();
  double worst = 0.0;
  for (int n = 1; n <= 20; ++n) {
    QuadRule r = gauss_legendre(n, -1.0, 1.0);
    for (int k = 0; k <= 2 * n - 1; ++k) {
      const double exact = (k % 2 == 1) ? 0.0 : 2.0 / (k + 1);
      const double got = integrate(r, [k](const double* x) { return std::pow(x[0], k); });
      worst = std::max(worst, std::abs(got - exact));
    }
  }
  for (int degree = 1; degree <= 10; ++degree) {
    QuadRule r = triangle_reference_rule(degree);
    for (int i = 0; i <= degree; ++i)
      for (int j = 0; i + j <= degree; ++j) {
        const double exact = subdivision_oracle(kRefTriV0[0], kRefTriV0[1], kRefTriV1[0],
                                                kRefTriV1[1], kRefTriV2[0], kRefTriV2[1], i, j, 2);
        double got = 0.0;
        for (std::int64_t k = 0; k < r.size(); ++k)
          got += r.weights[k] * std::pow(r.points.at(k, 0), i) * std::pow(r.points.at(k, 1), j);
        worst = std::max(worst, std::abs(got - exact));
      }
  }
  c.seconds = seconds_since(t0);
  c.ok = worst < 1e-12 && c.seconds < 10.0;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max error %.2e (tol 1e-12), budget 10 s", worst);
  c.detail = buf;
  return c;
}

// ---- criterion 2: gradient suite ----------------------------------------------

Criterion check_gradients() {
  Criterion c{"gradient suite (toy KNO)"};
  const auto t0 = clk::now();
  ModelConfig cfg;
  cfg.p = 4;
  cfg.q = 4;
  cfg.L_minus_1 = 2;
  Rng rng(5);
  Tensor grid = Tensor::zeros({10, 1});
  for (long j = 0; j < 10; ++j) grid.at(j, 0) = j / 10.0;
  KnoModel model = init_model(cfg, gauss_legendre(8, 0.0, 1.0), grid, 0.05, rng);

  Rng drng(41);
  Tensor inputs = Tensor::zeros({3, 1, 10});
  Tensor targets = Tensor::zeros({3, 1, 10});
  for (std::int64_t i = 0; i < inputs.size(); ++i) inputs[i] = drng.uniform(-1, 1);
  for (std::int64_t i = 0; i < targets.size(); ++i) targets[i] = drng.uniform(0.5, 1.5);

  auto loss_value = [&](KnoModel& m) {
    ForwardGraph fg = build_forward(m, inputs);
    return fg.tape->val(rel_mse_loss(*fg.tape, fg.prediction, targets))[0];
  };
  ForwardGraph fg = build_forward(model, inputs);
  VarId loss = rel_mse_loss(*fg.tape, fg.prediction, targets);
  auto grads = grad(*fg.tape, loss, fg.leaves);

  auto registry = model_parameters(model);
  const double h = 1e-6;
  double worst_rel = 0.0;
  for (std::size_t k = 0; k < registry.size(); ++k) {
    const Tensor& g = grads.at(fg.leaves[k]);
    for (std::int64_t i = 0; i < g.size(); ++i) {
      KnoModel up = model, dn = model;
      (*model_parameters(up)[k].tensor)[i] += h;
      (*model_parameters(dn)[k].tensor)[i] -= h;
      const double fd = (loss_value(up) - loss_value(dn)) / (2.0 * h);
      if (std::abs(g[i] - fd) < 1e-8) continue;  // below the FD noise floor
      worst_rel = std::max(worst_rel,
                           std::abs(g[i] - fd) / std::max({std::abs(fd), std::abs(g[i]), 1e-8}));
    }
  }
  c.seconds = seconds_since(t0);
  c.ok = worst_rel < 1e-4 && c.seconds < 60.0;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max rel error %.2e (tol 1e-4), budget 60 s", worst_rel);
  c.detail = buf;
  return c;
}

// ---- criterion 3: parameter count ----------------------------------------------

Criterion check_param_count() {
  Criterion c{"parameter count (Burgers)"};
  const auto t0 = clk::now();
  RunPreset preset = get_preset("burgers");
  Rng rng(0);
  KnoModel model = build_preset_model(preset, rng);
  const long count = static_cast<long>(count_parameters(model));
  const long reported = 34307;
  const double rel = std::abs(count - reported) / static_cast<double>(reported);
  c.seconds = seconds_since(t0);
  c.ok = rel < 0.001 && c.seconds < 1.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "count %ld vs 34307 reported, delta %ld (%.4f%%, tol 0.1%%)",
                count, count - reported, 100.0 * rel);
  c.detail = buf;
  return c;
}

// ---- desk-scale trainings -------------------------------------------------------

struct DeskResult {
  double mean_test_pct = 0.0;
  std::vector<double> per_seed_pct;
  std::vector<double> per_seed_secs;
  double total_secs = 0.0;
  KnoModel last_model;
  Dataset train_data, test_data;
};

DeskResult run_desk(const std::string& preset_name, long epochs_override, long m_train,
                    long m_test) {
  RunPreset preset = get_preset(preset_name);
  if (g_smoke) {
    preset.train.epochs = 30;
    preset.train.epochs_per_layer = 5;
    preset.data.m_train = 16;
    preset.data.m_test = 8;
  } else {
    if (epochs_override > 0) preset.train.epochs = epochs_override;
    preset.data.m_train = m_train;
    preset.data.m_test = m_test;
  }
  DeskResult result;
  auto [train_d, test_d] = build_dataset(preset.data);
  Dataset no_test;  // per-epoch test tracking skipped; evaluated once per seed
  no_test.d = train_d.d;
  no_test.d_u = train_d.d_u;
  no_test.d_y = train_d.d_y;
  no_test.grid = train_d.grid;
  no_test.inputs = Tensor::zeros({0, train_d.grid.shape[0], train_d.d_u});
  no_test.outputs = Tensor::zeros({0, train_d.grid.shape[0], train_d.d_y});

  Normalizer nz = fit_normalizer(to_channels_first(train_d.inputs),
                                 to_channels_first(train_d.outputs),
                                 preset.train.normalization == "zscore");
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto t0 = clk::now();
    TrainConfig tc = preset.train;
    tc.seed = seed;
    Rng rng(seed);
    KnoModel model = build_preset_model(preset, rng);
    freeze_train(model, train_d, tc);
    train(model, train_d, no_test, tc);
    const double pct = evaluate_model(model, test_d, nz);
    result.per_seed_pct.push_back(pct);
    result.per_seed_secs.push_back(seconds_since(t0));
    result.mean_test_pct += pct / 3.0;
    if (seed == 2) result.last_model = std::move(model);
  }
  for (double s : result.per_seed_secs) result.total_secs += s;
  result.train_data = std::move(train_d);
  result.test_data = std::move(test_d);
  return result;
}

Criterion check_desk(const std::string& label, const std::string& preset_name, long epochs,
                     long m_train, long m_test, double tol_pct, double budget_min,
                     DeskResult* out) {
  Criterion c{label};
  const auto t0 = clk::now();
  DeskResult r = run_desk(preset_name, epochs, m_train, m_test);
  c.seconds = seconds_since(t0);
  c.ok = r.mean_test_pct < tol_pct && c.seconds < budget_min * 60.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "mean test %.3f%% (tol %.0f%%) seeds [%.3f, %.3f, %.3f]; %.1f min total "
                "[%.1f/%.1f/%.1f min per seed], budget %.0f min",
                r.mean_test_pct, tol_pct, r.per_seed_pct[0], r.per_seed_pct[1], r.per_seed_pct[2],
                c.seconds / 60.0, r.per_seed_secs[0] / 60.0, r.per_seed_secs[1] / 60.0,
                r.per_seed_secs[2] / 60.0, budget_min);
  c.detail = buf;
  if (out) *out = std::move(r);
  return c;
}

// ---- criterion 7: super-resolution consistency ----------------------------------

Criterion check_superres(DeskResult& adv) {
  Criterion c{"super-resolution consistency"};
  const auto t0 = clk::now();
  RunPreset preset = get_preset("advection1-desk");
  preset.data.m_train = adv.train_data.sample_count();
  preset.data.m_test = adv.test_data.sample_count();
  SuperresReport report =
      superres_eval(adv.last_model, preset, adv.train_data, adv.test_data, 2);
  c.seconds = seconds_since(t0);
  c.ok = report.restriction_max_abs < 1e-10 && c.seconds < 60.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "restriction max |diff| %.2e (tol 1e-10), budget 60 s",
                report.restriction_max_abs);
  c.detail = buf;
  return c;
}

// ---- criterion 8: interpolation suite -------------------------------------------

Criterion check_interpolation() {
  Criterion c{"interpolation suite"};
  const auto t0 = clk::now();
  const std::int64_t n = 200;
  Tensor nodes = Tensor::zeros({n, 1});
  for (std::int64_t i = 0; i < n; ++i) nodes.at(i, 0) = static_cast<double>(i) / (n - 1);
  Rng rng(9);
  Tensor values = Tensor::zeros({n, 2});
  for (std::int64_t i = 0; i < values.size(); ++i) values[i] = rng.uniform(-2, 2);

  // node reproduction at a moderate support
  const double eps = static_cast<double>(n - 1) / 8.0;
  KernelSpec spec = make_radial_spec(KernelKind::wendland_c4, 1, inverse_softplus(eps));
  Interpolant interp = interp_fit(nodes, values, spec);
  Tensor recon = interp_eval(interp, nodes);
  double node_err = 0.0;
  for (std::int64_t i = 0; i < recon.size(); ++i)
    node_err = std::max(node_err, std::abs(recon[i] - values[i]));

  // sparse vs dense direct solve
  Eigen::MatrixXd G(n, n);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      G(i, j) = wendland_c4(std::abs(nodes.at(i, 0) - nodes.at(j, 0)), eps);
  Eigen::MatrixXd B(n, 2);
  for (std::int64_t i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j) B(i, j) = values.at(i, j);
  Eigen::MatrixXd X = G.ldlt().solve(B);
  double solve_err = 0.0;
  for (std::int64_t i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j)
      solve_err = std::max(solve_err, std::abs(interp.coeffs.at(i, j) - X(i, j)));

  // constant reproduction with a near-flat kernel
  Tensor ones = Tensor::full({n, 1}, 1.0);
  KernelSpec flat =
      make_radial_spec(KernelKind::wendland_c4, 1, inverse_softplus((n - 1) / 320.0));
  Interpolant interp_c = interp_fit(nodes, ones, flat);
  Rng qr(5);
  double const_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    Tensor point({1, 1}, {qr.uniform(0.0, 1.0)});
    const_err = std::max(const_err, std::abs(interp_eval(interp_c, point).at(0, 0) - 1.0));
  }

  c.seconds = seconds_since(t0);
  c.ok = node_err < 1e-8 && solve_err < 1e-10 && const_err < 1e-6 && c.seconds < 30.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "node %.2e (1e-8), sparse-vs-dense %.2e (1e-10), constant %.2e (1e-6)", node_err,
                solve_err, const_err);
  c.detail = buf;
  return c;
}

// ---- criterion 9: NTK regression -------------------------------------------------

Criterion check_ntk() {
  Criterion c{"NTK kernel-config regression"};
  const auto t0 = clk::now();
  NtkReport wend = ntk_probe_run("wendland-sm");
  NtkReport gauss = ntk_probe_run("gaussian-all");
  c.seconds = seconds_since(t0);
  c.ok = gauss.condition_proxy > wend.condition_proxy && c.seconds < 300.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "gaussian-all %.3e > wendland-sm %.3e",
                gauss.condition_proxy, wend.condition_proxy);
  c.detail = buf;
  return c;
}

// ---- criterion 10: determinism ----------------------------------------------------

Criterion check_determinism() {
  Criterion c{"end-to-end determinism"};
  const auto t0 = clk::now();
  const std::string dir = "acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::uint64_t> data_hashes, ckpt_hashes;
  for (int run = 0; run < 2; ++run) {
    DatasetSpec spec;
    spec.problem = Problem::advection1;
    spec.m_train = g_smoke ? 8 : 40;
    spec.m_test = g_smoke ? 3 : 10;
    spec.resolution = 40;
    spec.seed = 12;
    spec.t_end = 0.5;
    const std::string sub = dir + "/run" + std::to_string(run);
    fs::create_directories(sub);
    auto [train_path, test_path] = build_and_write_dataset(spec, sub);
    data_hashes.push_back(fnv1a_file(train_path));
    data_hashes.push_back(fnv1a_file(test_path));

    Dataset train_d = read_dataset(train_path);
    Dataset test_d = read_dataset(test_path);
    RunPreset preset = get_preset("advection1-desk");
    preset.train.epochs = g_smoke ? 10 : 150;
    preset.train.epochs_per_layer = g_smoke ? 0 : 20;
    preset.train.seed = 12;
    Rng rng(12);
    KnoModel model = build_preset_model(preset, rng);
    freeze_train(model, train_d, preset.train);
    train(model, train_d, test_d, preset.train);
    const std::string ckpt = sub + "/model_final.ckpt";
    save_checkpoint(model, ckpt, 12);
    ckpt_hashes.push_back(fnv1a_file(ckpt));
  }
  c.seconds = seconds_since(t0);
  c.ok = data_hashes[0] == data_hashes[2] && data_hashes[1] == data_hashes[3] &&
         ckpt_hashes[0] == ckpt_hashes[1];
  char buf[160];
  std::snprintf(buf, sizeof(buf), "dataset hashes %s, checkpoint hashes %s",
                (data_hashes[0] == data_hashes[2] && data_hashes[1] == data_hashes[3]) ? "match"
                                                                                       : "DIFFER",
                ckpt_hashes[0] == ckpt_hashes[1] ? "match" : "DIFFER");
  c.detail = buf;
  fs::remove_all(dir);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--smoke") == 0) g_smoke = true;
  if (g_smoke) std::printf("smoke mode: shrunk runs, result does not count\n");

  report(check_quadrature());
  report(check_gradients());
  report(check_param_count());
  report(check_interpolation());
  report(check_ntk());
  report(check_determinism());

  DeskResult adv;
  report(check_desk("desk advection (3 seeds)", "advection1-desk", 3000, 200, 50, 2.0, 20.0,
                    &adv));
  report(check_superres(adv));
  adv = DeskResult();  // release before the heavier runs
  report(check_desk("desk burgers (3 seeds)", "burgers-desk", 2000, 200, 50, 5.0, 45.0, nullptr));
  report(check_desk("desk darcy-triangular (3 seeds)", "darcy-tri-desk", 1500, 200, 50, 5.0, 45.0,
                    nullptr));

  std::printf("acceptance: %d/%d criteria passed\n", g_index - g_failures, g_index);
  if (g_smoke) return 2;
  return g_failures == 0 ? 0 : 1;
}

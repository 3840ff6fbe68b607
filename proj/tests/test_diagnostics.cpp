#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "kno/diagnostics.hpp"
#include "kno/errors.hpp"
#include "kno/quadrature.hpp"
#include "kno/training.hpp"

using namespace kno;

namespace {

Tensor grid_1d(long n) {
  Tensor g = Tensor::zeros({n, 1});
  for (long j = 0; j < n; ++j) g.at(j, 0) = static_cast<double>(j) / n;
  return g;
}

KnoModel tiny_model(int p, int q, int depth, int nq, long nt, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.p = p;
  cfg.q = q;
  cfg.L_minus_1 = depth;
  Rng rng(seed);
  return init_model(cfg, gauss_legendre(nq, 0.0, 1.0), grid_1d(nt), 0.5 / nt, rng);
}

}  // namespace

TEST_CASE("relative_l2_percent basics and scale equivariance") {
  Tensor t({4}, {1.0, -2.0, 0.5, 3.0});
  CHECK(relative_l2_percent(t, t) == 0.0);
  CHECK(relative_l2_percent(Tensor::zeros({4}), t) == doctest::Approx(100.0).epsilon(1e-13));
  Tensor p = t;
  for (std::int64_t i = 0; i < p.size(); ++i) p[i] *= 1.1;
  CHECK(relative_l2_percent(p, t) == doctest::Approx(10.0).epsilon(1e-10));
  CHECK_THROWS_AS(relative_l2_percent(t, Tensor::zeros({4})), ContractViolation);

  Rng rng(3);
  Tensor pr = Tensor::zeros({6}), tr = Tensor::zeros({6});
  for (std::int64_t i = 0; i < 6; ++i) {
    pr[i] = rng.uniform(-1, 1);
    tr[i] = rng.uniform(0.5, 1.5);
  }
  const double base = relative_l2_percent(pr, tr);
  for (double a : {-3.0, 0.25, 7.0}) {
    Tensor pa = pr, ta = tr;
    for (std::int64_t i = 0; i < 6; ++i) {
      pa[i] *= a;
      ta[i] *= a;
    }
    CHECK(relative_l2_percent(pa, ta) == doctest::Approx(base).epsilon(1e-11));
  }
}

TEST_CASE("NTK spectrum is PSD with rank bounded by the parameter count") {
  // 19-parameter toy probed with more outputs than parameters
  KnoModel model = tiny_model(1, 1, 1, 4, 8, 3);
  const std::int64_t n_params = count_parameters(model);
  REQUIRE(n_params == 19);
  Rng rng(5);
  Tensor probe = Tensor::zeros({4, 1, 8});
  for (std::int64_t i = 0; i < probe.size(); ++i) probe[i] = rng.uniform(-1, 1);
  NtkReport r = ntk_spectrum(model, probe, 8, "toy");
  REQUIRE(r.n_outputs == 32);
  for (double ev : r.eigenvalues) CHECK(ev >= -1e-10 * r.lambda_max);
  // eigenvalues beyond the parameter count vanish (outer-product rank bound)
  for (std::size_t k = static_cast<std::size_t>(n_params); k < r.eigenvalues.size(); ++k)
    CHECK(std::abs(r.eigenvalues[k]) < 1e-10 * r.lambda_max);
}

TEST_CASE("NTK via backward passes matches a finite-difference Jacobian") {
  // <= 50 parameter toy: p=q=2, depth 1, d=1 -> 42 parameters
  KnoModel model = tiny_model(2, 2, 1, 4, 5, 9);
  REQUIRE(count_parameters(model) <= 50);
  Rng rng(2);
  Tensor probe = Tensor::zeros({2, 1, 5});
  for (std::int64_t i = 0; i < probe.size(); ++i) probe[i] = rng.uniform(-1, 1);
  const long n_pts = 5;
  NtkReport r = ntk_spectrum(model, probe, n_pts, "toy");

  auto registry = model_parameters(model);
  const std::int64_t rows = r.n_outputs;
  const std::int64_t cols = count_parameters(model);
  std::vector<double> J(static_cast<std::size_t>(rows * cols));
  const double h = 1e-6;
  std::int64_t col = 0;
  Tensor probe_pts = model.train_grid;  // n_probe_points == N_T here
  for (std::size_t k = 0; k < registry.size(); ++k) {
    for (std::int64_t i = 0; i < registry[k].tensor->size(); ++i) {
      KnoModel up = model, dn = model;
      (*model_parameters(up)[k].tensor)[i] += h;
      (*model_parameters(dn)[k].tensor)[i] -= h;
      ForwardGraph fu = build_forward(up, probe, &probe_pts);
      ForwardGraph fd = build_forward(dn, probe, &probe_pts);
      const Tensor& pu = fu.tape->val(fu.prediction);
      const Tensor& pd = fd.tape->val(fd.prediction);
      for (std::int64_t o = 0; o < rows; ++o)
        J[static_cast<std::size_t>(o * cols + col)] = (pu[o] - pd[o]) / (2.0 * h);
      ++col;
    }
  }
  // rebuild the NTK from the FD Jacobian and compare through the trace and
  // the top eigenvalue bound (entrywise agreement at 1e-4 relative)
  std::vector<double> ntk(static_cast<std::size_t>(rows * rows), 0.0);
  for (std::int64_t a = 0; a < rows; ++a)
    for (std::int64_t b = 0; b < rows; ++b) {
      double s = 0.0;
      for (std::int64_t c = 0; c < cols; ++c)
        s += J[static_cast<std::size_t>(a * cols + c)] * J[static_cast<std::size_t>(b * cols + c)];
      ntk[static_cast<std::size_t>(a * rows + b)] = s;
    }
  double trace_fd = 0.0;
  for (std::int64_t a = 0; a < rows; ++a) trace_fd += ntk[static_cast<std::size_t>(a * rows + a)];
  double trace_ad = 0.0;
  for (double ev : r.eigenvalues) trace_ad += ev;
  CHECK(std::abs(trace_fd - trace_ad) / std::max(1e-12, std::abs(trace_ad)) < 1e-4);
}

TEST_CASE("pinned kernel comparison: gaussian config is worse conditioned") {
  NtkReport wend = ntk_probe_run("wendland-sm");
  NtkReport gauss = ntk_probe_run("gaussian-all");
  CHECK(gauss.condition_proxy > wend.condition_proxy);
}

TEST_CASE("sparsity report matches the stored-nonzero count") {
  KnoModel model = tiny_model(4, 4, 2, 12, 10, 13);
  // support beyond the domain: nothing is zero
  for (auto& blk : model.blocks)
    for (std::int64_t i = 0; i < blk.raw_eps.size(); ++i)
      blk.raw_eps[i] = inverse_softplus(0.5);  // radius 2 > domain size 1
  SparsityReport full = sparsity_report(model);
  for (double f : full.per_layer) CHECK(f == 0.0);

  // support below the minimum spacing: only the diagonal survives
  const std::int64_t nq = model.quad.size();
  for (auto& blk : model.blocks)
    for (std::int64_t i = 0; i < blk.raw_eps.size(); ++i)
      blk.raw_eps[i] = inverse_softplus(1e4);
  SparsityReport diag = sparsity_report(model);
  for (double f : diag.per_layer)
    CHECK(f == doctest::Approx(1.0 - 1.0 / static_cast<double>(nq)).epsilon(1e-12));

  // exact agreement with an independent pair count at a moderate support
  for (auto& blk : model.blocks)
    for (std::int64_t i = 0; i < blk.raw_eps.size(); ++i) blk.raw_eps[i] = inverse_softplus(8.0);
  SparsityReport mid = sparsity_report(model);
  long stored = 0;
  for (std::int64_t a = 0; a < nq; ++a)
    for (std::int64_t b = 0; b < nq; ++b)
      if (std::abs(model.quad.points.at(a, 0) - model.quad.points.at(b, 0)) < 1.0 / 8.0) ++stored;
  const double expect = 1.0 - static_cast<double>(stored) / static_cast<double>(nq * nq);
  for (double f : mid.per_layer) {
    CHECK(f == doctest::Approx(expect).epsilon(1e-14));
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }

  // a gaussian-only model has no Wendland layers to report on
  KnoModel gauss = tiny_model(2, 2, 1, 6, 8, 1);
  for (auto& blk : gauss.blocks) blk.kind = KernelKind::gaussian;
  CHECK_THROWS_AS(sparsity_report(gauss), ContractViolation);
}

TEST_CASE("ablation sweep: degenerate sweep, schema, q=p identity map") {
  RunPreset preset = get_preset("advection1-desk");
  preset.data.m_train = 8;
  preset.data.m_test = 3;
  preset.train.epochs = 4;
  preset.train.epochs_per_layer = 0;
  preset.arch.p = 8;
  preset.arch.q = 8;
  preset.x_q_budget = 8;

  auto rows = ablation_sweep(preset, AblationAxis::q_ratio, {1.0});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].value == 1.0);
  CHECK(std::isfinite(rows[0].train_err_pct));
  CHECK(std::isfinite(rows[0].test_err_pct));
  CHECK(rows[0].seconds > 0.0);

  // the same training, run directly, gives identical results
  auto [train_d, test_d] = build_dataset(preset.data);
  Rng rng(preset.train.seed);
  KnoModel model = build_preset_model(preset, rng);
  freeze_train(model, train_d, preset.train);
  train(model, train_d, test_d, preset.train);
  Normalizer nz = fit_normalizer(to_channels_first(train_d.inputs),
                                 to_channels_first(train_d.outputs), true);
  CHECK(rows[0].test_err_pct == evaluate_model(model, test_d, nz));
  CHECK(rows[0].params == count_parameters(model));
  // q = p: identity index map
  CHECK(model.index_map.kernel_of_channel == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

  const std::string path = "test_ablation.csv";
  write_ablation_csv(rows, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "value,train_err,test_err,params,seconds");
  std::remove(path.c_str());

  CHECK_THROWS_AS(ablation_sweep(preset, AblationAxis::q_ratio, {}), ContractViolation);
  CHECK_THROWS_AS(ablation_sweep(preset, AblationAxis::q_ratio, {2.0}), ContractViolation);
  CHECK(ablation_axis_from_name("depth") == AblationAxis::depth);
  CHECK_THROWS_AS(ablation_axis_from_name("bogus"), ContractViolation);
}

TEST_CASE("superres: factor 1 equals standard eval; restriction is consistent") {
  RunPreset preset = get_preset("advection1-desk");
  preset.data.m_train = 12;
  preset.data.m_test = 4;
  preset.train.epochs = 150;
  preset.train.epochs_per_layer = 0;
  preset.arch.p = 8;
  preset.arch.q = 8;
  preset.x_q_budget = 12;
  auto [train_d, test_d] = build_dataset(preset.data);
  Rng rng(0);
  KnoModel model = build_preset_model(preset, rng);
  train(model, train_d, test_d, preset.train);

  SuperresReport base = superres_eval(model, preset, train_d, test_d, 1);
  Normalizer nz = fit_normalizer(to_channels_first(train_d.inputs),
                                 to_channels_first(train_d.outputs), true);
  CHECK(base.coarse_err_pct == doctest::Approx(evaluate_model(model, test_d, nz)).epsilon(1e-12));
  CHECK(base.fine_err_pct == base.coarse_err_pct);

  SuperresReport up = superres_eval(model, preset, train_d, test_d, 2);
  CHECK(up.restriction_max_abs < 1e-10);
  CHECK(up.n_fine == 80);
  // sanity: the super-resolved error stays within 2x of the training-grid
  // error for this seed-pinned short run
  CHECK(up.fine_err_pct <= 2.0 * up.coarse_err_pct);

  const std::string jp = "test_superres.json", cp = "test_superres.csv";
  write_superres_report(up, jp, cp);
  std::ifstream in(cp);
  std::string header;
  std::getline(in, header);
  CHECK(header == "factor,coarse_err_pct,fine_err_pct,restriction_max_abs,n_fine");
  std::remove(jp.c_str());
  std::remove(cp.c_str());
}

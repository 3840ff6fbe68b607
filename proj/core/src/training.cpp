#include "kno/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <cstdlib>
#include <limits>

#include "kno/errors.hpp"

namespace kno {

Tensor to_channels_first(const Tensor& node_major) {
  if (node_major.rank() != 3) throw ContractViolation("to_channels_first: expected [M,N,C]");
  const std::int64_t M = node_major.shape[0], N = node_major.shape[1], C = node_major.shape[2];
  Tensor out = Tensor::zeros({M, C, N});
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) out.at(m, c, n) = node_major.at(m, n, c);
  return out;
}

Normalizer fit_normalizer(const Tensor& inputs_cf, const Tensor& outputs_cf, bool active) {
  Normalizer nz;
  nz.active = active;
  auto fit = [](const Tensor& x, Tensor& mean, Tensor& scale) {
    const std::int64_t M = x.shape[0], C = x.shape[1], N = x.shape[2];
    mean = Tensor::zeros({C, N});
    scale = Tensor::full({C, N}, 1.0);
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t n = 0; n < N; ++n) {
        double mu = 0.0;
        for (std::int64_t m = 0; m < M; ++m) mu += x.at(m, c, n);
        mu /= static_cast<double>(M);
        double var = 0.0;
        for (std::int64_t m = 0; m < M; ++m) {
          const double d = x.at(m, c, n) - mu;
          var += d * d;
        }
        var /= static_cast<double>(M);
        const double sd = std::sqrt(var);
        mean.at(c, n) = mu;
        scale.at(c, n) = sd > 1e-12 ? sd : 1.0;  // constant channels pass through
      }
  };
  fit(inputs_cf, nz.in_mean, nz.in_scale);
  fit(outputs_cf, nz.out_mean, nz.out_scale);
  return nz;
}

namespace {

Tensor apply_norm(const Tensor& x, const Tensor& mean, const Tensor& scale, bool active,
                  bool forward) {
  if (!active) return x;
  Tensor out = x;
  const std::int64_t M = x.shape[0], C = x.shape[1], N = x.shape[2];
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t n = 0; n < N; ++n)
        out.at(m, c, n) = forward ? (x.at(m, c, n) - mean.at(c, n)) / scale.at(c, n)
                                  : x.at(m, c, n) * scale.at(c, n) + mean.at(c, n);
  return out;
}

}  // namespace

Tensor normalize_inputs(const Normalizer& nz, const Tensor& inputs_cf) {
  return apply_norm(inputs_cf, nz.in_mean, nz.in_scale, nz.active, true);
}

Tensor normalize_outputs(const Normalizer& nz, const Tensor& outputs_cf) {
  return apply_norm(outputs_cf, nz.out_mean, nz.out_scale, nz.active, true);
}

Tensor denormalize_outputs(const Normalizer& nz, const Tensor& preds_cf) {
  return apply_norm(preds_cf, nz.out_mean, nz.out_scale, nz.active, false);
}

double training_loss(const Tensor& preds, const Tensor& targets,
                     const std::vector<double>& kernel_scales_raw, double reg_lambda) {
  if (!preds.same_shape(targets)) throw ContractViolation("training_loss: shape mismatch");
  const std::int64_t M = preds.shape[0];
  const std::int64_t n = preds.size() / M;
  double loss = 0.0;
  for (std::int64_t m = 0; m < M; ++m) {
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = preds[m * n + i] - targets[m * n + i];
      num += d * d;
      den += targets[m * n + i] * targets[m * n + i];
    }
    if (den <= 0.0)
      throw ContractViolation("training_loss: target sample " + std::to_string(m) +
                              " has zero norm");
    loss += num / den;
  }
  loss /= static_cast<double>(M);
  double reg = 0.0;
  for (double raw : kernel_scales_raw) {
    const double s = softplus_value(raw);
    reg += s * s;
  }
  return loss + reg_lambda * reg;
}

double mean_relative_l2_percent(const Tensor& preds, const Tensor& truths) {
  if (!preds.same_shape(truths)) throw ContractViolation("mean_relative_l2_percent: shape mismatch");
  const std::int64_t M = preds.shape[0];
  const std::int64_t n = preds.size() / M;
  double acc = 0.0;
  for (std::int64_t m = 0; m < M; ++m) {
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = preds[m * n + i] - truths[m * n + i];
      num += d * d;
      den += truths[m * n + i] * truths[m * n + i];
    }
    if (den <= 0.0)
      throw ContractViolation("mean_relative_l2_percent: truth sample has zero norm");
    acc += 100.0 * std::sqrt(num / den);
  }
  return acc / static_cast<double>(M);
}

KnoModel init_model(const ModelConfig& config, QuadRule quad, Tensor train_grid,
                    double fill_distance, Rng& rng) {
  KnoModel model = make_model(config, std::move(quad), std::move(train_grid));
  auto params = model_parameters(model);
  for (auto& pr : params) {
    if (pr.name == "interp.raw_eps") {
      // support radius = 4x fill distance: sparse but well conditioned
      const double eps = 1.0 / (4.0 * fill_distance);
      (*pr.tensor)[0] = inverse_softplus(eps);
      continue;
    }
    if (pr.kernel_param) {
      for (std::int64_t i = 0; i < pr.tensor->size(); ++i)
        (*pr.tensor)[i] = rng.normal(1.0, 0.1);
      continue;
    }
    double fan_in = config.p;
    if (pr.name.rfind("lift.", 0) == 0) fan_in = config.d_u + config.d;
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::int64_t i = 0; i < pr.tensor->size(); ++i)
      (*pr.tensor)[i] = rng.uniform(-bound, bound);
  }
  return model;
}

namespace {

void require_matching_grid(const KnoModel& model, const Dataset& data, const char* what) {
  if (!model.train_grid.same_shape(data.grid) ||
      model.train_grid.data != data.grid.data)
    throw ContractViolation(std::string(what) + ": dataset grid does not match model.train_grid");
}

struct BatchView {
  Tensor inputs;   // [B, d_u, N_T]
  Tensor targets;  // [B, d_y, N_T]
};

BatchView slice_batch(const Tensor& inputs_cf, const Tensor& targets_cf, std::int64_t begin,
                      std::int64_t count) {
  BatchView b;
  const std::int64_t cu = inputs_cf.shape[1], n = inputs_cf.shape[2];
  const std::int64_t cy = targets_cf.shape[1];
  b.inputs = Tensor::zeros({count, cu, n});
  b.targets = Tensor::zeros({count, cy, n});
  std::copy_n(&inputs_cf.data[static_cast<std::size_t>(begin * cu * n)], count * cu * n,
              b.inputs.data.begin());
  std::copy_n(&targets_cf.data[static_cast<std::size_t>(begin * cy * n)], count * cy * n,
              b.targets.data.begin());
  return b;
}

// Cache-friendly slab size: gradients are accumulated over chunks of the
// batch so per-op tensors stay small; the result is exactly the full-batch
// gradient (fixed summation order).
std::int64_t chunk_samples(const KnoModel& model) {
  if (const char* env = std::getenv("KNO_GRAD_CHUNK")) {
    const long v = std::atol(env);
    if (v > 0) return v;
  }
  const std::int64_t width = static_cast<std::int64_t>(model.config.p) *
                             std::max(model.quad.size(), model.train_grid.shape[0]);
  return std::clamp<std::int64_t>(65536 / std::max<std::int64_t>(1, width), 4, 64);
}

// One optimizer step on a batch (gradients accumulated across chunks);
// returns the loss value.
double train_step(KnoModel& model, const Tensor& inputs_cf, const Tensor& targets_cf,
                  const std::vector<std::size_t>& trainable, double reg_lambda, AdamState& state,
                  double lr) {
  auto registry = model_parameters(model);
  const std::int64_t M = inputs_cf.shape[0];
  const std::int64_t chunk = std::min<std::int64_t>(M, chunk_samples(model));

  std::vector<Tensor> accum;
  accum.reserve(trainable.size());
  for (std::size_t idx : trainable) accum.push_back(Tensor::zeros(registry[idx].tensor->shape));

  double data_loss = 0.0;
  for (std::int64_t begin = 0; begin < M; begin += chunk) {
    const std::int64_t count = std::min<std::int64_t>(chunk, M - begin);
    BatchView view = slice_batch(inputs_cf, targets_cf, begin, count);
    // NaNs are still caught: the loss value is checked below and grad() scans
    // every gradient it propagates.
    ForwardGraph fg = build_forward(model, view.inputs, nullptr, /*finite_checks=*/false);
    Tape& t = *fg.tape;
    VarId loss = rel_mse_loss(t, fg.prediction, view.targets);
    const double chunk_loss = t.val(loss)[0];
    if (!std::isfinite(chunk_loss)) throw NumericError("train: non-finite loss");
    const double weight = static_cast<double>(count) / static_cast<double>(M);
    data_loss += weight * chunk_loss;

    std::vector<VarId> wanted;
    wanted.reserve(trainable.size());
    for (std::size_t idx : trainable) wanted.push_back(fg.leaves[idx]);
    auto grads = grad(t, loss, wanted);
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      const Tensor& gsrc = grads.at(wanted[k]);
      Tensor& dst = accum[k];
      for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += weight * gsrc[i];
    }
  }

  // Shape-parameter regularizer, added in closed form: d/dx softplus(x)^2 =
  // 2 softplus(x) sigmoid(x).
  double reg_value = 0.0;
  if (reg_lambda > 0.0) {
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      const ParamRef& pr = registry[trainable[k]];
      if (!pr.kernel_shape) continue;
      Tensor& dst = accum[k];
      for (std::int64_t i = 0; i < dst.size(); ++i) {
        const double sp = softplus_value((*pr.tensor)[i]);
        reg_value += sp * sp;
        dst[i] += reg_lambda * 2.0 * sp * softplus_derivative((*pr.tensor)[i]);
      }
    }
  }

  std::vector<Tensor*> tensors;
  std::vector<const Tensor*> gptrs;
  tensors.reserve(trainable.size());
  gptrs.reserve(trainable.size());
  for (std::size_t k = 0; k < trainable.size(); ++k) {
    tensors.push_back(registry[trainable[k]].tensor);
    gptrs.push_back(&accum[k]);
  }
  adam_step(tensors, gptrs, state, lr);
  return data_loss + reg_lambda * reg_value;
}

double run_epoch(KnoModel& model, const Tensor& inputs_cf, const Tensor& targets_cf,
                 const std::vector<std::size_t>& trainable, const TrainConfig& config,
                 AdamState& state, double lr) {
  const std::int64_t M = inputs_cf.shape[0];
  const std::int64_t batch = config.batch_size > 0 ? std::min<std::int64_t>(config.batch_size, M) : M;
  if (batch == M)
    return train_step(model, inputs_cf, targets_cf, trainable, config.reg_lambda, state, lr);
  double acc = 0.0;
  for (std::int64_t begin = 0; begin < M; begin += batch) {
    const std::int64_t count = std::min<std::int64_t>(batch, M - begin);
    BatchView view = slice_batch(inputs_cf, targets_cf, begin, count);
    acc += train_step(model, view.inputs, view.targets, trainable, config.reg_lambda, state, lr) *
           static_cast<double>(count);
  }
  return acc / static_cast<double>(M);
}

// Forward in chunks (inference only); returns predictions for all samples.
Tensor forward_chunked(KnoModel& model, const Tensor& inputs_cf) {
  const std::int64_t M = inputs_cf.shape[0];
  const std::int64_t chunk = std::min<std::int64_t>(M, chunk_samples(model));
  Tensor preds;
  for (std::int64_t begin = 0; begin < M; begin += chunk) {
    const std::int64_t count = std::min<std::int64_t>(chunk, M - begin);
    const std::int64_t cu = inputs_cf.shape[1], n = inputs_cf.shape[2];
    Tensor slice = Tensor::zeros({count, cu, n});
    std::copy_n(&inputs_cf.data[static_cast<std::size_t>(begin * cu * n)], count * cu * n,
                slice.data.begin());
    ForwardGraph fg = build_forward(model, slice, nullptr, /*finite_checks=*/false);
    const Tensor& p = fg.tape->val(fg.prediction);
    if (begin == 0) preds = Tensor::zeros({M, p.shape[1], p.shape[2]});
    std::copy_n(p.data.begin(), p.size(), preds.data.begin() + begin * p.shape[1] * p.shape[2]);
  }
  return preds;
}

std::vector<std::size_t> trainable_for_layer(const std::vector<ParamRef>& registry, int layer) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < registry.size(); ++i)
    if (registry[i].layer == layer) out.push_back(i);
  return out;
}

std::vector<std::size_t> trainable_all(const std::vector<ParamRef>& registry) {
  std::vector<std::size_t> out(registry.size());
  for (std::size_t i = 0; i < registry.size(); ++i) out[i] = i;
  return out;
}

AdamState adam_for(KnoModel& model, const std::vector<std::size_t>& trainable,
                   const TrainConfig& config) {
  auto registry = model_parameters(model);
  std::vector<Tensor*> tensors;
  for (std::size_t idx : trainable) tensors.push_back(registry[idx].tensor);
  return make_adam_state(tensors, config.adam_beta1, config.adam_beta2, config.adam_delta);
}

}  // namespace

double evaluate_model(KnoModel& model, const Dataset& data, const Normalizer& nz) {
  require_matching_grid(model, data, "evaluate_model");
  Tensor in_cf = normalize_inputs(nz, to_channels_first(data.inputs));
  Tensor out_cf = to_channels_first(data.outputs);
  Tensor preds = denormalize_outputs(nz, forward_chunked(model, in_cf));
  preds.check_finite("evaluate_model predictions");
  return mean_relative_l2_percent(preds, out_cf);
}

void freeze_train(KnoModel& model, const Dataset& train_data, const TrainConfig& config) {
  if (config.epochs_per_layer <= 0) return;
  require_matching_grid(model, train_data, "freeze_train");
  Tensor in_cf = to_channels_first(train_data.inputs);
  Tensor out_cf = to_channels_first(train_data.outputs);
  Normalizer nz = fit_normalizer(in_cf, out_cf, config.normalization == "zscore");
  Tensor in_n = normalize_inputs(nz, in_cf);
  Tensor out_n = normalize_outputs(nz, out_cf);

  auto registry = model_parameters(model);
  LrSchedule sched{config.lr_max, config.lr_min,
                   std::max<long>(1, config.epochs_per_layer / 5)};
  // Kernel-based layers back to front: the final block first, then the
  // integral blocks in reverse order.
  const int n_layers = static_cast<int>(model.blocks.size()) + 1;
  for (int layer = n_layers - 1; layer >= 0; --layer) {
    auto trainable = trainable_for_layer(registry, layer);
    if (trainable.empty()) continue;
    AdamState state = adam_for(model, trainable, config);
    for (long epoch = 0; epoch < config.epochs_per_layer; ++epoch)
      run_epoch(model, in_n, out_n, trainable, config, state, lr_at(sched, epoch));
  }
}

TrainHistory train(KnoModel& model, const Dataset& train_data, const Dataset& test_data,
                   const TrainConfig& config) {
  require_matching_grid(model, train_data, "train");
  if (test_data.sample_count() > 0) require_matching_grid(model, test_data, "train(test)");

  Tensor in_cf = to_channels_first(train_data.inputs);
  Tensor out_cf = to_channels_first(train_data.outputs);
  Normalizer nz = fit_normalizer(in_cf, out_cf, config.normalization == "zscore");
  Tensor in_n = normalize_inputs(nz, in_cf);
  Tensor out_n = normalize_outputs(nz, out_cf);
  Tensor test_in_n, test_out_raw;
  if (test_data.sample_count() > 0) {
    test_in_n = normalize_inputs(nz, to_channels_first(test_data.inputs));
    test_out_raw = to_channels_first(test_data.outputs);
  }

  auto registry = model_parameters(model);
  auto trainable = trainable_all(registry);
  AdamState state = adam_for(model, trainable, config);
  LrSchedule sched{config.lr_max, config.lr_min,
                   config.cycle_length > 0 ? config.cycle_length
                                           : std::max<long>(1, config.epochs / 5)};

  TrainHistory history;
  history.best_test_rel_l2_pct = std::numeric_limits<double>::infinity();
  using clock = std::chrono::steady_clock;

  for (long epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = clock::now();
    const double lr = lr_at(sched, epoch);
    double loss_val;
    try {
      loss_val = run_epoch(model, in_n, out_n, trainable, config, state, lr);
    } catch (const NumericError&) {
      std::string note;
      if (!config.checkpoint_dir.empty() && !history.best_params.empty()) {
        KnoModel last_good = model;
        unflatten_parameters(last_good, history.best_params);
        const std::string path = config.checkpoint_dir + "/model_lastgood.ckpt";
        save_checkpoint(last_good, path, config.seed);
        note = "; last-good checkpoint: " + path;
      }
      throw NumericError("train: NaN loss at epoch " + std::to_string(epoch) + note);
    }

    double test_pct = 0.0;
    if (test_data.sample_count() > 0) {
      Tensor preds = denormalize_outputs(nz, forward_chunked(model, test_in_n));
      test_pct = mean_relative_l2_percent(preds, test_out_raw);
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    history.epochs.push_back({epoch, loss_val, test_pct, lr, secs});
    if (test_data.sample_count() > 0 && test_pct < history.best_test_rel_l2_pct) {
      history.best_test_rel_l2_pct = test_pct;
      history.best_epoch = epoch;
      history.best_params = flatten_parameters(model);
    }
    history.final_test_rel_l2_pct = test_pct;
  }

  if (history.best_params.empty()) history.best_params = flatten_parameters(model);
  if (!config.checkpoint_dir.empty()) {
    KnoModel best = model;
    unflatten_parameters(best, history.best_params);
    save_checkpoint(best, config.checkpoint_dir + "/model_best.ckpt", config.seed);
    save_checkpoint(model, config.checkpoint_dir + "/model_final.ckpt", config.seed);
  }
  return history;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_history_csv: cannot open " + path);
  out << "epoch,train_loss,test_rel_l2_pct,lr,seconds\n";
  out.precision(12);
  for (const auto& e : history.epochs)
    out << e.epoch << "," << e.train_loss << "," << e.test_rel_l2_pct << "," << e.lr << ","
        << e.seconds << "\n";
  if (!out) throw IoError("write_history_csv: write failed for " + path);
}

}  // namespace kno

#pragma once

#include <string>
#include <vector>

#include "kno/datasets.hpp"
#include "kno/model.hpp"
#include "kno/optim.hpp"
#include "kno/rng.hpp"

namespace kno {

struct TrainConfig {
  long epochs = 1000;
  long epochs_per_layer = 0;  // freeze-training phase length; 0 disables it
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  long cycle_length = 0;  // 0 -> epochs / 5
  double reg_lambda = 1e-6;
  long batch_size = 0;  // 0 -> full batch
  std::uint64_t seed = 0;
  std::string normalization = "zscore";  // "zscore" | "none"
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_delta = 1e-8;
  std::string checkpoint_dir;  // best / last-good checkpoints land here if set
};

struct EpochRecord {
  long epoch;
  double train_loss;
  double test_rel_l2_pct;
  double lr;
  double seconds;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double best_test_rel_l2_pct = 0.0;
  long best_epoch = -1;
  std::vector<double> best_params;  // flattened snapshot at the best epoch
  double final_test_rel_l2_pct = 0.0;
};

/// CSV columns: epoch, train_loss, test_rel_l2_pct, lr, seconds.
void write_history_csv(const TrainHistory& history, const std::string& path);

/// Per-grid-point z-score statistics over the training set; channels with
/// zero spread keep scale 1 so the round trip is exact.
struct Normalizer {
  bool active = false;
  Tensor in_mean, in_scale;    // [d_u, N_T]
  Tensor out_mean, out_scale;  // [d_y, N_T]
};

Normalizer fit_normalizer(const Tensor& inputs_cf, const Tensor& outputs_cf, bool active);
Tensor normalize_inputs(const Normalizer& nz, const Tensor& inputs_cf);
Tensor normalize_outputs(const Normalizer& nz, const Tensor& outputs_cf);
Tensor denormalize_outputs(const Normalizer& nz, const Tensor& preds_cf);

/// [M, N, C] node-major -> [M, C, N] channels-first.
Tensor to_channels_first(const Tensor& node_major);

/// Mean relative squared error plus the shape-parameter regularizer (plain
/// function used by tests; the training loop builds the same thing on tape).
double training_loss(const Tensor& preds, const Tensor& targets,
                     const std::vector<double>& kernel_scales_raw, double reg_lambda);

/// Architecture + geometry -> initialized model. Kernel parameters are drawn
/// N(1, 0.1^2) pre-transform; dense layers uniform(-1,1)/sqrt(fan_in); the
/// interpolant support radius starts at 4x the grid fill distance.
KnoModel init_model(const ModelConfig& config, QuadRule quad, Tensor train_grid,
                    double fill_distance, Rng& rng);

/// Mean over samples of 100 * ||pred - truth||_2 / ||truth||_2, node-major
/// or channels-first (any layout with the sample axis first).
double mean_relative_l2_percent(const Tensor& preds, const Tensor& truths);

/// Evaluate the model on a dataset (handles normalization); returns the mean
/// relative L2 percent on denormalized predictions.
double evaluate_model(KnoModel& model, const Dataset& data, const Normalizer& nz);

/// Freeze training: kernel-based layers are optimized one at a time, back to
/// front, for epochs_per_layer epochs each; every other parameter is frozen
/// bit-exactly. No-op when epochs_per_layer == 0.
void freeze_train(KnoModel& model, const Dataset& train_data, const TrainConfig& config);

/// Full Adam loop with the cyclic cosine schedule. Updates the model in
/// place and returns the per-epoch history (best checkpoint included).
TrainHistory train(KnoModel& model, const Dataset& train_data, const Dataset& test_data,
                   const TrainConfig& config);

}  // namespace kno

#pragma once

#include <string>
#include <vector>

#include "kno/datasets.hpp"
#include "kno/model.hpp"
#include "kno/training.hpp"

namespace kno {

/// One named problem setup: architecture, quadrature budget, dataset sizes
/// and training schedule. Base presets reproduce the benchmark
/// configurations; "-desk" variants shrink the sample counts and epoch
/// budgets for workstation runs.
struct RunPreset {
  std::string name;
  Problem problem = Problem::burgers;
  long x_q_budget = 30;  // total quadrature points the rule must reach
  ModelConfig arch;
  DatasetSpec data;
  TrainConfig train;
};

std::vector<std::string> preset_names();
RunPreset get_preset(const std::string& name);

/// Quadrature layout per problem: Gauss-Legendre on [0,1] in 1-D; the
/// eight-triangle square split for darcy_pwc; two triangles for darcy_cont;
/// the reference triangle itself for darcy_tri; the five-triangle notch mesh
/// for darcy_tri_notch.
QuadRule preset_quadrature(const RunPreset& preset);

/// The training grid the dataset spec resolves to.
Tensor preset_train_grid(const RunPreset& preset);

/// Fill distance of that grid (drives the interpolant initialization).
double preset_fill_distance(const RunPreset& preset, const Tensor& grid);

/// Geometry + seeded initialization in one step.
KnoModel build_preset_model(const RunPreset& preset, Rng& rng);

}  // namespace kno

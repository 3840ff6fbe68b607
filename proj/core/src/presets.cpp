#include "kno/presets.hpp"

#include <cmath>

#include "kno/errors.hpp"
#include "kno/quadrature.hpp"

namespace kno {

namespace {

struct ArchRow {
  const char* name;
  Problem problem;
  long x_q, depth, q, p;
  long epochs, epochs_per_layer;
  long resolution;
  long m_train, m_test;
};

// Architecture (X_Q, L-1, q, p) and epoch budgets per problem.
constexpr ArchRow kBase[] = {
    {"burgers", Problem::burgers, 30, 6, 64, 64, 30000, 625, 128, 1000, 200},
    {"advection1", Problem::advection1, 32, 5, 64, 64, 70000, 2857, 40, 1000, 200},
    {"darcy-pwc", Problem::darcy_pwc, 864, 4, 16, 32, 15000, 166, 29, 1000, 200},
    {"darcy-cont", Problem::darcy_cont, 294, 4, 64, 64, 30000, 666, 20, 1000, 200},
    {"darcy-tri", Problem::darcy_tri, 300, 4, 32, 64, 20000, 166, 0, 1900, 100},
    {"darcy-tri-notch", Problem::darcy_tri_notch, 375, 4, 16, 64, 5000, 83, 0, 1900, 100},
};

// Desk-scale overrides: sample counts and epoch budgets shrink; the 2-D
// problems also shrink quadrature budgets (and darcy-tri its channel width)
// to fit a single-core time budget.
struct DeskRow {
  const char* base;
  long m_train, m_test;
  long epochs, epochs_per_layer;
  long x_q_override;  // 0 keeps the base budget
  long q_override, p_override;
};

constexpr DeskRow kDesk[] = {
    {"burgers", 200, 50, 2000, 40, 0, 0, 0},
    {"advection1", 200, 50, 3000, 50, 0, 0, 0},
    {"darcy-pwc", 100, 25, 500, 0, 200, 0, 0},
    {"darcy-cont", 100, 25, 500, 0, 100, 32, 32},
    {"darcy-tri", 200, 50, 1500, 40, 64, 16, 32},
    {"darcy-tri-notch", 100, 25, 500, 40, 80, 0, 32},
};

RunPreset from_rows(const ArchRow& row) {
  RunPreset p;
  p.name = row.name;
  p.problem = row.problem;
  p.x_q_budget = row.x_q;
  p.arch.d = (row.problem == Problem::burgers || row.problem == Problem::advection1) ? 1 : 2;
  p.arch.d_u = (row.problem == Problem::darcy_tri || row.problem == Problem::darcy_tri_notch) ? 2 : 1;
  p.arch.d_y = 1;
  p.arch.p = static_cast<int>(row.p);
  p.arch.q = static_cast<int>(row.q);
  p.arch.L_minus_1 = static_cast<int>(row.depth);
  p.data.problem = row.problem;
  p.data.m_train = row.m_train;
  p.data.m_test = row.m_test;
  if (row.resolution > 0) p.data.resolution = row.resolution;
  if (row.problem == Problem::advection1) p.data.t_end = 0.5;
  p.train.epochs = row.epochs;
  p.train.epochs_per_layer = row.epochs_per_layer;
  return p;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& row : kBase) {
    names.emplace_back(row.name);
    names.emplace_back(std::string(row.name) + "-desk");
  }
  return names;
}

RunPreset get_preset(const std::string& name) {
  const bool desk = name.size() > 5 && name.substr(name.size() - 5) == "-desk";
  const std::string base = desk ? name.substr(0, name.size() - 5) : name;
  for (const auto& row : kBase) {
    if (base != row.name) continue;
    RunPreset p = from_rows(row);
    if (desk) {
      p.name = name;
      for (const auto& d : kDesk) {
        if (base != d.base) continue;
        p.data.m_train = d.m_train;
        p.data.m_test = d.m_test;
        p.train.epochs = d.epochs;
        p.train.epochs_per_layer = d.epochs_per_layer;
        if (d.x_q_override > 0) p.x_q_budget = d.x_q_override;
        if (d.q_override > 0) p.arch.q = static_cast<int>(d.q_override);
        if (d.p_override > 0) p.arch.p = static_cast<int>(d.p_override);
      }
    }
    return p;
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ContractViolation("unknown preset '" + name + "' (known: " + known + ")");
}

QuadRule preset_quadrature(const RunPreset& preset) {
  switch (preset.problem) {
    case Problem::burgers:
    case Problem::advection1:
      return gauss_legendre(static_cast<int>(preset.x_q_budget), 0.0, 1.0);
    case Problem::darcy_pwc:
      return map_rule_to_mesh(triangle_rule_for_budget(preset.x_q_budget, 8),
                              unit_square_mesh(2));
    case Problem::darcy_cont:
      return map_rule_to_mesh(triangle_rule_for_budget(preset.x_q_budget, 2),
                              unit_square_mesh(1));
    case Problem::darcy_tri:
      // The domain is the reference triangle; the rule is used directly.
      return triangle_rule_for_budget(preset.x_q_budget, 1);
    case Problem::darcy_tri_notch:
      return map_rule_to_mesh(triangle_rule_for_budget(preset.x_q_budget, 5), notch_mesh());
  }
  throw ContractViolation("preset_quadrature: unhandled problem");
}

Tensor preset_train_grid(const RunPreset& preset) {
  switch (preset.problem) {
    case Problem::burgers:
    case Problem::advection1: {
      const long n = preset.data.resolution;
      Tensor g = Tensor::zeros({n, 1});
      for (long j = 0; j < n; ++j) g.at(j, 0) = static_cast<double>(j) / static_cast<double>(n);
      return g;
    }
    case Problem::darcy_pwc:
    case Problem::darcy_cont: {
      const long n = preset.data.resolution;
      Tensor g = Tensor::zeros({n * n, 2});
      for (long iy = 0; iy < n; ++iy)
        for (long ix = 0; ix < n; ++ix) {
          g.at(iy * n + ix, 0) = static_cast<double>(ix) / static_cast<double>(n - 1);
          g.at(iy * n + ix, 1) = static_cast<double>(iy) / static_cast<double>(n - 1);
        }
      return g;
    }
    case Problem::darcy_tri:
    case Problem::darcy_tri_notch:
      return dataset_mesh(preset.data).vertices;
  }
  throw ContractViolation("preset_train_grid: unhandled problem");
}

double preset_fill_distance(const RunPreset& preset, const Tensor& grid) {
  switch (preset.problem) {
    case Problem::burgers:
    case Problem::advection1:
      return 0.5 / static_cast<double>(grid.shape[0]);
    case Problem::darcy_pwc:
    case Problem::darcy_cont: {
      const long n = static_cast<long>(std::lround(std::sqrt(static_cast<double>(grid.shape[0]))));
      return 1.0 / (static_cast<double>(n - 1) * std::sqrt(2.0));
    }
    case Problem::darcy_tri:
    case Problem::darcy_tri_notch:
      return mesh_fill_distance(dataset_mesh(preset.data));
  }
  throw ContractViolation("preset_fill_distance: unhandled problem");
}

KnoModel build_preset_model(const RunPreset& preset, Rng& rng) {
  Tensor grid = preset_train_grid(preset);
  QuadRule quad = preset_quadrature(preset);
  const double fill = preset_fill_distance(preset, grid);
  return init_model(preset.arch, std::move(quad), std::move(grid), fill, rng);
}

}  // namespace kno

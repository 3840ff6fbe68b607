// kno: data generation, training, evaluation and diagnostics for
// kernel-based neural operators.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "kno/datasets.hpp"
#include "kno/diagnostics.hpp"
#include "kno/errors.hpp"
#include "kno/io.hpp"
#include "kno/model.hpp"
#include "kno/presets.hpp"
#include "kno/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kno;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string default_out_dir() {
  const char* env = std::getenv("KNO_OUT_DIR");
  return env && *env ? std::string(env) : std::string("out");
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  return out;
}

// Flat key = value config document; unknown keys are rejected.
std::map<std::string, std::string> parse_config_file(const std::string& path) {
  static const std::set<std::string> known = {
      "epochs",     "epochs-per-layer", "lr-max",     "lr-min",     "cycle-length",
      "reg-lambda", "batch-size",       "seed",       "normalization", "m-train",
      "m-test",     "resolution",       "replicates",
  };
  std::map<std::string, std::string> out;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
      if (blank) continue;
      throw ContractViolation(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!known.count(key))
      throw ContractViolation(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    out[key] = value;
  }
  return out;
}

struct TrainCli {
  std::string preset_name;
  std::string data_dir;
  std::string out_dir;
  std::string config_file;
  long epochs = -1;
  long epochs_per_layer = -1;
  double lr_max = -1, lr_min = -1;
  long cycle_length = -1;
  double reg_lambda = -1;
  long batch_size = -1;
  long m_train = -1, m_test = -1;
  long resolution = -1;
  long replicates = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string normalization;
  bool gen_if_missing = false;
};

void apply_config_file(TrainCli& tc, CLI::App* cmd) {
  if (tc.config_file.empty()) return;
  auto kv = parse_config_file(tc.config_file);
  auto unset = [cmd](const char* flag) { return cmd->count(flag) == 0; };
  if (kv.count("epochs") && unset("--epochs")) tc.epochs = std::stol(kv["epochs"]);
  if (kv.count("epochs-per-layer") && unset("--freeze-epochs"))
    tc.epochs_per_layer = std::stol(kv["epochs-per-layer"]);
  if (kv.count("lr-max") && unset("--lr-max")) tc.lr_max = std::stod(kv["lr-max"]);
  if (kv.count("lr-min") && unset("--lr-min")) tc.lr_min = std::stod(kv["lr-min"]);
  if (kv.count("cycle-length") && unset("--cycle-length"))
    tc.cycle_length = std::stol(kv["cycle-length"]);
  if (kv.count("reg-lambda") && unset("--reg")) tc.reg_lambda = std::stod(kv["reg-lambda"]);
  if (kv.count("batch-size") && unset("--batch")) tc.batch_size = std::stol(kv["batch-size"]);
  if (kv.count("m-train") && unset("--m-train")) tc.m_train = std::stol(kv["m-train"]);
  if (kv.count("m-test") && unset("--m-test")) tc.m_test = std::stol(kv["m-test"]);
  if (kv.count("resolution") && unset("--resolution")) tc.resolution = std::stol(kv["resolution"]);
  if (kv.count("replicates") && unset("--replicates")) tc.replicates = std::stol(kv["replicates"]);
  if (kv.count("normalization") && unset("--normalization")) tc.normalization = kv["normalization"];
  if (kv.count("seed") && unset("--seed")) {
    tc.seed = std::stoull(kv["seed"]);
    tc.seed_set = true;
  }
}

RunPreset resolve_preset(const TrainCli& tc) {
  RunPreset preset = get_preset(tc.preset_name);
  if (tc.epochs >= 0) preset.train.epochs = tc.epochs;
  if (tc.epochs_per_layer >= 0) preset.train.epochs_per_layer = tc.epochs_per_layer;
  if (tc.lr_max > 0) preset.train.lr_max = tc.lr_max;
  if (tc.lr_min > 0) preset.train.lr_min = tc.lr_min;
  if (tc.cycle_length > 0) preset.train.cycle_length = tc.cycle_length;
  if (tc.reg_lambda >= 0) preset.train.reg_lambda = tc.reg_lambda;
  if (tc.batch_size >= 0) preset.train.batch_size = tc.batch_size;
  if (tc.m_train > 0) preset.data.m_train = tc.m_train;
  if (tc.m_test >= 0) preset.data.m_test = tc.m_test;
  if (tc.resolution > 0) preset.data.resolution = tc.resolution;
  if (!tc.normalization.empty()) {
    preset.train.normalization = tc.normalization;
    preset.arch.normalization = tc.normalization;
  }
  preset.train.seed = tc.seed;
  preset.data.seed = tc.seed_set ? tc.seed : preset.data.seed;
  preset.arch.normalization = preset.train.normalization;
  return preset;
}

json preset_echo(const RunPreset& p) {
  return json{{"name", p.name},
              {"problem", problem_name(p.problem)},
              {"x_q_budget", p.x_q_budget},
              {"arch",
               {{"d", p.arch.d},
                {"d_u", p.arch.d_u},
                {"d_y", p.arch.d_y},
                {"p", p.arch.p},
                {"q", p.arch.q},
                {"L_minus_1", p.arch.L_minus_1},
                {"block_kernel", kernel_kind_name(p.arch.block_kind)},
                {"final_kernel", kernel_kind_name(p.arch.final_kind)}}},
              {"data",
               {{"m_train", p.data.m_train},
                {"m_test", p.data.m_test},
                {"resolution", p.data.resolution},
                {"seed", p.data.seed}}},
              {"train",
               {{"epochs", p.train.epochs},
                {"epochs_per_layer", p.train.epochs_per_layer},
                {"lr_max", p.train.lr_max},
                {"lr_min", p.train.lr_min},
                {"cycle_length", p.train.cycle_length},
                {"reg_lambda", p.train.reg_lambda},
                {"batch_size", p.train.batch_size},
                {"normalization", p.train.normalization},
                {"seed", p.train.seed}}}};
}

struct LoadedData {
  Dataset train, test;
  std::string train_path, test_path;
  std::uint64_t train_hash = 0, test_hash = 0;
};

LoadedData load_problem_data(const RunPreset& preset, const std::string& data_dir,
                             bool gen_if_missing) {
  LoadedData ld;
  const std::string base = data_dir + "/" + problem_name(preset.problem);
  ld.train_path = base + "_train.knod";
  ld.test_path = base + "_test.knod";
  if (!fs::exists(ld.train_path) || !fs::exists(ld.test_path)) {
    if (!gen_if_missing)
      throw ContractViolation("dataset not found under " + data_dir + " (expected " +
                              ld.train_path + "); run `kno gen-data` first or pass --gen");
    ensure_dir(data_dir);
    build_and_write_dataset(preset.data, data_dir);
  }
  ld.train = read_dataset(ld.train_path);
  ld.test = read_dataset(ld.test_path);
  ld.train_hash = fnv1a_file(ld.train_path);
  ld.test_hash = fnv1a_file(ld.test_path);
  return ld;
}

// Deterministic Fisher-Yates reshuffle of the combined train/test pool.
void resplit(const Dataset& train, const Dataset& test, std::uint64_t split_seed, Dataset& out_train,
             Dataset& out_test) {
  const long m_train = train.sample_count();
  const long m_test = test.sample_count();
  const long total = m_train + m_test;
  std::vector<long> order(static_cast<std::size_t>(total));
  for (long i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(split_seed ^ 0x9e3779b97f4a7c15ULL);
  for (long i = total - 1; i > 0; --i) {
    const long j = static_cast<long>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  auto fetch = [&](long pooled, const Tensor*& in, const Tensor*& outp, long& local) {
    if (pooled < m_train) {
      in = &train.inputs;
      outp = &train.outputs;
      local = pooled;
    } else {
      in = &test.inputs;
      outp = &test.outputs;
      local = pooled - m_train;
    }
  };
  out_train = train;
  out_test = test;
  const std::int64_t nt = train.grid.shape[0];
  for (long dst = 0; dst < total; ++dst) {
    const Tensor* src_in;
    const Tensor* src_out;
    long local;
    fetch(order[static_cast<std::size_t>(dst)], src_in, src_out, local);
    Tensor& din = dst < m_train ? out_train.inputs : out_test.inputs;
    Tensor& dout = dst < m_train ? out_train.outputs : out_test.outputs;
    const long dlocal = dst < m_train ? dst : dst - m_train;
    for (std::int64_t n = 0; n < nt; ++n) {
      for (int c = 0; c < train.d_u; ++c) din.at(dlocal, n, c) = src_in->at(local, n, c);
      for (int c = 0; c < train.d_y; ++c) dout.at(dlocal, n, c) = src_out->at(local, n, c);
    }
  }
}

int cmd_gen_data(const std::string& problem, long m_train, long m_test, long resolution,
                 std::uint64_t seed, const std::string& out_dir, double nu,
                 const std::string& mesh_path, long mesh_subdiv, long notch_refine) {
  DatasetSpec spec;
  spec.problem = problem_from_name(problem);
  spec.m_train = m_train;
  spec.m_test = m_test;
  if (resolution > 0) spec.resolution = resolution;
  spec.seed = seed;
  spec.nu = nu;
  if (spec.problem == Problem::advection1) spec.t_end = 0.5;
  spec.mesh_path = mesh_path;
  if (mesh_subdiv > 0) spec.mesh_subdiv = mesh_subdiv;
  if (notch_refine >= 0) spec.notch_refine = notch_refine;
  ensure_dir(out_dir);
  auto [train_path, test_path] = build_and_write_dataset(spec, out_dir);
  std::cout << train_path << "  fnv1a:" << hex64(fnv1a_file(train_path)) << "\n";
  std::cout << test_path << "  fnv1a:" << hex64(fnv1a_file(test_path)) << "\n";
  return 0;
}

int cmd_train(TrainCli& tc) {
  const auto t0 = std::chrono::steady_clock::now();
  RunPreset preset = resolve_preset(tc);
  ensure_dir(tc.out_dir);
  LoadedData data = load_problem_data(preset, tc.data_dir, tc.gen_if_missing);

  // replicates: 1 = single run on the file split; 3 = three parameter seeds;
  // 9 = three seeded resplits x three parameter seeds.
  struct RunResult {
    std::uint64_t split_seed, init_seed;
    double best_pct, final_pct;
    long best_epoch;
    std::string checkpoint;
  };
  std::vector<RunResult> results;
  const long n_splits = tc.replicates >= 9 ? 3 : 1;
  const long n_inits = tc.replicates >= 3 ? 3 : 1;

  for (long s = 0; s < n_splits; ++s) {
    Dataset train_s, test_s;
    if (n_splits > 1) {
      resplit(data.train, data.test, preset.train.seed + static_cast<std::uint64_t>(s), train_s,
              test_s);
    } else {
      train_s = data.train;
      test_s = data.test;
    }
    for (long i = 0; i < n_inits; ++i) {
      const std::uint64_t init_seed = preset.train.seed + static_cast<std::uint64_t>(i);
      const std::string rep_dir =
          results.empty() && n_splits == 1 && n_inits == 1
              ? tc.out_dir
              : tc.out_dir + "/rep_s" + std::to_string(s) + "_i" + std::to_string(i);
      ensure_dir(rep_dir);
      TrainConfig cfg = preset.train;
      cfg.seed = init_seed;
      cfg.checkpoint_dir = rep_dir;

      Rng rng(init_seed);
      KnoModel model = build_preset_model(preset, rng);
      freeze_train(model, train_s, cfg);
      TrainHistory history = train(model, train_s, test_s, cfg);
      write_history_csv(history, rep_dir + "/history.csv");

      results.push_back({preset.train.seed + static_cast<std::uint64_t>(s), init_seed,
                         history.best_test_rel_l2_pct, history.final_test_rel_l2_pct,
                         history.best_epoch, rep_dir + "/model_best.ckpt"});
      std::cout << "run split=" << s << " init=" << i
                << " best_test_pct=" << history.best_test_rel_l2_pct
                << " final_test_pct=" << history.final_test_rel_l2_pct << "\n";
    }
  }

  double mean_best = 0.0, mean_final = 0.0;
  for (const auto& r : results) {
    mean_best += r.best_pct;
    mean_final += r.final_pct;
  }
  mean_best /= static_cast<double>(results.size());
  mean_final /= static_cast<double>(results.size());
  double var_best = 0.0, var_final = 0.0;
  for (const auto& r : results) {
    var_best += (r.best_pct - mean_best) * (r.best_pct - mean_best);
    var_final += (r.final_pct - mean_final) * (r.final_pct - mean_final);
  }
  var_best /= static_cast<double>(results.size());
  var_final /= static_cast<double>(results.size());

  json manifest;
  manifest["command"] = "train";
  manifest["version"] = kVersion;
  manifest["checkpoint_format_version"] = 1;
  manifest["preset"] = preset_echo(preset);
  manifest["replicates"] = results.size();
  manifest["data"] = {{"train_path", data.train_path},
                      {"train_fnv1a", hex64(data.train_hash)},
                      {"test_path", data.test_path},
                      {"test_fnv1a", hex64(data.test_hash)}};
  json jruns = json::array();
  for (const auto& r : results)
    jruns.push_back({{"split_seed", r.split_seed},
                     {"init_seed", r.init_seed},
                     {"best_test_rel_l2_pct", r.best_pct},
                     {"final_test_rel_l2_pct", r.final_pct},
                     {"best_epoch", r.best_epoch},
                     {"checkpoint", r.checkpoint}});
  manifest["runs"] = jruns;
  manifest["metrics"] = {{"mean_best_test_rel_l2_pct", mean_best},
                         {"std_best_test_rel_l2_pct", std::sqrt(var_best)},
                         {"mean_final_test_rel_l2_pct", mean_final},
                         {"std_final_test_rel_l2_pct", std::sqrt(var_final)}};
  manifest["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file_atomic(tc.out_dir + "/manifest.json", manifest.dump(2) + "\n");
  std::cout << "manifest: " << tc.out_dir << "/manifest.json\n";
  return 0;
}

Normalizer normalizer_from_train(const KnoModel& model, const Dataset& train) {
  return fit_normalizer(to_channels_first(train.inputs), to_channels_first(train.outputs),
                        model.config.normalization == "zscore");
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_dir) {
  KnoModel model = load_checkpoint(checkpoint);
  Dataset train, test;
  bool found = false;
  for (const auto& name : problem_names()) {
    const std::string base = data_dir + "/" + name;
    if (fs::exists(base + "_train.knod") && fs::exists(base + "_test.knod")) {
      train = read_dataset(base + "_train.knod");
      if (train.grid.same_shape(model.train_grid) && train.grid.data == model.train_grid.data) {
        test = read_dataset(base + "_test.knod");
        found = true;
        break;
      }
    }
  }
  if (!found)
    throw ContractViolation("eval: no dataset under " + data_dir + " matches the checkpoint grid");
  Normalizer nz = normalizer_from_train(model, train);
  const double train_pct = evaluate_model(model, train, nz);
  const double test_pct = evaluate_model(model, test, nz);
  std::cout.precision(17);
  std::cout << "train_rel_l2_pct=" << train_pct << "\n";
  std::cout << "test_rel_l2_pct=" << test_pct << "\n";
  ensure_dir(out_dir);
  json j{{"checkpoint", checkpoint},
         {"train_rel_l2_pct", train_pct},
         {"test_rel_l2_pct", test_pct}};
  write_file_atomic(out_dir + "/eval.json", j.dump(2) + "\n");
  return 0;
}

int cmd_superres(const std::string& checkpoint, const std::string& data_dir,
                 const std::string& preset_name, long factor, const std::string& out_dir) {
  KnoModel model = load_checkpoint(checkpoint);
  RunPreset preset = get_preset(preset_name);
  const std::string base = data_dir + "/" + problem_name(preset.problem);
  Dataset train = read_dataset(base + "_train.knod");
  Dataset test = read_dataset(base + "_test.knod");
  preset.data.m_train = train.sample_count();
  preset.data.m_test = test.sample_count();
  SuperresReport report = superres_eval(model, preset, train, test, factor);
  std::cout.precision(17);
  std::cout << "coarse_err_pct=" << report.coarse_err_pct << "\n";
  std::cout << "fine_err_pct=" << report.fine_err_pct << "\n";
  std::cout << "restriction_max_abs=" << report.restriction_max_abs << "\n";
  ensure_dir(out_dir);
  write_superres_report(report, out_dir + "/superres.json", out_dir + "/superres.csv");
  return 0;
}

int cmd_ntk(const std::string& kernel_config, std::uint64_t seed, long probe_samples,
            long probe_points, const std::string& out_dir) {
  NtkReport report = ntk_probe_run(kernel_config, seed, probe_samples, probe_points);
  std::cout.precision(17);
  std::cout << "label=" << report.label << " lambda_max=" << report.lambda_max
            << " lambda_min_plus=" << report.lambda_min_plus
            << " condition_proxy=" << report.condition_proxy << "\n";
  ensure_dir(out_dir);
  write_ntk_report(report, out_dir + "/ntk_" + kernel_config + ".json",
                   out_dir + "/ntk_" + kernel_config + ".csv");
  return 0;
}

int cmd_sparsity(const std::string& checkpoint, const std::string& out_dir) {
  KnoModel model = load_checkpoint(checkpoint);
  SparsityReport report = sparsity_report(model);
  for (std::size_t l = 0; l < report.per_layer.size(); ++l)
    std::cout << "layer " << l << " zero_fraction=" << report.per_layer[l] << "\n";
  std::cout << "mean=" << report.mean << "\n";
  ensure_dir(out_dir);
  write_sparsity_report(report, out_dir + "/sparsity.json", out_dir + "/sparsity.csv");
  return 0;
}

int cmd_ablate(const std::string& preset_name, const std::string& axis_name,
               const std::string& values_csv, const std::string& out_dir) {
  RunPreset preset = get_preset(preset_name);
  AblationAxis axis = ablation_axis_from_name(axis_name);
  std::vector<double> values = parse_values(values_csv);
  auto rows = ablation_sweep(preset, axis, values);
  ensure_dir(out_dir);
  write_ablation_csv(rows, out_dir + "/ablation_" + axis_name + ".csv");
  for (const auto& r : rows)
    std::cout << "value=" << r.value << " train_err=" << r.train_err_pct
              << " test_err=" << r.test_err_pct << " params=" << r.params
              << " seconds=" << r.seconds << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel neural operators: datasets, training, diagnostics"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a benchmark dataset");
  std::string g_problem, g_out = default_out_dir(), g_mesh;
  long g_mtrain = 1000, g_mtest = 200, g_res = 0, g_subdiv = 0, g_notch = -1;
  std::uint64_t g_seed = 0;
  double g_nu = 0.1;
  gen->add_option("--problem", g_problem, "problem name")
      ->required()
      ->check(CLI::IsMember(problem_names()));
  gen->add_option("--m-train", g_mtrain, "training samples");
  gen->add_option("--m-test", g_mtest, "test samples");
  gen->add_option("--resolution", g_res, "grid resolution");
  gen->add_option("--seed", g_seed, "dataset seed");
  gen->add_option("--out", g_out, "output directory");
  gen->add_option("--nu", g_nu, "Burgers viscosity");
  gen->add_option("--mesh", g_mesh, "mesh file for triangular problems");
  gen->add_option("--mesh-subdiv", g_subdiv, "structured subdivision for darcy_tri");
  gen->add_option("--notch-refine", g_notch, "uniform refinements of the notch mesh");

  // train
  auto* tr = app.add_subcommand("train", "train a model from a preset");
  TrainCli tc;
  tc.out_dir = default_out_dir();
  tc.data_dir = default_out_dir();
  tr->add_option("--preset", tc.preset_name, "preset name")
      ->required()
      ->check(CLI::IsMember(preset_names()));
  tr->add_option("--data", tc.data_dir, "directory holding <problem>_{train,test}.knod");
  tr->add_option("--out", tc.out_dir, "output directory");
  tr->add_option("--config", tc.config_file, "flat key = value config file");
  tr->add_option("--epochs", tc.epochs, "training epochs");
  tr->add_option("--freeze-epochs", tc.epochs_per_layer, "freeze-training epochs per layer");
  tr->add_option("--lr-max", tc.lr_max, "max learning rate");
  tr->add_option("--lr-min", tc.lr_min, "min learning rate");
  tr->add_option("--cycle-length", tc.cycle_length, "cosine cycle length (epochs)");
  tr->add_option("--reg", tc.reg_lambda, "shape-parameter regularization");
  tr->add_option("--batch", tc.batch_size, "mini-batch size (0 = full batch)");
  tr->add_option("--m-train", tc.m_train, "override preset training samples");
  tr->add_option("--m-test", tc.m_test, "override preset test samples");
  tr->add_option("--resolution", tc.resolution, "override preset resolution");
  tr->add_option("--replicates", tc.replicates, "1, 3 (seeds) or 9 (3 splits x 3 seeds)");
  auto* seed_opt = tr->add_option("--seed", tc.seed, "base seed");
  tr->add_option("--normalization", tc.normalization, "zscore | none")
      ->check(CLI::IsMember({"zscore", "none"}));
  tr->add_flag("--gen", tc.gen_if_missing, "generate the dataset if missing");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string e_ckpt, e_data = default_out_dir(), e_out = default_out_dir();
  ev->add_option("--checkpoint", e_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", e_data, "dataset directory");
  ev->add_option("--out", e_out, "output directory");

  // superres
  auto* sr = app.add_subcommand("superres", "zero-shot super-resolution evaluation");
  std::string s_ckpt, s_data = default_out_dir(), s_out = default_out_dir(), s_preset;
  long s_factor = 2;
  sr->add_option("--checkpoint", s_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  sr->add_option("--preset", s_preset, "preset name")
      ->required()
      ->check(CLI::IsMember(preset_names()));
  sr->add_option("--data", s_data, "dataset directory");
  sr->add_option("--factor", s_factor, "refinement factor");
  sr->add_option("--out", s_out, "output directory");

  // ntk
  auto* nt = app.add_subcommand("ntk", "neural tangent kernel spectrum");
  std::string n_config = "wendland-sm", n_out = default_out_dir();
  std::uint64_t n_seed = 0;
  long n_probe_samples = 4, n_probe_points = 4;
  nt->add_option("--kernel-config", n_config, "wendland-sm | gaussian-all")
      ->check(CLI::IsMember({"wendland-sm", "gaussian-all"}));
  nt->add_option("--seed", n_seed, "probe seed");
  nt->add_option("--probe-samples", n_probe_samples, "probe batch size");
  nt->add_option("--probe-points", n_probe_points, "output grid points");
  nt->add_option("--out", n_out, "output directory");

  // sparsity
  auto* sp = app.add_subcommand("sparsity", "learned Gram sparsity report");
  std::string p_ckpt, p_out = default_out_dir();
  sp->add_option("--checkpoint", p_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  sp->add_option("--out", p_out, "output directory");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train across one architecture axis");
  std::string a_preset, a_axis, a_values, a_out = default_out_dir();
  ab->add_option("--preset", a_preset, "preset name")
      ->required()
      ->check(CLI::IsMember(preset_names()));
  ab->add_option("--axis", a_axis, "q_ratio | n_quad | depth")
      ->required()
      ->check(CLI::IsMember({"q_ratio", "n_quad", "depth"}));
  ab->add_option("--values", a_values, "comma-separated axis values")->required();
  ab->add_option("--out", a_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(g_problem, g_mtrain, g_mtest, g_res, g_seed, g_out, g_nu, g_mesh,
                          g_subdiv, g_notch);
    if (tr->parsed()) {
      tc.seed_set = seed_opt->count() > 0;
      apply_config_file(tc, tr);
      return cmd_train(tc);
    }
    if (ev->parsed()) return cmd_eval(e_ckpt, e_data, e_out);
    if (sr->parsed()) return cmd_superres(s_ckpt, s_data, s_preset, s_factor, s_out);
    if (nt->parsed()) return cmd_ntk(n_config, n_seed, n_probe_samples, n_probe_points, n_out);
    if (sp->parsed()) return cmd_sparsity(p_ckpt, p_out);
    if (ab->parsed()) return cmd_ablate(a_preset, a_axis, a_values, a_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ConditioningError& e) {
    std::cerr << "conditioning error: " << e.what() << "\n";
    return 3;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

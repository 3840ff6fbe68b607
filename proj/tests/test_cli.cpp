#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "kno/datasets.hpp"
#include "kno/errors.hpp"
#include "kno/io.hpp"
#include "kno/model.hpp"
#include "kno/presets.hpp"
#include "kno/quadrature.hpp"

using namespace kno;
namespace fs = std::filesystem;

#ifndef KNO_CLI_PATH
#define KNO_CLI_PATH "kno"
#endif

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KNO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("presets reproduce the architecture table") {
  struct Row {
    const char* name;
    long x_q, depth, q, p;
    long epochs, epw;
  };
  const Row rows[] = {
      {"burgers", 30, 6, 64, 64, 30000, 625},
      {"advection1", 32, 5, 64, 64, 70000, 2857},
      {"darcy-pwc", 864, 4, 16, 32, 15000, 166},
      {"darcy-cont", 294, 4, 64, 64, 30000, 666},
      {"darcy-tri", 300, 4, 32, 64, 20000, 166},
      {"darcy-tri-notch", 375, 4, 16, 64, 5000, 83},
  };
  for (const auto& r : rows) {
    RunPreset p = get_preset(r.name);
    CHECK(p.x_q_budget == r.x_q);
    CHECK(p.arch.L_minus_1 == r.depth);
    CHECK(p.arch.q == r.q);
    CHECK(p.arch.p == r.p);
    CHECK(p.train.epochs == r.epochs);
    CHECK(p.train.epochs_per_layer == r.epw);
    CHECK(p.data.m_train >= 1000);
  }
  CHECK_THROWS_AS(get_preset("bogus"), ContractViolation);
}

TEST_CASE("desk presets shrink sample counts and epochs") {
  for (const char* base : {"burgers", "advection1"}) {
    RunPreset full = get_preset(base);
    RunPreset desk = get_preset(std::string(base) + "-desk");
    CHECK(desk.data.m_train < full.data.m_train);
    CHECK(desk.train.epochs < full.train.epochs);
    // 1-D desk presets keep the architecture
    CHECK(desk.arch.p == full.arch.p);
    CHECK(desk.arch.q == full.arch.q);
    CHECK(desk.arch.L_minus_1 == full.arch.L_minus_1);
    CHECK(desk.x_q_budget == full.x_q_budget);
  }
}

TEST_CASE("preset quadrature layouts honor the point budgets") {
  for (const char* name : {"burgers", "advection1", "darcy-pwc", "darcy-cont", "darcy-tri",
                           "darcy-tri-notch"}) {
    RunPreset p = get_preset(name);
    QuadRule rule = preset_quadrature(p);
    CHECK(rule.size() >= p.x_q_budget);
    double s = 0.0;
    for (std::int64_t i = 0; i < rule.size(); ++i) s += rule.weights[i];
    CHECK(s == doctest::Approx(rule.domain_measure).epsilon(1e-10));
  }
  // 1-D rules hit the budget exactly (Gauss-Legendre with n = X_Q)
  CHECK(preset_quadrature(get_preset("burgers")).size() == 30);
  CHECK(preset_quadrature(get_preset("advection1")).size() == 32);
}

TEST_CASE("build_preset_model wires geometry and counts match the formula") {
  RunPreset p = get_preset("burgers");
  Rng rng(0);
  KnoModel model = build_preset_model(p, rng);
  CHECK(count_parameters(model) == 34306);
  CHECK(model.train_grid.shape[0] == 128);
  CHECK(model.quad.size() == 30);
}

TEST_CASE("cli: usage errors exit with code 2") {
  CHECK(run_cli("gen-data --problem bogus") == 2);
  CHECK(run_cli("definitely-not-a-command") == 2);
  CHECK(run_cli("train --preset nope") == 2);
  CHECK(run_cli("train") == 2);  // missing required --preset
  CHECK(run_cli("eval --checkpoint /does/not/exist.ckpt") == 2);
}

TEST_CASE("cli: gen-data writes deterministic files and a hash line") {
  const std::string dir = "cli_test_out";
  fs::remove_all(dir);
  CHECK(run_cli("gen-data --problem advection1 --m-train 6 --m-test 2 --resolution 40 --seed 7 "
                "--out " + dir) == 0);
  const std::string train_path = dir + "/advection1_train.knod";
  const std::string test_path = dir + "/advection1_test.knod";
  REQUIRE(fs::exists(train_path));
  REQUIRE(fs::exists(test_path));
  Dataset train = read_dataset(train_path);
  CHECK(train.sample_count() == 6);
  Dataset test = read_dataset(test_path);
  CHECK(test.sample_count() == 2);

  const std::uint64_t h1 = fnv1a_file(train_path);
  CHECK(run_cli("gen-data --problem advection1 --m-train 6 --m-test 2 --resolution 40 --seed 7 "
                "--out " + dir) == 0);
  CHECK(fnv1a_file(train_path) == h1);
  fs::remove_all(dir);
}

TEST_CASE("cli: train writes checkpoint, history and manifest; eval reproduces it") {
  const std::string dir = "cli_train_out";
  fs::remove_all(dir);
  REQUIRE(run_cli("gen-data --problem advection1 --m-train 8 --m-test 3 --resolution 40 --seed 3 "
                  "--out " + dir) == 0);
  REQUIRE(run_cli("train --preset advection1-desk --data " + dir + " --out " + dir +
                  " --m-train 8 --m-test 3 --epochs 5 --freeze-epochs 0 --seed 3") == 0);
  REQUIRE(fs::exists(dir + "/model_best.ckpt"));
  REQUIRE(fs::exists(dir + "/model_final.ckpt"));
  REQUIRE(fs::exists(dir + "/history.csv"));
  REQUIRE(fs::exists(dir + "/manifest.json"));

  nlohmann::json manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("runs").size() == 1);
  const double manifest_best = manifest.at("runs")[0].at("best_test_rel_l2_pct").get<double>();

  // eval on the best checkpoint reproduces the manifest's number exactly
  REQUIRE(run_cli("eval --checkpoint " + dir + "/model_best.ckpt --data " + dir + " --out " + dir) ==
          0);
  nlohmann::json ev = nlohmann::json::parse(read_text_file(dir + "/eval.json"));
  CHECK(ev.at("test_rel_l2_pct").get<double>() == manifest_best);
  fs::remove_all(dir);
}

TEST_CASE("cli: config file keys apply, unknown keys are rejected") {
  const std::string dir = "cli_cfg_out";
  fs::remove_all(dir);
  fs::create_directories(dir);
  REQUIRE(run_cli("gen-data --problem advection1 --m-train 8 --m-test 3 --resolution 40 --seed 3 "
                  "--out " + dir) == 0);
  {
    std::ofstream cfg(dir + "/run.cfg");
    cfg << "# desk run\n";
    cfg << "epochs = 4\n";
    cfg << "epochs-per-layer = 0\n";
    cfg << "m-train = 8\n";
    cfg << "m-test = 3\n";
    cfg << "seed = 3\n";
  }
  REQUIRE(run_cli("train --preset advection1-desk --data " + dir + " --out " + dir + " --config " +
                  dir + "/run.cfg") == 0);
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  CHECK(manifest.at("preset").at("train").at("epochs").get<long>() == 4);

  // explicit flags beat the config file
  REQUIRE(run_cli("train --preset advection1-desk --data " + dir + " --out " + dir + " --config " +
                  dir + "/run.cfg --epochs 3") == 0);
  manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  CHECK(manifest.at("preset").at("train").at("epochs").get<long>() == 3);

  {
    std::ofstream cfg(dir + "/bad.cfg");
    cfg << "not-a-key = 1\n";
  }
  CHECK(run_cli("train --preset advection1-desk --data " + dir + " --out " + dir + " --config " +
                dir + "/bad.cfg") == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: ntk, sparsity and superres commands produce reports") {
  const std::string dir = "cli_diag_out";
  fs::remove_all(dir);
  REQUIRE(run_cli("ntk --kernel-config wendland-sm --out " + dir) == 0);
  CHECK(fs::exists(dir + "/ntk_wendland-sm.json"));
  CHECK(fs::exists(dir + "/ntk_wendland-sm.csv"));
  REQUIRE(run_cli("ntk --kernel-config gaussian-all --out " + dir) == 0);
  CHECK(fs::exists(dir + "/ntk_gaussian-all.json"));

  REQUIRE(run_cli("gen-data --problem advection1 --m-train 8 --m-test 3 --resolution 40 --seed 3 "
                  "--out " + dir) == 0);
  REQUIRE(run_cli("train --preset advection1-desk --data " + dir + " --out " + dir +
                  " --m-train 8 --m-test 3 --epochs 4 --freeze-epochs 0 --seed 3") == 0);
  REQUIRE(run_cli("sparsity --checkpoint " + dir + "/model_best.ckpt --out " + dir) == 0);
  CHECK(fs::exists(dir + "/sparsity.json"));
  REQUIRE(run_cli("superres --checkpoint " + dir + "/model_best.ckpt --preset advection1-desk "
                  "--data " + dir + " --factor 2 --out " + dir) == 0);
  CHECK(fs::exists(dir + "/superres.json"));
  fs::remove_all(dir);
}

TEST_CASE("replicates resplit and aggregate statistics") {
  const std::string dir = "cli_rep_out";
  fs::remove_all(dir);
  REQUIRE(run_cli("gen-data --problem advection1 --m-train 9 --m-test 3 --resolution 40 --seed 1 "
                  "--out " + dir) == 0);
  REQUIRE(run_cli("train --preset advection1-desk --data " + dir + " --out " + dir +
                  " --m-train 9 --m-test 3 --epochs 3 --freeze-epochs 0 --replicates 9 --seed 1") ==
          0);
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  CHECK(manifest.at("runs").size() == 9);
  CHECK(manifest.at("metrics").contains("mean_best_test_rel_l2_pct"));
  CHECK(manifest.at("metrics").contains("std_best_test_rel_l2_pct"));
  fs::remove_all(dir);
}

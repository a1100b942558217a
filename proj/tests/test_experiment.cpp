#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rat/env.hpp"
#include "rat/experiment.hpp"

using namespace rat;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rat_test_experiment_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  fs::path p = dir / "config.toml";
  std::ofstream(p) << text;
  return p;
}

// Runs the binary; returns its exit code.
int rat_cli(const std::string& args, const std::string& env = "") {
  std::string cmd = env + " \"" RAT_BINARY "\" " + args + " >/dev/null 2>&1";
  if (env.empty()) cmd = "unset RAT_SEED; " + cmd;
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n' ? 1 : 0;
  return n;
}

const char* kSmallTrain = R"(
updates = 3
rollout_steps = 32
n_envs = 2
minibatch = 32
seeds = [1, 2]
)";

}  // namespace

TEST_CASE("exit code 2 for configuration errors") {
  auto dir = scratch("config_errors");
  auto good = write_config(dir, "updates = 1\n");
  CHECK(rat_cli("train --config /nonexistent.toml --out " + (dir / "o").string()) == 2);
  CHECK(rat_cli("train --config " + good.string() + " --out " + (dir / "o").string() + " --override bogus=1") == 2);
  CHECK(rat_cli("train --config " + good.string() + " --out " + (dir / "o").string() +
                " --override lambda=-1") == 2);
  CHECK(rat_cli("train --config " + good.string()) == 2);
  CHECK(rat_cli("frobnicate --config " + good.string() + " --out x") == 2);
  auto bad = dir / "bad.toml";
  std::ofstream(bad) << "[section]\nupdates = 1\n";
  CHECK(rat_cli("train --config " + bad.string() + " --out " + (dir / "o").string()) == 2);
  CHECK(rat_cli("train --config " + good.string() + " --out " + (dir / "o").string(), "RAT_SEED=abc") == 2);
}

TEST_CASE("illustrate-gaussian writes the gradient field") {
  auto dir = scratch("illustrate");
  auto cfg = write_config(dir, "n_samples = 400\nblock_size = 100\n");
  REQUIRE(rat_cli("illustrate-gaussian --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
  REQUIRE(rat_cli("illustrate-gaussian --config " + cfg.string() + " --out " + (dir / "b").string()) == 0);
  const std::string csv = slurp(dir / "a" / "gradient_field.csv");
  CHECK(first_line(csv).rfind("#schema=", 0) == 0);
  CHECK(line_count(csv) == 2 + 17 * 13 * 4);
  CHECK(csv == slurp(dir / "b" / "gradient_field.csv"));
  CHECK(slurp(dir / "a" / "summary.json") == slurp(dir / "b" / "summary.json"));
  Json summary = Json::parse(slurp(dir / "a" / "summary.json"));
  CHECK(summary["config"]["n_samples"] == 400);
  CHECK(summary["grid_points"] == 17 * 13);
}

TEST_CASE("verify-kaczmarz without noise reports a zero floor ratio") {
  auto dir = scratch("verify");
  auto cfg = write_config(dir, "n_systems = 3\nn_runs = 20\nn_steps = 50\nnoise_std = 0.0\nmu_samples = 100\n");
  const int code = rat_cli("verify-kaczmarz --config " + cfg.string() + " --out " + dir.string());
  Json rep = Json::parse(slurp(dir / "report.json"));
  CHECK(rep["noise_floor_ratio"] == 0.0);
  CHECK(rep["mu_hat"].size() == 3);
  CHECK(rep["config"]["noise_std"] == 0.0);
  CHECK(code == (rep["all_satisfied"].get<bool>() ? 0 : 1));
  for (const auto& m : rep["mu_hat"]) {
    CHECK(m.get<double>() > 0.0);
    CHECK(m.get<double>() <= 1.0);
  }
}

TEST_CASE("train output is byte-identical across reruns") {
  auto dir = scratch("train_repeat");
  auto cfg = write_config(dir, kSmallTrain);
  REQUIRE(rat_cli("train --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
  REQUIRE(rat_cli("train --config " + cfg.string() + " --out " + (dir / "b").string()) == 0);
  for (const char* f : {"train_seed1.csv", "train_seed2.csv", "summary.json"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  const std::string csv = slurp(dir / "a" / "train_seed1.csv");
  CHECK(first_line(csv).rfind("#schema=", 0) == 0);
  CHECK(line_count(csv) == 2 + 3);
  CHECK(csv != slurp(dir / "a" / "train_seed2.csv"));
  Json summary = Json::parse(slurp(dir / "a" / "summary.json"));
  CHECK(summary["config"]["updates"] == 3);
  CHECK(summary["runs"].size() == 2);
}

TEST_CASE("seed precedence on the command line") {
  auto dir = scratch("seed_precedence");
  auto cfg = write_config(dir, kSmallTrain);
  const std::string base = "train --config " + cfg.string() + " --out ";
  REQUIRE(rat_cli(base + (dir / "env").string(), "RAT_SEED=7") == 0);
  CHECK(fs::exists(dir / "env" / "train_seed7.csv"));
  CHECK_FALSE(fs::exists(dir / "env" / "train_seed1.csv"));
  REQUIRE(rat_cli(base + (dir / "flag").string() + " --seed 9", "RAT_SEED=7") == 0);
  CHECK(fs::exists(dir / "flag" / "train_seed9.csv"));
  CHECK_FALSE(fs::exists(dir / "flag" / "train_seed7.csv"));
  Json summary = Json::parse(slurp(dir / "flag" / "summary.json"));
  CHECK(summary["config"]["seeds"] == Json::array({9}));
}

TEST_CASE("ablation with a single grid point") {
  auto dir = scratch("ablate");
  auto cfg = write_config(dir, std::string(kSmallTrain) + "axis = \"damping\"\nvalues = [0.5]\n");
  REQUIRE(rat_cli("ablate --config " + cfg.string() + " --out " + dir.string()) == 0);
  const std::string csv = slurp(dir / "ablation.csv");
  CHECK(first_line(csv).rfind("#schema=", 0) == 0);
  CHECK(line_count(csv) == 2 + 2);
}

TEST_CASE("exact_tnpg on the chain approaches the optimal return") {
  TrainSettings s;
  s.method = Method::exact_tnpg;
  s.rat.lr = 0.5;
  auto results = train_seeds(s, {1, 2, 3});
  const double optimum = optimal_episode_return(chain_mdp(s.chain_states, s.gamma), s.episode_length);
  double mean = 0;
  for (const auto& r : results) {
    REQUIRE_FALSE(r.failed);
    mean += r.final_return / results.size();
  }
  CHECK(mean >= 0.95 * optimum);
}

TEST_CASE("no_transform ablation point is vanilla policy gradient") {
  TrainSettings s;
  s.updates = 2;
  s.rollout_steps = 32;
  s.n_envs = 2;
  s.rat.minibatch = 32;
  TrainSettings off = ablation_point(s, "no_transform", 1.0);
  CHECK_FALSE(off.rat.transform);
  TrainSettings vanilla = s;
  vanilla.method = Method::vanilla_pg;
  auto a = train_run(off, 4);
  auto b = train_run(vanilla, 4);
  REQUIRE(a.final_theta.size() == b.final_theta.size());
  for (std::size_t i = 0; i < a.final_theta.size(); ++i) CHECK(a.final_theta[i] == doctest::Approx(b.final_theta[i]).epsilon(1e-9));
}

TEST_CASE("damping sweep on the point mass stays finite") {
  TrainSettings s;
  s.env = EnvKind::point_mass;
  s.updates = 2;
  s.rollout_steps = 50;
  s.n_envs = 2;
  s.rat.minibatch = 50;
  s.eval_episodes = 2;
  auto rows = run_ablation(s, "damping", {0.01, 0.1, 0.4, 0.8}, {1});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK_FALSE(r.failed);
    CHECK(std::isfinite(r.final_return));
  }
}

TEST_CASE("format_double round-trips") {
  for (double x : {0.1, -2.5e-300, 1.0 / 3.0, 123456789.0}) CHECK(std::stod(format_double(x)) == x);
  CHECK(format_double(std::nan("")) == "nan");
  CHECK(format_double(-INFINITY) == "-inf");
}

TEST_CASE("unwritable output directory is a runtime failure") {
  auto dir = scratch("unwritable");
  auto cfg = write_config(dir, kSmallTrain);
  std::ofstream(dir / "blocker") << "x";
  CHECK(rat_cli("train --config " + cfg.string() + " --out " + (dir / "blocker" / "sub").string()) == 3);
}

TEST_CASE("the embedded config reproduces the run") {
  auto dir = scratch("round_trip");
  auto cfg = write_config(dir, kSmallTrain);
  REQUIRE(rat_cli("train --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
  Json summary = Json::parse(slurp(dir / "a" / "summary.json"));
  std::ofstream(dir / "embedded.json") << summary["config"].dump();
  REQUIRE(rat_cli("train --config " + (dir / "embedded.json").string() + " --out " + (dir / "b").string()) == 0);
  for (const char* f : {"train_seed1.csv", "train_seed2.csv", "summary.json"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
}

TEST_CASE("seed outputs do not depend on sibling seeds") {
  auto dir = scratch("siblings");
  auto cfg = write_config(dir, kSmallTrain);
  REQUIRE(rat_cli("train --config " + cfg.string() + " --out " + (dir / "both").string()) == 0);
  REQUIRE(rat_cli("train --config " + cfg.string() + " --out " + (dir / "one").string() + " --seed 2") == 0);
  CHECK(slurp(dir / "both" / "train_seed2.csv") == slurp(dir / "one" / "train_seed2.csv"));
}

TEST_CASE("diverging seeds are reported as failed with exit code 3") {
  auto dir = scratch("diverge");
  auto cfg = write_config(dir, std::string(kSmallTrain) + "env = \"point_mass\"\nlr = 1e200\nclip_enabled = false\n");
  CHECK(rat_cli("train --config " + cfg.string() + " --out " + dir.string()) == 3);
  Json summary = Json::parse(slurp(dir / "summary.json"));
  REQUIRE(summary["runs"].size() == 2);
  for (const auto& r : summary["runs"]) {
    CHECK(r["failed"] == true);
    CHECK(r.contains("error"));
  }
  CHECK(summary["failed_seeds"] == 2);
  const std::string csv = slurp(dir / "train_seed1.csv");
  CHECK(csv.find(",nan,") != std::string::npos);
}

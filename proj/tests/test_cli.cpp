#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "marl/cliapp.hpp"
#include "marl/evalkit.hpp"
#include "marl/nn.hpp"

using namespace marl;

namespace {

int invoke(const std::vector<std::string>& args) { return marl::cli::run_cli(args); }

std::string fresh_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("marl_cli_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::set<std::string> dir_entries(const std::string& dir) {
  std::set<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    names.insert(entry.path().filename().string());
  return names;
}

}  // namespace

TEST_CASE("train with zero steps creates a complete run directory") {
  const std::string root = fresh_dir("noop");
  const std::string out = root + "/run";
  CHECK(invoke({"train", "--arch", "single", "--env", "pd_matrix.scenario_0",
             "--steps", "0", "--seed", "1", "--out", out}) == 0);
  CHECK(dir_entries(out) ==
        std::set<std::string>{"checkpoint.majx", "config.txt", "metrics.csv"});

  const auto metrics = slurp(out + "/metrics.csv");
  CHECK(metrics ==
        "step,wall_ms,agent_id,episode_return,policy_loss,value_loss,entropy,"
        "mean_rho,buffer_size\n");

  const auto loaded = nn::load_checkpoint(out + "/checkpoint.majx");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].version == 0);

  const auto config = slurp(out + "/config.txt");
  CHECK(config.find("arch=single\n") != std::string::npos);
  CHECK(config.find("env=pd_matrix.scenario_0\n") != std::string::npos);
  CHECK(config.find("out=") == std::string::npos);
}

TEST_CASE("usage and config mistakes exit with code 2 before any work") {
  const std::string root = fresh_dir("usage");
  CHECK(invoke({"train", "--bogus", "x", "--out", root + "/a"}) == 2);
  CHECK(invoke({"train", "--arch", "async", "--env", "pd_matrix", "--workers",
             "0", "--steps", "0", "--out", root + "/b"}) == 2);
  CHECK(invoke({"train", "--arch", "warp", "--env", "pd_matrix", "--steps", "0",
             "--out", root + "/c"}) == 2);
  CHECK(invoke({"train", "--env", "no_such_env", "--steps", "0", "--out",
             root + "/d"}) == 2);
  CHECK(invoke({"train", "--env", "pd_matrix", "--steps", "0"}) == 2);  // no out
  CHECK(invoke({"frobnicate"}) == 2);
  CHECK(invoke({}) == 2);
  // Rejected runs never created their directories.
  for (const auto& sub : {"a", "b", "c", "d"})
    CHECK_FALSE(std::filesystem::exists(root + "/" + sub));
}

TEST_CASE("config files feed train and flags override them") {
  const std::string root = fresh_dir("config");
  const std::string cfg = root + "/train.cfg";
  std::ofstream(cfg) << "# comment line\n"
                        "arch=single\n"
                        "env=rps_matrix.scenario_0\n"
                        "steps=100\n"
                        "unroll = 10\n"
                        "seed=9\n";

  const std::string out_file_only = root + "/file_only";
  CHECK(invoke({"train", "--config", cfg, "--out", out_file_only}) == 0);
  const auto snapshot = slurp(out_file_only + "/config.txt");
  CHECK(snapshot.find("steps=100\n") != std::string::npos);
  CHECK(snapshot.find("unroll=10\n") != std::string::npos);
  CHECK(snapshot.find("seed=9\n") != std::string::npos);

  const std::string out_override = root + "/override";
  CHECK(invoke({"train", "--config", cfg, "--steps", "40", "--out",
             out_override}) == 0);
  const auto overridden = slurp(out_override + "/config.txt");
  CHECK(overridden.find("steps=40\n") != std::string::npos);
  CHECK(overridden.find("seed=9\n") != std::string::npos);

  std::ofstream(root + "/unknown.cfg") << "steps=10\nwarp_drive=1\n";
  CHECK(invoke({"train", "--config", root + "/unknown.cfg", "--env", "pd_matrix",
             "--out", root + "/u"}) == 2);
  std::ofstream(root + "/dup.cfg") << "steps=10\nsteps=20\n";
  CHECK(invoke({"train", "--config", root + "/dup.cfg", "--env", "pd_matrix",
             "--out", root + "/v"}) == 2);
  std::ofstream(root + "/bad.cfg") << "steps=ten\n";
  CHECK(invoke({"train", "--config", root + "/bad.cfg", "--env", "pd_matrix",
             "--out", root + "/w"}) == 2);
  CHECK(invoke({"train", "--config", root + "/absent.cfg", "--env", "pd_matrix",
             "--out", root + "/x"}) == 2);
}

TEST_CASE("a stored snapshot replays the run bit for bit") {
  const std::string root = fresh_dir("replay");
  const std::string first = root + "/first";
  CHECK(invoke({"train", "--arch", "single", "--env", "pd_matrix.scenario_0",
             "--steps", "300", "--seed", "17", "--lr", "0.002", "--out",
             first}) == 0);

  const std::string second = root + "/second";
  CHECK(invoke({"train", "--config", first + "/config.txt", "--out", second}) ==
        0);
  CHECK(slurp(first + "/metrics.csv") == slurp(second + "/metrics.csv"));
  CHECK(slurp(first + "/checkpoint.majx") ==
        slurp(second + "/checkpoint.majx"));
  CHECK(slurp(first + "/config.txt") == slurp(second + "/config.txt"));
}

TEST_CASE("evaluate fans out over scenarios and seeds") {
  const std::string root = fresh_dir("evaluate");
  const std::string run = root + "/run";
  REQUIRE(invoke({"train", "--arch", "single", "--env", "rps_matrix.scenario_0",
               "--steps", "0", "--out", run}) == 0);
  const std::string ckpt = run + "/checkpoint.majx";

  const std::string evals = root + "/evals";
  CHECK(invoke({"evaluate", "--ckpt", ckpt, "--scenario",
             "rps_matrix.scenario_0", "--episodes", "5", "--seeds", "1,2",
             "--label", "probe", "--out", evals}) == 0);
  CHECK(dir_entries(evals) ==
        std::set<std::string>{"rps_matrix.scenario_0_s1.csv",
                              "rps_matrix.scenario_0_s2.csv"});
  const auto result =
      evalkit::read_result(evals + "/rps_matrix.scenario_0_s2.csv");
  CHECK(result.scenario == "rps_matrix.scenario_0");
  CHECK(result.label == "probe");
  CHECK(result.seed == 2);
  CHECK(result.episodes == 5);

  const std::string all = root + "/all";
  CHECK(invoke({"evaluate", "--ckpt", ckpt, "--scenario", "rps_matrix",
             "--all-scenarios", "--episodes", "2", "--out", all}) == 0);
  // Substrate self-play plus the five registry scenarios.
  CHECK(dir_entries(all).size() == 6);
  CHECK(dir_entries(all).count("rps_matrix_s1.csv") == 1);

  CHECK(invoke({"evaluate", "--ckpt", ckpt, "--scenario",
             "rps_matrix.scenario_0", "--all-scenarios", "--out",
             root + "/e1"}) == 2);
  CHECK(invoke({"evaluate", "--ckpt", ckpt, "--scenario", "nowhere", "--out",
             root + "/e2"}) == 2);
  CHECK(invoke({"evaluate", "--ckpt", ckpt, "--scenario",
             "rps_matrix.scenario_0", "--episodes", "0", "--out",
             root + "/e3"}) == 2);
  CHECK(invoke({"evaluate", "--ckpt", ckpt, "--scenario",
             "rps_matrix.scenario_0", "--seeds", "1,,2", "--out",
             root + "/e4"}) == 2);
  CHECK(invoke({"evaluate", "--scenario", "rps_matrix.scenario_0", "--out",
             root + "/e5"}) == 2);  // --ckpt is required

  const std::string missing = root + "/missing";
  CHECK(invoke({"evaluate", "--ckpt", root + "/no.majx", "--scenario",
             "rps_matrix.scenario_0", "--episodes", "1", "--out",
             missing}) == 3);
  CHECK(dir_entries(missing).empty());  // failed run leaves no result files
}

TEST_CASE("aggregate prints the table and writes table.csv") {
  const std::string root = fresh_dir("aggregate");
  auto result = [&](const std::string& name, uint64_t seed, double mean) {
    evalkit::EvalResult r;
    r.scenario = name;
    r.label = "demo";
    r.seed = seed;
    r.episodes = 1;
    r.mean_focal_return = mean;
    r.episode_returns = {mean};
    const std::string path =
        root + "/" + name + "_s" + std::to_string(seed) + ".csv";
    evalkit::write_result(r, path);
    return path;
  };
  const std::string a = result("pd_matrix.scenario_0", 1, 3.0);
  const std::string b = result("pd_matrix.scenario_0", 2, 5.0);
  const std::string c = result("pd_matrix", 1, 2.0);

  const std::string out = root + "/table";
  CHECK(invoke({"aggregate", a, b, c, "--out", out}) == 0);
  CHECK(slurp(out + "/table.csv") ==
        "scenario,demo\n"
        "Substrate,2\n"
        "Scenario 0,4\n");

  CHECK(invoke({"aggregate", "--out", root + "/none"}) == 2);

  std::ofstream(root + "/corrupt.csv") << "not,a,result\n";
  CHECK(invoke({"aggregate", root + "/corrupt.csv", "--out", root + "/bad"}) ==
        3);
}

// Subprocess-level checks of the command-line contract. The binary path
// comes from CMake.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "ggb/config.hpp"

#ifndef GGB_CLI_PATH
#define GGB_CLI_PATH "./ggb"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string out_file = "/tmp/ggb_cli_test_out.txt";
  const std::string cmd = std::string(GGB_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(out_file);
  std::ostringstream os;
  os << is.rdbuf();
  r.output = os.str();
  return r;
}

int count_lines(const std::string& path) {
  std::ifstream is(path);
  int n = 0;
  std::string line;
  while (std::getline(is, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("missing config file fails loudly and names the path") {
  auto r = run_cli("train --config /nonexistent/cfg.txt --out /tmp/ggb_cli_missing");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("/nonexistent/cfg.txt") != std::string::npos);
}

TEST_CASE("bad flag combinations exit nonzero") {
  auto r = run_cli("train --out /tmp/ggb_cli_bad --resolution 48");
  CHECK(r.exit_code != 0);
  auto r2 = run_cli("train --out /tmp/ggb_cli_bad2 --resolution 32 --levels 1,2");
  CHECK(r2.exit_code != 0);  // level 1 below the feature encoder's minimum
}

TEST_CASE("10-step smoke run writes 10 metric rows and a resolved snapshot") {
  const std::string dir = "/tmp/ggb_cli_smoke";
  fs::remove_all(dir);
  auto r = run_cli("train --out " + dir +
                   " --steps 10 --resolution 32 --dataset-size 8 --batch-size 2 --seed 3"
                   " --num-ggbs 2");
  REQUIRE(r.exit_code == 0);
  CHECK(count_lines(dir + "/metrics.csv") == 11);  // header + 10 rows
  CHECK(fs::exists(dir + "/checkpoint.bin"));
  CHECK(fs::exists(dir + "/samples_final.png"));

  // resolved snapshot equals config defaults + overrides
  ggb::TrainConfig cfg = ggb::load_config_file(dir + "/resolved_config.txt");
  cfg.finalize();
  CHECK(cfg.steps == 10);
  CHECK(cfg.resolution == 32);
  CHECK(cfg.dataset_size == 8);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.seed == 3);
  CHECK(cfg.num_ggbs == 2);
  CHECK(cfg.active_levels == std::vector<int>{3, 4});

  // a config file round-trips through the CLI override path
  const std::string cfg_path = "/tmp/ggb_cli_smoke_cfg.txt";
  std::ofstream(cfg_path) << cfg.to_text();
  const std::string dir2 = "/tmp/ggb_cli_smoke2";
  fs::remove_all(dir2);
  auto r2 = run_cli("train --config " + cfg_path + " --out " + dir2 + " --steps 4");
  REQUIRE(r2.exit_code == 0);
  ggb::TrainConfig cfg2 = ggb::load_config_file(dir2 + "/resolved_config.txt");
  cfg2.finalize();
  CHECK(cfg2.steps == 4);        // override wins
  CHECK(cfg2.seed == cfg.seed);  // everything else from the file
  CHECK(count_lines(dir2 + "/metrics.csv") == 5);
  fs::remove_all(dir);
  fs::remove_all(dir2);
  fs::remove(cfg_path);
}

TEST_CASE("gen-data writes a readable cache") {
  const std::string dir = "/tmp/ggb_cli_gendata";
  fs::remove_all(dir);
  auto r = run_cli("gen-data --out " + dir + " --count 3 --resolution 32 --seed 9");
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(dir + "/cache/manifest.txt"));
  CHECK(fs::exists(dir + "/cache/x_000002.ppm"));
  fs::remove_all(dir);
}

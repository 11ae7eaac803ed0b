#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string g_cli;

int run(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("qpeer_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("simulate then estimate round trip") {
  TempDir tmp("roundtrip");
  const std::string sim_dir = (tmp.path / "sim").string();
  REQUIRE(run("simulate --dgp A --seed 42 --subnets 40 --out " + sim_dir) == 0);
  CHECK(fs::exists(fs::path(sim_dir) / "network.csv"));
  CHECK(fs::exists(fs::path(sim_dir) / "nodes.csv"));
  CHECK(fs::exists(fs::path(sim_dir) / "manifest.json"));

  const std::string est_dir = (tmp.path / "est").string();
  REQUIRE(run("estimate --edges " + sim_dir + "/network.csv --nodes " + sim_dir +
              "/nodes.csv --out " + est_dir) == 0);
  std::ifstream in(fs::path(est_dir) / "result.json");
  REQUIRE(in.good());
  nlohmann::json j;
  in >> j;
  // Smoke recovery: estimates at the true levels land near the DGP values.
  const auto lt = j["structural"]["lambda_tau"].get<std::vector<double>>();
  REQUIRE(lt.size() == 4);
  CHECK(std::abs(lt[0] - 0.0) < 0.15);
  CHECK(std::abs(lt[3] - 0.3) < 0.15);
  CHECK(std::abs(j["structural"]["lambda2"].get<double>() - 0.2) < 0.12);
  CHECK(j.contains("diagnostics"));
  CHECK(fs::exists(fs::path(est_dir) / "manifest.json"));
}

TEST_CASE("test subcommand writes a results table") {
  TempDir tmp("tests");
  const std::string sim_dir = (tmp.path / "sim").string();
  REQUIRE(run("simulate --dgp D --seed 7 --subnets 25 --out " + sim_dir) == 0);
  const std::string out_dir = (tmp.path / "out").string();
  REQUIRE(run("test --edges " + sim_dir + "/network.csv --nodes " + sim_dir +
              "/nodes.csv --which kp,sargan,encompassing --levels-b 0,0.25,0.5,0.75,1 --out " +
              out_dir) == 0);
  std::ifstream in(fs::path(out_dir) / "tests.csv");
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "method,statistic,df,p_value,defined");
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 4);  // kp, sargan, encompassing both directions
}

TEST_CASE("keyplayer emits ranks with the lim comparison") {
  TempDir tmp("kp");
  const std::string sim_dir = (tmp.path / "sim").string();
  REQUIRE(run("simulate --dgp C --seed 11 --subnets 12 --size 20 --out " + sim_dir) == 0);
  const std::string out_dir = (tmp.path / "out").string();
  REQUIRE(run("keyplayer --edges " + sim_dir + "/network.csv --nodes " + sim_dir +
              "/nodes.csv --model quantile --compare lim --max-school-size 50 --threads 2 " +
              "--out " + out_dir) == 0);
  std::ifstream in(fs::path(out_dir) / "ranks.csv");
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "subnet,agent,influence,rank_quantile,influence_lim,rank_lim");
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 12 * 20);
}

TEST_CASE("montecarlo emits both tables") {
  TempDir tmp("mc");
  std::ofstream cfg(tmp.path / "dgp.json");
  cfg << R"({"preset":"A","n_subnets":15,"seed":5})";
  cfg.close();
  const std::string out_dir = (tmp.path / "out").string();
  REQUIRE(run("montecarlo --config " + (tmp.path / "dgp.json").string() +
              " --replications 2 --threads 2 --out " + out_dir) == 0);
  CHECK(fs::exists(fs::path(out_dir) / "estimations.csv"));
  CHECK(fs::exists(fs::path(out_dir) / "tests.csv"));
  CHECK(fs::exists(fs::path(out_dir) / "manifest.json"));
}

TEST_CASE("error handling and exit codes") {
  TempDir tmp("err");
  CHECK(run("estimate --edges missing.csv --nodes missing.csv") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("--bogus-flag") == 1);

  // Self-edge aborts with the offending line.
  std::ofstream e(tmp.path / "edges.csv");
  e << "subnet,src,dst,weight\n1,1,1,1.0\n";
  e.close();
  std::ofstream n(tmp.path / "nodes.csv");
  n << "subnet,id,y,x1\n1,1,1,0\n1,2,2,0\n";
  n.close();
  CHECK(run("estimate --edges " + (tmp.path / "edges.csv").string() + " --nodes " +
            (tmp.path / "nodes.csv").string()) == 1);

  CHECK(run("--help") == 0);
}

int main(int argc, char** argv) {
  doctest::Context context;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0 && g_cli.empty()) g_cli = arg;
  }
  if (g_cli.empty()) {
    std::fprintf(stderr, "usage: test_cli <path-to-qpeer-binary>\n");
    return 1;
  }
  context.applyCommandLine(1, argv);
  return context.run();
}

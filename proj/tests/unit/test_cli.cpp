#include "doctest.h"

#include "bifdr/simulate.hpp"
#include "bifdr_cli/cli.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace bifdr;

namespace {

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("bifdr_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

const Workspace& ws() {
  static Workspace w;
  return w;
}

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "bifdr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_experiment_csv(int experiment, std::size_t n, std::size_t p, std::uint64_t seed) {
  const std::string path = ws().path("exp" + std::to_string(experiment) + "_" + std::to_string(seed) + ".csv");
  std::ofstream out(path);
  write_csv(sample_experiment(make_design(experiment, p, 5, 5), n, seed), out);
  return path;
}

std::string algorithm_of(const std::string& json_path) {
  return nlohmann::json::parse(slurp(json_path)).at("algorithm").get<std::string>();
}

}  // namespace

TEST_CASE("version") {
  const auto r = run({"--version"});
  CHECK(r.code == 0);
  CHECK(r.out.find("bifdr 0.1.0 (schema 1)") != std::string::npos);
}

TEST_CASE("estimate dispatches on the links") {
  const auto lin_csv = write_experiment_csv(1, 300, 5, 1);
  const auto out1 = ws().path("lin.json");
  auto r = run({"estimate", "--data", lin_csv, "--functional", "expected_product", "--link-a", "identity",
                "--link-b", "identity", "--lambda", "rate:1", "--seed", "3", "--out", out1});
  REQUIRE(r.code == 0);
  CHECK(algorithm_of(out1) == "lin");
  CHECK(fs::exists(out1 + ".manifest.json") == true);

  const auto exp_csv = write_experiment_csv(3, 300, 5, 2);
  const auto out2 = ws().path("nonlin.json");
  r = run({"estimate", "--data", exp_csv, "--functional", "expected_product", "--link-a", "exp", "--link-b",
           "exp", "--lambda", "rate:1", "--out", out2});
  REQUIRE(r.code == 0);
  CHECK(algorithm_of(out2) == "nonlin");

  // Binary d for the inverse-propensity model of mar_mean.
  const std::string mar = ws().path("mar.csv");
  {
    std::ofstream f(mar);
    f << "y,d,z1,z2\n";
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    for (int i = 0; i < 300; ++i) {
      const double z1 = g(rng), z2 = g(rng);
      const int d = std::uniform_real_distribution<double>()(rng) < 1.0 / (1.0 + std::exp(-z1)) ? 1 : 0;
      f << z1 + g(rng) << "," << d << "," << z1 << "," << z2 << "\n";
    }
  }
  const auto out3 = ws().path("mix.json");
  r = run({"estimate", "--data", mar, "--functional", "mar_mean", "--link-a", "identity", "--link-b", "inv-expit",
           "--lambda", "rate:1", "--out", out3});
  REQUIRE(r.code == 0);
  CHECK(algorithm_of(out3) == "mix");
}

TEST_CASE("estimate output is identical across thread counts and replays from its manifest") {
  const auto csv = write_experiment_csv(3, 300, 6, 5);
  const auto a = ws().path("det_a.json"), b = ws().path("det_b.json"), c = ws().path("det_c.json");
  const std::vector<std::string> common{"estimate", "--data", csv, "--functional", "expected_product",
                                        "--link-a", "exp", "--link-b", "exp", "--seed", "11", "--cv-folds", "5"};
  auto args = common;
  args.insert(args.end(), {"--threads", "1", "--out", a});
  REQUIRE(run(args).code == 0);
  args = common;
  args.insert(args.end(), {"--threads", "4", "--out", b});
  REQUIRE(run(args).code == 0);
  CHECK(slurp(a) == slurp(b));

  REQUIRE(run({"replay", "--manifest", a + ".manifest.json", "--out", c}).code == 0);
  CHECK(slurp(a) == slurp(c));

  const auto manifest = nlohmann::json::parse(slurp(a + ".manifest.json"));
  CHECK(manifest.at("command") == "estimate");
  CHECK(manifest.at("seed") == 11);
  CHECK(manifest.at("library_version") == "0.1.0");
  CHECK(manifest.contains("wall_time_seconds"));
}

TEST_CASE("simulate is deterministic and replayable") {
  const auto a = ws().path("sim_a.csv"), b = ws().path("sim_b.csv"), c = ws().path("sim_c.csv");
  const std::vector<std::string> common{"simulate", "--experiment", "1", "--alpha-a", "5", "--alpha-b", "5",
                                        "--reps", "1", "--n", "200", "--p", "10", "--seed", "7"};
  auto args = common;
  args.insert(args.end(), {"--out", a});
  REQUIRE(run(args).code == 0);
  args = common;
  args.insert(args.end(), {"--threads", "3", "--out", b});
  REQUIRE(run(args).code == 0);
  CHECK(slurp(a) == slurp(b));
  REQUIRE(run({"replay", "--manifest", a + ".manifest.json", "--out", c}).code == 0);
  CHECK(slurp(a) == slurp(c));
  const auto manifest = nlohmann::json::parse(slurp(a + ".manifest.json"));
  CHECK(manifest.at("results").contains("truth"));
}

TEST_CASE("profile defaults") {
  cli::SimulateOptions five;
  five.experiment = 5;
  cli::resolve(five);
  CHECK(five.p == 100);
  CHECK(five.n == 1000);
  CHECK(five.reps == 300);

  cli::SimulateOptions paper;
  paper.experiment = 1;
  paper.paper_scale = true;
  cli::resolve(paper);
  CHECK(paper.p == 200);
  CHECK(paper.reps == 500);

  cli::SimulateOptions paper5;
  paper5.experiment = 5;
  paper5.paper_scale = true;
  cli::resolve(paper5);
  CHECK(paper5.p == 100);
}

TEST_CASE("exit codes") {
  CHECK(run({"simulate", "--experiment", "1", "--reps", "1"}).code == cli::kDataError);
  CHECK(run({"estimate", "--data", "x.csv", "--functional", "ecc"}).code == cli::kDataError);
  CHECK(run({"simulate", "--experiment", "9", "--out", ws().path("x.csv")}).code == cli::kDataError);
  CHECK(run({"simulate", "--experiment", "1", "--n", "100000", "--p", "1000", "--reps", "1000", "--out",
             ws().path("big.csv")}).code == cli::kDataError);
  CHECK(run({"frobnicate"}).code == cli::kDataError);

  const std::string bad = ws().path("bad.csv");
  {
    std::ofstream f(bad);
    f << "y,d,z1\n1,0,0.5\n2,zz,0.1\n";
  }
  const auto r = run({"estimate", "--data", bad, "--functional", "ecc", "--out", ws().path("bad.json")});
  CHECK(r.code == cli::kDataError);
  CHECK(r.err.find("line 3") != std::string::npos);

  const auto csv = write_experiment_csv(1, 200, 4, 9);
  CHECK(run({"estimate", "--data", csv, "--functional", "no_such", "--out", ws().path("n.json")}).code ==
        cli::kDataError);
  CHECK(run({"estimate", "--data", csv, "--functional", "ratio_functional", "--out", ws().path("n.json")}).code ==
        cli::kDataError);
  CHECK(run({"estimate", "--data", csv, "--functional", "expected_product", "--lambda", "1e-6", "--max-iter", "1",
             "--tol", "1e-15", "--out", ws().path("s.json")}).code == cli::kSolverError);
}

TEST_CASE("seed falls back to the environment") {
  const auto csv = write_experiment_csv(1, 200, 4, 10);
  const auto out = ws().path("env.json");
  ::setenv("BIFDR_SEED", "1234", 1);
  const auto r = run({"estimate", "--data", csv, "--functional", "expected_product", "--lambda", "rate:1", "--out", out});
  ::unsetenv("BIFDR_SEED");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(slurp(out)).at("seed") == 1234);
}

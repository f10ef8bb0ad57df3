// Drives the nllfr executable end to end through temporary directories.

#include "nllfr/bench.hpp"
#include "nllfr/dataset_io.hpp"
#include "nllfr/model.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

using namespace nllfr;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("nllfr_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Exit status of `nllfr <args>`, with stdout and stderr discarded.
int run(const std::string& args) {
  const std::string cmd = std::string(NLLFR_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& f) { return json::parse(slurp(f)); }

void expect_identical_dirs(const fs::path& a, const fs::path& b) {
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const fs::path other = b / e.path().filename();
    REQUIRE(fs::exists(other));
    // Reports echo the output path; compare everything else.
    if (e.path().extension() == ".json") {
      json ja = read_json(e.path()), jb = read_json(other);
      if (ja.contains("config")) ja["config"].erase("out"), jb["config"].erase("out");
      CHECK(ja == jb);
    } else {
      CHECK(slurp(e.path()) == slurp(other));
    }
    ++files;
  }
  CHECK(files > 0);
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small noiseless dataset shared by several cases.
const fs::path& small_dataset() {
  static const fs::path d = [] {
    const fs::path root = fresh_dir("shared");
    REQUIRE(run("generate --out " + q(root / "data") + " --N 256 --R 2 --P 2 --rms 0.15 --system-seed 7 --seed 3") == 0);
    REQUIRE(run("bla --data " + q(root / "data") + " --out " + q(root / "bla") + " --nx 12") == 0);
    return root;
  }();
  return d;
}

}  // namespace

TEST_CASE("generate writes a loadable dataset and is byte-identical on rerun") {
  const fs::path d = fresh_dir("generate");
  const std::string common = " --N 128 --R 2 --P 2 --rms 0.2 --seed 9 --noise-std 0.01";
  REQUIRE(run("generate --out " + q(d / "a") + common) == 0);
  REQUIRE(run("generate --out " + q(d / "b") + common) == 0);
  const Dataset ds = load_dataset(d / "a");
  CHECK(ds.R() == 2);
  CHECK(ds.N() == 128);
  CHECK(ds.noise_var.has_value());
  for (const char* f : {"meta.json", "u.bin", "y.bin", "noise_var.bin", "system.json"})
    CHECK(slurp(d / "a" / f) == slurp(d / "b" / f));
  expect_identical_dirs(d / "a", d / "b");
  CHECK(read_json(d / "a" / "generate_report.json")["config"]["seed"] == "9");

  std::ofstream(d / "file") << "x";
  CHECK(run("generate --out " + q(d / "file" / "sub") + common) != 0);
  CHECK(run("generate --out " + q(d / "c") + " --N 127") == 2);
  CHECK(run("generate --out " + q(d / "c") + " --N abc") == 2);
}

TEST_CASE("bla: exact on linear data, warnings and missing input") {
  const fs::path d = fresh_dir("bla");
  REQUIRE(run("generate --out " + q(d / "lin") + " --N 512 --R 2 --P 1 --gamma 0 --n-warm 3 --seed 1") == 0);
  REQUIRE(run("bla --data " + q(d / "lin") + " --out " + q(d / "m") + " --nx 12") == 0);
  const json rep = read_json(d / "m" / "bla_report.json");
  CHECK(rep["frf_fit_error_max"].get<double>() <= 1e-6);
  CHECK(rep["warnings"].empty());
  const NllfrModel m = load_model(d / "m" / "model.json");
  CHECK(m.theta.n_x() == 12);
  CHECK(m.theta.n_w() == 0);

  REQUIRE(run("bla --data " + q(d / "lin") + " --out " + q(d / "m16") + " --nx 16") == 0);
  CHECK_FALSE(read_json(d / "m16" / "bla_report.json")["warnings"].empty());

  REQUIRE(run("bla --data " + q(d / "lin") + " --out " + q(d / "m2") + " --nx 12") == 0);
  expect_identical_dirs(d / "m", d / "m2");
  CHECK(run("bla --data " + q(d / "missing") + " --out " + q(d / "x") + " --nx 4") == 3);
  CHECK(run("bla --data " + q(d / "lin") + " --out " + q(d / "x") + " --nx 0") == 2);
}

TEST_CASE("init: reduces the loss, accepts tau = 0 and rejects lambda <= 0") {
  const fs::path s = small_dataset();
  const fs::path d = fresh_dir("init");
  const std::string base = "init --data " + q(s / "data") + " --model " + q(s / "bla" / "model.json") +
                           " --degree 3 --max-iter 8 --lambda 1e-3";
  REQUIRE(run(base + " --out " + q(d / "a")) == 0);
  const json rep = read_json(d / "a" / "init_report.json");
  CHECK(rep["fit"]["final_loss"].get<double>() < rep["bla_loss"].get<double>());
  CHECK(rep["config"]["lambda"] == "1e-3");
  REQUIRE(run(base + " --out " + q(d / "b")) == 0);
  expect_identical_dirs(d / "a", d / "b");
  CHECK(run(base + " --tau 0 --out " + q(d / "t0")) == 0);
  CHECK(read_json(d / "t0" / "init_report.json")["tau"] == 0);
  CHECK(run(base + " --lambda 0 --out " + q(d / "x")) == 2);
  CHECK(run(base + " --lambda -1 --out " + q(d / "x")) == 2);
}

TEST_CASE("optimize lowers the loss monotonically and is reproducible") {
  const fs::path s = small_dataset();
  const fs::path d = fresh_dir("optimize");
  REQUIRE(run("init --data " + q(s / "data") + " --model " + q(s / "bla" / "model.json") +
              " --degree 3 --max-iter 5 --lambda 1e-3 --out " + q(d / "init")) == 0);
  const std::string base = "optimize --data " + q(s / "data") + " --model " + q(d / "init" / "model.json") + " --max-iter 4";
  REQUIRE(run(base + " --out " + q(d / "a")) == 0);
  REQUIRE(run(base + " --out " + q(d / "b")) == 0);
  const json fit = read_json(d / "a" / "fit_report.json")["fit"];
  const auto trace = fit["loss_trace"].get<std::vector<double>>();
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
  CHECK(fit["final_loss"].get<double>() <= fit["initial_loss"].get<double>());
  expect_identical_dirs(d / "a", d / "b");
}

TEST_CASE("eval: perfect model, arrowhead path and mismatched channels") {
  const fs::path s = small_dataset();
  const fs::path d = fresh_dir("eval");
  REQUIRE(run("eval --model " + q(s / "data" / "system.json") + " --data " + q(s / "data") + " --out " + q(d / "p")) == 0);
  const json m = read_json(d / "p" / "metrics.json");
  CHECK(m["relative_error_pct"].get<double>() <= 1e-6);
  CHECK(fs::file_size(d / "p" / "y_sim.bin") >= 2 * 256 * sizeof(double));

  const SyntheticSystem sys = make_parallel_wh(7, 3, 1.0);
  const Eigen::MatrixXd u = arrowhead_signal(1000, 0.15, 5);
  const Eigen::MatrixXd y = simulate_block_form(sys, u);
  {
    std::ofstream f(d / "arrow.csv");
    f.precision(17);
    f << "u,y\n";
    for (int n = 0; n < 1000; ++n) f << u(n, 0) << "," << y(n, 0) << "\n";
  }
  REQUIRE(run("eval --model " + q(s / "data" / "system.json") + " --signal " + q(d / "arrow.csv") + " --out " + q(d / "a")) == 0);
  CHECK(read_json(d / "a" / "metrics.json")["relative_error_pct"].get<double>() <= 1e-9);
  REQUIRE(run("eval --model " + q(s / "bla" / "model.json") + " --signal " + q(d / "arrow.csv") + " --out " + q(d / "ab")) == 0);
  const double bla_err = read_json(d / "ab" / "metrics.json")["relative_error_pct"].get<double>();
  CHECK(bla_err > 1.0);
  CHECK(bla_err < 100.0);

  {
    std::ofstream f(d / "two.csv");
    f << "u1,u2,y\n1,2,3\n4,5,6\n";
  }
  CHECK(run("eval --model " + q(s / "data" / "system.json") + " --signal " + q(d / "two.csv") + " --out " + q(d / "x")) == 3);
  CHECK(run("eval --model " + q(s / "data" / "system.json") + " --out " + q(d / "x")) == 2);
}

TEST_CASE("eval reports divergence with its own exit code") {
  const fs::path d = fresh_dir("diverge");
  NllfrModel m;
  m.theta = NllfrTheta::from_lti(StateSpaceModel{Eigen::MatrixXd::Constant(1, 1, 10.0), Eigen::MatrixXd::Ones(1, 1),
                                                 Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1)});
  m.map = FeatureMap(0, 0);
  m.beta = Eigen::MatrixXd::Zero(1, 0);
  m.u_scalers = {{}};
  m.y_scalers = {{}};
  save_model(d / "bad.json", m);
  {
    std::ofstream f(d / "s.csv");
    f << "u,y\n";
    for (int n = 0; n < 1000; ++n) f << "1,0\n";
  }
  CHECK(run("eval --model " + q(d / "bad.json") + " --signal " + q(d / "s.csv") + " --out " + q(d / "x")) == 4);
}

TEST_CASE("grid: 1x1 smoke, CSV shape and malformed lists") {
  const fs::path s = small_dataset();
  const fs::path d = fresh_dir("grid");
  const std::string base = "grid --data " + q(s / "data") + " --model " + q(s / "bla" / "model.json") + " --degree 3";
  REQUIRE(run(base + " --lambdas 1e-2 --taus 3 --trials 1 --max-iter 10 --out " + q(d / "one")) == 0);
  const json rep = read_json(d / "one" / "grid_report.json");
  CHECK(rep.dump().find("stable") != std::string::npos);
  std::ifstream st(d / "one" / "grid_stability.csv");
  std::string header, row;
  std::getline(st, header);
  std::getline(st, row);
  CHECK(row.substr(row.find(',') + 1) == "1");

  REQUIRE(run(base + " --lambdas 1e-2,1,100 --taus 0,3 --trials 1 --max-iter 2 --out " + q(d / "shape")) == 0);
  for (const char* f : {"grid_stability.csv", "grid_error.csv"}) {
    std::ifstream in(d / "shape" / f);
    int lines = 0;
    for (std::string l; std::getline(in, l); ++lines) CHECK(std::count(l.begin(), l.end(), ',') == 2);
    CHECK(lines == 4);
  }
  CHECK(run(base + " --lambdas 1,abc --taus 3 --out " + q(d / "x")) == 2);
  CHECK(run(base + " --lambdas 1 --taus 3, --out " + q(d / "x")) == 2);
  CHECK(run(base + " --lambdas 1 --taus -1 --out " + q(d / "x")) == 2);
  CHECK(run(base + " --lambdas 0 --taus 3 --out " + q(d / "x")) == 2);
}

TEST_CASE("config file: flags override, unknown keys rejected, effective config echoed") {
  const fs::path d = fresh_dir("config");
  std::ofstream(d / "cfg.json") << R"({"N": 64, "R": 1, "P": 1, "seed": 4, "rms": 0.3})";
  REQUIRE(run("--config " + q(d / "cfg.json") + " generate --out " + q(d / "a") + " --seed 5") == 0);
  const json c = read_json(d / "a" / "generate_report.json")["config"];
  CHECK(c["N"] == "64");
  CHECK(c["seed"] == "5");
  CHECK(load_dataset(d / "a").N() == 64);
  std::ofstream(d / "bad.json") << R"({"N": 64, "bogus": 1})";
  CHECK(run("--config " + q(d / "bad.json") + " generate --out " + q(d / "b")) == 2);
  std::ofstream(d / "broken.json") << "{";
  CHECK(run("--config " + q(d / "broken.json") + " generate --out " + q(d / "b")) == 2);
  CHECK(run("--config " + q(d / "none.json") + " generate --out " + q(d / "b")) == 2);
  CHECK(run("frobnicate") == 2);
}

TEST_CASE("convert ingests CSV periods") {
  const fs::path d = fresh_dir("convert");
  for (int r = 0; r < 2; ++r)
    for (int p = 0; p < 2; ++p) {
      std::ofstream f(d / ("r" + std::to_string(r) + "p" + std::to_string(p) + ".csv"));
      const Eigen::VectorXd u = generate_multisine(MultisineSpec::full_band(32, 1.0, 7 + r)).signal;
      f.precision(17);
      f << "u,y\n";
      for (int n = 0; n < 32; ++n) f << u(n) << "," << 3 * u(n) + 0.01 * p << "\n";
    }
  REQUIRE(run("convert --realization " + q(d / "r0p0.csv") + "," + q(d / "r0p1.csv") + " --realization " +
              q(d / "r1p0.csv") + "," + q(d / "r1p1.csv") + " --fs 10 --out " + q(d / "ds")) == 0);
  const Dataset ds = load_dataset(d / "ds");
  CHECK(ds.R() == 2);
  CHECK(ds.N() == 32);
  CHECK(ds.fs == 10.0);
  CHECK(run("convert --realization " + q(d / "r0p0.csv") + " --realization " + q(d / "r1p0.csv") + "," +
            q(d / "r1p1.csv") + " --out " + q(d / "y")) == 3);
}

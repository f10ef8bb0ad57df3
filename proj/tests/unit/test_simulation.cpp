#include "helpers.hpp"

#include "nllfr/bench.hpp"
#include "nllfr/errors.hpp"
#include "nllfr/inference.hpp"
#include "nllfr/simulation.hpp"

#include <doctest.h>

using namespace nllfr;
using testing::randn;
using testing::rel;

namespace {

NllfrModel random_model(int n_x, int degree, double radius, Rng& rng) {
  NllfrModel m;
  m.theta = testing::random_theta(n_x, 1, 1, 2, 2, radius, rng);
  m.map = FeatureMap(2, degree);
  m.beta = 0.1 * randn(m.map.n_phi(), 2, rng);
  m.u_scalers = {{}};
  m.y_scalers = {{}};
  return m;
}

NllfrModel scalar_model(double a, double b_w, double c, double d, double w0) {
  NllfrModel m;
  m.theta.A = Eigen::MatrixXd::Constant(1, 1, a);
  m.theta.B_u = Eigen::MatrixXd::Zero(1, 1);
  m.theta.B_w = Eigen::MatrixXd::Constant(1, 1, b_w);
  m.theta.C_y = Eigen::MatrixXd::Constant(1, 1, c);
  m.theta.C_z = Eigen::MatrixXd::Ones(1, 1);
  m.theta.D_yu = Eigen::MatrixXd::Zero(1, 1);
  m.theta.D_yw = Eigen::MatrixXd::Constant(1, 1, d);
  m.theta.D_zu = Eigen::MatrixXd::Zero(1, 1);
  m.map = FeatureMap(1, 2);
  m.beta = Eigen::MatrixXd::Zero(3, 1);
  m.beta(0, 0) = w0;
  m.u_scalers = {{}};
  m.y_scalers = {{}};
  return m;
}

}  // namespace

TEST_CASE("beta = 0 reduces to the linear recursion") {
  Rng rng(1);
  NllfrModel m = random_model(4, 3, 0.8, rng);
  m.beta.setZero();
  const Eigen::MatrixXd u = randn(200, 1, rng);
  const Eigen::VectorXd x0 = randn(4, 1, rng);
  const SimulationResult s = simulate(m, u, x0);
  CHECK(rel(s.y, simulate_lti(m.theta.yu(), u, x0)) <= 1e-13);
  CHECK(s.w.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.x.rows() == 200);
  CHECK(rel(Eigen::VectorXd(s.x.row(0).transpose()), x0) == 0.0);
  CHECK(rel(simulate_output(m, u, x0), s.y) == 0.0);
}

TEST_CASE("constant nonlinear forcing of a scalar state") {
  const double a = 0.6, b = 0.5, c = 2.0, d = -0.3, w0 = 0.7;
  const NllfrModel m = scalar_model(a, b, c, d, w0);
  const int n = 40;
  const SimulationResult s = simulate(m, Eigen::MatrixXd::Zero(n, 1), Eigen::VectorXd::Zero(1));
  for (int i = 0; i < n; ++i) {
    const double x = b * w0 * (1 - std::pow(a, i)) / (1 - a);
    CHECK(std::abs(s.w(i, 0) - w0) <= 1e-15);
    CHECK(std::abs(s.y(i, 0) - (c * x + d * w0)) <= 1e-13);
  }
}

TEST_CASE("the ground-truth model reproduces its own steady-state data") {
  const SyntheticSystem sys = make_parallel_wh(7, 3, 1.0);
  GenerateOptions go;
  go.R = 2;
  go.P = 1;
  go.N = 512;
  go.rms = 0.3;
  go.seed = 4;
  const GeneratedData gd = generate_dataset(sys, go);
  for (int r = 0; r < 2; ++r) {
    const SteadyState st = steady_state_simulate(sys.model, gd.raw_u[r][0], 10);
    CHECK(rel(st.y, gd.clean_y[r]) <= 1e-8);
    CHECK(st.defect <= 1e-9);
    // One more period from the recorded steady state.
    const Eigen::MatrixXd tiled = gd.raw_u[r][0].replicate(12, 1);
    const SimulationResult s = simulate(sys.model, tiled, Eigen::VectorXd::Zero(12));
    const Eigen::VectorXd x0 = s.x.row(11 * 512).transpose();
    CHECK(rel(simulate_output(sys.model, gd.raw_u[r][0], x0), gd.clean_y[r]) <= 1e-8);
  }
}

TEST_CASE("steady-state defect of a stable linear model") {
  Rng rng(2);
  NllfrModel m = random_model(3, 2, 0.9, rng);
  m.beta.setZero();
  const int N = 16;
  const int n_warm = static_cast<int>(std::ceil(std::log(1e-9) / std::log(0.9)));
  const SteadyState st = steady_state_simulate(m, randn(N, 1, rng), n_warm);
  CHECK(st.defect < 1e-8);
  CHECK(std::isnan(steady_state_simulate(m, randn(N, 1, rng), 0).defect));
  CHECK_THROWS_AS(steady_state_simulate(m, randn(N, 1, rng), -1), ConfigError);
}

TEST_CASE("linear steady state matches the frequency-domain solution") {
  Rng rng(3);
  NllfrModel m = random_model(4, 2, 0.8, rng);
  m.beta.setZero();
  const int N = 256;
  const Eigen::MatrixXd u = generate_multisine(MultisineSpec::full_band(N, 1.0, 3)).signal;
  const SteadyState st = steady_state_simulate(m, u, 5);
  const auto fd = steady_state_lti(m.theta.yu(), dft_forward(Records{u}), N);
  CHECK(rel(st.y, dft_inverse(fd.Y[0], N)) <= 1e-7);
}

TEST_CASE("a divergent model raises with the sample index") {
  NllfrModel m = scalar_model(10.0, 0.0, 1.0, 0.0, 0.0);
  m.theta.B_u(0, 0) = 1.0;
  try {
    simulate(m, Eigen::MatrixXd::Ones(1000, 1), Eigen::VectorXd::Zero(1));
    FAIL("no divergence reported");
  } catch (const DivergenceError& e) {
    CHECK(e.index() > 100);
    CHECK(e.index() < 1000);
  }
  CHECK_THROWS_AS(steady_state_simulate(m, Eigen::MatrixXd::Ones(400, 1), 3), DivergenceError);
}

TEST_CASE("simulation input checks") {
  Rng rng(4);
  const NllfrModel m = random_model(3, 2, 0.8, rng);
  CHECK_THROWS_AS(simulate(m, randn(10, 2, rng), Eigen::VectorXd::Zero(3)), DataError);
  CHECK_THROWS_AS(simulate(m, randn(10, 1, rng), Eigen::VectorXd::Zero(2)), DataError);
}

TEST_CASE("simulation is deterministic") {
  Rng rng(5);
  const NllfrModel m = random_model(5, 4, 0.9, rng);
  const Eigen::MatrixXd u = randn(500, 1, rng);
  const Eigen::MatrixXd a = simulate_output(m, u, Eigen::VectorXd::Zero(5));
  const Eigen::MatrixXd b = simulate_output(m, u, Eigen::VectorXd::Zero(5));
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("physical-unit simulation applies and inverts the scalers") {
  Rng rng(6);
  NllfrModel m = random_model(3, 3, 0.8, rng);
  m.u_scalers = {{0.5, 2.0}};
  m.y_scalers = {{-3.0, 0.25}};
  const Eigen::MatrixXd u = randn(100, 1, rng);
  const Eigen::MatrixXd us = (u.array() - 0.5) / 2.0;
  const Eigen::MatrixXd manual = simulate_output(m, us, Eigen::VectorXd::Zero(3)).array() * 0.25 - 3.0;
  CHECK(rel(simulate_physical(m, u, Eigen::VectorXd::Zero(3)), manual) <= 1e-10);
}

TEST_CASE("warm-up length follows the spectral radius") {
  NllfrModel m = scalar_model(0.5, 0.0, 1.0, 0.0, 0.0);
  CHECK(warmup_samples(m, 1024, 5) == 256);
  m.theta.A(0, 0) = 0.999;
  CHECK(warmup_samples(m, 1024, 30) == static_cast<long>(std::ceil(std::log(1e-12) / std::log(0.999))));
  CHECK(warmup_samples(m, 1024, 5) == 5120);
  CHECK(warmup_samples(m, 1024, 2) == 2048);
  m.theta.A(0, 0) = 1.2;
  CHECK(warmup_samples(m, 1024, 5) == 5120);
}

TEST_CASE("short warm-up agrees with whole-period warm-up") {
  Rng rng(7);
  const NllfrModel m = random_model(4, 3, 0.7, rng);
  const int N = 300;
  const Eigen::MatrixXd u = generate_multisine(MultisineSpec::full_band(N, 0.5, 5)).signal;
  const Eigen::MatrixXd a = steady_state_simulate(m, u, 5).y;
  CHECK(rel(steady_state_output(m, u, warmup_samples(m, N, 5)), a) <= 1e-10);
  CHECK(rel(steady_state_output(m, u, 457), a) <= 1e-10);
}

TEST_CASE("full residual: perfect model, beta = 0 and the loss convention") {
  const SyntheticSystem sys = make_parallel_wh(7, 3, 1.0);
  const int N = 512;
  Records u, y;
  for (int r = 0; r < 2; ++r) {
    u.push_back(0.3 * generate_multisine(MultisineSpec::full_band(N, 1.0, 40 + r)).signal);
    y.push_back(steady_state_simulate(sys.model, u.back(), 10).y);
  }
  const Dataset ds = testing::raw_dataset(u, y, testing::interior_bins(N));
  const Eigen::VectorXd r0 = full_residual(sys.model, ds);
  CHECK(r0.norm() <= 1e-7);

  NllfrModel lin = sys.model;
  lin.beta.setZero();
  const SpectrumTensor U = dft_forward(u), Y = dft_forward(y);
  const auto Ylin = steady_state_lti(lin.theta.yu(), U, N).Y;
  SpectrumTensor E;
  double direct = 0;
  for (int r = 0; r < 2; ++r) {
    E.push_back(Y[r] - Ylin[r]);
    direct += E.back().squaredNorm();
  }
  const Eigen::VectorXd r1 = full_residual(lin, ds);
  CHECK(rel(r1, weighted_residual(E, {})) <= 1e-9);
  CHECK(nllfr::loss(r1, 2, N) == doctest::Approx(direct / (2.0 * N)).epsilon(1e-9));

  Dataset wrong = ds;
  wrong.y = {randn(N, 2, *std::make_unique<Rng>(1)), randn(N, 2, *std::make_unique<Rng>(2))};
  CHECK_THROWS_AS(full_residual(sys.model, wrong), DataError);
}

TEST_CASE("full optimization from the ground truth stays put") {
  const SyntheticSystem sys = make_parallel_wh(7, 3, 1.0);
  const int N = 256;
  Records u, y;
  for (int r = 0; r < 2; ++r) {
    u.push_back(0.3 * generate_multisine(MultisineSpec::full_band(N, 1.0, 50 + r)).signal);
    y.push_back(steady_state_simulate(sys.model, u.back(), 10).y);
  }
  const Dataset ds = testing::raw_dataset(u, y, testing::interior_bins(N));
  FullOptOptions o;
  o.lm.max_iter = 3;
  const FullOptResult res = run_full_optimization(sys.model, ds, o);
  CHECK(res.report.iterations <= 3);
  CHECK(std::abs(res.report.final_loss() - res.report.initial_loss()) <= 1e-10);
  CHECK(res.report.initial_loss() <= 1e-14);
  CHECK(res.report.monotone());
}

TEST_CASE("full optimization lowers the loss of a perturbed model monotonically") {
  const SyntheticSystem sys = make_parallel_wh(7, 3, 1.0);
  const int N = 256;
  Records u, y;
  for (int r = 0; r < 2; ++r) {
    u.push_back(0.3 * generate_multisine(MultisineSpec::full_band(N, 1.0, 60 + r)).signal);
    y.push_back(steady_state_simulate(sys.model, u.back(), 10).y);
  }
  const Dataset ds = testing::raw_dataset(u, y, testing::interior_bins(N));
  NllfrModel start = sys.model;
  start.beta *= 0.8;
  start.theta.D_yu *= 1.05;
  FullOptOptions o;
  o.lm.max_iter = 5;
  const FullOptResult res = run_full_optimization(start, ds, o);
  CHECK(res.report.monotone());
  CHECK(res.report.final_loss() < 0.1 * res.report.initial_loss());
  CHECK(spectral_radius(res.model.theta.A) < 1.0);
}

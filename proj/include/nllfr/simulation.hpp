#pragma once

#include "nllfr/inference.hpp"
#include "nllfr/model.hpp"
#include "nllfr/optimizer.hpp"
#include "nllfr/signal.hpp"

namespace nllfr {

struct SimulationResult {
  Eigen::MatrixXd y;  ///< N x n_y
  Eigen::MatrixXd x;  ///< N x n_x, x(n) before the update
  Eigen::MatrixXd z;  ///< N x n_z
  Eigen::MatrixXd w;  ///< N x n_w
};

/// Time recursion of the NL-LFR model in its internal (standardized) units.
/// Throws DivergenceError with the first sample index whose state is not finite.
SimulationResult simulate(const NllfrModel& m, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0);

/// Output only, without storing x, z, w.
Eigen::MatrixXd simulate_output(const NllfrModel& m, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0);

/// Physical-unit simulation: applies the model's input scalers, simulates
/// from x0 and inverts the output scalers.
Eigen::MatrixXd simulate_physical(const NllfrModel& m, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0);

struct SteadyState {
  Eigen::MatrixXd y;  ///< last period
  double defect = 0;  ///< ||y_last - y_prev|| / ||y_last||; NaN when n_warm = 0
};

/// Tiles u_period n_warm + 1 times from x0 = 0 and returns the last period.
SteadyState steady_state_simulate(const NllfrModel& m, const Eigen::MatrixXd& u_period, int n_warm = 5);

/// Steady-state output with a warm-up over the last `warm_samples` samples of
/// the period (repeated as needed) instead of whole periods.
Eigen::MatrixXd steady_state_output(const NllfrModel& m, const Eigen::MatrixXd& u_period, long warm_samples);

/// Warm-up length after which rho(A)^n falls below 1e-12, at least 256
/// samples and at most n_warm periods.
long warmup_samples(const NllfrModel& m, int N, int n_warm);

/// Weighted residual Y - Y_hat with Y_hat the DFT of the steady-state
/// simulation; same vectorization as weighted_residual.
Eigen::VectorXd full_residual(const NllfrModel& m, const Dataset& ds, int n_warm = 5,
                              Weighting weighting = Weighting::Identity);

struct FullOptOptions {
  LmOptions lm{.max_iter = 1000};
  int n_warm = 5;
  /// Warm up over warmup_samples() instead of n_warm whole periods.
  bool short_warmup = true;
  /// Trials with rho(A) at or above this bound are rejected: no periodic
  /// steady state exists for them.
  double max_spectral_radius = 1.0;
  Weighting weighting = Weighting::Identity;
};

struct FullOptResult {
  NllfrModel model;
  FitReport report;
};

/// Levenberg-Marquardt over every parameter (LTI blocks and beta) in
/// simulation mode with forward-difference Jacobians. Divergent trials and
/// trials with an unstable A are rejected steps.
FullOptResult run_full_optimization(const NllfrModel& m, const Dataset& ds, const FullOptOptions& opts);

}  // namespace nllfr

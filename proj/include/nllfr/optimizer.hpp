#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace nllfr {

/// Returns the weighted residual vector at a parameter vector. Must be pure.
/// Throwing (any std::exception) marks the point as infeasible.
using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
/// Optional analytic Jacobian; receives the parameters and the residual there.
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

struct LmOptions {
  int max_iter = 100;
  double damping_init = 1e-3;
  double damping_up = 10.0;
  double damping_down = 10.0;
  double damping_max = 1e16;
  double gradient_tol = 1e-10;
  double loss_rel_tol = 1e-9;
  int loss_rel_window = 5;
  double step_tol = 1e-12;
  /// Forward-difference step h_j = fd_rel_step * max(1, |theta_j|).
  double fd_rel_step = 1e-6;
  /// Multiplies ||r||^2 to give the reported loss, e.g. 1/(R N).
  double loss_scale = 1.0;
  /// Worker threads for Jacobian columns (0 = hardware concurrency).
  int threads = 1;

  void validate() const;
};

enum class Termination {
  MaxIterations,
  GradientTolerance,
  LossTolerance,
  StepTolerance,
  ZeroLoss,
  DampingLimit,
};

std::string to_string(Termination t);

struct FitReport {
  std::vector<double> loss_trace;  ///< initial loss, then one entry per accepted step
  int iterations = 0;              ///< Jacobian evaluations
  int accepted = 0;
  int rejected = 0;
  Termination termination = Termination::MaxIterations;
  double wall_seconds = 0.0;
  double gradient_norm = 0.0;  ///< inf-norm of the loss gradient at the last linearization point
  Eigen::VectorXd final_params;

  double initial_loss() const { return loss_trace.empty() ? 0.0 : loss_trace.front(); }
  double final_loss() const { return loss_trace.empty() ? 0.0 : loss_trace.back(); }
  /// True when the accepted-step trace never increases.
  bool monotone() const;
};

/// Called after every accepted step with (iteration, params, loss).
using IterationCallback = std::function<void(int, const Eigen::VectorXd&, double)>;

/// Trial-point constraint checked before the residual is evaluated.
using FeasibleFn = std::function<bool(const Eigen::VectorXd&)>;

/// (1 / (R N)) * ||residuals||^2.
double loss(const Eigen::VectorXd& residuals, int R, int N);

/// Forward differences, column j = (r(theta + h_j e_j) - r(theta)) / h_j.
/// A failing evaluation propagates out of this function.
Eigen::MatrixXd numerical_jacobian(const ResidualFn& f, const Eigen::VectorXd& theta, const Eigen::VectorXd& r0,
                                   double rel_step = 1e-6, int threads = 1);

/// Marquardt step: solves (J^T J + mu diag(J^T J)) delta = -J^T r.
/// The diagonal is floored at 1e-12 * max(1, max diag).
Eigen::VectorXd lm_step(const Eigen::MatrixXd& JtJ, const Eigen::VectorXd& Jtr, double mu);

struct LmResult {
  Eigen::VectorXd params;
  FitReport report;
};

/// Levenberg-Marquardt with Marquardt scaling. A step is accepted only if it
/// strictly lowers the loss. Failure at theta0 is rethrown; failure at a
/// trial point, or a trial point rejected by `feasible`, counts as a rejection.
LmResult levenberg_marquardt(const ResidualFn& f, const Eigen::VectorXd& theta0, const LmOptions& opts,
                             const JacobianFn& jacobian = nullptr, const IterationCallback& on_accept = nullptr,
                             const FeasibleFn& feasible = nullptr);

}  // namespace nllfr

#include "nllfr/optimizer.hpp"

#include "nllfr/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

namespace nllfr {

void LmOptions::validate() const {
  if (max_iter < 0) throw ConfigError("lm: max_iter must be >= 0");
  if (!(damping_init > 0 && damping_up > 1 && damping_down > 1 && damping_max > damping_init))
    throw ConfigError("lm: damping settings must be positive with up/down factors > 1");
  if (!(gradient_tol > 0 && loss_rel_tol > 0 && step_tol > 0 && fd_rel_step > 0 && loss_scale > 0))
    throw ConfigError("lm: tolerances must be > 0");
  if (loss_rel_window < 1) throw ConfigError("lm: loss_rel_window must be >= 1");
  if (threads < 0) throw ConfigError("lm: threads must be >= 0");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::MaxIterations: return "max_iterations";
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::LossTolerance: return "loss_tolerance";
    case Termination::StepTolerance: return "step_tolerance";
    case Termination::ZeroLoss: return "zero_loss";
    case Termination::DampingLimit: return "damping_limit";
  }
  return "unknown";
}

bool FitReport::monotone() const {
  for (std::size_t i = 1; i < loss_trace.size(); ++i)
    if (loss_trace[i] > loss_trace[i - 1]) return false;
  return true;
}

double loss(const Eigen::VectorXd& residuals, int R, int N) {
  return residuals.squaredNorm() / (static_cast<double>(R) * static_cast<double>(N));
}

Eigen::MatrixXd numerical_jacobian(const ResidualFn& f, const Eigen::VectorXd& theta, const Eigen::VectorXd& r0,
                                   double rel_step, int threads) {
  const Eigen::Index p = theta.size();
  Eigen::MatrixXd J(r0.size(), p);
  auto column = [&](Eigen::Index j) {
    Eigen::VectorXd t = theta;
    const double h = rel_step * std::max(1.0, std::abs(theta(j)));
    t(j) += h;
    // Use the representable step actually taken.
    const double dh = t(j) - theta(j);
    const Eigen::VectorXd r = f(t);
    if (r.size() != r0.size()) throw NumericalError("numerical_jacobian: residual length changed");
    J.col(j) = (r - r0) / dh;
  };

  unsigned nthreads = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<unsigned>(threads);
  nthreads = std::min<unsigned>(nthreads, static_cast<unsigned>(std::max<Eigen::Index>(p, 1)));
  if (nthreads <= 1) {
    for (Eigen::Index j = 0; j < p; ++j) column(j);
    return J;
  }
  std::vector<std::exception_ptr> errors(nthreads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < nthreads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Eigen::Index j = w; j < p; j += nthreads) column(j);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return J;
}

Eigen::VectorXd lm_step(const Eigen::MatrixXd& JtJ, const Eigen::VectorXd& Jtr, double mu) {
  const Eigen::VectorXd d = JtJ.diagonal();
  const double floor = 1e-12 * std::max(1.0, d.size() ? d.maxCoeff() : 1.0);
  Eigen::MatrixXd M = JtJ;
  M.diagonal() += mu * d.cwiseMax(floor);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  Eigen::VectorXd step = ldlt.solve(-Jtr);
  if (ldlt.info() != Eigen::Success || !step.allFinite()) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor * std::max(mu, 1e-300));
    step = -es.eigenvectors() * (ev.cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * Jtr));
  }
  return step;
}

LmResult levenberg_marquardt(const ResidualFn& f, const Eigen::VectorXd& theta0, const LmOptions& opts,
                             const JacobianFn& jacobian, const IterationCallback& on_accept,
                             const FeasibleFn& feasible) {
  opts.validate();
  const auto t0 = std::chrono::steady_clock::now();
  LmResult res;
  FitReport& rep = res.report;
  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd r = f(theta);
  if (!r.allFinite()) throw NumericalError("levenberg_marquardt: non-finite residual at the initial point");
  double V = opts.loss_scale * r.squaredNorm();
  rep.loss_trace.push_back(V);

  double mu = opts.damping_init;
  int small_decreases = 0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
  bool have_grad = false;
  bool done = false;
  rep.termination = Termination::MaxIterations;

  while (!done && rep.iterations < opts.max_iter) {
    const Eigen::MatrixXd J = jacobian ? jacobian(theta, r)
                                       : numerical_jacobian(f, theta, r, opts.fd_rel_step, opts.threads);
    ++rep.iterations;
    const Eigen::VectorXd Jtr = J.transpose() * r;
    grad = 2.0 * opts.loss_scale * Jtr;
    have_grad = true;
    if (grad.lpNorm<Eigen::Infinity>() <= opts.gradient_tol) {
      rep.termination = Termination::GradientTolerance;
      break;
    }
    const Eigen::MatrixXd JtJ = J.transpose() * J;

    bool accepted = false;
    while (!accepted) {
      const Eigen::VectorXd delta = lm_step(JtJ, Jtr, mu);
      if (delta.norm() <= opts.step_tol * (theta.norm() + opts.step_tol)) {
        rep.termination = Termination::StepTolerance;
        done = true;
        break;
      }
      const Eigen::VectorXd trial = theta + delta;
      double V_trial = std::numeric_limits<double>::infinity();
      Eigen::VectorXd r_trial;
      try {
        if (feasible && !feasible(trial)) throw NumericalError("infeasible trial point");
        r_trial = f(trial);
        if (r_trial.allFinite()) V_trial = opts.loss_scale * r_trial.squaredNorm();
      } catch (const std::exception&) {
        // Infeasible trial point: treated as infinite loss.
      }
      if (V_trial < V) {
        const double rel = (V - V_trial) / V;
        theta = trial;
        r = std::move(r_trial);
        V = V_trial;
        rep.loss_trace.push_back(V);
        ++rep.accepted;
        mu = std::max(mu / opts.damping_down, 1e-15);
        accepted = true;
        if (on_accept) on_accept(rep.iterations, theta, V);
        small_decreases = rel < opts.loss_rel_tol ? small_decreases + 1 : 0;
        if (V == 0.0) {
          rep.termination = Termination::ZeroLoss;
          done = true;
        } else if (small_decreases >= opts.loss_rel_window) {
          rep.termination = Termination::LossTolerance;
          done = true;
        } else if (delta.norm() <= opts.step_tol * (theta.norm() + opts.step_tol)) {
          rep.termination = Termination::StepTolerance;
          done = true;
        }
      } else {
        ++rep.rejected;
        mu *= opts.damping_up;
        if (mu > opts.damping_max) {
          rep.termination = Termination::DampingLimit;
          done = true;
          break;
        }
      }
    }
  }

  // Gradient at the last linearization point; NaN when none was formed.
  if (!have_grad) grad.setConstant(std::numeric_limits<double>::quiet_NaN());
  rep.gradient_norm = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  rep.final_params = theta;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.params = std::move(theta);
  return res;
}

}  // namespace nllfr

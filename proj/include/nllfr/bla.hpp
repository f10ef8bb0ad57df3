#pragma once

#include "nllfr/lti.hpp"
#include "nllfr/optimizer.hpp"
#include "nllfr/signal.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nllfr {

/// Nonparametric FRF on the excited bins.
struct FrfEstimate {
  int N = 0;
  std::vector<int> bins;
  std::vector<Eigen::MatrixXcd> G;                   ///< n_y x n_u per bin
  std::optional<std::vector<Eigen::MatrixXd>> var;  ///< variance of each entry of G, R >= 2
};

/// SISO-input: average of Y/U over realizations. Square MIMO: per-bin least
/// squares across realizations (needs R >= n_u).
FrfEstimate estimate_frf(const Dataset& ds);

struct SubspaceResult {
  StateSpaceModel ss;
  Eigen::VectorXd singular_values;
  double residual = 0.0;  ///< relative FRF misfit ||G_hat - G_ss||_F / ||G_hat||_F
  bool reflected = false;
  std::vector<std::string> warnings;
};

/// Ho-Kalman realization from the impulse response obtained by an inverse
/// DFT of the FRF on the full grid, followed by a frequency-domain least
/// squares fit of B and D. Unstable poles are reflected into the unit disc.
SubspaceResult subspace_realize(const FrfEstimate& frf, int n_x, int block_rows);

enum class FrfWeighting { Identity, InverseVariance };

/// Weighted FRF fit of (A, B, C, D) by Levenberg-Marquardt with an analytic
/// Jacobian. Trial points with spectral radius >= 1 are rejected.
LmResult refine_bla(const StateSpaceModel& ss, const FrfEstimate& frf, FrfWeighting weighting, const LmOptions& opts,
                    StateSpaceModel* refined);

/// Per-bin relative error ||G_hat(k) - G(k)||_F / ||G_hat(k)||_F.
std::vector<double> frf_fit_error(const StateSpaceModel& ss, const FrfEstimate& frf);

struct ScaledStates {
  NllfrTheta theta;    ///< A, B_u, C_y, D_yu filled; w/z blocks zero-sized
  Eigen::VectorXd Tx;  ///< state standard deviations before scaling
};

/// Similarity transform with T_x = diag(std of the steady-state state
/// trajectories), giving unit-variance states on the dataset.
ScaledStates scale_states(const StateSpaceModel& ss, const Dataset& ds);

/// Pooled population standard deviation of each steady-state state trajectory.
Eigen::VectorXd state_std(const StateSpaceModel& ss, const Dataset& ds);

struct BlaOptions {
  int n_x = 2;
  int block_rows = 0;  ///< 0 selects max(2 n_x + 1, 20) capped by the data
  FrfWeighting weighting = FrfWeighting::Identity;
  LmOptions lm{.max_iter = 100, .gradient_tol = 1e-14, .loss_rel_tol = 1e-12};
};

struct BlaResult {
  FrfEstimate frf;
  SubspaceResult subspace;
  StateSpaceModel refined;
  FitReport fit;
  ScaledStates scaled;
  std::vector<double> fit_error;  ///< per excited bin, after refinement
  std::vector<std::string> warnings;
};

/// estimate_frf -> subspace_realize -> refine_bla -> scale_states. States with
/// no variance on the data are left unscaled and reported in warnings.
BlaResult run_bla(const Dataset& ds, const BlaOptions& opts);

}  // namespace nllfr

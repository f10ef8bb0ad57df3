#pragma once

#include "nllfr/lti.hpp"
#include "nllfr/model.hpp"
#include "nllfr/nonlinearity.hpp"
#include "nllfr/optimizer.hpp"
#include "nllfr/signal.hpp"

#include <cstdint>
#include <vector>

namespace nllfr {

enum class Weighting { Identity, InverseNoiseVariance };

struct InferenceConfig {
  double lambda = 1.0;
  int tau = 3;
  double epsilon = 1e-8;
  int max_iter = 250;
  std::uint64_t seed = 0;
  Weighting weighting = Weighting::Identity;
  int n_w = 2;
  int n_z = 2;
  int degree = 7;
  /// Damping schedule and tolerances; max_iter above takes precedence.
  LmOptions lm{};

  void validate() const;
};

struct LatentSpectra {
  SpectrumTensor W;  ///< R x (N/2+1) x n_w
  SpectrumTensor Z;  ///< R x (N/2+1) x n_z
};

/// Per-bin output weighting Lambda(k) for bins 0..N/2: identity, or the
/// inverse of the noise variance with eigenvalues floored at 1e-8.
BinMatrices weighting_matrices(const Dataset& ds, Weighting w);

struct WzInit {
  NllfrTheta theta;
  Eigen::VectorXd Tz;  ///< half-ranges of the unscaled linear z*
};

/// Draws B_w*, C_z*, D_yw*, D_zu* i.i.d. N(0, 1) (in that order, column-major)
/// and scales C_z, D_zu so the linear z estimate has unit half-range.
WzInit init_theta_wz(const NllfrTheta& theta_uy, const Dataset& ds, int n_w, int n_z, std::uint64_t seed);

/// [B_w; D_yw]^T [B_w; D_yw] + (epsilon / lambda) I.
Eigen::MatrixXd regularizer_theta(const Eigen::MatrixXd& B_w, const Eigen::MatrixXd& D_yw, double epsilon,
                                  double lambda);

/// Closed-form latent inference on every bin 0..N/2:
/// W* = Omega^-1 Psi (Y - G_yu U), Psi = G_yw^H Lambda, Omega = Psi G_yw + lambda Theta,
/// Z* = G_zu U + G_zw W*.
LatentSpectra infer_latents(const NllfrTheta& theta, const Dataset& ds, const InferenceConfig& cfg);

struct FixedPointResult {
  SpectrumTensor Z;
  std::vector<double> defects;  ///< ||Z_{i+1} - Z_i|| / ||Z_i||, i = 0..tau-1
};

/// Z_{i+1} = G_zu U + G_zw DFT(beta^T phi(IDFT(Z_i))), tau times.
/// Throws DivergenceError (index = iteration) on non-finite values.
FixedPointResult fixed_point_iterate(const NllfrTheta& theta, const Eigen::MatrixXd& beta, const FeatureMap& map,
                                     const SpectrumTensor& U, const SpectrumTensor& Z0, int tau, int N);

/// W = DFT(beta^T phi(IDFT(Z))) per realization.
SpectrumTensor nonlinear_response(const Eigen::MatrixXd& beta, const FeatureMap& map, const SpectrumTensor& Z, int N);

/// Y_hat = G_yu U + G_yw W_tau with W_tau = nonlinear_response(Z_tau).
SpectrumTensor parametric_output(const NllfrTheta& theta, const Eigen::MatrixXd& beta, const FeatureMap& map,
                                 const SpectrumTensor& U, const SpectrumTensor& Z_tau, int N);

/// Same with an externally computed W_tau.
SpectrumTensor parametric_output_from_w(const NllfrTheta& theta, const SpectrumTensor& U, const SpectrumTensor& W,
                                        int N);

/// Weighted residual vector with the loss convention shared by all stages:
/// per realization, per bin k = 0..N/2, the Cholesky-weighted error L(k)^H E(k)
/// split into real parts and (except at DC and Nyquist) imaginary parts.
/// Its squared norm divided by R N equals the frequency-domain loss.
Eigen::VectorXd weighted_residual(const SpectrumTensor& E, const BinMatrices& chol_upper);

/// Upper factors L^H of Lambda(k) = L L^H.
BinMatrices weight_factors(const BinMatrices& Lambda);

struct InferenceResult {
  NllfrModel model;
  FitReport report;
  std::vector<std::vector<double>> defects;  ///< fixed-point defects at the start and after each accepted step
  double bla_loss = 0.0;                     ///< loss of the BLA output alone
  Eigen::VectorXd Tz;
  int beta_rank = 0;
};

/// Inference and learning: random theta_wz, then Levenberg-Marquardt on
/// theta_wz with theta_uy frozen. Every residual evaluation re-runs
/// inference, the beta fit and the fixed-point iterations.
InferenceResult run_inference_learning(const NllfrTheta& theta_uy, const Dataset& ds, const InferenceConfig& cfg);

/// One inference-learning residual evaluation for given theta (w/z blocks set).
struct InferenceEvaluation {
  LatentSpectra latents;
  BetaFit beta;
  FixedPointResult fixed_point;
  SpectrumTensor Y_hat;
  Eigen::VectorXd residual;
};

InferenceEvaluation evaluate_inference(const NllfrTheta& theta, const Dataset& ds, const InferenceConfig& cfg);

}  // namespace nllfr

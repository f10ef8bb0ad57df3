#pragma once

#include "nllfr/signal.hpp"

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace nllfr {

/// x(n+1) = A x(n) + B u(n),  y(n) = C x(n) + D u(n).
struct StateSpaceModel {
  Eigen::MatrixXd A, B, C, D;

  int n_x() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B.cols()); }
  int n_y() const { return static_cast<int>(C.rows()); }

  /// Throws DataError on inconsistent dimensions.
  void validate() const;
};

double spectral_radius(const Eigen::MatrixXd& A);

/// Throws NumericalError if the spectral radius of A is not below 1.
void assert_stable(const StateSpaceModel& ss);

/// zeta_k = exp(j 2 pi k / N).
std::complex<double> unit_circle(int k, int N);

/// Per-bin transfer matrices C (zeta_k I - A)^-1 B + D, [n_y x n_u] each.
std::vector<Eigen::MatrixXcd> freq_response(const StateSpaceModel& ss, const std::vector<int>& bins, int N);

/// LTI parameters of the NL-LFR model. There is no w -> z feedthrough.
struct NllfrTheta {
  Eigen::MatrixXd A, B_u, B_w, C_y, C_z, D_yu, D_yw, D_zu;

  int n_x() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B_u.cols()); }
  int n_y() const { return static_cast<int>(C_y.rows()); }
  int n_w() const { return static_cast<int>(B_w.cols()); }
  int n_z() const { return static_cast<int>(C_z.rows()); }

  /// theta_uy filled from `ss`, the w/z blocks zero with the requested sizes.
  static NllfrTheta from_lti(const StateSpaceModel& ss, int n_w = 0, int n_z = 0);

  StateSpaceModel yu() const { return {A, B_u, C_y, D_yu}; }
  StateSpaceModel yw() const { return {A, B_w, C_y, D_yw}; }
  StateSpaceModel zu() const { return {A, B_u, C_z, D_zu}; }
  StateSpaceModel zw() const { return {A, B_w, C_z, Eigen::MatrixXd::Zero(C_z.rows(), B_w.cols())}; }

  void validate() const;
};

/// The four sub-blocks of the NL-LFR model at a set of bins.
struct SubBlocks {
  std::vector<int> bins;
  std::vector<Eigen::MatrixXcd> yu, yw, zu, zw;
};

/// All four blocks from one factorization of (zeta_k I - A) per bin.
SubBlocks nllfr_subblocks(const NllfrTheta& theta, const std::vector<int>& bins, int N);

struct SteadyStateSpectra {
  SpectrumTensor Y;
  SpectrumTensor X;
};

/// Periodic steady state in the frequency domain, bins 0..N/2 of every realization.
SteadyStateSpectra steady_state_lti(const StateSpaceModel& ss, const SpectrumTensor& U, int N);

/// (T^-1 A T, T^-1 B, C T, D). Throws NumericalError for singular T.
StateSpaceModel similarity_transform(const StateSpaceModel& ss, const Eigen::MatrixXd& T);

/// Time-domain recursion from x0, returning outputs (rows = samples).
Eigen::MatrixXd simulate_lti(const StateSpaceModel& ss, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0,
                             Eigen::MatrixXd* states = nullptr);

/// Bins 0..N/2.
std::vector<int> all_bins(int N);

}  // namespace nllfr

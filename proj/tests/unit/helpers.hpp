#pragma once

#include "nllfr/lti.hpp"
#include "nllfr/rng.hpp"
#include "nllfr/signal.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

namespace testing {

inline Eigen::MatrixXd randn(int r, int c, nllfr::Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

inline Eigen::MatrixXcd crandn(int r, int c, nllfr::Rng& rng) {
  Eigen::MatrixXcd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = {rng.normal(), rng.normal()};
  return m;
}

// Random A with spectral radius exactly `radius`, by rescaling a Gaussian matrix.
inline Eigen::MatrixXd random_stable_a(int n, double radius, nllfr::Rng& rng) {
  Eigen::MatrixXd A = randn(n, n, rng);
  const double rho = Eigen::EigenSolver<Eigen::MatrixXd>(A).eigenvalues().cwiseAbs().maxCoeff();
  return A * (radius / rho);
}

inline nllfr::StateSpaceModel random_ss(int n_x, int n_u, int n_y, double radius, nllfr::Rng& rng) {
  return {random_stable_a(n_x, radius, rng), randn(n_x, n_u, rng), randn(n_y, n_x, rng), randn(n_y, n_u, rng)};
}

inline nllfr::NllfrTheta random_theta(int n_x, int n_u, int n_y, int n_w, int n_z, double radius, nllfr::Rng& rng) {
  nllfr::NllfrTheta t;
  t.A = random_stable_a(n_x, radius, rng);
  t.B_u = randn(n_x, n_u, rng);
  t.B_w = randn(n_x, n_w, rng);
  t.C_y = randn(n_y, n_x, rng);
  t.C_z = randn(n_z, n_x, rng);
  t.D_yu = randn(n_y, n_u, rng);
  t.D_yw = randn(n_y, n_w, rng);
  t.D_zu = randn(n_z, n_u, rng);
  return t;
}

// Transfer matrix through the eigendecomposition A = V diag(l) V^-1.
inline Eigen::MatrixXcd eig_transfer(const nllfr::StateSpaceModel& ss, std::complex<double> zeta) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(ss.A);
  const Eigen::MatrixXcd V = es.eigenvectors();
  const Eigen::VectorXcd l = es.eigenvalues();
  const Eigen::MatrixXcd Vi = V.inverse();
  Eigen::VectorXcd d(l.size());
  for (int i = 0; i < l.size(); ++i) d(i) = 1.0 / (zeta - l(i));
  return ss.C.cast<std::complex<double>>() * V * d.asDiagonal() * Vi * ss.B.cast<std::complex<double>>() +
         ss.D.cast<std::complex<double>>();
}

// ||a - b|| / ||b||, absolute when b is zero.
template <typename A, typename B>
double rel(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double n = b.norm();
  return n == 0 ? (a - b).norm() : (a - b).norm() / n;
}

// Periodic dataset of an LTI system, standardized, from full-band multisines.
// Requires rho(A)^(3N) to be negligible.
inline nllfr::Dataset lti_dataset(const nllfr::StateSpaceModel& ss, int R, int N, std::uint64_t seed) {
  nllfr::Records u, y;
  for (int r = 0; r < R; ++r) {
    Eigen::MatrixXd ur(N, ss.n_u());
    for (int c = 0; c < ss.n_u(); ++c)
      ur.col(c) = nllfr::generate_multisine(nllfr::MultisineSpec::full_band(N, 1.0, seed * 131 + r * 7 + c)).signal;
    // Time recursion over warm periods; the last period is the steady state.
    const int periods = 4;
    Eigen::MatrixXd tiled = ur.replicate(periods, 1);
    const Eigen::MatrixXd yt = nllfr::simulate_lti(ss, tiled, Eigen::VectorXd::Zero(ss.n_x()));
    u.push_back(ur);
    y.push_back(yt.bottomRows(N));
  }
  nllfr::Dataset ds = nllfr::standardize(u, y).dataset;
  for (int k = 1; k < N / 2; ++k) ds.excited_bins.push_back(k);
  return ds;
}

// Unscaled dataset with identity scalers.
inline nllfr::Dataset raw_dataset(const nllfr::Records& u, const nllfr::Records& y, std::vector<int> bins) {
  nllfr::Dataset ds;
  ds.u = u;
  ds.y = y;
  ds.u_scalers.assign(u.front().cols(), nllfr::Scaler{});
  ds.y_scalers.assign(y.front().cols(), nllfr::Scaler{});
  ds.excited_bins = std::move(bins);
  return ds;
}

inline std::vector<int> interior_bins(int N) {
  std::vector<int> b;
  for (int k = 1; k < N / 2; ++k) b.push_back(k);
  return b;
}

}  // namespace testing

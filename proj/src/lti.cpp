#include "nllfr/lti.hpp"

#include "nllfr/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>

namespace nllfr {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DataError(what);
}

Eigen::PartialPivLU<Eigen::MatrixXcd> factor_resolvent(const Eigen::MatrixXd& A, std::complex<double> zeta, int k) {
  const Eigen::Index n = A.rows();
  Eigen::MatrixXcd M = -A.cast<std::complex<double>>();
  M.diagonal().array() += zeta;
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
  if (n > 0 && !(lu.rcond() > 1e-14))
    throw NumericalError("(zeta I - A) is singular at bin " + std::to_string(k));
  return lu;
}

}  // namespace

void StateSpaceModel::validate() const {
  require(A.rows() == A.cols(), "state-space: A must be square");
  require(B.rows() == A.rows(), "state-space: B rows must equal n_x");
  require(C.cols() == A.rows(), "state-space: C cols must equal n_x");
  require(D.rows() == C.rows() && D.cols() == B.cols(), "state-space: D must be n_y x n_u");
}

double spectral_radius(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

void assert_stable(const StateSpaceModel& ss) {
  const double rho = spectral_radius(ss.A);
  if (!(rho < 1.0)) throw NumericalError("unstable model: spectral radius " + std::to_string(rho));
}

std::complex<double> unit_circle(int k, int N) {
  return std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(N));
}

std::vector<int> all_bins(int N) {
  std::vector<int> b(N / 2 + 1);
  std::iota(b.begin(), b.end(), 0);
  return b;
}

std::vector<Eigen::MatrixXcd> freq_response(const StateSpaceModel& ss, const std::vector<int>& bins, int N) {
  ss.validate();
  const Eigen::MatrixXcd B = ss.B.cast<std::complex<double>>();
  const Eigen::MatrixXcd C = ss.C.cast<std::complex<double>>();
  std::vector<Eigen::MatrixXcd> G;
  G.reserve(bins.size());
  for (int k : bins) {
    Eigen::MatrixXcd g = ss.D.cast<std::complex<double>>();
    if (ss.n_x() > 0) g += C * factor_resolvent(ss.A, unit_circle(k, N), k).solve(B);
    G.push_back(std::move(g));
  }
  return G;
}

NllfrTheta NllfrTheta::from_lti(const StateSpaceModel& ss, int n_w, int n_z) {
  ss.validate();
  NllfrTheta t;
  t.A = ss.A;
  t.B_u = ss.B;
  t.C_y = ss.C;
  t.D_yu = ss.D;
  t.B_w = Eigen::MatrixXd::Zero(ss.n_x(), n_w);
  t.C_z = Eigen::MatrixXd::Zero(n_z, ss.n_x());
  t.D_yw = Eigen::MatrixXd::Zero(ss.n_y(), n_w);
  t.D_zu = Eigen::MatrixXd::Zero(n_z, ss.n_u());
  return t;
}

void NllfrTheta::validate() const {
  const auto nx = A.rows();
  require(A.cols() == nx, "theta: A must be square");
  require(B_u.rows() == nx && B_w.rows() == nx, "theta: B_u/B_w rows must equal n_x");
  require(C_y.cols() == nx && C_z.cols() == nx, "theta: C_y/C_z cols must equal n_x");
  require(D_yu.rows() == C_y.rows() && D_yu.cols() == B_u.cols(), "theta: D_yu must be n_y x n_u");
  require(D_yw.rows() == C_y.rows() && D_yw.cols() == B_w.cols(), "theta: D_yw must be n_y x n_w");
  require(D_zu.rows() == C_z.rows() && D_zu.cols() == B_u.cols(), "theta: D_zu must be n_z x n_u");
}

SubBlocks nllfr_subblocks(const NllfrTheta& theta, const std::vector<int>& bins, int N) {
  theta.validate();
  using CMat = Eigen::MatrixXcd;
  const Eigen::Index nu = theta.n_u();
  Eigen::MatrixXcd B(theta.n_x(), nu + theta.n_w());
  B << theta.B_u.cast<std::complex<double>>(), theta.B_w.cast<std::complex<double>>();
  const CMat Cy = theta.C_y.cast<std::complex<double>>();
  const CMat Cz = theta.C_z.cast<std::complex<double>>();

  SubBlocks sb;
  sb.bins = bins;
  for (int k : bins) {
    CMat X = CMat::Zero(theta.n_x(), B.cols());
    if (theta.n_x() > 0) X = factor_resolvent(theta.A, unit_circle(k, N), k).solve(B);
    sb.yu.push_back(Cy * X.leftCols(nu) + theta.D_yu.cast<std::complex<double>>());
    sb.yw.push_back(Cy * X.rightCols(theta.n_w()) + theta.D_yw.cast<std::complex<double>>());
    sb.zu.push_back(Cz * X.leftCols(nu) + theta.D_zu.cast<std::complex<double>>());
    sb.zw.push_back(Cz * X.rightCols(theta.n_w()));
  }
  return sb;
}

SteadyStateSpectra steady_state_lti(const StateSpaceModel& ss, const SpectrumTensor& U, int N) {
  ss.validate();
  const int K = N / 2 + 1;
  const Eigen::MatrixXcd B = ss.B.cast<std::complex<double>>();
  const Eigen::MatrixXcd C = ss.C.cast<std::complex<double>>();
  const Eigen::MatrixXcd D = ss.D.cast<std::complex<double>>();

  SteadyStateSpectra out;
  for (const auto& Ur : U) {
    if (Ur.rows() != K || Ur.cols() != ss.n_u()) throw DataError("steady_state_lti: input spectrum has wrong shape");
    out.X.emplace_back(K, ss.n_x());
    out.Y.emplace_back(K, ss.n_y());
  }
  for (int k = 0; k < K; ++k) {
    std::optional<Eigen::PartialPivLU<Eigen::MatrixXcd>> lu;
    if (ss.n_x() > 0) lu.emplace(factor_resolvent(ss.A, unit_circle(k, N), k));
    for (std::size_t r = 0; r < U.size(); ++r) {
      const Eigen::VectorXcd u = U[r].row(k).transpose();
      Eigen::VectorXcd x = Eigen::VectorXcd::Zero(ss.n_x());
      if (lu) x = lu->solve(B * u);
      out.X[r].row(k) = x.transpose();
      out.Y[r].row(k) = (C * x + D * u).transpose();
    }
  }
  // DC and Nyquist responses of a real system to real inputs are real.
  for (auto* set : {&out.X, &out.Y})
    for (auto& s : *set)
      for (int k : {0, K - 1}) s.row(k) = s.row(k).real().cast<std::complex<double>>();
  return out;
}

StateSpaceModel similarity_transform(const StateSpaceModel& ss, const Eigen::MatrixXd& T) {
  ss.validate();
  if (T.rows() != ss.n_x() || T.cols() != ss.n_x()) throw DataError("similarity_transform: T must be n_x x n_x");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(T);
  if (!lu.isInvertible()) throw NumericalError("similarity_transform: T is singular");
  return {lu.solve(ss.A * T), lu.solve(ss.B), ss.C * T, ss.D};
}

Eigen::MatrixXd simulate_lti(const StateSpaceModel& ss, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0,
                             Eigen::MatrixXd* states) {
  ss.validate();
  if (u.cols() != ss.n_u()) throw DataError("simulate_lti: input has wrong channel count");
  Eigen::MatrixXd y(u.rows(), ss.n_y());
  if (states) states->resize(u.rows(), ss.n_x());
  Eigen::VectorXd x = x0;
  for (Eigen::Index n = 0; n < u.rows(); ++n) {
    const Eigen::VectorXd un = u.row(n).transpose();
    if (states) states->row(n) = x.transpose();
    y.row(n) = (ss.C * x + ss.D * un).transpose();
    x = ss.A * x + ss.B * un;
  }
  return y;
}

}  // namespace nllfr

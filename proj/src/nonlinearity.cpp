#include "nllfr/nonlinearity.hpp"

#include "nllfr/errors.hpp"

#include <cmath>
#include <functional>

namespace nllfr {

FeatureMap::FeatureMap(int n_z, int degree) : n_z_(n_z), degree_(degree) {
  if (n_z < 0 || degree < 0) throw ConfigError("feature map: n_z and degree must be non-negative");
  std::vector<int> e(n_z, 0);
  // Distribute `left` over variables i..n_z-1, first variable ascending.
  std::function<void(int, int)> fill = [&](int i, int left) {
    if (i == n_z - 1) {
      e[i] = left;
      exponents_.push_back(e);
      return;
    }
    for (int a = 0; a <= left; ++a) {
      e[i] = a;
      fill(i + 1, left - a);
    }
    e[i] = 0;
  };
  exponents_.push_back(e);
  if (n_z > 0)
    for (int d = 1; d <= degree; ++d) fill(0, d);
}

long long FeatureMap::count(int n_z, int degree) {
  long long c = 1;
  for (int i = 1; i <= n_z; ++i) c = c * (degree + i) / i;
  return c;
}

void phi_into(const double* z, const FeatureMap& map, double* powers, double* out) {
  const int nz = map.n_z();
  const int deg = map.degree();
  for (int j = 0; j < nz; ++j) {
    const double t = std::tanh(z[j]);
    double p = 1.0;
    for (int d = 0; d <= deg; ++d) {
      powers[d * nz + j] = p;
      p *= t;
    }
  }
  const auto& ex = map.exponents();
  for (std::size_t i = 0; i < ex.size(); ++i) {
    double v = 1.0;
    for (int j = 0; j < nz; ++j) v *= powers[ex[i][j] * nz + j];
    out[i] = v;
  }
}

Eigen::VectorXd phi(const Eigen::VectorXd& z, const FeatureMap& map) {
  if (z.size() != map.n_z()) throw DataError("phi: input has wrong dimension");
  Eigen::VectorXd out(map.n_phi());
  std::vector<double> powers((map.degree() + 1) * std::max(1, map.n_z()));
  phi_into(z.data(), map, powers.data(), out.data());
  return out;
}

Eigen::MatrixXd phi_batch(const Eigen::MatrixXd& Z, const FeatureMap& map) {
  if (Z.cols() != map.n_z()) throw DataError("phi_batch: input has wrong column count");
  Eigen::MatrixXd out(Z.rows(), map.n_phi());
  std::vector<double> powers((map.degree() + 1) * std::max(1, map.n_z()));
  Eigen::VectorXd zrow(map.n_z());
  Eigen::VectorXd row(map.n_phi());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    zrow = Z.row(i).transpose();
    phi_into(zrow.data(), map, powers.data(), row.data());
    out.row(i) = row.transpose();
  }
  return out;
}

BetaFit fit_beta_design(const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& W) {
  if (Phi.rows() != W.rows()) throw DataError("fit_beta: Phi and W row counts differ");
  if (Phi.rows() < Phi.cols()) throw DataError("fit_beta: need at least n_phi samples");
  BetaFit fit;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Phi);
  const Eigen::Index n = Phi.cols();
  const auto diag = qr.matrixQR().diagonal().cwiseAbs();
  const double tol = (n > 0 ? diag.maxCoeff() : 0.0) * static_cast<double>(Phi.rows()) * 1e-14;
  const bool full = n == 0 || diag.minCoeff() > tol;
  if (full && W.allFinite()) {
    fit.beta = qr.solve(W);
    fit.rank = static_cast<int>(n);
  } else {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Phi);
    fit.beta = cod.solve(W);
    fit.rank = static_cast<int>(cod.rank());
  }
  fit.rank_deficient = fit.rank < n;
  return fit;
}

BetaFit fit_beta(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& W, const FeatureMap& map) {
  return fit_beta_design(phi_batch(Z, map), W);
}

}  // namespace nllfr

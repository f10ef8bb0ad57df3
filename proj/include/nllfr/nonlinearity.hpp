#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace nllfr {

/// Monomials in tanh(z) up to a total degree, constant term included.
///
/// Exponents are graded (by total degree) and, within one degree, ordered
/// with the first variable's exponent ascending; the last variable changes
/// fastest. For n_z = 2, degree = 2 and t = tanh(z):
///   [1, t2, t1, t2^2, t1 t2, t1^2].
class FeatureMap {
public:
  static constexpr const char* kOrdering = "graded-lex-last-fastest";

  FeatureMap() : FeatureMap(0, 0) {}
  FeatureMap(int n_z, int degree);

  int n_z() const { return n_z_; }
  int degree() const { return degree_; }
  int n_phi() const { return static_cast<int>(exponents_.size()); }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }

  /// C(degree + n_z, n_z).
  static long long count(int n_z, int degree);

  bool operator==(const FeatureMap& o) const { return n_z_ == o.n_z_ && degree_ == o.degree_; }

private:
  int n_z_;
  int degree_;
  std::vector<std::vector<int>> exponents_;
};

/// phi(z): element-wise tanh, then the monomials of the map. Entries lie in [-1, 1].
Eigen::VectorXd phi(const Eigen::VectorXd& z, const FeatureMap& map);

/// Row-wise phi on an [M x n_z] batch.
Eigen::MatrixXd phi_batch(const Eigen::MatrixXd& Z, const FeatureMap& map);

/// Writes phi(z) into `out` (length n_phi) using `powers` as scratch
/// ((degree+1) x n_z). No allocation; used in the simulation hot loop.
void phi_into(const double* z, const FeatureMap& map, double* powers, double* out);

struct BetaFit {
  Eigen::MatrixXd beta;  ///< n_phi x n_w
  int rank = 0;
  bool rank_deficient = false;
};

/// Least squares beta = argmin ||Phi(Z) beta - W||_F via Householder QR.
/// Rank-deficient Phi falls back to the minimum-norm solution.
BetaFit fit_beta(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& W, const FeatureMap& map);

/// Same, from an already assembled design matrix.
BetaFit fit_beta_design(const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& W);

}  // namespace nllfr

#pragma once

#include "nllfr/lti.hpp"
#include "nllfr/nonlinearity.hpp"
#include "nllfr/signal.hpp"

#include <filesystem>
#include <vector>

namespace nllfr {

/// Full NL-LFR model: LTI multiport, w = beta^T phi(z), and the data scalers
/// it was trained with.
struct NllfrModel {
  NllfrTheta theta;
  Eigen::MatrixXd beta;  ///< n_phi x n_w
  FeatureMap map;
  std::vector<Scaler> u_scalers;
  std::vector<Scaler> y_scalers;

  /// n_x^2 + n_x(n_u+n_w) + n_x(n_y+n_z) + n_y n_u + n_y n_w + n_z n_u + n_phi n_w.
  long long parameter_count() const;
  static long long parameter_count(int n_x, int n_u, int n_y, int n_w, int n_z, int degree);

  void validate() const;
};

/// Vectorization order: A, B_u, B_w, C_y, C_z, D_yu, D_yw, D_zu, beta (each column-major).
Eigen::VectorXd pack_all(const NllfrModel& m);
void unpack_all(const Eigen::VectorXd& p, NllfrModel& m);

/// theta_wz = (B_w, C_z, D_yw, D_zu).
Eigen::VectorXd pack_wz(const NllfrTheta& t);
void unpack_wz(const Eigen::VectorXd& p, NllfrTheta& t);

/// (A, B, C, D) of an LTI model.
Eigen::VectorXd pack_lti(const StateSpaceModel& ss);
void unpack_lti(const Eigen::VectorXd& p, StateSpaceModel& ss);

/// model.json: format version, dimension header, row-major nested matrices,
/// feature map and scalers.
void save_model(const std::filesystem::path& file, const NllfrModel& m);
NllfrModel load_model(const std::filesystem::path& file);

}  // namespace nllfr

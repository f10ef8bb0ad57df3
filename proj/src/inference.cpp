#include "nllfr/inference.hpp"

#include "nllfr/errors.hpp"
#include "nllfr/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <mutex>

namespace nllfr {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;

void InferenceConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("inference: lambda must be > 0");
  if (!(epsilon > 0.0)) throw ConfigError("inference: epsilon must be > 0");
  if (tau < 0) throw ConfigError("inference: tau must be >= 0");
  if (max_iter < 0) throw ConfigError("inference: max_iter must be >= 0");
  if (n_w < 1 || n_z < 1) throw ConfigError("inference: n_w and n_z must be >= 1");
  if (degree < 1) throw ConfigError("inference: degree must be >= 1");
}

namespace {

// Sub-blocks on every bin 0..N/2.
struct Blocks {
  std::vector<CMat> yu, yw, zu, zw;
};

Blocks from_subblocks(SubBlocks sb) {
  return {std::move(sb.yu), std::move(sb.yw), std::move(sb.zu), std::move(sb.zw)};
}

void force_real_edges(SpectrumTensor& S) {
  for (auto& s : S) {
    const Eigen::Index K = s.rows();
    s.row(0) = s.row(0).real().cast<cd>();
    s.row(K - 1) = s.row(K - 1).real().cast<cd>();
  }
}

double frob(const SpectrumTensor& S) {
  double s2 = 0.0;
  for (const auto& s : S) s2 += s.squaredNorm();
  return std::sqrt(s2);
}

LatentSpectra infer_core(const Blocks& b, const SpectrumTensor& U, const SpectrumTensor& E0, const BinMatrices& Lambda,
                         const Eigen::MatrixXd& Theta, double lambda) {
  const std::size_t R = U.size();
  const Eigen::Index K = U.front().rows();
  const Eigen::Index nw = Theta.rows();
  const Eigen::Index nz = b.zu.front().rows();
  LatentSpectra out;
  out.W.assign(R, Spectrum(K, nw));
  out.Z.assign(R, Spectrum(K, nz));
  const CMat lamTheta = (lambda * Theta).cast<cd>();
  for (Eigen::Index k = 0; k < K; ++k) {
    const CMat& Gyw = b.yw[k];
    const CMat Psi = Lambda.empty() ? CMat(Gyw.adjoint()) : CMat(Gyw.adjoint() * Lambda[k]);
    CMat Omega = Psi * Gyw + lamTheta;
    Omega = 0.5 * (Omega + Omega.adjoint()).eval();
    Eigen::LLT<CMat> llt(Omega);
    if (llt.info() != Eigen::Success) throw NumericalError("infer_latents: Omega is not positive definite");
    for (std::size_t r = 0; r < R; ++r) {
      const Eigen::VectorXcd w = llt.solve(Psi * E0[r].row(k).transpose());
      out.W[r].row(k) = w.transpose();
      out.Z[r].row(k) = (b.zu[k] * U[r].row(k).transpose() + b.zw[k] * w).transpose();
    }
  }
  force_real_edges(out.W);
  force_real_edges(out.Z);
  return out;
}

// Time-domain w = beta^T phi(z) for one realization, z is N x n_z.
Eigen::MatrixXd nl_time(const Eigen::MatrixXd& z, const Eigen::MatrixXd& beta, const FeatureMap& map) {
  const Eigen::Index N = z.rows();
  const int nz = map.n_z();
  const int nphi = map.n_phi();
  const Eigen::Index nw = beta.cols();
  Eigen::MatrixXd w(N, nw);
  std::vector<double> powers((map.degree() + 1) * std::max(1, nz));
  std::vector<double> zn(nz), ph(nphi);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int j = 0; j < nz; ++j) zn[j] = z(n, j);
    phi_into(zn.data(), map, powers.data(), ph.data());
    for (Eigen::Index c = 0; c < nw; ++c) {
      double acc = 0.0;
      for (int i = 0; i < nphi; ++i) acc += ph[i] * beta(i, c);
      w(n, c) = acc;
    }
  }
  return w;
}

SpectrumTensor nl_response(const Eigen::MatrixXd& beta, const FeatureMap& map, const SpectrumTensor& Z, int N) {
  SpectrumTensor W;
  W.reserve(Z.size());
  for (const auto& Zr : Z) W.push_back(dft_forward(nl_time(dft_inverse(Zr, N), beta, map)));
  return W;
}

SpectrumTensor feedback(const Blocks& b, const SpectrumTensor& U, const SpectrumTensor& W) {
  SpectrumTensor Z;
  for (std::size_t r = 0; r < U.size(); ++r) {
    const Eigen::Index K = U[r].rows();
    Spectrum z(K, b.zu.front().rows());
    for (Eigen::Index k = 0; k < K; ++k)
      z.row(k) = (b.zu[k] * U[r].row(k).transpose() + b.zw[k] * W[r].row(k).transpose()).transpose();
    Z.push_back(std::move(z));
  }
  force_real_edges(Z);
  return Z;
}

FixedPointResult fixed_point_core(const Blocks& b, const Eigen::MatrixXd& beta, const FeatureMap& map,
                                  const SpectrumTensor& U, const SpectrumTensor& Z0, int tau, int N) {
  FixedPointResult out;
  out.Z = Z0;
  for (int i = 0; i < tau; ++i) {
    SpectrumTensor next = feedback(b, U, nl_response(beta, map, out.Z, N));
    for (const auto& s : next)
      if (!s.allFinite()) throw DivergenceError("fixed-point iteration produced non-finite values", i);
    SpectrumTensor diff = next;
    for (std::size_t r = 0; r < diff.size(); ++r) diff[r] -= out.Z[r];
    const double base = frob(out.Z);
    const double d = frob(diff);
    out.defects.push_back(base > 0.0 ? d / base : d);
    out.Z = std::move(next);
  }
  return out;
}

SpectrumTensor output_core(const Blocks& b, const SpectrumTensor& U, const SpectrumTensor& W) {
  SpectrumTensor Y;
  for (std::size_t r = 0; r < U.size(); ++r) {
    const Eigen::Index K = U[r].rows();
    Spectrum y(K, b.yu.front().rows());
    for (Eigen::Index k = 0; k < K; ++k)
      y.row(k) = (b.yu[k] * U[r].row(k).transpose() + b.yw[k] * W[r].row(k).transpose()).transpose();
    Y.push_back(std::move(y));
  }
  force_real_edges(Y);
  return Y;
}

Eigen::MatrixXd stack_time(const SpectrumTensor& S, int N) {
  const Eigen::Index c = S.front().cols();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(S.size()) * N, c);
  for (std::size_t r = 0; r < S.size(); ++r) out.middleRows(static_cast<Eigen::Index>(r) * N, N) = dft_inverse(S[r], N);
  return out;
}

// Precomputed per-dataset quantities for repeated evaluations with theta_uy frozen.
class Evaluator {
public:
  Evaluator(const NllfrTheta& theta_uy, const Dataset& ds, const InferenceConfig& cfg)
      : cfg_(cfg), N_(ds.N()), K_(ds.N() / 2 + 1), theta_uy_(theta_uy) {
    ds.validate();
    theta_uy.validate();
    if (theta_uy.n_u() != ds.n_u() || theta_uy.n_y() != ds.n_y())
      throw DataError("inference: model and dataset channel counts differ");
    cfg.validate();
    U_ = dft_forward(ds.u);
    const SpectrumTensor Y = dft_forward(ds.y);
    map_ = FeatureMap(cfg.n_z, cfg.degree);
    Lambda_ = weighting_matrices(ds, cfg.weighting);
    if (cfg.weighting == Weighting::Identity) Lambda_.clear();
    factors_ = Lambda_.empty() ? BinMatrices{} : weight_factors(Lambda_);

    const int nx = theta_uy.n_x();
    const NllfrTheta lin = NllfrTheta::from_lti(theta_uy.yu(), 0, 0);
    Gyu_ = nllfr_subblocks(lin, all_bins(N_), N_).yu;
    E0_.resize(U_.size());
    for (std::size_t r = 0; r < U_.size(); ++r) {
      E0_[r] = Y[r];
      for (int k = 0; k < K_; ++k) E0_[r].row(k) -= (Gyu_[k] * U_[r].row(k).transpose()).transpose();
    }
    force_real_edges(E0_);

    // Modal form of A when well conditioned, explicit resolvents otherwise.
    if (nx > 0) {
      Eigen::EigenSolver<Eigen::MatrixXd> es(theta_uy.A);
      const CMat V = es.eigenvectors();
      Eigen::FullPivLU<CMat> lu(V);
      const double cond = lu.isInvertible() ? V.norm() * lu.inverse().norm() : std::numeric_limits<double>::infinity();
      if (cond < 1e6) {
        modal_ = true;
        Vinv_ = lu.inverse();
        CyV_ = theta_uy.C_y.cast<cd>() * V;
        V_ = V;
        ViBu_ = Vinv_ * theta_uy.B_u.cast<cd>();
        d_.resize(K_, nx);
        for (int k = 0; k < K_; ++k)
          for (int i = 0; i < nx; ++i) d_(k, i) = 1.0 / (unit_circle(k, N_) - es.eigenvalues()(i));
      } else {
        for (int k = 0; k < K_; ++k) {
          CMat M = -theta_uy.A.cast<cd>();
          M.diagonal().array() += unit_circle(k, N_);
          Res_.push_back(M.partialPivLu().inverse());
        }
      }
    }
  }

  Blocks blocks(const NllfrTheta& t) const {
    const int nx = t.n_x();
    Blocks b;
    b.yu = Gyu_;
    b.yw.resize(K_);
    b.zu.resize(K_);
    b.zw.resize(K_);
    const CMat Dyw = t.D_yw.cast<cd>(), Dzu = t.D_zu.cast<cd>();
    if (nx == 0) {
      for (int k = 0; k < K_; ++k) {
        b.yw[k] = Dyw;
        b.zu[k] = Dzu;
        b.zw[k] = CMat::Zero(t.n_z(), t.n_w());
      }
    } else if (modal_) {
      const CMat ViBw = Vinv_ * t.B_w.cast<cd>();
      const CMat CzV = t.C_z.cast<cd>() * V_;
      for (int k = 0; k < K_; ++k) {
        const auto dk = d_.row(k).transpose().asDiagonal();
        const CMat dBw = dk * ViBw;
        b.yw[k] = CyV_ * dBw + Dyw;
        b.zw[k] = CzV * dBw;
        b.zu[k] = CzV * (dk * ViBu_) + Dzu;
      }
    } else {
      const CMat Bw = t.B_w.cast<cd>(), Bu = t.B_u.cast<cd>(), Cy = t.C_y.cast<cd>(), Cz = t.C_z.cast<cd>();
      for (int k = 0; k < K_; ++k) {
        const CMat RBw = Res_[k] * Bw;
        b.yw[k] = Cy * RBw + Dyw;
        b.zw[k] = Cz * RBw;
        b.zu[k] = Cz * (Res_[k] * Bu) + Dzu;
      }
    }
    for (int k : {0, K_ - 1})
      for (auto* m : {&b.yw[k], &b.zw[k], &b.zu[k]}) *m = m->real().cast<cd>();
    return b;
  }

  InferenceEvaluation evaluate(const NllfrTheta& t) const {
    const Blocks b = blocks(t);
    InferenceEvaluation ev;
    const Eigen::MatrixXd Theta = regularizer_theta(t.B_w, t.D_yw, cfg_.epsilon, cfg_.lambda);
    ev.latents = infer_core(b, U_, E0_, Lambda_, Theta, cfg_.lambda);
    ev.beta = fit_beta(stack_time(ev.latents.Z, N_), stack_time(ev.latents.W, N_), map_);
    ev.fixed_point = fixed_point_core(b, ev.beta.beta, map_, U_, ev.latents.Z, cfg_.tau, N_);
    const SpectrumTensor W = nl_response(ev.beta.beta, map_, ev.fixed_point.Z, N_);
    ev.Y_hat = output_core(b, U_, W);
    SpectrumTensor E = E0_;
    for (std::size_t r = 0; r < E.size(); ++r)
      for (int k = 0; k < K_; ++k) E[r].row(k) -= (b.yw[k] * W[r].row(k).transpose()).transpose();
    force_real_edges(E);
    ev.residual = weighted_residual(E, factors_);
    if (!ev.residual.allFinite()) throw DivergenceError("inference residual is not finite", 0);
    return ev;
  }

  Eigen::VectorXd bla_residual() const { return weighted_residual(E0_, factors_); }
  const FeatureMap& map() const { return map_; }
  int R() const { return static_cast<int>(U_.size()); }
  int N() const { return N_; }

private:
  InferenceConfig cfg_;
  int N_;
  int K_;
  NllfrTheta theta_uy_;
  FeatureMap map_;
  SpectrumTensor U_;
  SpectrumTensor E0_;
  std::vector<CMat> Gyu_;
  BinMatrices Lambda_;
  BinMatrices factors_;
  bool modal_ = false;
  CMat V_, Vinv_, CyV_, ViBu_;
  Eigen::MatrixXcd d_;
  std::vector<CMat> Res_;
};

}  // namespace

BinMatrices weighting_matrices(const Dataset& ds, Weighting w) {
  const int K = ds.N() / 2 + 1;
  const int ny = ds.n_y();
  if (w == Weighting::Identity) return BinMatrices(K, CMat::Identity(ny, ny));
  if (!ds.noise_var) throw DataError("inverse-noise-variance weighting requested but the dataset has no noise_var");
  BinMatrices L;
  L.reserve(K);
  for (const auto& v : *ds.noise_var) {
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (v + v.adjoint()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-8).cwiseInverse();
    L.push_back(es.eigenvectors() * ev.cast<cd>().asDiagonal() * es.eigenvectors().adjoint());
  }
  return L;
}

BinMatrices weight_factors(const BinMatrices& Lambda) {
  BinMatrices F;
  F.reserve(Lambda.size());
  for (const auto& m : Lambda) {
    Eigen::LLT<CMat> llt(0.5 * (m + m.adjoint()));
    if (llt.info() != Eigen::Success) throw NumericalError("weighting matrix is not positive definite");
    F.push_back(llt.matrixU());
  }
  return F;
}

Eigen::VectorXd weighted_residual(const SpectrumTensor& E, const BinMatrices& F) {
  if (E.empty()) return {};
  const Eigen::Index K = E.front().rows();
  const Eigen::Index c = E.front().cols();
  Eigen::VectorXd out(static_cast<Eigen::Index>(E.size()) * (2 * K - 2) * c);
  Eigen::Index pos = 0;
  Eigen::VectorXcd e(c);
  for (const auto& Er : E) {
    for (Eigen::Index k = 0; k < K; ++k) {
      e = Er.row(k).transpose();
      if (!F.empty()) e = F[k] * e;
      for (Eigen::Index j = 0; j < c; ++j) out(pos++) = e(j).real();
      if (k != 0 && k != K - 1)
        for (Eigen::Index j = 0; j < c; ++j) out(pos++) = e(j).imag();
    }
  }
  return out;
}

Eigen::MatrixXd regularizer_theta(const Eigen::MatrixXd& B_w, const Eigen::MatrixXd& D_yw, double epsilon,
                                  double lambda) {
  if (B_w.cols() != D_yw.cols()) throw DataError("regularizer_theta: B_w and D_yw column counts differ");
  const Eigen::Index nw = B_w.cols();
  Eigen::MatrixXd Theta = B_w.transpose() * B_w + D_yw.transpose() * D_yw;
  Theta.diagonal().array() += epsilon / lambda;
  return Theta;
}

WzInit init_theta_wz(const NllfrTheta& theta_uy, const Dataset& ds, int n_w, int n_z, std::uint64_t seed) {
  if (n_w < 1 || n_z < 1) throw ConfigError("init_theta_wz: n_w and n_z must be >= 1");
  const int nx = theta_uy.n_x(), nu = theta_uy.n_u(), ny = theta_uy.n_y();
  Rng rng(seed);
  auto draw = [&](int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  WzInit out;
  out.theta = theta_uy;
  out.theta.B_w = draw(nx, n_w);
  const Eigen::MatrixXd Cz = draw(n_z, nx);
  out.theta.D_yw = draw(ny, n_w);
  const Eigen::MatrixXd Dzu = draw(n_z, nu);

  // Linear z* from the steady-state BLA states.
  const SpectrumTensor U = dft_forward(ds.u);
  const auto st = steady_state_lti(theta_uy.yu(), U, ds.N());
  const Records X = dft_inverse(st.X, ds.N());
  Eigen::VectorXd zmin = Eigen::VectorXd::Constant(n_z, std::numeric_limits<double>::infinity());
  Eigen::VectorXd zmax = -zmin;
  for (std::size_t r = 0; r < X.size(); ++r) {
    const Eigen::MatrixXd z = X[r] * Cz.transpose() + ds.u[r] * Dzu.transpose();
    zmin = zmin.cwiseMin(z.colwise().minCoeff().transpose());
    zmax = zmax.cwiseMax(z.colwise().maxCoeff().transpose());
  }
  out.Tz = (zmax - zmin) / 2.0;
  for (int j = 0; j < n_z; ++j)
    if (!(out.Tz(j) > 0.0)) throw NumericalError("init_theta_wz: z* channel " + std::to_string(j) + " has zero range");
  out.theta.C_z = out.Tz.cwiseInverse().asDiagonal() * Cz;
  out.theta.D_zu = out.Tz.cwiseInverse().asDiagonal() * Dzu;
  return out;
}

LatentSpectra infer_latents(const NllfrTheta& theta, const Dataset& ds, const InferenceConfig& cfg) {
  cfg.validate();
  ds.validate();
  const int N = ds.N();
  const Blocks b = from_subblocks(nllfr_subblocks(theta, all_bins(N), N));
  const SpectrumTensor U = dft_forward(ds.u);
  SpectrumTensor E0 = dft_forward(ds.y);
  for (std::size_t r = 0; r < E0.size(); ++r)
    for (int k = 0; k <= N / 2; ++k) E0[r].row(k) -= (b.yu[k] * U[r].row(k).transpose()).transpose();
  BinMatrices Lambda = cfg.weighting == Weighting::Identity ? BinMatrices{} : weighting_matrices(ds, cfg.weighting);
  return infer_core(b, U, E0, Lambda, regularizer_theta(theta.B_w, theta.D_yw, cfg.epsilon, cfg.lambda), cfg.lambda);
}

SpectrumTensor nonlinear_response(const Eigen::MatrixXd& beta, const FeatureMap& map, const SpectrumTensor& Z, int N) {
  if (beta.rows() != map.n_phi()) throw DataError("nonlinear_response: beta rows must equal n_phi");
  return nl_response(beta, map, Z, N);
}

FixedPointResult fixed_point_iterate(const NllfrTheta& theta, const Eigen::MatrixXd& beta, const FeatureMap& map,
                                     const SpectrumTensor& U, const SpectrumTensor& Z0, int tau, int N) {
  if (tau < 0) throw ConfigError("fixed_point_iterate: tau must be >= 0");
  if (beta.rows() != map.n_phi() || beta.cols() != theta.n_w()) throw DataError("fixed_point_iterate: beta shape");
  if (tau == 0) return {Z0, {}};
  const Blocks b = from_subblocks(nllfr_subblocks(theta, all_bins(N), N));
  return fixed_point_core(b, beta, map, U, Z0, tau, N);
}

SpectrumTensor parametric_output_from_w(const NllfrTheta& theta, const SpectrumTensor& U, const SpectrumTensor& W,
                                        int N) {
  const Blocks b = from_subblocks(nllfr_subblocks(theta, all_bins(N), N));
  return output_core(b, U, W);
}

SpectrumTensor parametric_output(const NllfrTheta& theta, const Eigen::MatrixXd& beta, const FeatureMap& map,
                                 const SpectrumTensor& U, const SpectrumTensor& Z_tau, int N) {
  return parametric_output_from_w(theta, U, nonlinear_response(beta, map, Z_tau, N), N);
}

InferenceEvaluation evaluate_inference(const NllfrTheta& theta, const Dataset& ds, const InferenceConfig& cfg) {
  return Evaluator(theta, ds, cfg).evaluate(theta);
}

InferenceResult run_inference_learning(const NllfrTheta& theta_uy, const Dataset& ds, const InferenceConfig& cfg) {
  const Evaluator ev(theta_uy, ds, cfg);
  const WzInit init = init_theta_wz(theta_uy, ds, cfg.n_w, cfg.n_z, cfg.seed);

  InferenceResult out;
  out.Tz = init.Tz;
  const double scale = 1.0 / (static_cast<double>(ev.R()) * ev.N());
  out.bla_loss = scale * ev.bla_residual().squaredNorm();

  NllfrTheta work = init.theta;
  std::mutex mutex;
  Eigen::VectorXd last_params;
  std::vector<double> last_defects;

  ResidualFn f = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    NllfrTheta t = work;
    unpack_wz(p, t);
    InferenceEvaluation e = ev.evaluate(t);
    std::lock_guard lock(mutex);
    last_params = p;
    last_defects = e.fixed_point.defects;
    return std::move(e.residual);
  };
  IterationCallback on_accept = [&](int, const Eigen::VectorXd& p, double) {
    std::lock_guard lock(mutex);
    if (last_params.size() == p.size() && last_params == p) out.defects.push_back(last_defects);
  };

  LmOptions lm = cfg.lm;
  lm.max_iter = cfg.max_iter;
  lm.loss_scale = scale;

  const Eigen::VectorXd p0 = pack_wz(work);
  out.defects.push_back(ev.evaluate(work).fixed_point.defects);
  LmResult res = levenberg_marquardt(f, p0, lm, nullptr, on_accept);
  unpack_wz(res.params, work);
  out.report = std::move(res.report);

  const InferenceEvaluation final_eval = ev.evaluate(work);
  out.model.theta = work;
  out.model.beta = final_eval.beta.beta;
  out.model.map = ev.map();
  out.model.u_scalers = ds.u_scalers;
  out.model.y_scalers = ds.y_scalers;
  out.beta_rank = final_eval.beta.rank;
  return out;
}

}  // namespace nllfr

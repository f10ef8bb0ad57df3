#include "nllfr/bla.hpp"

#include "nllfr/errors.hpp"
#include "nllfr/model.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>

namespace nllfr {

using cd = std::complex<double>;

FrfEstimate estimate_frf(const Dataset& ds) {
  ds.validate();
  const int R = ds.R();
  const int nu = ds.n_u();
  const int ny = ds.n_y();
  if (ds.excited_bins.empty()) throw DataError("estimate_frf: dataset has no excited bins");
  if (nu > 1 && R < nu) throw DataError("estimate_frf: MIMO estimation needs R >= n_u realizations");

  const SpectrumTensor U = dft_forward(ds.u);
  const SpectrumTensor Y = dft_forward(ds.y);
  FrfEstimate frf;
  frf.N = ds.N();
  frf.bins = ds.excited_bins;
  std::vector<Eigen::MatrixXd> var;

  for (int k : ds.excited_bins) {
    if (nu == 1) {
      std::vector<Eigen::VectorXcd> ratios;
      for (int r = 0; r < R; ++r) {
        const cd u = U[r](k, 0);
        if (std::abs(u) < 1e-12) throw DataError("estimate_frf: input not excited at bin " + std::to_string(k));
        ratios.push_back(Y[r].row(k).transpose() / u);
      }
      Eigen::VectorXcd mean = Eigen::VectorXcd::Zero(ny);
      for (const auto& g : ratios) mean += g;
      mean /= static_cast<double>(R);
      frf.G.push_back(mean);
      if (R >= 2) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(ny);
        for (const auto& g : ratios) v += (g - mean).cwiseAbs2();
        var.push_back(v / static_cast<double>((R - 1) * R));
      }
    } else {
      Eigen::MatrixXcd Um(nu, R), Ym(ny, R);
      for (int r = 0; r < R; ++r) {
        Um.col(r) = U[r].row(k).transpose();
        Ym.col(r) = Y[r].row(k).transpose();
      }
      const Eigen::MatrixXcd UUh = Um * Um.adjoint();
      Eigen::FullPivLU<Eigen::MatrixXcd> lu(UUh);
      if (!lu.isInvertible() || lu.rcond() < 1e-12)
        throw DataError("estimate_frf: input spectra are not independent at bin " + std::to_string(k));
      const Eigen::MatrixXcd G = lu.solve(Um * Ym.adjoint()).adjoint();
      frf.G.push_back(G);
      if (R > nu) {
        const Eigen::MatrixXcd res = Ym - G * Um;
        const Eigen::VectorXd s2 = res.rowwise().squaredNorm() / static_cast<double>(R - nu);
        const Eigen::VectorXd inv_diag = lu.inverse().diagonal().real();
        var.push_back(s2 * inv_diag.transpose());
      }
    }
  }
  if (!var.empty()) frf.var = std::move(var);
  return frf;
}

namespace {

// FRF on bins 0..N/2 from the excited bins. Interior gaps are filled by
// linear interpolation; DC and Nyquist by the even quadratic extrapolation
// Re G(k0 +- h) = a + b h^2 through the two nearest bins.
std::vector<Eigen::MatrixXcd> full_grid(const FrfEstimate& frf, std::vector<std::string>& warnings) {
  const int K = frf.N / 2 + 1;
  std::map<int, Eigen::MatrixXcd> known;
  for (std::size_t i = 0; i < frf.bins.size(); ++i) known.emplace(frf.bins[i], frf.G[i]);
  std::vector<Eigen::MatrixXcd> G(K);
  int filled = 0;
  for (int k = 1; k < K - 1; ++k) {
    auto hi = known.lower_bound(k);
    if (hi != known.end() && hi->first == k) {
      G[k] = hi->second;
      continue;
    }
    ++filled;
    if (hi == known.begin()) {
      G[k] = hi->second;
    } else if (hi == known.end()) {
      G[k] = std::prev(hi)->second;
    } else {
      auto lo = std::prev(hi);
      const double t = static_cast<double>(k - lo->first) / static_cast<double>(hi->first - lo->first);
      G[k] = (1.0 - t) * lo->second + t * hi->second;
    }
  }
  if (filled > 0)
    warnings.push_back(std::to_string(filled) + " unexcited interior bins interpolated for the realization step");
  auto edge = [&](int near1, int near2) -> Eigen::MatrixXcd {
    if (near2 >= 1 && near2 <= K - 2) return ((4.0 * G[near1] - G[near2]) / 3.0).real().cast<cd>();
    return G[near1].real().cast<cd>();
  };
  G[0] = edge(1, 2);
  G[K - 1] = edge(K - 2, K - 3);
  return G;
}

// Real Schur reflection of every eigenvalue outside the unit circle to 1/conj(lambda).
bool reflect_unstable(Eigen::MatrixXd& A) {
  if (A.size() == 0 || spectral_radius(A) < 1.0) return false;
  Eigen::RealSchur<Eigen::MatrixXd> schur(A);
  Eigen::MatrixXd T = schur.matrixT();
  const Eigen::Index n = T.rows();
  for (Eigen::Index i = 0; i < n;) {
    if (i + 1 < n && T(i + 1, i) != 0.0) {
      const double r2 = T.block(i, i, 2, 2).determinant();
      if (r2 > 1.0) T.block(i, i, 2, 2) /= r2;
      i += 2;
    } else {
      if (std::abs(T(i, i)) > 1.0) T(i, i) = 1.0 / T(i, i);
      i += 1;
    }
  }
  A = schur.matrixU() * T * schur.matrixU().transpose();
  return true;
}

// Given A and C, the FRF is linear in (B, D): least squares over the bins.
void fit_b_d(const FrfEstimate& frf, StateSpaceModel& ss) {
  const int nx = ss.n_x();
  const int ny = ss.n_y();
  const int nu = static_cast<int>(frf.G.front().cols());
  const Eigen::Index rows = 2 * static_cast<Eigen::Index>(frf.bins.size()) * ny;
  Eigen::MatrixXd M(rows, nx + ny);
  Eigen::MatrixXd rhs(rows, nu);
  const Eigen::MatrixXcd Cc = ss.C.cast<cd>();
  for (std::size_t i = 0; i < frf.bins.size(); ++i) {
    const int k = frf.bins[i];
    Eigen::MatrixXcd zi = -ss.A.cast<cd>();
    zi.diagonal().array() += unit_circle(k, frf.N);
    const Eigen::MatrixXcd CR = zi.transpose().partialPivLu().solve(Cc.transpose()).transpose();
    const Eigen::Index r0 = 2 * static_cast<Eigen::Index>(i) * ny;
    M.block(r0, 0, ny, nx) = CR.real();
    M.block(r0 + ny, 0, ny, nx) = CR.imag();
    M.block(r0, nx, ny, ny).setIdentity();
    M.block(r0 + ny, nx, ny, ny).setZero();
    rhs.middleRows(r0, ny) = frf.G[i].real();
    rhs.middleRows(r0 + ny, ny) = frf.G[i].imag();
  }
  const Eigen::MatrixXd sol = M.colPivHouseholderQr().solve(rhs);
  ss.B = sol.topRows(nx);
  ss.D = sol.bottomRows(ny);
}

}  // namespace

std::vector<double> frf_fit_error(const StateSpaceModel& ss, const FrfEstimate& frf) {
  const auto G = freq_response(ss, frf.bins, frf.N);
  std::vector<double> e;
  for (std::size_t i = 0; i < G.size(); ++i) {
    const double ref = frf.G[i].norm();
    e.push_back((frf.G[i] - G[i]).norm() / (ref > 0.0 ? ref : 1.0));
  }
  return e;
}

SubspaceResult subspace_realize(const FrfEstimate& frf, int n_x, int q) {
  if (n_x <= 0) throw ConfigError("subspace_realize: n_x must be positive");
  if (q <= n_x) throw ConfigError("subspace_realize: block_rows must exceed n_x");
  if (frf.G.empty()) throw DataError("subspace_realize: empty FRF");
  if (static_cast<int>(frf.bins.size()) < q + n_x) throw DataError("subspace_realize: need at least q + n_x bins");
  const int N = frf.N;
  if (2 * q + 1 > N) throw ConfigError("subspace_realize: block_rows too large for N");
  const int ny = static_cast<int>(frf.G.front().rows());
  const int nu = static_cast<int>(frf.G.front().cols());

  SubspaceResult out;
  const auto G = full_grid(frf, out.warnings);

  // Impulse response h(n) per transfer element.
  std::vector<Eigen::MatrixXd> h(N, Eigen::MatrixXd(ny, nu));
  Spectrum col(N / 2 + 1, 1);
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < nu; ++j) {
      for (int k = 0; k <= N / 2; ++k) col(k, 0) = G[k](i, j);
      const Eigen::MatrixXd hij = dft_inverse(col, N);
      for (int n = 0; n < N; ++n) h[n](i, j) = hij(n, 0);
    }

  const int cols = q;
  Eigen::MatrixXd H(q * ny, cols * nu);
  for (int a = 0; a < q; ++a)
    for (int b = 0; b < cols; ++b) H.block(a * ny, b * nu, ny, nu) = h[1 + a + b];

  Eigen::BDCSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.singular_values = svd.singularValues();
  const double s1 = out.singular_values(0);
  if (n_x > out.singular_values.size()) throw ConfigError("subspace_realize: n_x exceeds Hankel size");
  if (!(out.singular_values(n_x - 1) > 1e-10 * s1))
    out.warnings.push_back("no singular-value support for order " + std::to_string(n_x) +
                           " (data rank deficient); realization is best effort");

  const Eigen::VectorXd sqrt_s = out.singular_values.head(n_x).cwiseSqrt();
  const Eigen::MatrixXd Obs = svd.matrixU().leftCols(n_x) * sqrt_s.asDiagonal();
  const Eigen::MatrixXd Ctr = sqrt_s.asDiagonal() * svd.matrixV().leftCols(n_x).transpose();

  StateSpaceModel ss;
  const Eigen::MatrixXd up = Obs.topRows((q - 1) * ny);
  const Eigen::MatrixXd down = Obs.bottomRows((q - 1) * ny);
  ss.A = up.completeOrthogonalDecomposition().solve(down);
  ss.C = Obs.topRows(ny);
  ss.B = Ctr.leftCols(nu);
  ss.D = h[0];

  out.reflected = reflect_unstable(ss.A);
  if (out.reflected) out.warnings.push_back("unstable poles of the realization were reflected into the unit disc");
  fit_b_d(frf, ss);
  out.ss = ss;

  const auto Gss = freq_response(ss, frf.bins, N);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < Gss.size(); ++i) {
    num += (frf.G[i] - Gss[i]).squaredNorm();
    den += frf.G[i].squaredNorm();
  }
  out.residual = std::sqrt(num / std::max(den, 1e-300));
  return out;
}

LmResult refine_bla(const StateSpaceModel& ss0, const FrfEstimate& frf, FrfWeighting weighting, const LmOptions& opts,
                    StateSpaceModel* refined) {
  ss0.validate();
  if (weighting == FrfWeighting::InverseVariance && !frf.var)
    throw DataError("refine_bla: inverse-variance weighting needs an FRF variance (R >= 2)");
  const int nx = ss0.n_x(), nu = ss0.n_u(), ny = ss0.n_y();
  const std::size_t nb = frf.bins.size();
  const Eigen::Index nres = 2 * static_cast<Eigen::Index>(nb) * ny * nu;

  // sqrt of the per-entry weights.
  std::vector<Eigen::MatrixXd> sw(nb, Eigen::MatrixXd::Ones(ny, nu));
  if (weighting == FrfWeighting::InverseVariance)
    for (std::size_t i = 0; i < nb; ++i) sw[i] = (*frf.var)[i].cwiseMax(1e-300).cwiseInverse().cwiseSqrt();

  auto model_of = [&](const Eigen::VectorXd& p) {
    StateSpaceModel s{Eigen::MatrixXd(nx, nx), Eigen::MatrixXd(nx, nu), Eigen::MatrixXd(ny, nx), Eigen::MatrixXd(ny, nu)};
    unpack_lti(p, s);
    return s;
  };

  // Residual layout per bin: real parts of entries (column-major), then imaginary parts.
  ResidualFn f = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    const StateSpaceModel s = model_of(p);
    if (!(spectral_radius(s.A) < 1.0)) throw NumericalError("refine_bla: unstable trial point");
    const auto G = freq_response(s, frf.bins, frf.N);
    Eigen::VectorXd r(nres);
    Eigen::Index pos = 0;
    for (std::size_t i = 0; i < nb; ++i) {
      const Eigen::MatrixXcd e = (frf.G[i] - G[i]).cwiseProduct(sw[i].cast<cd>());
      for (Eigen::Index c = 0; c < e.size(); ++c) r(pos++) = e.data()[c].real();
      for (Eigen::Index c = 0; c < e.size(); ++c) r(pos++) = e.data()[c].imag();
    }
    return r;
  };

  JacobianFn jac = [&](const Eigen::VectorXd& p, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    const StateSpaceModel s = model_of(p);
    const Eigen::Index np = p.size();
    Eigen::MatrixXd J(nres, np);
    const Eigen::MatrixXcd B = s.B.cast<cd>();
    const Eigen::MatrixXcd C = s.C.cast<cd>();
    const Eigen::Index offB = nx * nx, offC = offB + nx * nu, offD = offC + ny * nx;
    Eigen::MatrixXcd dG(ny * nu, np);
    for (std::size_t i = 0; i < nb; ++i) {
      Eigen::MatrixXcd M = -s.A.cast<cd>();
      M.diagonal().array() += unit_circle(frf.bins[i], frf.N);
      const Eigen::MatrixXcd Res = M.partialPivLu().inverse();
      const Eigen::MatrixXcd RB = Res * B;  // nx x nu
      const Eigen::MatrixXcd CR = C * Res;  // ny x nx
      dG.setZero();
      // Entry (a, b) of G is row a + b * ny of dG.
      for (int b = 0; b < nu; ++b)
        for (int a = 0; a < ny; ++a) {
          const Eigen::Index row = a + b * ny;
          for (int j = 0; j < nx; ++j)
            for (int l = 0; l < nx; ++l) dG(row, l + j * nx) = CR(a, l) * RB(j, b);
          for (int l = 0; l < nx; ++l) dG(row, offB + l + b * nx) = CR(a, l);
          for (int j = 0; j < nx; ++j) dG(row, offC + a + j * ny) = RB(j, b);
          dG(row, offD + a + b * ny) = 1.0;
        }
      const Eigen::Index r0 = 2 * static_cast<Eigen::Index>(i) * ny * nu;
      for (Eigen::Index row = 0; row < ny * nu; ++row) {
        const double w = sw[i].data()[row];
        J.row(r0 + row) = -w * dG.row(row).real();
        J.row(r0 + ny * nu + row) = -w * dG.row(row).imag();
      }
    }
    return J;
  };

  LmResult res = levenberg_marquardt(f, pack_lti(ss0), opts, jac);
  if (refined) *refined = model_of(res.params);
  return res;
}

Eigen::VectorXd state_std(const StateSpaceModel& ss, const Dataset& ds) {
  const SpectrumTensor U = dft_forward(ds.u);
  const auto st = steady_state_lti(ss, U, ds.N());
  const Records X = dft_inverse(st.X, ds.N());
  const auto stats = channel_stats(X);
  Eigen::VectorXd s(ss.n_x());
  for (int i = 0; i < ss.n_x(); ++i) s(i) = stats[i].std;
  return s;
}

ScaledStates scale_states(const StateSpaceModel& ss, const Dataset& ds) {
  ss.validate();
  const Eigen::VectorXd s = state_std(ss, ds);
  const double smax = s.size() ? s.maxCoeff() : 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s(i) > 1e-13 * smax) || smax == 0.0)
      throw NumericalError("scale_states: state " + std::to_string(i) + " has zero variance (unreachable state)");
  ScaledStates out;
  out.Tx = s;
  out.theta = NllfrTheta::from_lti(similarity_transform(ss, s.asDiagonal().toDenseMatrix()));
  return out;
}

BlaResult run_bla(const Dataset& ds, const BlaOptions& opts) {
  BlaResult out;
  out.frf = estimate_frf(ds);
  int q = opts.block_rows;
  if (q == 0) {
    q = std::max(2 * opts.n_x + 1, 20);
    q = std::min(q, static_cast<int>(out.frf.bins.size()) - opts.n_x);
    q = std::min(q, (ds.N() - 1) / 2);
  }
  out.subspace = subspace_realize(out.frf, opts.n_x, q);
  LmResult fit = refine_bla(out.subspace.ss, out.frf, opts.weighting, opts.lm, &out.refined);
  out.fit = std::move(fit.report);
  out.fit_error = frf_fit_error(out.refined, out.frf);
  out.warnings = out.subspace.warnings;

  // States without variance on the data (order above its support) stay unscaled.
  Eigen::VectorXd s = state_std(out.refined, ds);
  const double smax = s.size() ? s.maxCoeff() : 0.0;
  std::string dead;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s(i) > 1e-13 * smax)) {
      dead += (dead.empty() ? "" : ", ") + std::to_string(i);
      s(i) = 1.0;
    }
  if (!dead.empty()) out.warnings.push_back("states " + dead + " have no variance on the data and were left unscaled");
  out.scaled.Tx = s;
  out.scaled.theta = NllfrTheta::from_lti(similarity_transform(out.refined, s.asDiagonal().toDenseMatrix()));
  return out;
}

}  // namespace nllfr

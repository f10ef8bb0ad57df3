#include "nllfr/simulation.hpp"

#include "nllfr/errors.hpp"

#include <cmath>
#include <limits>

namespace nllfr {

namespace {

// Row-major copies of the model blocks so the per-sample loop touches
// contiguous memory.
struct Kernel {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  int nx, nu, ny, nw, nz, nphi;
  RowMat A, Bu, Bw, Cy, Cz, Dyu, Dyw, Dzu, betaT;
  const FeatureMap* map;

  explicit Kernel(const NllfrModel& m)
      : nx(m.theta.n_x()), nu(m.theta.n_u()), ny(m.theta.n_y()), nw(m.theta.n_w()), nz(m.theta.n_z()),
        nphi(m.map.n_phi()), A(m.theta.A), Bu(m.theta.B_u), Bw(m.theta.B_w), Cy(m.theta.C_y), Cz(m.theta.C_z),
        Dyu(m.theta.D_yu), Dyw(m.theta.D_yw), Dzu(m.theta.D_zu), betaT(m.beta.transpose()), map(&m.map) {}
};

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Runs the recursion over u starting from x (updated in place). Rows of y,
// xs, zs, ws are written from row offset `row` when the pointers are given.
// `sample0` offsets divergence indices.
void run(const Kernel& k, const Eigen::MatrixXd& u, Eigen::VectorXd& x, long sample0, Eigen::MatrixXd* y,
         Eigen::MatrixXd* xs, Eigen::MatrixXd* zs, Eigen::MatrixXd* ws) {
  const Eigen::Index N = u.rows();
  std::vector<double> un(k.nu), z(k.nz), w(k.nw), ph(k.nphi), xn(k.nx);
  std::vector<double> powers((k.map->degree() + 1) * std::max(1, k.nz));
  const bool nl = k.nw > 0 && k.nz > 0 && k.nphi > 0;
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int j = 0; j < k.nu; ++j) un[j] = u(n, j);
    for (int i = 0; i < k.nz; ++i) z[i] = dot(k.Cz.row(i).data(), x.data(), k.nx) + dot(k.Dzu.row(i).data(), un.data(), k.nu);
    if (nl) {
      phi_into(z.data(), *k.map, powers.data(), ph.data());
      for (int i = 0; i < k.nw; ++i) w[i] = dot(k.betaT.row(i).data(), ph.data(), k.nphi);
    } else {
      std::fill(w.begin(), w.end(), 0.0);
    }
    if (y)
      for (int i = 0; i < k.ny; ++i)
        (*y)(n, i) = dot(k.Cy.row(i).data(), x.data(), k.nx) + dot(k.Dyu.row(i).data(), un.data(), k.nu) +
                     dot(k.Dyw.row(i).data(), w.data(), k.nw);
    if (xs) xs->row(n) = x.transpose();
    if (zs)
      for (int i = 0; i < k.nz; ++i) (*zs)(n, i) = z[i];
    if (ws)
      for (int i = 0; i < k.nw; ++i) (*ws)(n, i) = w[i];
    bool finite = true;
    for (int i = 0; i < k.nx; ++i) {
      xn[i] = dot(k.A.row(i).data(), x.data(), k.nx) + dot(k.Bu.row(i).data(), un.data(), k.nu) +
              dot(k.Bw.row(i).data(), w.data(), k.nw);
      finite = finite && std::isfinite(xn[i]);
    }
    if (!finite) throw DivergenceError("simulation diverged", sample0 + n + 1);
    for (int i = 0; i < k.nx; ++i) x(i) = xn[i];
  }
}

void check_input(const NllfrModel& m, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0) {
  if (u.cols() != m.theta.n_u()) throw DataError("simulate: input has the wrong channel count");
  if (x0.size() != m.theta.n_x()) throw DataError("simulate: x0 has the wrong length");
  if (m.beta.rows() != m.map.n_phi() || m.beta.cols() != m.theta.n_w())
    throw DataError("simulate: beta shape does not match the feature map");
  if (m.map.n_z() != m.theta.n_z()) throw DataError("simulate: feature map n_z does not match C_z");
}

}  // namespace

SimulationResult simulate(const NllfrModel& m, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0) {
  check_input(m, u, x0);
  const Kernel k(m);
  SimulationResult r;
  r.y.resize(u.rows(), k.ny);
  r.x.resize(u.rows(), k.nx);
  r.z.resize(u.rows(), k.nz);
  r.w.resize(u.rows(), k.nw);
  Eigen::VectorXd x = x0;
  run(k, u, x, 0, &r.y, &r.x, &r.z, &r.w);
  return r;
}

Eigen::MatrixXd simulate_output(const NllfrModel& m, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0) {
  check_input(m, u, x0);
  const Kernel k(m);
  Eigen::MatrixXd y(u.rows(), k.ny);
  Eigen::VectorXd x = x0;
  run(k, u, x, 0, &y, nullptr, nullptr, nullptr);
  return y;
}

Eigen::MatrixXd simulate_physical(const NllfrModel& m, const Eigen::MatrixXd& u, const Eigen::VectorXd& x0) {
  if (m.u_scalers.size() != static_cast<std::size_t>(u.cols()) ||
      m.y_scalers.size() != static_cast<std::size_t>(m.theta.n_y()))
    throw DataError("simulate_physical: scaler count does not match the model");
  const Records us = apply_scalers(Records{u}, m.u_scalers);
  return invert_scalers(Records{simulate_output(m, us.front(), x0)}, m.y_scalers).front();
}

SteadyState steady_state_simulate(const NllfrModel& m, const Eigen::MatrixXd& u_period, int n_warm) {
  if (n_warm < 0) throw ConfigError("steady_state_simulate: n_warm must be >= 0");
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(m.theta.n_x());
  check_input(m, u_period, x0);
  const Kernel k(m);
  const Eigen::Index N = u_period.rows();
  Eigen::VectorXd x = x0;
  for (int p = 0; p + 1 < n_warm; ++p) run(k, u_period, x, p * N, nullptr, nullptr, nullptr, nullptr);
  SteadyState out;
  out.y.resize(N, k.ny);
  if (n_warm == 0) {
    run(k, u_period, x, 0, &out.y, nullptr, nullptr, nullptr);
    out.defect = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  Eigen::MatrixXd prev(N, k.ny);
  run(k, u_period, x, static_cast<long>(n_warm - 1) * N, &prev, nullptr, nullptr, nullptr);
  run(k, u_period, x, static_cast<long>(n_warm) * N, &out.y, nullptr, nullptr, nullptr);
  const double base = out.y.norm();
  const double d = (out.y - prev).norm();
  out.defect = base > 0.0 ? d / base : d;
  return out;
}

Eigen::MatrixXd steady_state_output(const NllfrModel& m, const Eigen::MatrixXd& u_period, long warm_samples) {
  if (warm_samples < 0) throw ConfigError("steady_state_output: warm_samples must be >= 0");
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(m.theta.n_x());
  check_input(m, u_period, x0);
  const Kernel k(m);
  const Eigen::Index N = u_period.rows();
  Eigen::VectorXd x = x0;
  long done = 0;
  while (done < warm_samples) {
    const long len = std::min<long>(N, warm_samples - done);
    const long start = (N - (warm_samples - done) % N) % N;
    const long take = std::min<long>(len, N - start);
    run(k, u_period.middleRows(start, take), x, done, nullptr, nullptr, nullptr, nullptr);
    done += take;
  }
  Eigen::MatrixXd y(N, k.ny);
  run(k, u_period, x, warm_samples, &y, nullptr, nullptr, nullptr);
  return y;
}

long warmup_samples(const NllfrModel& m, int N, int n_warm) {
  const long cap = static_cast<long>(n_warm) * N;
  const double rho = m.theta.n_x() > 0 ? spectral_radius(m.theta.A) : 0.0;
  if (!(rho < 1.0)) return cap;
  const double n = rho > 0.0 ? std::ceil(std::log(1e-12) / std::log(rho)) : 0.0;
  return std::min(cap, std::max(256L, static_cast<long>(std::min(n, 1e12))));
}

Eigen::VectorXd full_residual(const NllfrModel& m, const Dataset& ds, int n_warm, Weighting weighting) {
  if (ds.n_u() != m.theta.n_u() || ds.n_y() != m.theta.n_y())
    throw DataError("full_residual: model and dataset channel counts differ");
  const BinMatrices F =
      weighting == Weighting::Identity ? BinMatrices{} : weight_factors(weighting_matrices(ds, weighting));
  SpectrumTensor E;
  E.reserve(ds.u.size());
  for (std::size_t r = 0; r < ds.u.size(); ++r) {
    const SteadyState ss = steady_state_simulate(m, ds.u[r], n_warm);
    E.push_back(dft_forward(ds.y[r]) - dft_forward(ss.y));
  }
  return weighted_residual(E, F);
}

FullOptResult run_full_optimization(const NllfrModel& m, const Dataset& ds, const FullOptOptions& opts) {
  m.validate();
  ds.validate();
  opts.lm.validate();
  if (opts.n_warm < 0) throw ConfigError("full optimization: n_warm must be >= 0");
  if (!(opts.max_spectral_radius > 0.0)) throw ConfigError("full optimization: max_spectral_radius must be > 0");
  if (ds.n_u() != m.theta.n_u() || ds.n_y() != m.theta.n_y())
    throw DataError("full optimization: model and dataset channel counts differ");

  // Output spectra and weight factors do not depend on the parameters.
  const SpectrumTensor Y = dft_forward(ds.y);
  const BinMatrices F =
      opts.weighting == Weighting::Identity ? BinMatrices{} : weight_factors(weighting_matrices(ds, opts.weighting));

  ResidualFn f = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    NllfrModel t = m;
    unpack_all(p, t);
    SpectrumTensor E;
    E.reserve(Y.size());
    for (std::size_t r = 0; r < Y.size(); ++r)
      E.push_back(Y[r] - dft_forward(opts.short_warmup
                                         ? steady_state_output(t, ds.u[r], warmup_samples(t, ds.N(), opts.n_warm))
                                         : steady_state_simulate(t, ds.u[r], opts.n_warm).y));
    Eigen::VectorXd res = weighted_residual(E, F);
    if (!res.allFinite()) throw DivergenceError("full residual is not finite", 0);
    return res;
  };

  LmOptions lm = opts.lm;
  lm.loss_scale = 1.0 / (static_cast<double>(ds.R()) * ds.N());
  const int nx = m.theta.n_x();
  FeasibleFn stable = [&](const Eigen::VectorXd& p) {
    const Eigen::Map<const Eigen::MatrixXd> A(p.data(), nx, nx);
    return nx == 0 || spectral_radius(A) < opts.max_spectral_radius;
  };
  LmResult res = levenberg_marquardt(f, pack_all(m), lm, nullptr, nullptr, stable);
  FullOptResult out{m, std::move(res.report)};
  unpack_all(res.params, out.model);
  return out;
}

}  // namespace nllfr

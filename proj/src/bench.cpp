#include "nllfr/bench.hpp"

#include "nllfr/errors.hpp"
#include "nllfr/rng.hpp"
#include "nllfr/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace nllfr {

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::MatrixXd normal_matrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

constexpr double kMinRadius = 0.3;
constexpr double kMaxPairRadius = 0.8;

// Real block-diagonal A: complex pairs with radius in [0.3, 0.8] (smooth,
// moderately resonant filters) and one real pole in (-rho, rho) when the
// order is odd. Output scaled to unit RMS gain over a 512-point grid.
StateSpaceModel random_filter(Rng& rng, int order, double rho) {
  StateSpaceModel ss;
  ss.A = Eigen::MatrixXd::Zero(order, order);
  int i = 0;
  for (; i + 1 < order; i += 2) {
    const double r = kMinRadius + (kMaxPairRadius - kMinRadius) * rng.uniform();
    const double a = kPi * (0.05 + 0.9 * rng.uniform());
    ss.A(i, i) = ss.A(i + 1, i + 1) = r * std::cos(a);
    ss.A(i, i + 1) = r * std::sin(a);
    ss.A(i + 1, i) = -r * std::sin(a);
  }
  if (i < order) ss.A(i, i) = rho * (2.0 * rng.uniform() - 1.0);
  ss.B = normal_matrix(rng, order, 1);
  ss.C = normal_matrix(rng, 1, order);
  ss.D = normal_matrix(rng, 1, 1);
  const auto G = freq_response(ss, all_bins(512), 512);
  double p = 0.0;
  for (const auto& g : G) p += std::norm(g(0, 0));
  const double g = std::sqrt(p / static_cast<double>(G.size()));
  ss.C /= g;
  ss.D /= g;
  return ss;
}

NllfrModel rewrite(const std::vector<WhBranch>& br, double gamma) {
  const int nb = static_cast<int>(br.size());
  int nx = 0;
  for (const auto& b : br) nx += b.G.n_x() + b.H.n_x();
  NllfrTheta t;
  t.A = Eigen::MatrixXd::Zero(nx, nx);
  t.B_u = Eigen::MatrixXd::Zero(nx, 1);
  t.B_w = Eigen::MatrixXd::Zero(nx, nb);
  t.C_y = Eigen::MatrixXd::Zero(1, nx);
  t.C_z = Eigen::MatrixXd::Zero(nb, nx);
  t.D_yu = Eigen::MatrixXd::Zero(1, 1);
  t.D_yw = Eigen::MatrixXd::Zero(1, nb);
  t.D_zu = Eigen::MatrixXd::Zero(nb, 1);
  int off = 0;
  for (int i = 0; i < nb; ++i) {
    const auto& G = br[i].G;
    const auto& H = br[i].H;
    const int g = G.n_x(), h = H.n_x();
    // s = C_G x_G + D_G u, nu = s + w, w = gamma h(s).
    t.A.block(off, off, g, g) = G.A;
    t.A.block(off + g, off, h, g) = H.B * G.C;
    t.A.block(off + g, off + g, h, h) = H.A;
    t.B_u.middleRows(off, g) = G.B;
    t.B_u.middleRows(off + g, h) = H.B * G.D;
    t.B_w.block(off + g, i, h, 1) = H.B;
    t.C_y.middleCols(off, g) = H.D * G.C;
    t.C_y.middleCols(off + g, h) = H.C;
    t.D_yu += H.D * G.D;
    t.D_yw(0, i) = H.D(0, 0);
    t.C_z.block(i, off, 1, g) = G.C;
    t.D_zu(i, 0) = G.D(0, 0);
    off += g + h;
  }
  NllfrModel m;
  m.theta = t;
  m.map = FeatureMap(nb, 2);
  m.beta = Eigen::MatrixXd::Zero(m.map.n_phi(), nb);
  const auto& ex = m.map.exponents();
  for (int p = 0; p < m.map.n_phi(); ++p) {
    int deg = 0, var = -1;
    for (int j = 0; j < nb; ++j)
      if (ex[p][j] > 0) {
        deg += ex[p][j];
        var = (var == -1) ? j : -2;
      }
    if (var >= 0 && (deg == 1 || deg == 2)) m.beta(p, var) = 0.5 * gamma;
  }
  m.u_scalers = {Scaler{}};
  m.y_scalers = {Scaler{}};
  return m;
}

}  // namespace

double soft_diode(double s, double gamma) {
  const double t = std::tanh(s);
  return s + gamma * 0.5 * (t + t * t);
}

Eigen::MatrixXd simulate_block_form(const SyntheticSystem& sys, const Eigen::MatrixXd& u) {
  if (u.cols() != 1) throw DataError("block form: single input expected");
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(u.rows(), 1);
  for (const auto& b : sys.branches) {
    const Eigen::MatrixXd s = simulate_lti(b.G, u, Eigen::VectorXd::Zero(b.G.n_x()), nullptr);
    Eigen::MatrixXd nu(s.rows(), 1);
    for (Eigen::Index n = 0; n < s.rows(); ++n) nu(n, 0) = soft_diode(s(n, 0), sys.gamma);
    y += simulate_lti(b.H, nu, Eigen::VectorXd::Zero(b.H.n_x()), nullptr);
  }
  return y;
}

SyntheticSystem make_parallel_wh(std::uint64_t seed, int branch_order, double gamma) {
  if (branch_order < 1) throw ConfigError("make_parallel_wh: branch order must be >= 1");
  if (!std::isfinite(gamma) || gamma < 0.0) throw ConfigError("make_parallel_wh: gamma must be >= 0");
  SyntheticSystem sys;
  sys.seed = seed;
  sys.gamma = gamma;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(attempt));
    sys.branches.clear();
    for (int b = 0; b < 2; ++b) {
      WhBranch br;
      br.G = random_filter(rng, branch_order, sys.rho_bound);
      br.H = random_filter(rng, branch_order, sys.rho_bound);
      sys.branches.push_back(std::move(br));
    }
    sys.model = rewrite(sys.branches, gamma);
    sys.attempts = attempt + 1;
    if (spectral_radius(sys.model.theta.A) > sys.rho_bound || !sys.model.theta.A.allFinite()) continue;

    bool ok = true;
    for (int trial = 0; trial < 5 && ok; ++trial) {
      Rng in = Rng::substream(seed ^ 0xA5A5A5A5ULL, static_cast<std::uint64_t>(100 * attempt + trial));
      const Eigen::MatrixXd u = normal_matrix(in, 1000, 1);
      const Eigen::MatrixXd y1 = simulate_block_form(sys, u);
      const Eigen::MatrixXd y2 = simulate_output(sys.model, u, Eigen::VectorXd::Zero(sys.model.theta.n_x()));
      ok = (y1 - y2).cwiseAbs().maxCoeff() <= 1e-9;
    }
    if (ok) return sys;
  }
  throw NumericalError("make_parallel_wh: no valid system in 100 draws");
}

NllfrModel embed_in_map(const NllfrModel& m, const FeatureMap& map) {
  if (map.n_z() != m.map.n_z()) throw ConfigError("embed_in_map: n_z differs");
  if (map.degree() < m.map.degree()) throw ConfigError("embed_in_map: target degree is lower");
  NllfrModel out = m;
  out.map = map;
  out.beta = Eigen::MatrixXd::Zero(map.n_phi(), m.beta.cols());
  const auto& src = m.map.exponents();
  const auto& dst = map.exponents();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto it = std::find(dst.begin(), dst.end(), src[i]);
    out.beta.row(it - dst.begin()) = m.beta.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<int> excited_bins_for(int N, double band) {
  if (!(band > 0.0) || band > 1.0) throw ConfigError("band must lie in (0, 1]");
  const int kmax = std::min(N / 2 - 1, static_cast<int>(std::floor(band * (N / 2))));
  if (kmax < 1) throw ConfigError("band excites no bins");
  std::vector<int> bins;
  for (int k = 1; k <= kmax; ++k) bins.push_back(k);
  return bins;
}

GeneratedData generate_dataset(const SyntheticSystem& sys, const GenerateOptions& o) {
  if (o.R < 1 || o.P < 1 || o.N < 8 || o.N % 2 != 0) throw ConfigError("generate: need R, P >= 1 and even N >= 8");
  if (o.n_warm < 1) throw ConfigError("generate: n_warm must be >= 1");
  if (!(o.rms > 0.0) || o.noise_std < 0.0) throw ConfigError("generate: rms must be > 0 and noise_std >= 0");
  const std::vector<int> bins = excited_bins_for(o.N, o.band);
  const int N = o.N;

  GeneratedData out;
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(sys.model.theta.n_x());
  for (int r = 0; r < o.R; ++r) {
    MultisineSpec spec;
    spec.N = N;
    for (int k : bins) spec.amplitudes.emplace_back(k, 1.0);
    spec.rms_target = o.rms;
    spec.seed = Rng::substream(o.seed, static_cast<std::uint64_t>(r)).next_u64();
    const Eigen::VectorXd u = generate_multisine(spec).signal;
    const int periods = o.n_warm + o.P;
    const Eigen::MatrixXd y = simulate_output(sys.model, u.replicate(periods, 1), x0);
    const Eigen::MatrixXd warm = y.middleRows(static_cast<Eigen::Index>(o.n_warm - 1) * N, N);
    const Eigen::MatrixXd first = y.middleRows(static_cast<Eigen::Index>(o.n_warm) * N, N);
    const double d = (first - warm).norm() / std::max(first.norm(), std::numeric_limits<double>::min());
    out.defect = std::max(out.defect, d);
    if (!(d < 1e-9))
      throw DataError("generate: periodicity defect " + std::to_string(d) + " exceeds 1e-9; increase n_warm");

    Rng noise = Rng::substream(o.seed ^ 0x5DEECE66DULL, static_cast<std::uint64_t>(r));
    Records ur, yr;
    for (int p = 0; p < o.P; ++p) {
      Eigen::MatrixXd yp = y.middleRows(static_cast<Eigen::Index>(o.n_warm + p) * N, N);
      if (o.noise_std > 0.0)
        for (Eigen::Index n = 0; n < N; ++n) yp(n, 0) += o.noise_std * noise.normal();
      ur.push_back(u);
      yr.push_back(std::move(yp));
    }
    out.clean_y.push_back(first);
    out.raw_u.push_back(std::move(ur));
    out.raw_y.push_back(std::move(yr));
  }

  const PeriodAverage ua = average_periods(out.raw_u, false);
  const PeriodAverage ya = average_periods(out.raw_y, o.P >= 2);
  Standardized st = standardize(ua.avg, ya.avg, ya.noise_var);
  out.dataset = std::move(st.dataset);
  out.dataset.excited_bins = bins;
  out.dataset.seed = o.seed;
  out.dataset.fs = 1.0;
  out.dataset.validate();
  return out;
}

Eigen::VectorXd arrowhead_signal(int N_sim, double rms_max, std::uint64_t seed) {
  if (N_sim < 10) throw ConfigError("arrowhead: N_sim must be >= 10");
  if (!(rms_max > 0.0)) throw ConfigError("arrowhead: rms_max must be > 0");
  Rng rng(seed);
  Eigen::VectorXd u(N_sim);
  for (int n = 0; n < N_sim; ++n) u(n) = rng.normal() * static_cast<double>(n) / (N_sim - 1);
  const int start = N_sim - N_sim / 10;
  const double tail = std::sqrt(u.tail(N_sim - start).squaredNorm() / (N_sim - start));
  return u * (rms_max / tail);
}

Metrics metrics(const Eigen::MatrixXd& y_true, const Eigen::MatrixXd& y_model) {
  if (y_true.rows() != y_model.rows() || y_true.cols() != y_model.cols())
    throw DataError("metrics: shapes differ");
  if (y_true.size() == 0) throw DataError("metrics: empty signals");
  const Eigen::MatrixXd e = y_true - y_model;
  Metrics m;
  m.rmse = std::sqrt(e.squaredNorm() / static_cast<double>(e.size()));
  const double ny = y_true.norm();
  m.relative_error_pct = ny > 0.0 ? 100.0 * e.norm() / ny : (e.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  if (e.rows() % 2 == 0) {
    m.error_spectrum = dft_forward(e).cwiseAbs();
  } else {
    m.error_spectrum = dft_forward(e.topRows(e.rows() - 1)).cwiseAbs();
  }
  return m;
}

Metrics metrics(const Records& y_true, const Records& y_model) {
  if (y_true.size() != y_model.size() || y_true.empty()) throw DataError("metrics: realization counts differ");
  Eigen::Index rows = 0;
  for (const auto& y : y_true) rows += y.rows();
  Eigen::MatrixXd a(rows, y_true.front().cols()), b(rows, y_true.front().cols());
  Eigen::Index off = 0;
  for (std::size_t r = 0; r < y_true.size(); ++r) {
    if (y_model[r].rows() != y_true[r].rows()) throw DataError("metrics: record lengths differ");
    a.middleRows(off, y_true[r].rows()) = y_true[r];
    b.middleRows(off, y_true[r].rows()) = y_model[r];
    off += y_true[r].rows();
  }
  Metrics m = metrics(a, b);
  // Spectrum of the first realization only: pooled records are not one period.
  m.error_spectrum = metrics(y_true.front(), y_model.front()).error_spectrum;
  return m;
}

Records simulate_steady_physical(const NllfrModel& m, const Records& u_phys, int n_warm) {
  const Records us = apply_scalers(u_phys, m.u_scalers);
  Records ys;
  for (const auto& u : us) ys.push_back(steady_state_simulate(m, u, n_warm).y);
  return invert_scalers(ys, m.y_scalers);
}

GridResult grid_search(const Dataset& ds, const NllfrTheta& theta_uy, const GridOptions& opts) {
  if (opts.lambdas.empty() || opts.taus.empty()) throw ConfigError("grid: empty lambda or tau grid");
  if (opts.trials < 1) throw ConfigError("grid: trials must be >= 1");
  for (double l : opts.lambdas)
    if (!(l > 0.0)) throw ConfigError("grid: lambda values must be > 0");
  for (int t : opts.taus)
    if (t < 0) throw ConfigError("grid: tau values must be >= 0");

  const std::size_t nl = opts.lambdas.size(), nt = opts.taus.size(), T = static_cast<std::size_t>(opts.trials);
  GridResult g;
  g.lambdas = opts.lambdas;
  g.taus = opts.taus;
  g.runs.resize(nl * nt * T);
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;

  auto worker = [&] {
    for (std::size_t j = next++; j < g.runs.size(); j = next++) {
      GridRun run;
      run.lambda = opts.lambdas[j / (nt * T)];
      run.tau = opts.taus[(j / T) % nt];
      run.trial = static_cast<int>(j % T);
      InferenceConfig cfg = opts.base;
      cfg.lambda = run.lambda;
      cfg.tau = run.tau;
      cfg.seed = Rng::substream(opts.seed, static_cast<std::uint64_t>(run.trial)).next_u64();
      cfg.lm.threads = 1;
      try {
        try {
          const InferenceResult res = run_inference_learning(theta_uy, ds, cfg);
          run.loss = res.report.final_loss();
          Records ysim;
          for (const auto& u : ds.u) ysim.push_back(steady_state_simulate(res.model, u, opts.n_warm).y);
          const Metrics m = metrics(ds.y, ysim);
          run.relative_error_pct = m.relative_error_pct;
          run.stable = std::isfinite(m.relative_error_pct) && m.relative_error_pct < 100.0;
        } catch (const NumericalError&) {
          run.stable = false;
          run.relative_error_pct = std::numeric_limits<double>::quiet_NaN();
        }
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!err) err = std::current_exception();
      }
      g.runs[j] = run;
    }
  };
  const int nthreads = std::max(1, std::min<int>(opts.threads, static_cast<int>(g.runs.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < nthreads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);

  g.stable = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(nl), static_cast<Eigen::Index>(nt));
  g.mean_error = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nl), static_cast<Eigen::Index>(nt));
  for (const auto& run : g.runs) {
    const auto li = static_cast<Eigen::Index>(std::find(opts.lambdas.begin(), opts.lambdas.end(), run.lambda) - opts.lambdas.begin());
    const auto ti = static_cast<Eigen::Index>(std::find(opts.taus.begin(), opts.taus.end(), run.tau) - opts.taus.begin());
    if (run.stable) {
      g.stable(li, ti) += 1;
      g.mean_error(li, ti) += run.relative_error_pct;
    }
  }
  for (Eigen::Index i = 0; i < g.stable.rows(); ++i)
    for (Eigen::Index j = 0; j < g.stable.cols(); ++j)
      g.mean_error(i, j) = g.stable(i, j) > 0 ? g.mean_error(i, j) / g.stable(i, j)
                                              : std::numeric_limits<double>::quiet_NaN();
  return g;
}

void write_grid_csv(const std::filesystem::path& file, const GridResult& g, bool counts) {
  std::ofstream f(file);
  if (!f) throw DataError("cannot write " + file.string());
  f.precision(17);
  f << "lambda";
  for (int t : g.taus) f << ",tau=" << t;
  f << '\n';
  for (std::size_t i = 0; i < g.lambdas.size(); ++i) {
    f << g.lambdas[i];
    for (std::size_t j = 0; j < g.taus.size(); ++j) {
      f << ',';
      if (counts) f << g.stable(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      else f << g.mean_error(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    f << '\n';
  }
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> read_csv_period(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) throw DataError("cannot read " + file.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError(file.string() + ": empty file");
  std::vector<int> kind;  // 0 input, 1 output, -1 ignored
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      col.erase(0, col.find_first_not_of(" \t\r"));
      kind.push_back(col.empty() ? -1 : col[0] == 'u' ? 0 : col[0] == 'y' ? 1 : -1);
    }
  }
  const auto nu = std::count(kind.begin(), kind.end(), 0);
  const auto ny = std::count(kind.begin(), kind.end(), 1);
  if (nu == 0 || ny == 0) throw DataError(file.string() + ": header needs u* and y* columns");
  std::vector<std::vector<double>> urows, yrows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> ur, yr;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= kind.size()) throw DataError(file.string() + ":" + std::to_string(lineno) + ": too many columns");
      double v = 0.0;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw DataError(file.string() + ":" + std::to_string(lineno) + ": not a number");
      }
      if (kind[c] == 0) ur.push_back(v);
      if (kind[c] == 1) yr.push_back(v);
      ++c;
    }
    if (c != kind.size()) throw DataError(file.string() + ":" + std::to_string(lineno) + ": wrong column count");
    urows.push_back(std::move(ur));
    yrows.push_back(std::move(yr));
  }
  Eigen::MatrixXd u(urows.size(), nu), y(yrows.size(), ny);
  for (std::size_t n = 0; n < urows.size(); ++n) {
    for (Eigen::Index j = 0; j < nu; ++j) u(n, j) = urows[n][j];
    for (Eigen::Index j = 0; j < ny; ++j) y(n, j) = yrows[n][j];
  }
  return {u, y};
}

Dataset convert_csv(const std::vector<std::vector<std::filesystem::path>>& files, double fs) {
  if (files.empty()) throw ConfigError("convert: no input files");
  if (!(fs > 0.0)) throw ConfigError("convert: fs must be > 0");
  std::vector<Records> ru, ry;
  std::size_t P = 0;
  for (const auto& group : files) {
    if (group.empty()) throw ConfigError("convert: empty realization");
    if (P == 0) P = group.size();
    if (group.size() != P) throw DataError("convert: realizations have different period counts");
    Records u, y;
    for (const auto& file : group) {
      auto [a, b] = read_csv_period(file);
      u.push_back(std::move(a));
      y.push_back(std::move(b));
    }
    ru.push_back(std::move(u));
    ry.push_back(std::move(y));
  }
  const PeriodAverage ua = average_periods(ru, false);
  const PeriodAverage ya = average_periods(ry, P >= 2);
  Standardized st = standardize(ua.avg, ya.avg, ya.noise_var);
  Dataset ds = std::move(st.dataset);
  ds.fs = fs;
  const SpectrumTensor U = dft_forward(ds.u);
  const Eigen::Index K = U.front().rows();
  Eigen::VectorXd power = Eigen::VectorXd::Zero(K);
  for (const auto& s : U) power += s.cwiseAbs2().rowwise().sum();
  const double pmax = power.segment(1, K - 2).maxCoeff();
  for (Eigen::Index k = 1; k + 1 < K; ++k)
    if (power(k) > 1e-10 * pmax) ds.excited_bins.push_back(static_cast<int>(k));
  ds.validate();
  return ds;
}

}  // namespace nllfr

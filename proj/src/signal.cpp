#include "nllfr/signal.hpp"

#include "nllfr/errors.hpp"
#include "nllfr/rng.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

namespace nllfr {

namespace {

// FFTW plans are created once per length and shared; planning is not
// thread safe but execution with the new-array interface is.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const FftPlans& plans_for(int N) {
  static std::mutex mutex;
  static std::map<int, FftPlans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;
  double* in = fftw_alloc_real(N);
  fftw_complex* out = fftw_alloc_complex(N / 2 + 1);
  FftPlans p;
  p.forward = fftw_plan_dft_r2c_1d(N, in, out, FFTW_ESTIMATE);
  p.inverse = fftw_plan_dft_c2r_1d(N, out, in, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  return cache.emplace(N, p).first->second;
}

struct FftBuffers {
  int N = 0;
  double* real = nullptr;
  fftw_complex* cplx = nullptr;

  void ensure(int n) {
    if (n == N) return;
    release();
    N = n;
    real = fftw_alloc_real(n);
    cplx = fftw_alloc_complex(n / 2 + 1);
  }
  void release() {
    if (real) fftw_free(real);
    if (cplx) fftw_free(cplx);
    real = nullptr;
    cplx = nullptr;
  }
  ~FftBuffers() { release(); }
};

FftBuffers& buffers(int N) {
  thread_local FftBuffers buf;
  buf.ensure(N);
  return buf;
}

void check_length(int N) {
  if (N < 2 || N % 2 != 0) throw DataError("DFT length must be even and >= 2, got " + std::to_string(N));
}

}  // namespace

MultisineSpec MultisineSpec::full_band(int N, double rms, std::uint64_t seed) {
  MultisineSpec spec;
  spec.N = N;
  for (int k = 1; k < N / 2; ++k) spec.amplitudes.emplace_back(k, 1.0);
  spec.rms_target = rms;
  spec.seed = seed;
  return spec;
}

Multisine generate_multisine(const MultisineSpec& spec) {
  if (spec.N % 2 != 0) throw DataError("multisine: N must be even");
  if (spec.N < 8) throw DataError("multisine: N must be at least 8");
  if (spec.amplitudes.empty()) throw DataError("multisine: empty amplitude set");

  const int N = spec.N;
  Rng rng(spec.seed);
  Multisine out;
  out.phases.resize(static_cast<Eigen::Index>(spec.amplitudes.size()));
  Spectrum X = Spectrum::Zero(N / 2 + 1, 1);
  const double root_n = std::sqrt(static_cast<double>(N));
  for (std::size_t i = 0; i < spec.amplitudes.size(); ++i) {
    const auto [k, amp] = spec.amplitudes[i];
    if (k < 1 || k > N / 2 - 1) throw DataError("multisine: bin " + std::to_string(k) + " outside [1, N/2-1]");
    if (!(amp >= 0.0)) throw DataError("multisine: amplitudes must be non-negative");
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    out.phases(static_cast<Eigen::Index>(i)) = phase;
    X(k, 0) += root_n * amp * std::polar(1.0, phase);
  }
  out.signal = dft_inverse(X, N).col(0);

  if (spec.rms_target) {
    const double rms = std::sqrt(out.signal.squaredNorm() / N);
    if (rms == 0.0) throw DataError("multisine: cannot rescale an all-zero signal to a target RMS");
    out.signal *= *spec.rms_target / rms;
  }
  return out;
}

Spectrum dft_forward(const Eigen::MatrixXd& x) {
  const int N = static_cast<int>(x.rows());
  check_length(N);
  const FftPlans& p = plans_for(N);
  FftBuffers& b = buffers(N);
  Spectrum X(N / 2 + 1, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (int n = 0; n < N; ++n) b.real[n] = x(n, c);
    fftw_execute_dft_r2c(p.forward, b.real, b.cplx);
    for (int k = 0; k <= N / 2; ++k) X(k, c) = {b.cplx[k][0], b.cplx[k][1]};
  }
  return X;
}

Eigen::MatrixXd dft_inverse(const Spectrum& X, int N) {
  check_length(N);
  if (X.rows() != N / 2 + 1) throw DataError("dft_inverse: expected N/2+1 rows");
  const FftPlans& p = plans_for(N);
  FftBuffers& b = buffers(N);
  Eigen::MatrixXd x(N, X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double scale = std::max(1.0, X.col(c).cwiseAbs().maxCoeff());
    for (int k : {0, N / 2}) {
      if (std::abs(X(k, c).imag()) > 1e-9 * scale)
        throw DataError("dft_inverse: bin " + std::to_string(k) + " must be real");
    }
    for (int k = 0; k <= N / 2; ++k) {
      b.cplx[k][0] = X(k, c).real();
      b.cplx[k][1] = (k == 0 || k == N / 2) ? 0.0 : X(k, c).imag();
    }
    fftw_execute_dft_c2r(p.inverse, b.cplx, b.real);
    const double inv_n = 1.0 / N;
    for (int n = 0; n < N; ++n) x(n, c) = b.real[n] * inv_n;
  }
  return x;
}

SpectrumTensor dft_forward(const Records& x) {
  SpectrumTensor out;
  out.reserve(x.size());
  for (const auto& r : x) out.push_back(dft_forward(r));
  return out;
}

Records dft_inverse(const SpectrumTensor& X, int N) {
  Records out;
  out.reserve(X.size());
  for (const auto& r : X) out.push_back(dft_inverse(r, N));
  return out;
}

PeriodAverage average_periods(const std::vector<Records>& raw, bool want_noise_var) {
  if (raw.empty() || raw.front().empty()) throw DataError("average_periods: no data");
  const std::size_t P = raw.front().size();
  if (want_noise_var && P < 2) throw DataError("average_periods: noise variance needs at least two periods");
  const Eigen::Index N = raw.front().front().rows();
  const Eigen::Index c = raw.front().front().cols();

  PeriodAverage out;
  std::vector<SpectrumTensor> spectra;
  for (const auto& periods : raw) {
    if (periods.size() != P) throw DataError("average_periods: realizations have different period counts");
    Record sum = Record::Zero(N, c);
    for (const auto& p : periods) {
      if (p.rows() != N || p.cols() != c) throw DataError("average_periods: inconsistent period shape");
      sum += p;
    }
    out.avg.push_back(sum / static_cast<double>(P));
    if (want_noise_var) spectra.push_back(dft_forward(periods));
  }

  if (want_noise_var) {
    const int K = static_cast<int>(N / 2 + 1);
    BinMatrices var(K, Eigen::MatrixXcd::Zero(c, c));
    for (const auto& per : spectra) {
      Spectrum mean = Spectrum::Zero(K, c);
      for (const auto& s : per) mean += s;
      mean /= static_cast<double>(P);
      for (const auto& s : per) {
        for (int k = 0; k < K; ++k) {
          const Eigen::VectorXcd d = (s.row(k) - mean.row(k)).transpose();
          var[k] += d * d.adjoint();
        }
      }
    }
    const double dof = static_cast<double>(raw.size() * (P - 1));
    for (auto& m : var) m /= dof * static_cast<double>(P);
    out.noise_var = std::move(var);
  }
  return out;
}

std::vector<Scaler> channel_stats(const Records& x) {
  if (x.empty()) throw DataError("channel_stats: no data");
  const Eigen::Index c = x.front().cols();
  std::vector<Scaler> s(c);
  double count = 0.0;
  for (const auto& r : x) count += static_cast<double>(r.rows());
  for (Eigen::Index j = 0; j < c; ++j) {
    double sum = 0.0;
    for (const auto& r : x) sum += r.col(j).sum();
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& r : x) ss += (r.col(j).array() - mean).square().sum();
    s[j] = {mean, std::sqrt(ss / count)};
  }
  return s;
}

Records apply_scalers(const Records& x, const std::vector<Scaler>& s) {
  Records out = x;
  for (auto& r : out) {
    if (static_cast<std::size_t>(r.cols()) != s.size()) throw DataError("apply_scalers: channel count mismatch");
    for (Eigen::Index j = 0; j < r.cols(); ++j) r.col(j) = (r.col(j).array() - s[j].mean) / s[j].std;
  }
  return out;
}

Records invert_scalers(const Records& x, const std::vector<Scaler>& s) {
  Records out = x;
  for (auto& r : out) {
    if (static_cast<std::size_t>(r.cols()) != s.size()) throw DataError("invert_scalers: channel count mismatch");
    for (Eigen::Index j = 0; j < r.cols(); ++j) r.col(j) = r.col(j).array() * s[j].std + s[j].mean;
  }
  return out;
}

Standardized standardize(const Records& u, const Records& y, std::optional<BinMatrices> noise_var) {
  if (u.size() != y.size() || u.empty()) throw DataError("standardize: u and y must hold the same nonzero number of realizations");
  auto check = [](const std::vector<Scaler>& s, const char* name) {
    for (std::size_t j = 0; j < s.size(); ++j)
      if (!(s[j].std > 0.0) || !std::isfinite(s[j].std))
        throw DataError(std::string("standardize: channel ") + std::to_string(j) + " of " + name + " has zero variance");
  };
  Standardized out;
  out.u_scalers = channel_stats(u);
  out.y_scalers = channel_stats(y);
  check(out.u_scalers, "u");
  check(out.y_scalers, "y");
  out.dataset.u = apply_scalers(u, out.u_scalers);
  out.dataset.y = apply_scalers(y, out.y_scalers);
  out.dataset.u_scalers = out.u_scalers;
  out.dataset.y_scalers = out.y_scalers;
  if (noise_var) {
    const Eigen::Index ny = static_cast<Eigen::Index>(out.y_scalers.size());
    Eigen::VectorXd inv(ny);
    for (Eigen::Index j = 0; j < ny; ++j) inv(j) = 1.0 / out.y_scalers[j].std;
    for (auto& m : *noise_var) m = inv.asDiagonal() * m * inv.asDiagonal();
    out.dataset.noise_var = std::move(noise_var);
  }
  return out;
}

void Dataset::validate() const {
  if (u.empty()) throw DataError("dataset: R must be >= 1");
  if (u.size() != y.size()) throw DataError("dataset: u and y realization counts differ");
  const int n = N();
  if (n < 8 || n % 2 != 0) throw DataError("dataset: N must be even and >= 8");
  for (std::size_t r = 0; r < u.size(); ++r) {
    if (u[r].rows() != n || y[r].rows() != n) throw DataError("dataset: realization " + std::to_string(r) + " has wrong length");
    if (u[r].cols() != n_u() || y[r].cols() != n_y()) throw DataError("dataset: inconsistent channel counts");
    if (!u[r].allFinite() || !y[r].allFinite()) throw DataError("dataset: non-finite samples");
  }
  if (!std::is_sorted(excited_bins.begin(), excited_bins.end()) ||
      std::adjacent_find(excited_bins.begin(), excited_bins.end()) != excited_bins.end())
    throw DataError("dataset: excited_bins must be strictly increasing");
  for (int k : excited_bins)
    if (k < 1 || k > n / 2 - 1) throw DataError("dataset: excited bin " + std::to_string(k) + " outside [1, N/2-1]");
  if (!u_scalers.empty() && static_cast<int>(u_scalers.size()) != n_u()) throw DataError("dataset: u scaler count mismatch");
  if (!y_scalers.empty() && static_cast<int>(y_scalers.size()) != n_y()) throw DataError("dataset: y scaler count mismatch");
  if (noise_var) {
    if (static_cast<int>(noise_var->size()) != n / 2 + 1) throw DataError("dataset: noise_var must have N/2+1 entries");
    for (std::size_t k = 0; k < noise_var->size(); ++k) {
      const auto& m = (*noise_var)[k];
      if (m.rows() != n_y() || m.cols() != n_y()) throw DataError("dataset: noise_var matrix has wrong size");
      const double scale = std::max(1e-300, m.cwiseAbs().maxCoeff());
      if ((m - m.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw DataError("dataset: noise_var(" + std::to_string(k) + ") is not Hermitian");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-12 * scale)
        throw DataError("dataset: noise_var(" + std::to_string(k) + ") is not positive semidefinite");
    }
  }
}

}  // namespace nllfr

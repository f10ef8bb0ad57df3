#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace nllfr {

/// Time-domain record of one realization: N samples by c channels.
using Record = Eigen::MatrixXd;
/// One-sided spectrum of one realization: (N/2+1) bins by c channels.
using Spectrum = Eigen::MatrixXcd;
/// Realization-indexed collections.
using Records = std::vector<Record>;
using SpectrumTensor = std::vector<Spectrum>;
/// Per-bin matrices, bins 0..N/2.
using BinMatrices = std::vector<Eigen::MatrixXcd>;

struct Scaler {
  double mean = 0.0;
  double std = 1.0;

  double apply(double v) const { return (v - mean) / std; }
  double invert(double v) const { return v * std + mean; }
};

/// Periodic input/output data, one steady-state period per realization.
struct Dataset {
  Records u;  ///< R records of N x n_u
  Records y;  ///< R records of N x n_y
  double fs = 1.0;
  std::vector<int> excited_bins;
  std::vector<Scaler> u_scalers;
  std::vector<Scaler> y_scalers;
  /// Variance of the averaged output spectrum per bin, (N/2+1) entries of n_y x n_y.
  std::optional<BinMatrices> noise_var;
  std::uint64_t seed = 0;

  int R() const { return static_cast<int>(u.size()); }
  int N() const { return u.empty() ? 0 : static_cast<int>(u.front().rows()); }
  int n_u() const { return u.empty() ? 0 : static_cast<int>(u.front().cols()); }
  int n_y() const { return y.empty() ? 0 : static_cast<int>(y.front().cols()); }

  /// Throws DataError when shapes, bins, scalers or noise_var are inconsistent.
  void validate() const;
};

struct MultisineSpec {
  int N = 0;
  /// U_k for k = 1..N/2-1; bins absent from the map are not excited.
  std::vector<std::pair<int, double>> amplitudes;
  std::optional<double> rms_target;
  std::uint64_t seed = 0;

  /// Flat amplitude on every bin 1..N/2-1.
  static MultisineSpec full_band(int N, double rms, std::uint64_t seed);
};

struct Multisine {
  Eigen::VectorXd signal;
  Eigen::VectorXd phases;  ///< one phase per entry of spec.amplitudes
};

/// u(n) = 2/sqrt(N) * sum_k U_k cos(2 pi k n / N + phi_k), phases uniform on [0, 2 pi).
Multisine generate_multisine(const MultisineSpec& spec);

/// X(k) = sum_n x(n) exp(-j 2 pi k n / N), k = 0..N/2. Column-wise.
Spectrum dft_forward(const Eigen::MatrixXd& x);
/// Inverse of dft_forward with 1/N scaling and conjugate-symmetric extension.
/// Throws DataError if X(0) or X(N/2) has an imaginary part above 1e-9 relative.
Eigen::MatrixXd dft_inverse(const Spectrum& X, int N);

SpectrumTensor dft_forward(const Records& x);
Records dft_inverse(const SpectrumTensor& X, int N);

struct PeriodAverage {
  Records avg;
  std::optional<BinMatrices> noise_var;
};

/// raw[r][p] is period p of realization r (N x c). noise_var requires P >= 2.
PeriodAverage average_periods(const std::vector<Records>& raw, bool want_noise_var);

struct Standardized {
  Dataset dataset;
  std::vector<Scaler> u_scalers;
  std::vector<Scaler> y_scalers;
};

/// Pooled per-channel standardization over all realizations and samples.
/// noise_var, if given, is rescaled as S^-1 Lambda S^-1 with S = diag(y std).
Standardized standardize(const Records& u, const Records& y,
                         std::optional<BinMatrices> noise_var = std::nullopt);

/// Pooled (mean, population std) per channel.
std::vector<Scaler> channel_stats(const Records& x);

Records apply_scalers(const Records& x, const std::vector<Scaler>& s);
Records invert_scalers(const Records& x, const std::vector<Scaler>& s);

}  // namespace nllfr

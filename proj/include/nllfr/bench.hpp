#pragma once

#include "nllfr/inference.hpp"
#include "nllfr/lti.hpp"
#include "nllfr/model.hpp"
#include "nllfr/signal.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nllfr {

/// One Wiener-Hammerstein branch: G -> nu(s) = s + gamma h(s) -> H,
/// h(s) = (tanh(s) + tanh(s)^2) / 2.
struct WhBranch {
  StateSpaceModel G;
  StateSpaceModel H;
};

struct SyntheticSystem {
  NllfrModel model;  ///< NL-LFR rewrite with identity scalers
  std::vector<WhBranch> branches;
  std::uint64_t seed = 0;
  double rho_bound = 0.95;
  double gamma = 0.0;
  int attempts = 0;  ///< draws needed to meet the stability bound
};

/// Soft-diode static curve of each branch.
double soft_diode(double s, double gamma);

/// Two parallel branches with random stable filters of the given order,
/// each normalized to unit RMS gain over the frequency grid. The NL-LFR
/// rewrite has n_x = 4 * order, n_w = n_z = 2 and a degree-2 feature map;
/// it is checked against the block form on 5 random inputs (1e-9).
SyntheticSystem make_parallel_wh(std::uint64_t seed, int branch_order = 3, double gamma = 1.0);

/// Direct simulation of the block structure from zero state.
Eigen::MatrixXd simulate_block_form(const SyntheticSystem& sys, const Eigen::MatrixXd& u);

/// Re-expresses the ground-truth model on a larger feature map (same n_z).
NllfrModel embed_in_map(const NllfrModel& m, const FeatureMap& map);

struct GenerateOptions {
  int R = 3;
  int P = 2;
  int N = 4096;
  double rms = 1.0;
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  int n_warm = 2;
  /// Excited bins are 1..min(N/2 - 1, floor(band * N/2)).
  double band = 1.0;
};

struct GeneratedData {
  Dataset dataset;            ///< averaged and standardized
  std::vector<Records> raw_u;  ///< [r][p], physical units
  std::vector<Records> raw_y;
  Records clean_y;  ///< noiseless steady-state output per realization
  double defect = 0.0;  ///< worst periodicity defect before recording
};

/// Multisine realizations with independent phases driven to steady state,
/// P recorded periods, optional white output noise, averaging and
/// standardization. Throws DataError if the periodicity defect exceeds 1e-9.
GeneratedData generate_dataset(const SyntheticSystem& sys, const GenerateOptions& opts);

/// Bins excited by the generator for N and band.
std::vector<int> excited_bins_for(int N, double band);

/// White Gaussian noise times a 0 -> 1 linear ramp, scaled so that the RMS
/// over the final tenth equals rms_max.
Eigen::VectorXd arrowhead_signal(int N_sim, double rms_max, std::uint64_t seed);

struct Metrics {
  double rmse = 0.0;
  double relative_error_pct = 0.0;
  Eigen::MatrixXd error_spectrum;  ///< |DFT(y - y_model)| on bins 0..N/2
};

Metrics metrics(const Eigen::MatrixXd& y_true, const Eigen::MatrixXd& y_model);

/// Metrics pooled over realizations.
Metrics metrics(const Records& y_true, const Records& y_model);

/// Steady-state simulation of a model trained on scaled data, returned in
/// physical units for each realization of a physical-unit input.
Records simulate_steady_physical(const NllfrModel& m, const Records& u_phys, int n_warm);

struct GridOptions {
  std::vector<double> lambdas;
  std::vector<int> taus;
  int trials = 20;
  std::uint64_t seed = 0;
  InferenceConfig base;  ///< lambda, tau, seed are overwritten per job
  int n_warm = 5;
  int threads = 1;
};

struct GridRun {
  double lambda = 0.0;
  int tau = 0;
  int trial = 0;
  bool stable = false;
  double relative_error_pct = 0.0;  ///< NaN when the simulation diverged
  double loss = 0.0;                ///< final inference-learning loss
};

struct GridResult {
  std::vector<double> lambdas;
  std::vector<int> taus;
  Eigen::MatrixXi stable;     ///< |lambdas| x |taus|
  Eigen::MatrixXd mean_error;  ///< over stable runs, NaN if none
  std::vector<GridRun> runs;
};

/// Inference-learning per (lambda, tau, trial). Trial t uses the same seed in
/// every cell. A run is stable when its steady-state simulation on the
/// training inputs is finite and its relative error is below 100%.
GridResult grid_search(const Dataset& ds, const NllfrTheta& theta_uy, const GridOptions& opts);

/// Rows lambda, columns tau, with a header row of tau values.
void write_grid_csv(const std::filesystem::path& file, const GridResult& g, bool counts);

/// One CSV period: (u, y) from the columns whose header starts with 'u' / 'y'.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> read_csv_period(const std::filesystem::path& file);

/// CSV ingestion: one file per period, grouped per realization. Columns whose
/// header starts with 'u' are inputs, 'y' outputs. Excited bins are those
/// whose input power exceeds 1e-10 of the maximum.
Dataset convert_csv(const std::vector<std::vector<std::filesystem::path>>& files, double fs);

}  // namespace nllfr

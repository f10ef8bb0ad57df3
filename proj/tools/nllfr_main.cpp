// nllfr: command-line pipeline over dataset directories and model.json files.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 data error, 4 numerical divergence.

#include "nllfr/bench.hpp"
#include "nllfr/bla.hpp"
#include "nllfr/dataset_io.hpp"
#include "nllfr/errors.hpp"
#include "nllfr/inference.hpp"
#include "nllfr/model.hpp"
#include "nllfr/report.hpp"
#include "nllfr/rng.hpp"
#include "nllfr/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nllfr;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kDivergence = 4 };

struct Global {
  std::string config;
  int threads = 1;
  bool timing = false;
};

Weighting parse_weighting(const std::string& s) {
  if (s == "identity") return Weighting::Identity;
  if (s == "inverse-noise-variance") return Weighting::InverseNoiseVariance;
  throw ConfigError("unknown weighting '" + s + "'");
}

FrfWeighting parse_frf_weighting(const std::string& s) {
  if (s == "identity") return FrfWeighting::Identity;
  if (s == "inverse-variance") return FrfWeighting::InverseVariance;
  throw ConfigError("unknown FRF weighting '" + s + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find(',', start), s.size());
    std::stringstream is(s.substr(start, end - start));
    start = end + 1;
    T v{};
    if (!(is >> v) || !(is >> std::ws).eof()) throw ConfigError(std::string("malformed ") + what + " list: '" + s + "'");
    out.push_back(v);
  }
  return out;
}

std::string scalar_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw ConfigError("config values must be scalars");
}

// Fills options of `sub` not given on the command line from a JSON object.
// Keys use the long option names without dashes.
void apply_config(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt || key == "help") throw ConfigError("unknown config key '" + key + "' for " + sub->get_name());
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(scalar_string(v));
    } else {
      opt->add_result(scalar_string(value));
    }
    opt->run_callback();
  }
}

// Effective option values after flags and config merge.
json effective_config(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir);
}

NllfrModel bla_model(const ScaledStates& sc, const Dataset& ds) {
  NllfrModel m;
  m.theta = sc.theta;
  m.map = FeatureMap(0, 0);
  m.beta = Eigen::MatrixXd::Zero(m.map.n_phi(), 0);
  m.u_scalers = ds.u_scalers;
  m.y_scalers = ds.y_scalers;
  return m;
}

void check_dims(const NllfrModel& m, const Dataset& ds) {
  if (m.theta.n_u() != ds.n_u() || m.theta.n_y() != ds.n_y())
    throw DataError("model has " + std::to_string(m.theta.n_u()) + " inputs / " + std::to_string(m.theta.n_y()) +
                    " outputs but the dataset has " + std::to_string(ds.n_u()) + " / " + std::to_string(ds.n_y()));
}

// A dataset standardized with its own scalers, re-expressed with the
// model's scalers.
Dataset rescale_to_model(const Dataset& ds, const NllfrModel& m) {
  Dataset out = ds;
  out.u = apply_scalers(invert_scalers(ds.u, ds.u_scalers), m.u_scalers);
  out.y = apply_scalers(invert_scalers(ds.y, ds.y_scalers), m.y_scalers);
  out.u_scalers = m.u_scalers;
  out.y_scalers = m.y_scalers;
  if (out.noise_var) {
    for (auto& v : *out.noise_var)
      for (Eigen::Index a = 0; a < v.rows(); ++a)
        for (Eigen::Index b = 0; b < v.cols(); ++b)
          v(a, b) *= ds.y_scalers[a].std * ds.y_scalers[b].std / (m.y_scalers[a].std * m.y_scalers[b].std);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identification of NL-LFR state-space models from periodic data"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Global g;
  app.add_option("--config", g.config, "JSON file with option values; flags take precedence");
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);
  app.add_flag("--timing", g.timing, "Include wall-clock times in reports");

  // generate
  auto* gen = app.add_subcommand("generate", "Synthetic parallel Wiener-Hammerstein dataset");
  gen->option_defaults()->always_capture_default();
  std::string gen_out;
  GenerateOptions go;
  std::uint64_t sys_seed = 0;
  int branch_order = 3;
  double gamma = 1.0;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--system-seed", sys_seed, "Seed of the synthetic system");
  gen->add_option("--branch-order", branch_order, "Order of each branch filter");
  gen->add_option("--gamma", gamma, "Nonlinearity strength");
  gen->add_option("--R", go.R, "Realizations");
  gen->add_option("--P", go.P, "Recorded periods per realization");
  gen->add_option("--N", go.N, "Samples per period");
  gen->add_option("--rms", go.rms, "Input RMS");
  gen->add_option("--seed", go.seed, "Excitation and noise seed");
  gen->add_option("--noise-std", go.noise_std, "Output noise standard deviation");
  gen->add_option("--n-warm", go.n_warm, "Warm-up periods before recording");
  gen->add_option("--band", go.band, "Excited fraction of the band (0, 1]");

  // bla
  auto* bla = app.add_subcommand("bla", "Best linear approximation");
  bla->option_defaults()->always_capture_default();
  std::string bla_data, bla_out, bla_weight = "identity";
  BlaOptions bo;
  bla->add_option("--data", bla_data, "Dataset directory")->required();
  bla->add_option("--out", bla_out, "Output directory")->required();
  bla->add_option("--nx", bo.n_x, "State dimension");
  bla->add_option("--block-rows", bo.block_rows, "Hankel block rows (0 = automatic)");
  bla->add_option("--weighting", bla_weight, "identity | inverse-variance");
  bla->add_option("--max-iter", bo.lm.max_iter, "LM iterations of the FRF refinement");

  // init
  auto* ini = app.add_subcommand("init", "Inference and learning initialization");
  ini->option_defaults()->always_capture_default();
  std::string ini_data, ini_model, ini_out, ini_weight = "identity";
  InferenceConfig ic;
  ini->add_option("--data", ini_data, "Dataset directory")->required();
  ini->add_option("--model", ini_model, "BLA model.json")->required();
  ini->add_option("--out", ini_out, "Output directory")->required();
  ini->add_option("--lambda", ic.lambda, "Regularization weight");
  ini->add_option("--tau", ic.tau, "Fixed-point iterations");
  ini->add_option("--epsilon", ic.epsilon, "Ridge of the regularizer");
  ini->add_option("--max-iter", ic.max_iter, "LM iterations");
  ini->add_option("--seed", ic.seed, "Initialization seed");
  ini->add_option("--n-w", ic.n_w, "Nonlinearity outputs");
  ini->add_option("--n-z", ic.n_z, "Nonlinearity inputs");
  ini->add_option("--degree", ic.degree, "Monomial degree");
  ini->add_option("--weighting", ini_weight, "identity | inverse-noise-variance");

  // optimize
  auto* opt = app.add_subcommand("optimize", "Full simulation-error optimization");
  opt->option_defaults()->always_capture_default();
  std::string opt_data, opt_model, opt_out, opt_weight = "identity";
  FullOptOptions fo;
  opt->add_option("--data", opt_data, "Dataset directory")->required();
  opt->add_option("--model", opt_model, "Initial model.json")->required();
  opt->add_option("--out", opt_out, "Output directory")->required();
  opt->add_option("--max-iter", fo.lm.max_iter, "LM iterations");
  opt->add_option("--n-warm", fo.n_warm, "Warm-up periods (upper bound)");
  opt->add_option("--weighting", opt_weight, "identity | inverse-noise-variance");

  // eval
  auto* ev = app.add_subcommand("eval", "Simulate a model on test data");
  ev->option_defaults()->always_capture_default();
  std::string ev_data, ev_signal, ev_model, ev_out;
  int ev_warm = 5;
  ev->add_option("--model", ev_model, "model.json")->required();
  auto* ev_d = ev->add_option("--data", ev_data, "Periodic test dataset directory (steady state)");
  auto* ev_s = ev->add_option("--signal", ev_signal, "CSV with u*, y* columns, simulated from zero state");
  ev_d->excludes(ev_s);
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--n-warm", ev_warm, "Warm-up periods for periodic data");

  // grid
  auto* grid = app.add_subcommand("grid", "Lambda/tau grid of inference-learning runs");
  grid->option_defaults()->always_capture_default();
  std::string gr_data, gr_model, gr_out, gr_lambdas = "0.001,0.01,0.1,1,10,100,1000", gr_taus = "0,1,2,3,4,5";
  GridOptions gopt;
  gopt.base.max_iter = 50;
  grid->add_option("--data", gr_data, "Dataset directory")->required();
  grid->add_option("--model", gr_model, "BLA model.json")->required();
  grid->add_option("--out", gr_out, "Output directory")->required();
  grid->add_option("--lambdas", gr_lambdas, "Comma-separated lambda values");
  grid->add_option("--taus", gr_taus, "Comma-separated tau values");
  grid->add_option("--trials", gopt.trials, "Random initializations per cell");
  grid->add_option("--seed", gopt.seed, "Base seed");
  grid->add_option("--max-iter", gopt.base.max_iter, "LM iterations per run");
  grid->add_option("--degree", gopt.base.degree, "Monomial degree");
  grid->add_option("--n-warm", gopt.n_warm, "Warm-up periods for the stability check");

  // convert
  auto* conv = app.add_subcommand("convert", "CSV periods to a dataset directory");
  conv->option_defaults()->always_capture_default();
  std::vector<std::string> conv_groups;
  std::string conv_out;
  double conv_fs = 1.0;
  conv->add_option("--realization", conv_groups, "Comma-separated CSV files (periods) of one realization; repeat")
      ->required();
  conv->add_option("--out", conv_out, "Output dataset directory")->required();
  conv->add_option("--fs", conv_fs, "Sampling frequency");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::Success& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return kConfig;
    }
    CLI::App* sub = app.get_subcommands().front();
    apply_config(sub, g.config);
    json cfg = effective_config(sub);
    cfg["threads"] = g.threads;

    if (sub == gen) {
      const SyntheticSystem sys = make_parallel_wh(sys_seed, branch_order, gamma);
      const GeneratedData gd = generate_dataset(sys, go);
      ensure_dir(gen_out);
      save_dataset(gen_out, gd.dataset);
      save_model(fs::path(gen_out) / "system.json", sys.model);
      json rep{{"config", cfg}, {"periodicity_defect", gd.defect}, {"system_attempts", sys.attempts}};
      write_json(fs::path(gen_out) / "generate_report.json", rep);
    } else if (sub == bla) {
      const Dataset ds = load_dataset(bla_data);
      bo.weighting = parse_frf_weighting(bla_weight);
      bo.lm.threads = g.threads;
      const BlaResult r = run_bla(ds, bo);
      ensure_dir(bla_out);
      save_model(fs::path(bla_out) / "model.json", bla_model(r.scaled, ds));
      json rep;
      rep["config"] = cfg;
      rep["singular_values"] = std::vector<double>(r.subspace.singular_values.data(),
                                                   r.subspace.singular_values.data() + r.subspace.singular_values.size());
      rep["subspace_residual"] = r.subspace.residual;
      rep["reflected"] = r.subspace.reflected;
      rep["warnings"] = r.warnings;
      rep["fit"] = report_json(r.fit, g.timing);
      rep["frf_bins"] = r.frf.bins;
      rep["frf_fit_error"] = r.fit_error;
      rep["frf_fit_error_max"] = r.fit_error.empty() ? 0.0 : *std::max_element(r.fit_error.begin(), r.fit_error.end());
      rep["state_scaling"] = std::vector<double>(r.scaled.Tx.data(), r.scaled.Tx.data() + r.scaled.Tx.size());
      write_json(fs::path(bla_out) / "bla_report.json", rep);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    } else if (sub == ini) {
      const Dataset raw = load_dataset(ini_data);
      const NllfrModel bm = load_model(ini_model);
      check_dims(bm, raw);
      const Dataset ds = rescale_to_model(raw, bm);
      ic.weighting = parse_weighting(ini_weight);
      ic.lm.threads = g.threads;
      const InferenceResult r = run_inference_learning(bm.theta, ds, ic);
      ensure_dir(ini_out);
      save_model(fs::path(ini_out) / "model.json", r.model);
      json rep;
      rep["config"] = cfg;
      rep["fit"] = report_json(r.report, g.timing);
      rep["bla_loss"] = r.bla_loss;
      rep["defects"] = r.defects;
      rep["beta_rank"] = r.beta_rank;
      rep["lambda"] = ic.lambda;
      rep["tau"] = ic.tau;
      rep["seed"] = ic.seed;
      rep["Tz"] = std::vector<double>(r.Tz.data(), r.Tz.data() + r.Tz.size());
      write_json(fs::path(ini_out) / "init_report.json", rep);
    } else if (sub == opt) {
      const Dataset raw = load_dataset(opt_data);
      const NllfrModel m0 = load_model(opt_model);
      check_dims(m0, raw);
      const Dataset ds = rescale_to_model(raw, m0);
      fo.weighting = parse_weighting(opt_weight);
      fo.lm.threads = g.threads;
      const FullOptResult r = run_full_optimization(m0, ds, fo);
      ensure_dir(opt_out);
      save_model(fs::path(opt_out) / "model.json", r.model);
      write_json(fs::path(opt_out) / "fit_report.json", json{{"config", cfg}, {"fit", report_json(r.report, g.timing)}});
    } else if (sub == ev) {
      const NllfrModel m = load_model(ev_model);
      Records y_true, y_sim;
      if (!ev_data.empty()) {
        const Dataset ds = load_dataset(ev_data);
        check_dims(m, ds);
        y_true = invert_scalers(ds.y, ds.y_scalers);
        y_sim = simulate_steady_physical(m, invert_scalers(ds.u, ds.u_scalers), ev_warm);
      } else if (!ev_signal.empty()) {
        auto [u, y] = read_csv_period(ev_signal);
        if (u.cols() != m.theta.n_u() || y.cols() != m.theta.n_y()) throw DataError("signal channel counts do not match the model");
        y_true.push_back(y);
        y_sim.push_back(simulate_physical(m, u, Eigen::VectorXd::Zero(m.theta.n_x())));
      } else {
        throw ConfigError("eval needs --data or --signal");
      }
      ensure_dir(ev_out);
      write_f64(fs::path(ev_out) / "y_sim.bin", flatten_records(y_sim));
      json rep = metrics_json(metrics(y_true, y_sim));
      rep["config"] = cfg;
      rep["shape"] = {y_sim.size(), y_sim.front().rows(), y_sim.front().cols()};
      write_json(fs::path(ev_out) / "metrics.json", rep);
    } else if (sub == grid) {
      const Dataset raw = load_dataset(gr_data);
      const NllfrModel bm = load_model(gr_model);
      check_dims(bm, raw);
      const Dataset ds = rescale_to_model(raw, bm);
      gopt.lambdas = parse_list<double>(gr_lambdas, "lambda");
      gopt.taus = parse_list<int>(gr_taus, "tau");
      gopt.threads = g.threads;
      const GridResult r = grid_search(ds, bm.theta, gopt);
      ensure_dir(gr_out);
      write_grid_csv(fs::path(gr_out) / "grid_stability.csv", r, true);
      write_grid_csv(fs::path(gr_out) / "grid_error.csv", r, false);
      json runs = json::array();
      for (const auto& run : r.runs)
        runs.push_back({{"lambda", run.lambda}, {"tau", run.tau}, {"trial", run.trial}, {"stable", run.stable},
                        {"relative_error_pct", std::isfinite(run.relative_error_pct) ? json(run.relative_error_pct) : json("nan")},
                        {"loss", run.loss}});
      write_json(fs::path(gr_out) / "grid_report.json", json{{"config", cfg}, {"runs", runs}});
    } else if (sub == conv) {
      std::vector<std::vector<fs::path>> groups;
      for (const auto& g_str : conv_groups) {
        std::vector<fs::path> files;
        std::stringstream ss(g_str);
        std::string item;
        while (std::getline(ss, item, ',')) files.emplace_back(item);
        groups.push_back(std::move(files));
      }
      const Dataset ds = convert_csv(groups, conv_fs);
      ensure_dir(conv_out);
      save_dataset(conv_out, ds);
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}

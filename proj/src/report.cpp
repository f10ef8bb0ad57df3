#include "nllfr/report.hpp"

#include "nllfr/errors.hpp"

#include <cmath>
#include <fstream>

namespace nllfr {

namespace {

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

}  // namespace

nlohmann::json report_json(const FitReport& r, bool timing) {
  nlohmann::json j;
  j["loss_trace"] = nlohmann::json::array();
  for (double v : r.loss_trace) j["loss_trace"].push_back(number(v));
  j["initial_loss"] = number(r.initial_loss());
  j["final_loss"] = number(r.final_loss());
  j["iterations"] = r.iterations;
  j["accepted"] = r.accepted;
  j["rejected"] = r.rejected;
  j["termination"] = to_string(r.termination);
  j["gradient_norm"] = number(r.gradient_norm);
  if (timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  j["rmse"] = number(m.rmse);
  j["relative_error_pct"] = number(m.relative_error_pct);
  j["error_spectrum"] = matrix_json(m.error_spectrum);
  return j;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(number(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_json(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream f(file);
  if (!f) throw DataError("cannot write " + file.string());
  f << j.dump(2) << '\n';
  if (!f) throw DataError("write failed: " + file.string());
}

nlohmann::json read_json(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) throw DataError("cannot read " + file.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

}  // namespace nllfr

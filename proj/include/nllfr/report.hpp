#pragma once

#include "nllfr/bench.hpp"
#include "nllfr/bla.hpp"
#include "nllfr/inference.hpp"
#include "nllfr/optimizer.hpp"

#include <json.hpp>

#include <filesystem>

namespace nllfr {

/// Wall time is included only on request so reports stay byte-identical.
nlohmann::json report_json(const FitReport& r, bool timing);
nlohmann::json metrics_json(const Metrics& m);
nlohmann::json matrix_json(const Eigen::MatrixXd& m);

/// Pretty-printed JSON with a trailing newline.
void write_json(const std::filesystem::path& file, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& file);

}  // namespace nllfr

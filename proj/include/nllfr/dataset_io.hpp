#pragma once

#include "nllfr/signal.hpp"

#include <filesystem>
#include <vector>

namespace nllfr {

/// Writes `meta.json`, `u.bin`, `y.bin` and, when present, `noise_var.bin`.
/// Binary files are little-endian float64 in [R x N x c] row-major order.
/// noise_var is stored as real [(N/2+1) x n_y x n_y] when every entry has a
/// zero imaginary part, otherwise as interleaved complex.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

void write_f64(const std::filesystem::path& file, const std::vector<double>& values);
std::vector<double> read_f64(const std::filesystem::path& file);

/// Flattens records [R x N x c] row-major, and the inverse.
std::vector<double> flatten_records(const Records& x);
Records unflatten_records(const std::vector<double>& v, int R, int N, int c);

}  // namespace nllfr

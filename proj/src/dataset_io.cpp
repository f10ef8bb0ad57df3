#include "nllfr/dataset_io.hpp"

#include "nllfr/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace nllfr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return __builtin_bswap64(v);
}

json scalers_json(const std::vector<Scaler>& s) {
  json a = json::array();
  for (const auto& x : s) a.push_back({{"mean", x.mean}, {"std", x.std}});
  return a;
}

std::vector<Scaler> scalers_from(const json& a) {
  std::vector<Scaler> s;
  for (const auto& x : a) s.push_back({x.at("mean").get<double>(), x.at("std").get<double>()});
  return s;
}

}  // namespace

void write_f64(const fs::path& file, const std::vector<double>& values) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + file.string() + " for writing");
  for (double v : values) {
    std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw DataError("write failed: " + file.string());
}

std::vector<double> read_f64(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % 8 != 0) throw DataError(file.string() + ": size is not a multiple of 8 bytes");
  std::vector<double> v(bytes / 8);
  for (auto& x : v) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    x = std::bit_cast<double>(to_little(bits));
  }
  if (!in) throw DataError("read failed: " + file.string());
  return v;
}

std::vector<double> flatten_records(const Records& x) {
  std::vector<double> v;
  for (const auto& r : x)
    for (Eigen::Index n = 0; n < r.rows(); ++n)
      for (Eigen::Index c = 0; c < r.cols(); ++c) v.push_back(r(n, c));
  return v;
}

Records unflatten_records(const std::vector<double>& v, int R, int N, int c) {
  if (v.size() != static_cast<std::size_t>(R) * N * c) throw DataError("binary record has unexpected size");
  Records out(R, Record(N, c));
  std::size_t i = 0;
  for (auto& r : out)
    for (int n = 0; n < N; ++n)
      for (int j = 0; j < c; ++j) r(n, j) = v[i++];
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create dataset directory " + dir.string());

  std::string nv_kind = "none";
  if (ds.noise_var) {
    nv_kind = "real";
    for (const auto& m : *ds.noise_var)
      if (m.imag().cwiseAbs().maxCoeff() != 0.0) nv_kind = "complex";
  }

  json meta = {
      {"format_version", 1},
      {"N", ds.N()},
      {"R", ds.R()},
      {"n_u", ds.n_u()},
      {"n_y", ds.n_y()},
      {"fs", ds.fs},
      {"excited_bins", ds.excited_bins},
      {"scalers", {{"u", scalers_json(ds.u_scalers)}, {"y", scalers_json(ds.y_scalers)}}},
      {"seed", ds.seed},
      {"noise_var", nv_kind},
  };
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  write_f64(dir / "u.bin", flatten_records(ds.u));
  write_f64(dir / "y.bin", flatten_records(ds.y));

  if (ds.noise_var) {
    std::vector<double> v;
    for (const auto& m : *ds.noise_var)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          v.push_back(m(i, j).real());
          if (nv_kind == "complex") v.push_back(m(i, j).imag());
        }
    write_f64(dir / "noise_var.bin", v);
  } else {
    fs::remove(dir / "noise_var.bin", ec);
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_regular_file(dir / "meta.json")) throw DataError("no dataset at " + dir.string() + " (missing meta.json)");
  json meta;
  try {
    std::ifstream(dir / "meta.json") >> meta;
  } catch (const json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    const int N = meta.at("N").get<int>();
    const int R = meta.at("R").get<int>();
    const int nu = meta.at("n_u").get<int>();
    const int ny = meta.at("n_y").get<int>();
    ds.fs = meta.at("fs").get<double>();
    ds.excited_bins = meta.at("excited_bins").get<std::vector<int>>();
    ds.u_scalers = scalers_from(meta.at("scalers").at("u"));
    ds.y_scalers = scalers_from(meta.at("scalers").at("y"));
    ds.seed = meta.value("seed", std::uint64_t{0});
    ds.u = unflatten_records(read_f64(dir / "u.bin"), R, N, nu);
    ds.y = unflatten_records(read_f64(dir / "y.bin"), R, N, ny);

    const std::string nv_kind = meta.value("noise_var", std::string("none"));
    if (nv_kind != "none") {
      const bool cplx = nv_kind == "complex";
      if (!cplx && nv_kind != "real") throw DataError("meta.json: unknown noise_var kind '" + nv_kind + "'");
      const auto v = read_f64(dir / "noise_var.bin");
      const std::size_t per = static_cast<std::size_t>(ny) * ny * (cplx ? 2 : 1);
      if (v.size() != per * static_cast<std::size_t>(N / 2 + 1)) throw DataError("noise_var.bin has unexpected size");
      BinMatrices nv(N / 2 + 1, Eigen::MatrixXcd(ny, ny));
      std::size_t i = 0;
      for (auto& m : nv)
        for (int a = 0; a < ny; ++a)
          for (int b = 0; b < ny; ++b) {
            const double re = v[i++];
            const double im = cplx ? v[i++] : 0.0;
            m(a, b) = {re, im};
          }
      ds.noise_var = std::move(nv);
    }
  } catch (const json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }
  ds.validate();
  return ds;
}

}  // namespace nllfr

#include "nllfr/model.hpp"

#include "nllfr/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>

namespace nllfr {

using nlohmann::json;

long long NllfrModel::parameter_count(int nx, int nu, int ny, int nw, int nz, int degree) {
  return 1LL * nx * nx + 1LL * nx * (nu + nw) + 1LL * nx * (ny + nz) + 1LL * ny * nu + 1LL * ny * nw +
         1LL * nz * nu + FeatureMap::count(nz, degree) * nw;
}

long long NllfrModel::parameter_count() const {
  return parameter_count(theta.n_x(), theta.n_u(), theta.n_y(), theta.n_w(), theta.n_z(), map.degree());
}

void NllfrModel::validate() const {
  theta.validate();
  if (map.n_z() != theta.n_z()) throw DataError("model: feature map n_z does not match C_z");
  if (beta.rows() != map.n_phi() || beta.cols() != theta.n_w()) throw DataError("model: beta must be n_phi x n_w");
  if (!u_scalers.empty() && static_cast<int>(u_scalers.size()) != theta.n_u()) throw DataError("model: u scaler count");
  if (!y_scalers.empty() && static_cast<int>(y_scalers.size()) != theta.n_y()) throw DataError("model: y scaler count");
}

namespace {

struct Packer {
  Eigen::VectorXd v;
  Eigen::Index pos = 0;

  void put(const Eigen::MatrixXd& m) {
    v.conservativeResize(pos + m.size());
    v.segment(pos, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    pos += m.size();
  }
};

struct Unpacker {
  const Eigen::VectorXd& v;
  Eigen::Index pos = 0;

  void get(Eigen::MatrixXd& m) {
    if (pos + m.size() > v.size()) throw DataError("parameter vector too short");
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v.segment(pos, m.size());
    pos += m.size();
  }
  void finish() const {
    if (pos != v.size()) throw DataError("parameter vector has the wrong length");
  }
};

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw DataError(std::string("model.json: matrix ") + name + " has the wrong row count");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DataError(std::string("model.json: matrix ") + name + " has the wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[c].get<double>();
  }
  return m;
}

}  // namespace

Eigen::VectorXd pack_all(const NllfrModel& m) {
  Packer p;
  const auto& t = m.theta;
  for (const auto* x : {&t.A, &t.B_u, &t.B_w, &t.C_y, &t.C_z, &t.D_yu, &t.D_yw, &t.D_zu, &m.beta}) p.put(*x);
  return p.v;
}

void unpack_all(const Eigen::VectorXd& v, NllfrModel& m) {
  Unpacker u{v};
  auto& t = m.theta;
  for (auto* x : {&t.A, &t.B_u, &t.B_w, &t.C_y, &t.C_z, &t.D_yu, &t.D_yw, &t.D_zu, &m.beta}) u.get(*x);
  u.finish();
}

Eigen::VectorXd pack_wz(const NllfrTheta& t) {
  Packer p;
  for (const auto* x : {&t.B_w, &t.C_z, &t.D_yw, &t.D_zu}) p.put(*x);
  return p.v;
}

void unpack_wz(const Eigen::VectorXd& v, NllfrTheta& t) {
  Unpacker u{v};
  for (auto* x : {&t.B_w, &t.C_z, &t.D_yw, &t.D_zu}) u.get(*x);
  u.finish();
}

Eigen::VectorXd pack_lti(const StateSpaceModel& ss) {
  Packer p;
  for (const auto* x : {&ss.A, &ss.B, &ss.C, &ss.D}) p.put(*x);
  return p.v;
}

void unpack_lti(const Eigen::VectorXd& v, StateSpaceModel& ss) {
  Unpacker u{v};
  for (auto* x : {&ss.A, &ss.B, &ss.C, &ss.D}) u.get(*x);
  u.finish();
}

void save_model(const std::filesystem::path& file, const NllfrModel& m) {
  m.validate();
  const auto& t = m.theta;
  auto scalers = [](const std::vector<Scaler>& s) {
    json a = json::array();
    for (const auto& x : s) a.push_back({{"mean", x.mean}, {"std", x.std}});
    return a;
  };
  json j = {
      {"format_version", 1},
      {"dims", {{"n_x", t.n_x()}, {"n_u", t.n_u()}, {"n_y", t.n_y()}, {"n_w", t.n_w()}, {"n_z", t.n_z()}}},
      {"A", matrix_json(t.A)},
      {"B_u", matrix_json(t.B_u)},
      {"B_w", matrix_json(t.B_w)},
      {"C_y", matrix_json(t.C_y)},
      {"C_z", matrix_json(t.C_z)},
      {"D_yu", matrix_json(t.D_yu)},
      {"D_yw", matrix_json(t.D_yw)},
      {"D_zu", matrix_json(t.D_zu)},
      {"beta", matrix_json(m.beta)},
      {"feature_map", {{"n_z", m.map.n_z()}, {"degree", m.map.degree()}, {"ordering", FeatureMap::kOrdering}}},
      {"scalers", {{"u", scalers(m.u_scalers)}, {"y", scalers(m.y_scalers)}}},
      {"parameter_count", m.parameter_count()},
  };
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out << j.dump(1) << '\n';
}

NllfrModel load_model(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open model file " + file.string());
  NllfrModel m;
  try {
    json j;
    in >> j;
    if (j.at("format_version").get<int>() != 1) throw DataError("model.json: unsupported format_version");
    const auto& d = j.at("dims");
    const int nx = d.at("n_x"), nu = d.at("n_u"), ny = d.at("n_y"), nw = d.at("n_w"), nz = d.at("n_z");
    auto& t = m.theta;
    t.A = matrix_from(j.at("A"), nx, nx, "A");
    t.B_u = matrix_from(j.at("B_u"), nx, nu, "B_u");
    t.B_w = matrix_from(j.at("B_w"), nx, nw, "B_w");
    t.C_y = matrix_from(j.at("C_y"), ny, nx, "C_y");
    t.C_z = matrix_from(j.at("C_z"), nz, nx, "C_z");
    t.D_yu = matrix_from(j.at("D_yu"), ny, nu, "D_yu");
    t.D_yw = matrix_from(j.at("D_yw"), ny, nw, "D_yw");
    t.D_zu = matrix_from(j.at("D_zu"), nz, nu, "D_zu");
    const auto& fm = j.at("feature_map");
    if (fm.value("ordering", std::string(FeatureMap::kOrdering)) != FeatureMap::kOrdering)
      throw DataError("model.json: unknown feature ordering");
    m.map = FeatureMap(fm.at("n_z").get<int>(), fm.at("degree").get<int>());
    m.beta = matrix_from(j.at("beta"), m.map.n_phi(), nw, "beta");
    for (const auto& s : j.at("scalers").at("u")) m.u_scalers.push_back({s.at("mean"), s.at("std")});
    for (const auto& s : j.at("scalers").at("y")) m.y_scalers.push_back({s.at("mean"), s.at("std")});
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model.json: " + std::string(e.what()));
  }
  m.validate();
  return m;
}

}  // namespace nllfr

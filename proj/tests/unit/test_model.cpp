#include "helpers.hpp"

#include "nllfr/errors.hpp"
#include "nllfr/model.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace nllfr;
using testing::randn;

namespace {

NllfrModel random_model(Rng& rng) {
  NllfrModel m;
  m.theta = testing::random_theta(5, 1, 2, 2, 3, 0.7, rng);
  m.map = FeatureMap(3, 3);
  m.beta = randn(m.map.n_phi(), 2, rng);
  m.u_scalers = {{0.25, 1.5}};
  m.y_scalers = {{-1.0, 0.1}, {3.0, 7.0}};
  return m;
}

}  // namespace

TEST_CASE("parameter count of the benchmark configuration is 293") {
  CHECK(NllfrModel::parameter_count(12, 1, 1, 2, 2, 7) == 293);
  Rng rng(1);
  const NllfrModel m = random_model(rng);
  CHECK(m.parameter_count() == pack_all(m).size());
}

TEST_CASE("pack and unpack round trips, in the documented order") {
  Rng rng(2);
  const NllfrModel m = random_model(rng);
  const Eigen::VectorXd p = pack_all(m);
  CHECK(p(0) == m.theta.A(0, 0));
  CHECK(p(1) == m.theta.A(1, 0));
  CHECK(p(25) == m.theta.B_u(0, 0));
  CHECK(p(p.size() - 1) == m.beta(m.beta.rows() - 1, 1));
  NllfrModel q = m;
  unpack_all(Eigen::VectorXd::Zero(p.size()), q);
  CHECK(q.beta.cwiseAbs().sum() == 0.0);
  unpack_all(p, q);
  CHECK((pack_all(q).array() == p.array()).all());

  NllfrTheta t = m.theta;
  const Eigen::VectorXd wz = pack_wz(t);
  CHECK(wz.size() == t.B_w.size() + t.C_z.size() + t.D_yw.size() + t.D_zu.size());
  CHECK(wz(0) == t.B_w(0, 0));
  CHECK(wz(t.B_w.size()) == t.C_z(0, 0));
  unpack_wz(2.0 * wz, t);
  CHECK((pack_wz(t).array() == 2.0 * wz.array()).all());
  CHECK((t.A.array() == m.theta.A.array()).all());

  StateSpaceModel ss = m.theta.yu();
  const Eigen::VectorXd pl = pack_lti(ss);
  CHECK(pl.size() == 25 + 5 + 10 + 2);
  unpack_lti(-pl, ss);
  CHECK(ss.D(1, 0) == -m.theta.D_yu(1, 0));
}

TEST_CASE("unpack rejects a wrong length") {
  Rng rng(3);
  NllfrModel m = random_model(rng);
  CHECK_THROWS(unpack_all(Eigen::VectorXd::Zero(3), m));
}

TEST_CASE("model.json round trip is exact") {
  Rng rng(4);
  const NllfrModel m = random_model(rng);
  const auto file = std::filesystem::temp_directory_path() / "nllfr_unit_model.json";
  save_model(file, m);
  const NllfrModel q = load_model(file);
  CHECK((pack_all(q).array() == pack_all(m).array()).all());
  CHECK(q.map == m.map);
  CHECK(q.y_scalers[1].std == m.y_scalers[1].std);
  CHECK(q.u_scalers[0].mean == m.u_scalers[0].mean);
  std::filesystem::remove(file);
}

TEST_CASE("model.json with zero-sized nonlinear path") {
  Rng rng(5);
  NllfrModel m;
  m.theta = NllfrTheta::from_lti(testing::random_ss(3, 1, 1, 0.5, rng));
  m.beta = Eigen::MatrixXd::Zero(1, 0);
  m.u_scalers = {{}};
  m.y_scalers = {{}};
  const auto file = std::filesystem::temp_directory_path() / "nllfr_unit_model0.json";
  save_model(file, m);
  const NllfrModel q = load_model(file);
  CHECK(q.theta.n_w() == 0);
  CHECK(q.theta.n_z() == 0);
  CHECK((q.theta.A.array() == m.theta.A.array()).all());
  std::filesystem::remove(file);
}

TEST_CASE("malformed model files are data errors") {
  const auto file = std::filesystem::temp_directory_path() / "nllfr_unit_bad.json";
  {
    std::ofstream f(file);
    f << "{\"format_version\": 1";
  }
  CHECK_THROWS_AS(load_model(file), DataError);
  {
    std::ofstream f(file);
    f << "{\"format_version\": 999}";
  }
  CHECK_THROWS_AS(load_model(file), DataError);
  CHECK_THROWS_AS(load_model("/nonexistent/model.json"), DataError);
  std::filesystem::remove(file);
}

TEST_CASE("model validation catches a beta of the wrong shape") {
  Rng rng(6);
  NllfrModel m = random_model(rng);
  m.beta = Eigen::MatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(m.validate(), DataError);
}

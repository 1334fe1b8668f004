#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "biasdyn/net.hpp"
#include "biasdyn/rng.hpp"

using namespace biasdyn;

namespace {
Vec3 rvec(RandomStream& rng, double s) {
  return Vec3(rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s));
}
}  // namespace

TEST_CASE("init is deterministic in the seed and rejects bad configs") {
  NetConfig cfg = NetConfig::make_gyro(42);
  const MlpParams a = init_params(cfg);
  const MlpParams b = init_params(cfg);
  CHECK((a.flatten() - b.flatten()).norm() == 0.0);

  cfg.seed = 43;
  const MlpParams c = init_params(cfg);
  CHECK((a.flatten() - c.flatten()).norm() > 0.0);

  NetConfig bad = cfg;
  bad.hidden_widths = {32, 0};
  CHECK_THROWS_AS(init_params(bad), BadConfig);
  bad.hidden_widths = {};
  CHECK_THROWS_AS(init_params(bad), BadConfig);
}

TEST_CASE("fresh field output is near zero") {
  const MlpParams p = init_params(NetConfig::make_gyro(1));
  MlpWorkspace ws;
  RandomStream rng(2);
  for (int i = 0; i < 100; ++i) {
    // inputs at the magnitude of their normalization scales
    const Vec3 b = rvec(rng, 0.05), u = rvec(rng, 1.0), ud = rvec(rng, 10.0);
    CHECK(forward(p, b, u, ud, ws).norm() <= 0.1);
  }
}

TEST_CASE("zeroed head gives the zero map") {
  MlpParams p = init_params(NetConfig::make_gyro(3));
  p.layers.back().W.setZero();
  p.layers.back().b.setZero();
  MlpWorkspace ws;
  RandomStream rng(4);
  for (int i = 0; i < 20; ++i) {
    CHECK(forward(p, rvec(rng, 1), rvec(rng, 1), rvec(rng, 1), ws).norm() == 0.0);
  }
}

TEST_CASE("zeroed residual blocks collapse to an affine map of normalized inputs") {
  MlpParams p = init_params(NetConfig::make_gyro(5));
  for (size_t i = 1; i + 1 < p.layers.size(); ++i) {
    CHECK(p.layers[i].residual);
    p.layers[i].W.setZero();
    p.layers[i].b.setZero();
  }
  MlpWorkspace ws;
  RandomStream rng(6);
  const Eigen::MatrixXd affine =
      p.layers.back().W * p.layers.front().W;  // out o embed, both linear
  for (int i = 0; i < 20; ++i) {
    const Vec3 b = rvec(rng, 0.1), u = rvec(rng, 1.0), ud = rvec(rng, 5.0);
    Eigen::VectorXd x(9);
    x << b, u, ud;
    x.array() /= p.input_scale.array();
    const Vec3 expected =
        affine * x + p.layers.back().W * p.layers.front().b + p.layers.back().b;
    CHECK((forward(p, b, u, ud, ws) - expected).norm() < 1e-14);
  }
}

TEST_CASE("input jacobian matches finite differences") {
  const MlpParams p = init_params(NetConfig::make_gyro(7));
  RandomStream rng(8);
  const double eps = 1e-6;
  MlpWorkspace ws;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 b = rvec(rng, 0.05), u = rvec(rng, 1.0), ud = rvec(rng, 10.0);
    const auto J = input_jacobian(p, b, u, ud);
    Eigen::VectorXd x(9);
    x << b, u, ud;
    for (int i = 0; i < 9; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += eps;
      xm[i] -= eps;
      const Vec3 fp = forward(p, xp.head<3>(), xp.segment<3>(3), xp.tail<3>(), ws);
      const Vec3 fm = forward(p, xm.head<3>(), xm.segment<3>(3), xm.tail<3>(), ws);
      const Vec3 fd = (fp - fm) / (2 * eps);
      const Vec3 an = J.col(i);
      CHECK((fd - an).norm() <= 1e-5 * std::max(1e-4, an.norm()));
    }
  }
}

TEST_CASE("parameter gradients match central differences") {
  NetConfig cfg = NetConfig::make_gyro(9);
  cfg.hidden_widths = {8};
  MlpParams p = init_params(cfg);
  // Un-shrink the head so gradients are not dominated by the 1e-2 scaling.
  p.layers.back().W *= 50.0;

  RandomStream rng(10);
  MlpWorkspace ws;
  const Vec3 b = rvec(rng, 0.05), u = rvec(rng, 1.0), ud = rvec(rng, 10.0);
  const Vec3 upstream = rvec(rng, 1.0);

  MlpGrad grad = MlpGrad::zeros_like(p);
  const Vec3 grad_b = forward_grad(p, b, u, ud, upstream, grad, ws);
  const Eigen::VectorXd flat_grad = grad.flatten();

  Eigen::VectorXd theta = p.flatten();
  const double eps = 1e-6;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    MlpParams pp = p, pm = p;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += eps;
    tm[i] -= eps;
    pp.unflatten(tp);
    pm.unflatten(tm);
    const double fd = (upstream.dot(forward(pp, b, u, ud, ws)) -
                       upstream.dot(forward(pm, b, u, ud, ws))) /
                      (2 * eps);
    CHECK(std::abs(fd - flat_grad[i]) <= 1e-4 * std::max(1e-6, std::abs(fd)));
  }

  // bias-input gradient
  for (int i = 0; i < 3; ++i) {
    Vec3 bp = b, bm = b;
    bp[i] += eps;
    bm[i] -= eps;
    const double fd =
        (upstream.dot(forward(p, bp, u, ud, ws)) - upstream.dot(forward(p, bm, u, ud, ws))) /
        (2 * eps);
    CHECK(std::abs(fd - grad_b[i]) <= 1e-4 * std::max(1e-6, std::abs(fd)));
  }

  // zero upstream -> zero gradients
  MlpGrad zg = MlpGrad::zeros_like(p);
  const Vec3 zb = forward_grad(p, b, u, ud, Vec3::Zero(), zg, ws);
  CHECK(zb.norm() == 0.0);
  CHECK(zg.flatten().norm() == 0.0);
}

TEST_CASE("gradient consistency over random configurations") {
  RandomStream rng(11);
  const double eps = 1e-6;
  MlpWorkspace ws;
  for (int trial = 0; trial < 100; ++trial) {
    NetConfig cfg = NetConfig::make_accel(100 + static_cast<std::uint64_t>(trial));
    const int w = 2 + static_cast<int>(rng.below(6));
    cfg.hidden_widths = (trial % 3 == 0) ? std::vector<int>{w} : std::vector<int>{w, w};
    MlpParams p = init_params(cfg);
    p.layers.back().W *= 30.0;

    const Vec3 b = rvec(rng, 0.5), u = rvec(rng, 10.0), ud = rvec(rng, 100.0);
    const Vec3 upstream = rvec(rng, 1.0);
    MlpGrad grad = MlpGrad::zeros_like(p);
    forward_grad(p, b, u, ud, upstream, grad, ws);
    const Eigen::VectorXd flat = grad.flatten();
    const Eigen::VectorXd theta = p.flatten();

    // spot-check a handful of coordinates per config
    for (int probe = 0; probe < 6; ++probe) {
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(theta.size())));
      MlpParams pp = p, pm = p;
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += eps;
      tm[i] -= eps;
      pp.unflatten(tp);
      pm.unflatten(tm);
      const double fd = (upstream.dot(forward(pp, b, u, ud, ws)) -
                         upstream.dot(forward(pm, b, u, ud, ws))) /
                        (2 * eps);
      CHECK(std::abs(fd - flat[i]) <= 1e-4 * std::max(1e-6, std::abs(fd)));
    }
  }
}

TEST_CASE("scale equivariance of input normalization") {
  NetConfig cfg = NetConfig::make_gyro(12);
  const MlpParams p = init_params(cfg);
  MlpParams scaled = p;
  const double f = 3.7;
  scaled.input_scale *= f;
  MlpWorkspace ws;
  RandomStream rng(13);
  for (int i = 0; i < 20; ++i) {
    const Vec3 b = rvec(rng, 0.05), u = rvec(rng, 1.0), ud = rvec(rng, 10.0);
    const Vec3 y1 = forward(p, b, u, ud, ws);
    const Vec3 y2 = forward(scaled, f * b, f * u, f * ud, ws);
    CHECK((y1 - y2).norm() <= 1e-12 * std::max(1.0, y1.norm()));
  }
}

TEST_CASE("serialization round trip is bit exact") {
  NetConfig cfg = NetConfig::make_accel(14);
  cfg.hidden_widths = {5, 5, 5};
  const MlpParams p = init_params(cfg);
  std::stringstream ss;
  save_mlp(p, ss);
  const MlpParams q = load_mlp(ss);
  REQUIRE(q.layers.size() == p.layers.size());
  CHECK((p.flatten() - q.flatten()).norm() == 0.0);
  CHECK((p.input_scale - q.input_scale).norm() == 0.0);
  for (size_t i = 0; i < p.layers.size(); ++i) {
    CHECK(p.layers[i].activation == q.layers[i].activation);
    CHECK(p.layers[i].residual == q.layers[i].residual);
  }

  // file round trip plus checkpoint kind probing
  const auto dir = std::filesystem::temp_directory_path() / "biasdyn_net_test";
  std::filesystem::create_directories(dir);
  const std::string mlp_path = (dir / "net.ckpt").string();
  save_mlp_file(p, mlp_path);
  CHECK((load_mlp_file(mlp_path).flatten() - p.flatten()).norm() == 0.0);
  CHECK_FALSE(is_linear_checkpoint(mlp_path));

  LinearCalib lg, la;
  lg.A << 1.01, 0.002, -0.003, 0.001, 0.99, 0.004, -0.002, 0.003, 1.02;
  lg.b = Vec3(0.02, -0.01, 0.015);
  la.b = Vec3(-0.05, 0.03, -0.02);
  const std::string lin_path = (dir / "linear.ckpt").string();
  save_linear(lg, la, lin_path);
  CHECK(is_linear_checkpoint(lin_path));
  const auto [g2, a2] = load_linear(lin_path);
  CHECK((g2.A - lg.A).norm() == 0.0);
  CHECK((g2.b - lg.b).norm() == 0.0);
  CHECK((a2.A - la.A).norm() == 0.0);
  CHECK((a2.b - la.b).norm() == 0.0);
}

TEST_CASE("linear baseline forward") {
  LinearCalib c;
  CHECK((linear_forward(c, Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm() == 0.0);
  c.b = Vec3(0.1, -0.2, 0.3);
  CHECK((linear_forward(c, Vec3(1, 2, 3)) - Vec3(1.1, 1.8, 3.3)).norm() < 1e-15);

  c.A << 2, 0.1, 0, -0.3, 1, 0.5, 0, 0, 3;
  const Vec3 u(0.5, -1.0, 2.0);
  const Vec3 manual(2 * 0.5 + 0.1 * -1.0 + 0 * 2.0 + 0.1, -0.3 * 0.5 + 1 * -1.0 + 0.5 * 2.0 - 0.2,
                    0 * 0.5 + 0 * -1.0 + 3 * 2.0 + 0.3);
  CHECK((linear_forward(c, u) - manual).norm() < 1e-15);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "biasdyn/ode.hpp"
#include "biasdyn/rng.hpp"
#include "biasdyn/so3.hpp"

using namespace biasdyn;
using ode::Method;
using ode::TimeGrid;

namespace {
constexpr double kPi = 3.14159265358979323846;

// Knot times use the same arithmetic as TimeGrid::regular so grids built the
// same way stay inside the span.
HermiteSpline spline_of(const std::function<Vec3(double)>& f, double t0, double dt, int steps) {
  std::vector<double> t;
  std::vector<Vec3> u;
  for (int i = 0; i <= steps; ++i) {
    t.push_back(t0 + i * dt);
    u.push_back(f(t.back()));
  }
  return HermiteSpline::from_samples(t, u);
}
}  // namespace

TEST_CASE("time grid validation") {
  CHECK_THROWS_AS(TimeGrid({0.0}), BadTimeline);
  CHECK_THROWS_AS(TimeGrid({0.0, 0.0}), BadTimeline);
  CHECK_THROWS_AS(TimeGrid::regular(0.0, -0.1, 10), BadTimeline);
  const auto g = TimeGrid::regular(0.0, 0.5, 4);
  CHECK(g.steps() == 4);
  CHECK(g.times.back() == doctest::Approx(2.0));
}

TEST_CASE("euclidean integrator basics") {
  // x' = 0 keeps the state
  const auto zero = [](double, const Eigen::VectorXd& x) { return Eigen::VectorXd::Zero(x.size()).eval(); };
  Eigen::VectorXd x0(2);
  x0 << 3.0, -1.0;
  const auto path = ode::integrate_euclidean(zero, x0, TimeGrid::regular(0, 0.1, 10), Method::Rk4);
  CHECK(path.size() == 11);
  for (const auto& x : path) CHECK((x - x0).norm() == 0.0);

  // x' = x integrated to t=1 reaches e
  const auto lin = [](double, const Eigen::VectorXd& x) { return x.eval(); };
  Eigen::VectorXd one(1);
  one << 1.0;
  const auto rk = ode::integrate_euclidean(lin, one, TimeGrid::regular(0, 1e-3, 1000), Method::Rk4);
  CHECK(std::abs(rk.back()[0] - std::exp(1.0)) < 1e-9);
}

TEST_CASE("euler halves its error when dt halves") {
  const auto lin = [](double, const Eigen::VectorXd& x) { return x.eval(); };
  Eigen::VectorXd one(1);
  one << 1.0;
  const double exact = std::exp(1.0);
  double prev_err = 0.0;
  for (int i = 0; i < 3; ++i) {
    const int steps = 200 << i;
    const auto path =
        ode::integrate_euclidean(lin, one, TimeGrid::regular(0, 1.0 / steps, steps), Method::Euler);
    const double err = std::abs(path.back()[0] - exact);
    if (i > 0) CHECK(prev_err / err == doctest::Approx(2.0).epsilon(0.05));
    prev_err = err;
  }
}

TEST_CASE("convergence orders on a smooth field") {
  // x' = cos(t) x has the closed form exp(sin t).
  const auto field = [](double t, const Eigen::VectorXd& x) {
    return (std::cos(t) * x).eval();
  };
  Eigen::VectorXd one(1);
  one << 1.0;
  const double exact = std::exp(std::sin(1.0));
  for (auto [method, order] : {std::pair{Method::Euler, 1.0}, std::pair{Method::Rk4, 4.0}}) {
    std::vector<double> errs;
    for (int steps : {100, 200, 400}) {
      const auto path =
          ode::integrate_euclidean(field, one, TimeGrid::regular(0, 1.0 / steps, steps), method);
      errs.push_back(std::abs(path.back()[0] - exact));
    }
    const double slope01 = std::log2(errs[0] / errs[1]);
    const double slope12 = std::log2(errs[1] / errs[2]);
    CHECK(slope01 == doctest::Approx(order).epsilon(0.1));
    CHECK(slope12 == doctest::Approx(order).epsilon(0.1));
  }
}

TEST_CASE("non-finite states are reported") {
  const auto blowup = [](double, const Eigen::VectorXd& x) {
    return (x.array() * x.array()).matrix().eval();
  };
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK_THROWS_AS(
      ode::integrate_euclidean(blowup, one, TimeGrid::regular(0, 0.01, 300), Method::Euler),
      NonFinite);
}

TEST_CASE("so3 solver: zero rate keeps the initial rotation") {
  const Rotation R0 = so3::exp(Vec3(0.4, -0.2, 0.9));
  const auto path = ode::integrate_so3([](double) { return Vec3::Zero(); }, R0,
                                       TimeGrid::regular(0, 0.01, 100), Method::Rk4);
  CHECK(path.chart_switches == 0);
  for (const auto& R : path.rot) CHECK((R.matrix() - R0.matrix()).norm() < 1e-15);
}

TEST_CASE("so3 solver matches the constant-rate closed form") {
  // R_T = R_0 Exp(T w) for constant w, including across chart switches.
  const Vec3 w(0.3, -0.2, 0.1);
  const Rotation R0 = so3::exp(Vec3(0.1, 0.7, -0.3));
  const auto grid = TimeGrid::regular(0.0, 5e-3, 2000);  // 10 s

  const auto rk = ode::integrate_so3([&](double) { return w; }, R0, grid, Method::Rk4);
  const Rotation exact = R0 * so3::exp(10.0 * w);
  CHECK(so3::geodesic_angle(rk.rot.back(), exact) < 1e-8);

  const auto eu = ode::integrate_so3([&](double) { return w; }, R0, grid, Method::Euler);
  CHECK(so3::geodesic_angle(eu.rot.back(), exact) < 2e-3);
}

TEST_CASE("so3 solver chart switching at high rate") {
  const Vec3 w(0.0, 0.0, 2.0);
  const Rotation R0;
  const auto grid = TimeGrid::regular(0.0, 5e-3, 2000);  // 20 rad total
  const auto path = ode::integrate_so3([&](double) { return w; }, R0, grid, Method::Rk4);
  CHECK(path.chart_switches >= 5);
  CHECK(so3::geodesic_angle(path.rot.back(), R0 * so3::exp(10.0 * w)) < 1e-7);

  // value continuity: every step advances by exactly |w| dt, switches included
  for (size_t k = 0; k + 1 < path.rot.size(); ++k) {
    const double step = so3::geodesic_angle(path.rot[k], path.rot[k + 1]);
    CHECK(std::abs(step - 0.01) < 1e-9);
  }
}

TEST_CASE("so3 solver stays on the manifold over 1e5 steps") {
  const auto omega = [](double t) {
    return Vec3(1.5 * std::sin(0.9 * t), 2.0 * std::cos(0.7 * t + 0.3), 1.1 * std::sin(0.4 * t));
  };
  const auto path = ode::integrate_so3(omega, Rotation(), TimeGrid::regular(0, 5e-3, 100000),
                                       Method::Rk4);
  double worst = 0.0;
  for (const auto& R : path.rot) worst = std::max(worst, R.orthogonality_residual());
  CHECK(worst <= 1e-8);
  CHECK(path.chart_switches > 0);
}

TEST_CASE("so3 solver convergence order against a fine reference") {
  const auto omega = [](double t) {
    return Vec3(std::sin(3.0 * t), 0.8 * std::cos(2.0 * t), -0.5 * std::sin(t) + 0.4);
  };
  const auto ref = ode::integrate_so3(omega, Rotation(), TimeGrid::regular(0, 1e-5, 100000),
                                      Method::Rk4);
  for (auto [method, order] : {std::pair{Method::Euler, 1.0}, std::pair{Method::Rk4, 4.0}}) {
    std::vector<double> errs;
    for (int steps : {125, 250, 500}) {
      const auto path = ode::integrate_so3(omega, Rotation(),
                                           TimeGrid::regular(0, 1.0 / steps, steps), method);
      errs.push_back(so3::geodesic_angle(path.rot.back(), ref.rot.back()));
    }
    const double slope = std::log2(errs[0] / errs[2]) / 2.0;
    CHECK(slope == doctest::Approx(order).epsilon(0.1));
  }
}

TEST_CASE("so3 solver flags steps that jump past the singular margin") {
  CHECK_THROWS_AS(ode::integrate_so3([](double) { return Vec3(0, 0, 1300.0); }, Rotation(),
                                     TimeGrid::regular(0, 5e-3, 10), Method::Euler),
                  NearSingular);
}

TEST_CASE("solver output is replayable bit for bit") {
  const auto omega = [](double t) { return Vec3(std::sin(t), std::cos(2 * t), 0.3); };
  const auto grid = TimeGrid::regular(0, 5e-3, 400);
  const auto a = ode::integrate_so3(omega, Rotation(), grid, Method::Rk4);
  const auto b = ode::integrate_so3(omega, Rotation(), grid, Method::Rk4);
  for (size_t k = 0; k < a.rot.size(); ++k) {
    CHECK((a.rot[k].matrix() - b.rot[k].matrix()).norm() == 0.0);
  }
}

TEST_CASE("gyro stage with zero field reduces to the rotation solver") {
  const Vec3 w(0.4, -0.1, 0.25);
  const auto spline = spline_of([&](double) { return w; }, 0.0, 5e-3, 400);
  const auto grid = TimeGrid::regular(0.0, 5e-3, 400);
  const Rotation R0 = so3::exp(Vec3(0.2, 0.1, -0.4));

  for (Method m : {Method::Euler, Method::Rk4}) {
    const auto ref = ode::integrate_so3([&](double) { return w; }, R0, grid, m);
    const auto gp = ode::integrate_gyro_stage(nullptr, spline, R0, Vec3::Zero(), grid, m);
    for (size_t k = 0; k < gp.rot.size(); ++k) {
      CHECK(so3::geodesic_angle(gp.rot[k], ref.rot[k]) < 1e-12);
      CHECK((gp.bias[k]).norm() == 0.0);
    }
  }
}

TEST_CASE("constant measurement bias cancels against the matching initial bias") {
  const auto w_true = [](double t) {
    return Vec3(0.6 * std::sin(1.3 * t), 0.4 * std::cos(0.8 * t), -0.5 * std::sin(0.5 * t));
  };
  const Vec3 c(0.05, -0.03, 0.02);
  const auto spline_biased = spline_of([&](double t) { return (w_true(t) + c).eval(); }, 0, 5e-3, 400);
  const auto grid = TimeGrid::regular(0.0, 5e-3, 400);

  const auto clean = ode::integrate_so3(w_true, Rotation(), grid, Method::Euler);
  const auto debiased =
      ode::integrate_gyro_stage(nullptr, spline_biased, Rotation(), c, grid, Method::Euler);
  CHECK(so3::geodesic_angle(clean.rot.back(), debiased.rot.back()) < 1e-12);
}

TEST_CASE("gyro stage path equals its chart reconstruction") {
  const auto spline = spline_of(
      [](double t) {
        return Vec3(2.2 * std::sin(t) + 1.0, 1.5 * std::cos(2 * t), 1.8);
      },
      0.0, 5e-3, 1200);
  const auto grid = TimeGrid::regular(0.0, 5e-3, 1200);
  const auto gp = ode::integrate_gyro_stage(nullptr, spline, Rotation(), Vec3::Zero(), grid,
                                            Method::Rk4);
  CHECK(gp.chart_switches > 0);
  for (size_t k = 0; k < gp.rot.size(); ++k) {
    const Rotation rebuilt =
        gp.anchors[static_cast<size_t>(gp.anchor_index[k])] * so3::exp(gp.xi[k]);
    CHECK((rebuilt.matrix() - gp.rot[k].matrix()).norm() < 1e-12);
  }
}

TEST_CASE("full system: stationary equilibrium") {
  const Rotation R0 = so3::exp(Vec3(0.3, 0.2, -0.1));
  const Vec3 g(0, 0, -9.80665);
  const Vec3 a_meas = -(R0.inverse() * g);  // specific force of a resting body
  const auto gyro_spline = spline_of([](double) { return Vec3::Zero(); }, 0, 5e-3, 2000);
  const auto accel_spline = spline_of([&](double) { return a_meas; }, 0, 5e-3, 2000);

  ode::CoupledState init;
  init.chart.anchor = R0;
  init.v = Vec3(0.5, -0.2, 0.1);
  init.p = Vec3(1, 2, 3);
  const auto path = ode::integrate_full(nullptr, nullptr, gyro_spline, accel_spline, init, g,
                                        TimeGrid::regular(0, 5e-3, 2000), Method::Euler);
  // v stays constant; p advances linearly with the constant v
  CHECK((path.v.back() - init.v).norm() < 1e-9);
  CHECK((path.p.back() - (init.p + 10.0 * init.v)).norm() < 1e-9);
}

TEST_CASE("full system: free fall matches the Euler truncation bound") {
  const Vec3 g(0, 0, -9.80665);
  const auto zero3 = spline_of([](double) { return Vec3::Zero(); }, 0, 5e-3, 1000);
  ode::CoupledState init;  // identity attitude, zero velocity at the origin
  const double dt = 5e-3, T = 5.0;
  const auto path = ode::integrate_full(nullptr, nullptr, zero3, zero3, init, g,
                                        TimeGrid::regular(0, dt, 1000), Method::Euler);
  const Vec3 exact = 0.5 * g * T * T;
  const double bound = 0.5 * g.norm() * dt * T;
  CHECK((path.p.back() - exact).norm() <= bound * (1.0 + 1e-9));
  // velocity integrates a constant field exactly
  CHECK((path.v.back() - g * T).norm() < 1e-12);

  // RK4 nails the quadratic exactly
  const auto rk = ode::integrate_full(nullptr, nullptr, zero3, zero3, init, g,
                                      TimeGrid::regular(0, dt, 1000), Method::Rk4);
  CHECK((rk.p.back() - exact).norm() < 1e-9);
}

TEST_CASE("full system: constant accelerometer bias integrates to c*t at identity attitude") {
  const Vec3 g(0, 0, -9.80665);
  const Vec3 c(0.05, -0.03, 0.02);
  const auto gyro_spline = spline_of([](double) { return Vec3::Zero(); }, 0, 5e-3, 1000);
  const auto accel_spline = spline_of([&](double) { return (-g + c).eval(); }, 0, 5e-3, 1000);
  ode::CoupledState init;
  const auto path = ode::integrate_full(nullptr, nullptr, gyro_spline, accel_spline, init, g,
                                        TimeGrid::regular(0, 5e-3, 1000), Method::Euler);
  CHECK((path.v.back() - 5.0 * c).norm() < 1e-12);
}

TEST_CASE("tape recording requires the Euler method") {
  const auto spline = spline_of([](double) { return Vec3(0.1, 0, 0); }, 0, 0.01, 100);
  const auto grid = TimeGrid::regular(0, 0.01, 100);
  CHECK_THROWS_AS(ode::integrate_gyro_stage(nullptr, spline, Rotation(), Vec3::Zero(), grid,
                                            Method::Rk4, /*record_tape=*/true),
                  BadConfig);
  const auto gp = ode::integrate_gyro_stage(nullptr, spline, Rotation(), Vec3::Zero(), grid,
                                            Method::Euler, /*record_tape=*/true);
  CHECK(gp.tape.size() == 100);
}

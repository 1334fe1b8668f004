#include "biasdyn/ode.hpp"

#include <cmath>

#include "biasdyn/errors.hpp"
#include "biasdyn/so3.hpp"

namespace biasdyn::ode {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSingularGuard = 2.0 * kPi - so3::kJacobianSingularMargin;

double resolve_threshold(double thr) {
  if (thr < 0.0) return kPi;
  if (!(thr > 0.0) || thr > kPi) throw BadConfig("chart switch threshold must be in (0, pi]");
  return thr;
}

void check_xi(const Vec3& xi) {
  if (xi.norm() >= kSingularGuard) {
    throw NearSingular("chart coordinate reached the 2*pi margin; lower the switch threshold");
  }
}
}  // namespace

Method method_from_string(const std::string& s) {
  if (s == "euler") return Method::Euler;
  if (s == "rk4") return Method::Rk4;
  throw BadConfig("unknown integration method '" + s + "' (expected euler or rk4)");
}

std::string to_string(Method m) { return m == Method::Euler ? "euler" : "rk4"; }

TimeGrid::TimeGrid(std::vector<double> t) : times(std::move(t)) {
  if (times.size() < 2) throw BadTimeline("time grid needs at least 2 samples");
  for (size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw BadTimeline("time grid not strictly increasing");
  }
}

TimeGrid TimeGrid::regular(double t0, double dt, int steps) {
  if (!(dt > 0.0) || steps < 1) throw BadTimeline("regular grid needs dt > 0 and steps >= 1");
  std::vector<double> t(static_cast<size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) t[static_cast<size_t>(i)] = t0 + i * dt;
  return TimeGrid(std::move(t));
}

Rotation ChartState::exp_of_xi() const { return so3::exp(xi); }

std::vector<Eigen::VectorXd> integrate_euclidean(const EuclideanField& field,
                                                 const Eigen::VectorXd& x0, const TimeGrid& grid,
                                                 Method method) {
  std::vector<Eigen::VectorXd> path;
  path.reserve(grid.times.size());
  path.push_back(x0);
  Eigen::VectorXd x = x0;
  for (int k = 0; k < grid.steps(); ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    const double h = grid.times[static_cast<size_t>(k) + 1] - t;
    if (method == Method::Euler) {
      x += h * field(t, x);
    } else {
      const Eigen::VectorXd k1 = field(t, x);
      const Eigen::VectorXd k2 = field(t + 0.5 * h, x + 0.5 * h * k1);
      const Eigen::VectorXd k3 = field(t + 0.5 * h, x + 0.5 * h * k2);
      const Eigen::VectorXd k4 = field(t + h, x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) throw NonFinite("euclidean state became non-finite at t=" + std::to_string(t));
    path.push_back(x);
  }
  return path;
}

So3Path integrate_so3(const std::function<Vec3(double)>& omega, const Rotation& R0,
                      const TimeGrid& grid, Method method, double chart_switch_threshold) {
  const double thr = resolve_threshold(chart_switch_threshold);
  So3Path out;
  out.rot.reserve(grid.times.size());
  out.rot.push_back(R0);

  Rotation anchor = R0;
  Vec3 xi = Vec3::Zero();
  const auto fdot = [&omega](double t, const Vec3& x) -> Vec3 {
    return so3::right_jacobian_inv(x) * omega(t);
  };

  for (int k = 0; k < grid.steps(); ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    const double h = grid.times[static_cast<size_t>(k) + 1] - t;
    if (method == Method::Euler) {
      xi += h * fdot(t, xi);
    } else {
      const Vec3 k1 = fdot(t, xi);
      const Vec3 k2 = fdot(t + 0.5 * h, xi + 0.5 * h * k1);
      const Vec3 k3 = fdot(t + 0.5 * h, xi + 0.5 * h * k2);
      const Vec3 k4 = fdot(t + h, xi + h * k3);
      xi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!xi.allFinite()) throw NonFinite("so3 chart state became non-finite");
    check_xi(xi);
    const Rotation R = anchor * so3::exp(xi);
    out.rot.push_back(R);
    if (xi.norm() > thr) {
      anchor = R;
      xi.setZero();
      ++out.chart_switches;
    }
  }
  return out;
}

GyroPath integrate_gyro_stage(const MlpParams* f_g, const HermiteSpline& gyro_spline,
                              const Rotation& R0, const Vec3& b0, const TimeGrid& grid,
                              Method method, bool record_tape, double chart_switch_threshold) {
  const double thr = resolve_threshold(chart_switch_threshold);
  if (record_tape && method != Method::Euler) {
    throw BadConfig("tape recording is only supported with the Euler method");
  }

  const auto n = grid.times.size();
  GyroPath out;
  out.rot.reserve(n);
  out.xi.reserve(n);
  out.bias.reserve(n);
  out.anchor_index.reserve(n);
  out.anchors.push_back(R0);
  if (record_tape) out.tape.reserve(n - 1);

  Vec3 xi = Vec3::Zero(), b = b0;
  out.rot.push_back(R0);
  out.xi.push_back(xi);
  out.bias.push_back(b);
  out.anchor_index.push_back(0);

  MlpWorkspace ws;
  Vec3 meas, meas_dot;
  const auto bias_rate = [&](const Vec3& bias, const Vec3& u, const Vec3& udot) -> Vec3 {
    return f_g ? forward(*f_g, bias, u, udot, ws) : Vec3::Zero();
  };

  for (int k = 0; k < grid.steps(); ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    const double h = grid.times[static_cast<size_t>(k) + 1] - t;

    if (method == Method::Euler) {
      gyro_spline.eval3(t, meas, meas_dot);
      if (record_tape) out.tape.push_back({t, h, xi, b, meas, meas_dot});
      const Vec3 xi_dot = so3::right_jacobian_inv(xi) * (meas - b);
      const Vec3 b_dot = bias_rate(b, meas, meas_dot);
      xi += h * xi_dot;
      b += h * b_dot;
    } else {
      Vec3 kx[4], kb[4];
      const double off[4] = {0.0, 0.5, 0.5, 1.0};
      Vec3 xs = xi, bs = b;
      for (int s = 0; s < 4; ++s) {
        if (s > 0) {
          const double hs = off[s] * h;
          xs = xi + hs * kx[s - 1];
          bs = b + hs * kb[s - 1];
        }
        gyro_spline.eval3(t + off[s] * h, meas, meas_dot);
        kx[s] = so3::right_jacobian_inv(xs) * (meas - bs);
        kb[s] = bias_rate(bs, meas, meas_dot);
      }
      xi += (h / 6.0) * (kx[0] + 2.0 * kx[1] + 2.0 * kx[2] + kx[3]);
      b += (h / 6.0) * (kb[0] + 2.0 * kb[1] + 2.0 * kb[2] + kb[3]);
    }
    if (!xi.allFinite() || !b.allFinite()) throw NonFinite("gyro stage state became non-finite");
    check_xi(xi);

    const Rotation R = out.anchors.back() * so3::exp(xi);
    out.rot.push_back(R);
    out.xi.push_back(xi);
    out.bias.push_back(b);
    out.anchor_index.push_back(static_cast<int>(out.anchors.size()) - 1);
    if (xi.norm() > thr) {
      out.anchors.push_back(R);
      xi.setZero();
      ++out.chart_switches;
    }
  }
  return out;
}

FullPath integrate_full(const MlpParams* f_g, const MlpParams* f_a,
                        const HermiteSpline& gyro_spline, const HermiteSpline& accel_spline,
                        const CoupledState& init, const Vec3& gravity, const TimeGrid& grid,
                        Method method, bool record_tape, double chart_switch_threshold) {
  const double thr = resolve_threshold(chart_switch_threshold);
  if (record_tape && method != Method::Euler) {
    throw BadConfig("tape recording is only supported with the Euler method");
  }

  const auto n = grid.times.size();
  FullPath out;
  out.rot.reserve(n);
  out.xi.reserve(n);
  out.b_g.reserve(n);
  out.v.reserve(n);
  out.p.reserve(n);
  out.b_a.reserve(n);
  out.anchor_index.reserve(n);
  out.anchors.push_back(init.chart.anchor);
  if (record_tape) out.tape.reserve(n - 1);

  Vec3 xi = init.chart.xi, bg = init.b_g, v = init.v, p = init.p, ba = init.b_a;
  out.rot.push_back(init.chart.anchor * so3::exp(xi));
  out.xi.push_back(xi);
  out.b_g.push_back(bg);
  out.v.push_back(v);
  out.p.push_back(p);
  out.b_a.push_back(ba);
  out.anchor_index.push_back(0);

  MlpWorkspace ws_g, ws_a;
  Vec3 w_meas, w_dot, a_meas, a_dot;

  for (int k = 0; k < grid.steps(); ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    const double h = grid.times[static_cast<size_t>(k) + 1] - t;
    const Rotation& anchor = out.anchors.back();

    if (method == Method::Euler) {
      gyro_spline.eval3(t, w_meas, w_dot);
      accel_spline.eval3(t, a_meas, a_dot);
      if (record_tape) {
        out.tape.push_back({t, h, xi, bg, v, p, ba, w_meas, w_dot, a_meas, a_dot,
                            static_cast<int>(out.anchors.size()) - 1});
      }
      const Rotation R = anchor * so3::exp(xi);
      const Vec3 xi_dot = so3::right_jacobian_inv(xi) * (w_meas - bg);
      const Vec3 bg_dot = f_g ? forward(*f_g, bg, w_meas, w_dot, ws_g) : Vec3::Zero();
      const Vec3 v_dot = R * (a_meas - ba) + gravity;
      const Vec3 ba_dot = f_a ? forward(*f_a, ba, a_meas, a_dot, ws_a) : Vec3::Zero();
      p += h * v;
      v += h * v_dot;
      xi += h * xi_dot;
      bg += h * bg_dot;
      ba += h * ba_dot;
    } else {
      Vec3 kxi[4], kbg[4], kv[4], kp[4], kba[4];
      const double off[4] = {0.0, 0.5, 0.5, 1.0};
      for (int s = 0; s < 4; ++s) {
        Vec3 xs = xi, bgs = bg, vs = v, bas = ba;
        if (s > 0) {
          const double hs = off[s] * h;
          xs += hs * kxi[s - 1];
          bgs += hs * kbg[s - 1];
          vs += hs * kv[s - 1];
          bas += hs * kba[s - 1];
        }
        const double ts = t + off[s] * h;
        gyro_spline.eval3(ts, w_meas, w_dot);
        accel_spline.eval3(ts, a_meas, a_dot);
        const Rotation Rs = anchor * so3::exp(xs);
        kxi[s] = so3::right_jacobian_inv(xs) * (w_meas - bgs);
        kbg[s] = f_g ? forward(*f_g, bgs, w_meas, w_dot, ws_g) : Vec3::Zero();
        kv[s] = Rs * (a_meas - bas) + gravity;
        kp[s] = vs;
        kba[s] = f_a ? forward(*f_a, bas, a_meas, a_dot, ws_a) : Vec3::Zero();
      }
      xi += (h / 6.0) * (kxi[0] + 2.0 * kxi[1] + 2.0 * kxi[2] + kxi[3]);
      bg += (h / 6.0) * (kbg[0] + 2.0 * kbg[1] + 2.0 * kbg[2] + kbg[3]);
      v += (h / 6.0) * (kv[0] + 2.0 * kv[1] + 2.0 * kv[2] + kv[3]);
      p += (h / 6.0) * (kp[0] + 2.0 * kp[1] + 2.0 * kp[2] + kp[3]);
      ba += (h / 6.0) * (kba[0] + 2.0 * kba[1] + 2.0 * kba[2] + kba[3]);
    }
    if (!xi.allFinite() || !bg.allFinite() || !v.allFinite() || !p.allFinite() ||
        !ba.allFinite()) {
      throw NonFinite("coupled state became non-finite at t=" + std::to_string(t));
    }
    check_xi(xi);

    const Rotation R = out.anchors.back() * so3::exp(xi);
    out.rot.push_back(R);
    out.xi.push_back(xi);
    out.b_g.push_back(bg);
    out.v.push_back(v);
    out.p.push_back(p);
    out.b_a.push_back(ba);
    out.anchor_index.push_back(static_cast<int>(out.anchors.size()) - 1);
    if (xi.norm() > thr) {
      out.anchors.push_back(R);
      xi.setZero();
      ++out.chart_switches;
    }
  }
  return out;
}

}  // namespace biasdyn::ode

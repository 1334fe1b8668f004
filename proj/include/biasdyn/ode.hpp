#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "biasdyn/net.hpp"
#include "biasdyn/spline.hpp"
#include "biasdyn/types.hpp"

namespace biasdyn::ode {

enum class Method { Euler, Rk4 };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

/// Integration sample times. Strictly increasing; dt is the nominal step.
struct TimeGrid {
  std::vector<double> times;

  explicit TimeGrid(std::vector<double> t);
  static TimeGrid regular(double t0, double dt, int steps);

  int steps() const { return static_cast<int>(times.size()) - 1; }
  double dt_nominal() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
};

/// Exponential-chart state: the embedded rotation is anchor * Exp(xi).
struct ChartState {
  Rotation anchor;
  Vec3 xi = Vec3::Zero();

  Rotation embed() const { return anchor * exp_of_xi(); }
  Rotation exp_of_xi() const;
};

/// Joint state of the coupled bias + pose system.
struct CoupledState {
  ChartState chart;
  Vec3 b_g = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Euclidean integrator

using EuclideanField = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

/// Fixed-step integration of x' = field(t, x) over the grid. path[0] = x0,
/// one entry per grid time. Throws NonFinite when the state leaves R^n.
std::vector<Eigen::VectorXd> integrate_euclidean(const EuclideanField& field,
                                                 const Eigen::VectorXd& x0, const TimeGrid& grid,
                                                 Method method);

// ---------------------------------------------------------------------------
// SO(3) integrator (chart-switching)

struct So3Path {
  std::vector<Rotation> rot;  // one per grid time
  int chart_switches = 0;
};

/// Integrates R' = R hat(omega(t)) by solving xi' = J_r^{-1}(xi) omega in the
/// exponential chart and re-anchoring whenever ||xi|| exceeds the switch
/// threshold (default pi). Throws NearSingular if ||xi|| still reaches the
/// 2*pi margin, which signals the threshold must be lowered.
So3Path integrate_so3(const std::function<Vec3(double)>& omega, const Rotation& R0,
                      const TimeGrid& grid, Method method, double chart_switch_threshold = -1.0);

// ---------------------------------------------------------------------------
// Coupled bias + pose systems

/// Per-step record of everything the reverse sweep needs to replay one
/// forward Euler step of the gyro stage.
struct GyroStep {
  double t = 0, h = 0;
  Vec3 xi, bias;       // state at the interval start
  Vec3 meas, meas_dot; // gyro spline at t
};

struct GyroPath {
  std::vector<Rotation> rot;
  std::vector<Vec3> xi;
  std::vector<Vec3> bias;
  std::vector<int> anchor_index;  // chart anchor per grid time
  std::vector<Rotation> anchors;
  std::vector<GyroStep> tape;  // filled only when record_tape (Euler)
  int chart_switches = 0;
};

/// Integrates the gyro-stage system
///   xi' = J_r^{-1}(xi) (meas(t) - b),  b' = f_g(b, meas(t), meas'(t))
/// with chart switching. f_g == nullptr means a zero bias field. Tape
/// recording is only supported for the Euler method (the training path).
GyroPath integrate_gyro_stage(const MlpParams* f_g, const HermiteSpline& gyro_spline,
                              const Rotation& R0, const Vec3& b0, const TimeGrid& grid,
                              Method method, bool record_tape = false,
                              double chart_switch_threshold = -1.0);

struct FullStep {
  double t = 0, h = 0;
  Vec3 xi, b_g, v, p, b_a;
  Vec3 gyro, gyro_dot, accel, accel_dot;
  int anchor = 0;
};

struct FullPath {
  std::vector<Rotation> rot;
  std::vector<Vec3> xi, b_g, v, p, b_a;
  std::vector<int> anchor_index;
  std::vector<Rotation> anchors;
  std::vector<FullStep> tape;
  int chart_switches = 0;
};

/// Extends the gyro stage with the translational states:
///   v' = R (accel(t) - b_a) + g,  p' = v,  b_a' = f_a(b_a, accel(t), accel'(t)).
FullPath integrate_full(const MlpParams* f_g, const MlpParams* f_a,
                        const HermiteSpline& gyro_spline, const HermiteSpline& accel_spline,
                        const CoupledState& init, const Vec3& gravity, const TimeGrid& grid,
                        Method method, bool record_tape = false,
                        double chart_switch_threshold = -1.0);

}  // namespace biasdyn::ode

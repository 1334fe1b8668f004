#include "biasdyn/so3.hpp"

#include <cmath>

namespace biasdyn::so3 {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Coefficient c(theta) in J_r^{-1} = I + hat/2 + c * hat^2 and its derivative.
// The closed form 1/t^2 - (1+cos)/(2 t sin) cancels badly for small t, so both
// switch to series below 1e-2 (well above the accuracy crossover).
double jrinv_coeff(double t) {
  const double t2 = t * t;
  if (t < 1e-2) return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  // sin/(2t(1-cos)) is the stable rewrite of (1+cos)/(2t sin) on (0, 2pi).
  return 1.0 / t2 - std::sin(t) / (2.0 * t * (1.0 - std::cos(t)));
}

// c'(theta)/theta, finite at zero.
double jrinv_coeff_prime_over_theta(double t) {
  const double t2 = t * t;
  if (t < 1e-2) return 1.0 / 360.0 + t2 / 7560.0;
  const double s = std::sin(t), c = std::cos(t);
  const double omc = 1.0 - c;
  const double gprime =
      (t * c * omc - s * omc - t * s * s) / (2.0 * t2 * omc * omc);
  return (-2.0 / (t2 * t) - gprime) / t;
}

Vec3 antisym_vee(const Mat3& M) {
  return Vec3(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
}

}  // namespace

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& M) {
  const double sym = (M + M.transpose()).norm();
  if (!(sym <= 1e-9)) {
    throw NotSkew("matrix is not skew-symmetric (residual " + std::to_string(sym) + ")");
  }
  return 0.5 * antisym_vee(M);
}

Rotation exp(const Vec3& v) {
  const double t2 = v.squaredNorm();
  const double t = std::sqrt(t2);
  double a, b;  // R = I + a*hat(v) + b*hat(v)^2
  if (t < kSmallAngle) {
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(t) / t;
    b = (1.0 - std::cos(t)) / t2;
  }
  const Mat3 W = hat(v);
  return Rotation::trusted(Mat3(Mat3::Identity() + a * W + b * W * W));
}

Vec3 log(const Rotation& R) {
  const Mat3& m = R.matrix();
  double cos_t = 0.5 * (m.trace() - 1.0);
  cos_t = std::clamp(cos_t, -1.0, 1.0);
  const double t = std::acos(cos_t);
  const Vec3 w = antisym_vee(m);  // = 2 sin(t) * axis

  if (t < kSmallAngle) {
    return 0.5 * (1.0 + t * t / 6.0) * w;
  }
  if (t > kPi - 1e-3) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part, picking the largest diagonal for conditioning.
    const Mat3 S = 0.5 * (m + m.transpose());
    int i = 0;
    S.diagonal().maxCoeff(&i);
    const double omc = 1.0 - cos_t;
    Vec3 axis;
    axis[i] = std::sqrt(std::max(0.0, (S(i, i) - cos_t) / omc));
    const int j = (i + 1) % 3, k = (i + 2) % 3;
    axis[j] = S(i, j) / (omc * axis[i]);
    axis[k] = S(i, k) / (omc * axis[i]);
    axis.normalize();
    if (w.dot(axis) < 0.0) axis = -axis;
    return t * axis;
  }
  return (0.5 * t / std::sin(t)) * w;
}

Mat3 right_jacobian(const Vec3& v) {
  const double t2 = v.squaredNorm();
  const double t = std::sqrt(t2);
  double b, c;  // J_r = I - b*hat(v) + c*hat(v)^2
  if (t < kSmallAngle) {
    b = 0.5 - t2 / 24.0;
    c = 1.0 / 6.0 - t2 / 120.0;
  } else {
    b = (1.0 - std::cos(t)) / t2;
    c = (t - std::sin(t)) / (t2 * t);
  }
  const Mat3 W = hat(v);
  return Mat3::Identity() - b * W + c * W * W;
}

Mat3 right_jacobian_inv(const Vec3& v) {
  const double t = v.norm();
  if (t >= 2.0 * kPi - kJacobianSingularMargin) {
    throw NearSingular("right_jacobian_inv near the 2*pi singularity (||v|| = " +
                       std::to_string(t) + ")");
  }
  const Mat3 W = hat(v);
  return Mat3::Identity() + 0.5 * W + jrinv_coeff(t) * W * W;
}

Mat3 jr_inv_action_jacobian(const Vec3& xi, const Vec3& w) {
  const double t = xi.norm();
  if (t >= 2.0 * kPi - kJacobianSingularMargin) {
    throw NearSingular("jr_inv_action_jacobian near the 2*pi singularity");
  }
  const double c = jrinv_coeff(t);
  const double cp_over_t = jrinv_coeff_prime_over_theta(t);
  const Vec3 xxw = xi.cross(xi.cross(w));
  Mat3 D = -0.5 * hat(w);
  D.noalias() += cp_over_t * xxw * xi.transpose();
  D.noalias() += c * (xi.dot(w) * Mat3::Identity() + xi * w.transpose() -
                      2.0 * w * xi.transpose());
  return D;
}

double geodesic_angle(const Rotation& a, const Rotation& b) {
  return log(a.inverse() * b).norm();
}

}  // namespace biasdyn::so3

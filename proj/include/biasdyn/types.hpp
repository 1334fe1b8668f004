#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "biasdyn/errors.hpp"

namespace biasdyn {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// A 3x3 matrix constrained to SO(3). Checked construction enforces
/// ||R^T R - I||_F <= 1e-9 and det(R) within 1e-9 of 1; the algebraic
/// operations (products, transpose, exp) preserve the constraint and skip
/// the check.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Validates orthonormality, throws NotRotation otherwise.
  static Rotation from_matrix(const Mat3& m);

  /// Normalizes the quaternion first (dataset quaternions are stored with
  /// finite precision), then converts. Order of arguments is w,x,y,z.
  static Rotation from_quaternion(double w, double x, double y, double z);

  /// Caller guarantees m is already orthonormal.
  static Rotation trusted(const Mat3& m) { return Rotation(m, Unchecked{}); }

  const Mat3& matrix() const { return m_; }

  Rotation inverse() const { return Rotation(m_.transpose(), Unchecked{}); }

  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, Unchecked{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Frobenius norm of R^T R - I, for diagnostics and tests.
  double orthogonality_residual() const {
    return (m_.transpose() * m_ - Mat3::Identity()).norm();
  }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(m_); }

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}
  Mat3 m_;
};

inline Rotation Rotation::from_matrix(const Mat3& m) {
  const double ortho = (m.transpose() * m - Mat3::Identity()).norm();
  const double det = m.determinant();
  if (!(ortho <= 1e-9) || !(std::abs(det - 1.0) <= 1e-9)) {
    throw NotRotation("matrix is not a rotation (orthogonality residual " +
                      std::to_string(ortho) + ", det " + std::to_string(det) + ")");
  }
  return Rotation(m, Unchecked{});
}

inline Rotation Rotation::from_quaternion(double w, double x, double y, double z) {
  Eigen::Quaterniond q(w, x, y, z);
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NotRotation("quaternion has invalid norm");
  q.normalize();
  return Rotation(q.toRotationMatrix(), Unchecked{});
}

/// Body pose per the strapdown kinematics: orientation, world-frame
/// velocity and position.
struct PoseState {
  Rotation R;
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();
};

/// Gyroscope and accelerometer bias, body frame.
struct BiasState {
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2
};

}  // namespace biasdyn

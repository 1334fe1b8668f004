#pragma once

#include "biasdyn/types.hpp"

namespace biasdyn::so3 {

/// Angle below which exp/log/Jacobian coefficients switch to their Taylor
/// expansions.
inline constexpr double kSmallAngle = 1e-4;

/// right_jacobian_inv is singular at 2*pi; reject arguments this close.
inline constexpr double kJacobianSingularMargin = 1e-3;

/// Skew-symmetric matrix of v, i.e. hat(v) * w == v x w.
Mat3 hat(const Vec3& v);

/// Inverse of hat. Throws NotSkew when the symmetric part of M exceeds 1e-9.
Vec3 vee(const Mat3& M);

/// Rodrigues exponential map so(3) -> SO(3).
Rotation exp(const Vec3& v);

/// Principal logarithm, ||result|| in [0, pi]. The trace(R) ~ -1 branch is
/// resolved by largest-diagonal axis extraction.
Vec3 log(const Rotation& R);

/// Right Jacobian J_r of the exponential map:
///   Exp(v + d) ~= Exp(v) * Exp(J_r(v) * d).
Mat3 right_jacobian(const Vec3& v);

/// Inverse of the right Jacobian. Throws NearSingular for ||v|| >= 2*pi - 1e-3.
Mat3 right_jacobian_inv(const Vec3& v);

/// Derivative of the map xi -> J_r^{-1}(xi) * w with respect to xi, holding w
/// fixed. Used by the reverse sweep through the chart ODE.
Mat3 jr_inv_action_jacobian(const Vec3& xi, const Vec3& w);

/// ||Log(a^T b)||, the geodesic angle between two rotations (radians).
double geodesic_angle(const Rotation& a, const Rotation& b);

}  // namespace biasdyn::so3

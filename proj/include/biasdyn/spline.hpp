#pragma once

#include <Eigen/Core>
#include <atomic>
#include <vector>

#include "biasdyn/errors.hpp"

namespace biasdyn {

/// Causal cubic Hermite interpolant of a sampled vector signal. Knot
/// derivatives follow the backward-difference rule d_i = (u_i - u_{i-1}) /
/// (t_i - t_{i-1}); the spline through knot i therefore never depends on
/// samples after i, so it can be extended online as data arrives.
class HermiteSpline {
 public:
  /// times strictly increasing, one column of values per knot.
  /// d_0 is set to d_1 (the backward rule is undefined at the first knot).
  HermiteSpline(std::vector<double> times, Eigen::MatrixXd values);

  // The hint cache is not part of the value; copies start cold.
  HermiteSpline(const HermiteSpline& o)
      : times_(o.times_), values_(o.values_), derivs_(o.derivs_) {}
  HermiteSpline(HermiteSpline&& o) noexcept
      : times_(std::move(o.times_)), values_(std::move(o.values_)),
        derivs_(std::move(o.derivs_)) {}
  HermiteSpline& operator=(const HermiteSpline& o) {
    times_ = o.times_;
    values_ = o.values_;
    derivs_ = o.derivs_;
    hint_.store(0, std::memory_order_relaxed);
    return *this;
  }
  HermiteSpline& operator=(HermiteSpline&& o) noexcept {
    times_ = std::move(o.times_);
    values_ = std::move(o.values_);
    derivs_ = std::move(o.derivs_);
    hint_.store(0, std::memory_order_relaxed);
    return *this;
  }

  static HermiteSpline from_samples(const std::vector<double>& times,
                                    const std::vector<Eigen::Vector3d>& samples);

  int dim() const { return static_cast<int>(values_.rows()); }
  int knots() const { return static_cast<int>(times_.size()); }
  double t_front() const { return times_.front(); }
  double t_back() const { return times_.back(); }
  const std::vector<double>& times() const { return times_; }
  const Eigen::MatrixXd& knot_values() const { return values_; }
  const Eigen::MatrixXd& knot_derivatives() const { return derivs_; }

  /// Value and time-derivative at t. Throws OutOfRange outside [t_0, t_M].
  void eval(double t, Eigen::Ref<Eigen::VectorXd> value,
            Eigen::Ref<Eigen::VectorXd> derivative) const;

  std::pair<Eigen::VectorXd, Eigen::VectorXd> eval(double t) const;

  /// Fixed-size variant for the 3-dim measurement streams.
  void eval3(double t, Eigen::Vector3d& value, Eigen::Vector3d& derivative) const;

 private:
  // Hermite basis weights of one query: value = wv0 u_i + wd0 d_i + wv1
  // u_{i+1} + wd1 d_{i+1}, same layout for the derivative.
  struct Basis {
    int i;
    double wv0, wd0, wv1, wd1;
    double dv0, dd0, dv1, dd1;
  };
  Basis basis(double t) const;
  int segment_index(double t) const;

  std::vector<double> times_;
  Eigen::MatrixXd values_;  // dim x knots
  Eigen::MatrixXd derivs_;  // dim x knots
  // Last segment looked up; sequential ODE queries then resolve in O(1).
  // Purely an optimization: a stale value is re-checked and discarded.
  mutable std::atomic<int> hint_{0};
};

}  // namespace biasdyn

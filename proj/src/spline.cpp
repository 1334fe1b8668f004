#include "biasdyn/spline.hpp"

#include <algorithm>
#include <cmath>

namespace biasdyn {

HermiteSpline::HermiteSpline(std::vector<double> times, Eigen::MatrixXd values)
    : times_(std::move(times)), values_(std::move(values)) {
  const auto n = static_cast<int>(times_.size());
  if (n < 2) throw BadTimeline("spline needs at least 2 knots");
  if (values_.cols() != n) {
    throw ShapeMismatch("spline has " + std::to_string(times_.size()) + " times but " +
                        std::to_string(values_.cols()) + " value columns");
  }
  for (int i = 1; i < n; ++i) {
    if (!(times_[i] > times_[i - 1])) throw BadTimeline("spline times not strictly increasing");
  }
  if (!values_.allFinite()) throw NonFinite("spline values not finite");

  derivs_.resize(values_.rows(), n);
  for (int i = 1; i < n; ++i) {
    derivs_.col(i) = (values_.col(i) - values_.col(i - 1)) / (times_[i] - times_[i - 1]);
  }
  derivs_.col(0) = derivs_.col(1);
}

HermiteSpline HermiteSpline::from_samples(const std::vector<double>& times,
                                          const std::vector<Eigen::Vector3d>& samples) {
  if (times.size() != samples.size()) {
    throw ShapeMismatch("sample count does not match time count");
  }
  Eigen::MatrixXd v(3, static_cast<Eigen::Index>(samples.size()));
  for (Eigen::Index i = 0; i < v.cols(); ++i) v.col(i) = samples[static_cast<size_t>(i)];
  return HermiteSpline(times, std::move(v));
}

int HermiteSpline::segment_index(double t) const {
  const int last = knots() - 2;
  int i = hint_.load(std::memory_order_relaxed);
  if (i < 0 || i > last || t < times_[i] || t > times_[i + 1]) {
    // upper_bound returns the first knot strictly after t
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    i = std::clamp(static_cast<int>(it - times_.begin()) - 1, 0, last);
    hint_.store(i, std::memory_order_relaxed);
  }
  return i;
}

HermiteSpline::Basis HermiteSpline::basis(double t) const {
  if (t < times_.front() || t > times_.back()) {
    throw OutOfRange("spline query t=" + std::to_string(t) + " outside [" +
                     std::to_string(times_.front()) + ", " + std::to_string(times_.back()) + "]");
  }
  const int i = segment_index(t);
  const double h = times_[i + 1] - times_[i];
  const double s = (t - times_[i]) / h;
  const double s2 = s * s, s3 = s2 * s;

  Basis b;
  b.i = i;
  b.wv0 = 2.0 * s3 - 3.0 * s2 + 1.0;
  b.wd0 = (s3 - 2.0 * s2 + s) * h;
  b.wv1 = -2.0 * s3 + 3.0 * s2;
  b.wd1 = (s3 - s2) * h;
  b.dv0 = (6.0 * s2 - 6.0 * s) / h;
  b.dd0 = 3.0 * s2 - 4.0 * s + 1.0;
  b.dv1 = (-6.0 * s2 + 6.0 * s) / h;
  b.dd1 = 3.0 * s2 - 2.0 * s;
  return b;
}

void HermiteSpline::eval(double t, Eigen::Ref<Eigen::VectorXd> value,
                         Eigen::Ref<Eigen::VectorXd> derivative) const {
  const Basis b = basis(t);
  value = b.wv0 * values_.col(b.i) + b.wd0 * derivs_.col(b.i) + b.wv1 * values_.col(b.i + 1) +
          b.wd1 * derivs_.col(b.i + 1);
  derivative = b.dv0 * values_.col(b.i) + b.dd0 * derivs_.col(b.i) +
               b.dv1 * values_.col(b.i + 1) + b.dd1 * derivs_.col(b.i + 1);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> HermiteSpline::eval(double t) const {
  Eigen::VectorXd v(dim()), d(dim());
  eval(t, v, d);
  return {std::move(v), std::move(d)};
}

void HermiteSpline::eval3(double t, Eigen::Vector3d& value, Eigen::Vector3d& derivative) const {
  if (dim() != 3) throw ShapeMismatch("eval3 requires a 3-dim spline");
  const Basis b = basis(t);
  value = b.wv0 * values_.col(b.i).head<3>() + b.wd0 * derivs_.col(b.i).head<3>() +
          b.wv1 * values_.col(b.i + 1).head<3>() + b.wd1 * derivs_.col(b.i + 1).head<3>();
  derivative = b.dv0 * values_.col(b.i).head<3>() + b.dd0 * derivs_.col(b.i).head<3>() +
               b.dv1 * values_.col(b.i + 1).head<3>() + b.dd1 * derivs_.col(b.i + 1).head<3>();
}

}  // namespace biasdyn

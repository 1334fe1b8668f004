#include "biasdyn/metrics.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "biasdyn/errors.hpp"
#include "biasdyn/so3.hpp"

namespace biasdyn::metrics {

namespace {
constexpr double kRad2Deg = 57.29577951308232087680;

void check_pair(const Trajectory& est, const Trajectory& gt) {
  est.validate();
  gt.validate();
  if (est.size() != gt.size()) {
    throw LengthMismatch("trajectories differ in length: " + std::to_string(est.size()) + " vs " +
                         std::to_string(gt.size()));
  }
}
}  // namespace

void Trajectory::validate() const {
  if (t.size() != R.size() || t.size() != p.size() || (!v.empty() && v.size() != t.size())) {
    throw LengthMismatch("trajectory arrays differ in length");
  }
  if (t.empty()) throw TooShort("empty trajectory");
  for (size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) throw BadTimeline("trajectory time not strictly increasing");
  }
}

namespace {
Trajectory apply_rigid(const Trajectory& est, const Rotation& R_align, const Vec3& p_align) {
  Trajectory out = est;
  for (size_t k = 0; k < out.p.size(); ++k) {
    out.p[k] = R_align * est.p[k] + p_align;
    out.R[k] = R_align * est.R[k];
  }
  for (size_t k = 0; k < out.v.size(); ++k) out.v[k] = R_align * est.v[k];
  return out;
}
}  // namespace

Trajectory align_first_pose(const Trajectory& est, const Trajectory& gt) {
  check_pair(est, gt);
  const Rotation R_align = gt.R[0] * est.R[0].inverse();
  const Vec3 p_align = gt.p[0] - R_align * est.p[0];
  return apply_rigid(est, R_align, p_align);
}

Trajectory align_least_squares(const Trajectory& est, const Trajectory& gt) {
  check_pair(est, gt);
  const auto n = est.p.size();
  Vec3 ce = Vec3::Zero(), cg = Vec3::Zero();
  for (size_t k = 0; k < n; ++k) {
    ce += est.p[k];
    cg += gt.p[k];
  }
  ce /= static_cast<double>(n);
  cg /= static_cast<double>(n);
  Mat3 H = Mat3::Zero();
  for (size_t k = 0; k < n; ++k) H += (gt.p[k] - cg) * (est.p[k] - ce).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Rotation R_align = Rotation::trusted(svd.matrixU() * D * svd.matrixV().transpose());
  const Vec3 p_align = cg - R_align * ce;
  return apply_rigid(est, R_align, p_align);
}

double aoe_deg(const Trajectory& est, const Trajectory& gt) {
  check_pair(est, gt);
  double acc = 0.0;
  for (size_t k = 0; k < est.R.size(); ++k) {
    acc += so3::log(est.R[k].inverse() * gt.R[k]).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(est.R.size())) * kRad2Deg;
}

double ape_m(const Trajectory& est, const Trajectory& gt) {
  check_pair(est, gt);
  double acc = 0.0;
  for (size_t k = 0; k < est.p.size(); ++k) acc += (gt.p[k] - est.p[k]).squaredNorm();
  return std::sqrt(acc / static_cast<double>(est.p.size()));
}

double ape_velocity(const Trajectory& est, const Trajectory& gt) {
  check_pair(est, gt);
  if (est.v.empty() || gt.v.empty()) throw ShapeMismatch("velocity APE needs velocities");
  double acc = 0.0;
  for (size_t k = 0; k < est.v.size(); ++k) acc += (gt.v[k] - est.v[k]).squaredNorm();
  return std::sqrt(acc / static_cast<double>(est.v.size()));
}

RelativeError relative_errors(const Trajectory& est, const Trajectory& gt, double distance_m,
                              int stride, bool parallel) {
  check_pair(est, gt);
  if (!(distance_m > 0.0)) throw BadConfig("relative error distance must be > 0");
  if (stride < 1) throw BadConfig("pair stride must be >= 1");
  const auto n = static_cast<size_t>(gt.size());

  // Cumulative chord arc length on the ground truth.
  std::vector<double> arc(n, 0.0);
  for (size_t i = 1; i < n; ++i) arc[i] = arc[i - 1] + (gt.p[i] - gt.p[i - 1]).norm();

  std::vector<std::pair<int, int>> pairs;
  for (size_t s0 = 0; s0 < n; s0 += static_cast<size_t>(stride)) {
    const auto it = std::lower_bound(arc.begin() + static_cast<long>(s0), arc.end(),
                                     arc[s0] + distance_m);
    if (it == arc.end()) break;
    pairs.emplace_back(static_cast<int>(s0), static_cast<int>(it - arc.begin()));
  }
  if (pairs.empty()) {
    throw TooShort("ground truth shorter than " + std::to_string(distance_m) + " m");
  }

  // Each pair lands in its own slot; the reduction below runs in index
  // order, so results do not depend on the schedule.
  std::vector<double> rot_err(pairs.size()), pos_err(pairs.size());
#pragma omp parallel for schedule(static) if (parallel)
  for (long i = 0; i < static_cast<long>(pairs.size()); ++i) {
    const auto [s0, s1] = pairs[static_cast<size_t>(i)];
    const auto a0 = static_cast<size_t>(s0), a1 = static_cast<size_t>(s1);
    // SE(3) increments Delta X = X_{s0}^{-1} X_{s1} on both trajectories.
    const Rotation dR_gt = gt.R[a0].inverse() * gt.R[a1];
    const Vec3 dp_gt = gt.R[a0].inverse() * (gt.p[a1] - gt.p[a0]);
    const Rotation dR_est = est.R[a0].inverse() * est.R[a1];
    const Vec3 dp_est = est.R[a0].inverse() * (est.p[a1] - est.p[a0]);
    // X_e = Delta X^{-1} Delta X_hat
    const Rotation R_e = dR_gt.inverse() * dR_est;
    const Vec3 p_e = dR_gt.inverse() * (dp_est - dp_gt);
    rot_err[static_cast<size_t>(i)] = so3::log(R_e).norm();
    pos_err[static_cast<size_t>(i)] = p_e.norm();
  }

  RelativeError out;
  out.distance_m = distance_m;
  out.pairs = static_cast<int>(pairs.size());
  double racc = 0.0, pacc = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    racc += rot_err[i];
    pacc += pos_err[i];
  }
  out.roe_deg = racc / static_cast<double>(pairs.size()) * kRad2Deg;  // mean, not RMS
  out.rpe_m = pacc / static_cast<double>(pairs.size());
  return out;
}

MetricReport evaluate(const Trajectory& est_raw, const Trajectory& gt,
                      const std::vector<double>& distances, Alignment alignment, int pair_stride,
                      bool parallel) {
  const Trajectory est = alignment == Alignment::FirstPose ? align_first_pose(est_raw, gt)
                                                           : align_least_squares(est_raw, gt);
  MetricReport r;
  r.alignment = alignment;
  r.aoe_deg = aoe_deg(est, gt);
  r.ape_m = ape_m(est, gt);
  if (!est.v.empty() && !gt.v.empty()) r.ape_vel = ape_velocity(est, gt);
  for (double d : distances) {
    try {
      r.relative.push_back(relative_errors(est, gt, d, pair_stride, parallel));
    } catch (const TooShort&) {
      // Trajectory shorter than this distance; skip the row.
    }
  }
  return r;
}

std::string report_text(const MetricReport& r) {
  char buf[160];
  std::string s;
  snprintf(buf, sizeof(buf), "alignment: %s\n",
           r.alignment == Alignment::FirstPose ? "first_pose" : "least_squares");
  s += buf;
  snprintf(buf, sizeof(buf), "AOE: %.6f deg\nAPE: %.6f m\n", r.aoe_deg, r.ape_m);
  s += buf;
  if (r.ape_vel) {
    snprintf(buf, sizeof(buf), "APE(velocity): %.6f m/s\n", *r.ape_vel);
    s += buf;
  }
  for (const auto& e : r.relative) {
    snprintf(buf, sizeof(buf), "d=%.1f m: ROE %.6f deg, RPE %.6f m (%d pairs)\n", e.distance_m,
             e.roe_deg, e.rpe_m, e.pairs);
    s += buf;
  }
  return s;
}

void write_report_csv(const MetricReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "metric,distance_m,value,pairs\n";
  char buf[128];
  snprintf(buf, sizeof(buf), "aoe_deg,,%.12g,\nape_m,,%.12g,\n", r.aoe_deg, r.ape_m);
  out << buf;
  if (r.ape_vel) {
    snprintf(buf, sizeof(buf), "ape_velocity,,%.12g,\n", *r.ape_vel);
    out << buf;
  }
  for (const auto& e : r.relative) {
    snprintf(buf, sizeof(buf), "roe_deg,%.12g,%.12g,%d\n", e.distance_m, e.roe_deg, e.pairs);
    out << buf;
    snprintf(buf, sizeof(buf), "rpe_m,%.12g,%.12g,%d\n", e.distance_m, e.rpe_m, e.pairs);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_sample_errors_csv(const Trajectory& est, const Trajectory& gt,
                             const std::string& path) {
  check_pair(est, gt);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "t,rot_err_deg,pos_err_m\n";
  char buf[128];
  for (size_t k = 0; k < est.t.size(); ++k) {
    const double rot = so3::log(est.R[k].inverse() * gt.R[k]).norm() * kRad2Deg;
    const double pos = (gt.p[k] - est.p[k]).norm();
    snprintf(buf, sizeof(buf), "%.9f,%.12g,%.12g\n", est.t[k], rot, pos);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace biasdyn::metrics

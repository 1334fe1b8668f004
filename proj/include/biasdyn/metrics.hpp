#pragma once

#include <optional>
#include <string>
#include <vector>

#include "biasdyn/types.hpp"

namespace biasdyn::metrics {

struct Trajectory {
  std::vector<double> t;
  std::vector<Rotation> R;
  std::vector<Vec3> p;
  std::vector<Vec3> v;  // optional, empty when absent

  int size() const { return static_cast<int>(t.size()); }
  void validate() const;
};

enum class Alignment { FirstPose, LeastSquares };

/// Left-multiplies est by the rigid transform taking its first pose onto the
/// ground truth's first pose.
Trajectory align_first_pose(const Trajectory& est, const Trajectory& gt);

/// Position-only rigid least-squares alignment (rotation + translation, no
/// scale), for parity with external tooling.
Trajectory align_least_squares(const Trajectory& est, const Trajectory& gt);

/// RMS absolute orientation error sqrt(mean ||Log(R_est^T R_gt)||^2), degrees.
double aoe_deg(const Trajectory& est, const Trajectory& gt);

/// RMS absolute position error, meters.
double ape_m(const Trajectory& est, const Trajectory& gt);

/// RMS absolute velocity error, m/s. Both trajectories must carry v.
double ape_velocity(const Trajectory& est, const Trajectory& gt);

struct RelativeError {
  double distance_m = 0;
  double roe_deg = 0;  // mean, not RMS
  double rpe_m = 0;
  int pairs = 0;
};

/// Sub-trajectory errors at ground-truth arc length d: for each start s0 the
/// end s1 is the first index with chord arc length >= d; the SE(3) increment
/// mismatch DX^{-1} DX_hat is averaged over all pairs. Throws TooShort when
/// no pair exists.
RelativeError relative_errors(const Trajectory& est, const Trajectory& gt, double distance_m,
                              int stride = 1, bool parallel = true);

struct MetricReport {
  Alignment alignment = Alignment::FirstPose;
  double aoe_deg = 0;
  double ape_m = 0;
  std::optional<double> ape_vel;
  std::vector<RelativeError> relative;
};

MetricReport evaluate(const Trajectory& est_raw, const Trajectory& gt,
                      const std::vector<double>& distances, Alignment alignment,
                      int pair_stride = 1, bool parallel = true);

std::string report_text(const MetricReport& r);
void write_report_csv(const MetricReport& r, const std::string& path);

/// Per-sample error rows (t, orientation error deg, position error m) for
/// external plotting.
void write_sample_errors_csv(const Trajectory& est, const Trajectory& gt, const std::string& path);

}  // namespace biasdyn::metrics

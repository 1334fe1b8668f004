#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biasdyn/rng.hpp"
#include "biasdyn/types.hpp"

namespace biasdyn {

/// Timestamped raw IMU stream, optionally with ground truth synchronized to
/// the same stamps and (synthetic data only) the true bias series.
struct ImuSequence {
  std::vector<double> t;  // seconds relative to epoch_ns
  std::vector<Vec3> gyro, accel;
  std::int64_t epoch_ns = 0;  // absolute stamp of t = 0

  bool has_gt = false;
  std::vector<Rotation> gt_R;
  std::vector<Vec3> gt_v, gt_p;

  bool has_true_bias = false;
  std::vector<Vec3> true_bias_g, true_bias_a;

  int size() const { return static_cast<int>(t.size()); }
};

struct GroundTruthSample {
  double t = 0;
  Rotation R;
  Vec3 v = Vec3::Zero(), p = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Dataset loading (EuRoC-style CSV layout: ns timestamps, '#' headers)

/// IMU CSV columns: timestamp [ns], w_xyz [rad/s], a_xyz [m/s^2].
ImuSequence load_imu_csv(const std::string& path);

/// Ground-truth CSV columns: timestamp [ns], p_xyz [m], q_wxyz, v_xyz [m/s]
/// and optionally the bias estimate columns (ignored). Timestamps are shifted
/// by epoch_ns so both files share a timeline.
std::vector<GroundTruthSample> load_gt_csv(const std::string& path, std::int64_t epoch_ns);

/// Loads a sequence directory: either imu.csv/gt.csv directly inside, or the
/// EuRoC tree (mav0/imu0/data.csv, mav0/state_groundtruth_estimate0/data.csv).
/// Ground truth is synchronized onto the IMU stamps; a true-bias CSV
/// (bias.csv, written by the synthesizer) is picked up when present.
ImuSequence load_euroc(const std::string& dir);

/// Interpolates ground truth onto the IMU stamps (linear in v/p, geodesic in
/// R) and drops IMU samples outside the ground-truth span. Never extrapolates.
ImuSequence synchronize(const ImuSequence& imu, const std::vector<GroundTruthSample>& gt);

// ---------------------------------------------------------------------------
// Synthetic sequences with known bias dynamics

/// Per-axis sinusoid a*sin(2*pi*f*t + phase) + offset.
struct SinusoidSpec {
  Vec3 amplitude = Vec3::Zero();
  Vec3 freq_hz = Vec3::Zero();
  Vec3 phase = Vec3::Zero();
  Vec3 offset = Vec3::Zero();

  Vec3 value(double t) const;
  Vec3 derivative(double t) const;
};

enum class BiasMode { Constant, Sinusoid, Relaxation, RandomWalk };
BiasMode bias_mode_from_string(const std::string& s);

struct BiasSpec {
  BiasMode mode = BiasMode::Constant;
  Vec3 constant = Vec3::Zero();
  // Sinusoid drift added on top of the constant.
  Vec3 amplitude = Vec3::Zero();
  Vec3 freq_hz = Vec3::Zero();
  Vec3 phase = Vec3::Zero();
  // Relaxation b' = -lambda (b - coupling * u_true).
  double lambda = 1.0;
  Mat3 coupling = Mat3::Zero();
  // Random walk increments sigma * sqrt(dt).
  double walk_sigma = 0.0;
};

struct SyntheticConfig {
  double duration_s = 120.0;
  double rate_hz = 200.0;
  SinusoidSpec omega;        // body angular velocity [rad/s]
  SinusoidSpec accel_world;  // world-frame acceleration [m/s^2]
  BiasSpec bias_g, bias_a;
  double sigma_g = 0.0;  // measurement noise, per sample
  double sigma_a = 0.0;
  Mat3 misalign_g = Mat3::Identity();
  Mat3 misalign_a = Mat3::Identity();
  Vec3 gravity = Vec3(0.0, 0.0, -9.80665);
  Rotation R0;
  Vec3 v0 = Vec3::Zero(), p0 = Vec3::Zero();
  std::uint64_t seed = 0;
};

/// Generates measurements w = A_g omega + b_g(t) + n_g (same for accel) with
/// ground truth integrated by RK4 at 10x the sample rate. The true bias
/// series is kept for evaluation only.
ImuSequence generate_synthetic(const SyntheticConfig& cfg);

// ---------------------------------------------------------------------------
// Writers

/// EuRoC-style IMU CSV; values at 17 significant digits so a write/load round
/// trip is bit-identical.
void write_imu_csv(const ImuSequence& seq, const std::string& path);

/// Ground-truth CSV in the 17-column layout (bias columns zeroed).
void write_gt_csv(const ImuSequence& seq, const std::string& path);

/// True-bias CSV: timestamp [ns], b_g xyz, b_a xyz.
void write_bias_csv(const ImuSequence& seq, const std::string& path);

/// "timestamp tx ty tz qx qy qz qw" per line, seconds, quaternion w-last.
void write_tum_trajectory(const std::vector<double>& t, const std::vector<Rotation>& R,
                          const std::vector<Vec3>& p, const std::string& path);

struct TumPose {
  double t;
  Rotation R;
  Vec3 p;
};
std::vector<TumPose> load_tum_trajectory(const std::string& path);

/// Writes imu.csv, gt.csv and bias.csv into dir (created if needed).
void write_sequence_dir(const ImuSequence& seq, const std::string& dir);

/// Symmetric moving average over ground-truth velocities (window samples on
/// each side). window == 0 is a no-op. Used to tame noisy mocap velocities
/// before differencing them into initial-bias estimates.
std::vector<Vec3> smooth_moving_average(const std::vector<Vec3>& v, int window);

}  // namespace biasdyn

#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "biasdyn/dataio.hpp"
#include "biasdyn/net.hpp"
#include "biasdyn/ode.hpp"
#include "biasdyn/spline.hpp"
#include "biasdyn/types.hpp"

namespace biasdyn {

/// Per-sample bias estimates recovered from ground-truth poses:
///   b_g[k] = meas_g[k] - Log(R_k^T R_{k+1}) / dt
///   b_a[k] = meas_a[k] - R_k^T ((v_{k+1} - v_k) / dt - g)
/// The last sample copies the previous value. These seed the short training
/// segments; their noise acts as data augmentation rather than supervision.
std::vector<BiasState> estimate_initial_bias(const std::vector<double>& t,
                                             const std::vector<Rotation>& R,
                                             const std::vector<Vec3>& v,
                                             const std::vector<Vec3>& gyro,
                                             const std::vector<Vec3>& accel, const Vec3& gravity);

/// A training sequence: synchronized measurements, ground truth, the
/// estimated initial-bias series, and measurement splines shared by all
/// segments drawn from it.
struct TrainSequence {
  std::vector<double> t;
  std::vector<Vec3> gyro, accel;
  std::vector<Rotation> gt_R;
  std::vector<Vec3> gt_v, gt_p;
  std::vector<Vec3> bias_g_init, bias_a_init;
  std::shared_ptr<const HermiteSpline> gyro_spline, accel_spline;

  static TrainSequence build(const ImuSequence& seq, const Vec3& gravity,
                             int smooth_v_window = 0);
  int size() const { return static_cast<int>(t.size()); }
};

/// A short integration window: `length` solver steps starting at sample
/// `start`. Ground truth and measurements are views into the parent
/// sequence; the initial bias is materialized so augmentation noise can be
/// added per draw.
struct Segment {
  const TrainSequence* seq = nullptr;
  int start = 0;
  int length = 0;
  BiasState init_bias;

  PoseState init_pose() const {
    return {seq->gt_R[static_cast<size_t>(start)], seq->gt_v[static_cast<size_t>(start)],
            seq->gt_p[static_cast<size_t>(start)]};
  }
};

/// Stride-spaced segment starts over [region_begin, region_end), shuffled by
/// seed (pass the same seed to reproduce the order). Throws TooShort when no
/// full window fits.
std::vector<Segment> sample_segments(const TrainSequence& seq, int length, int stride,
                                     std::uint64_t seed, int region_begin = 0,
                                     int region_end = -1);

// ---------------------------------------------------------------------------
// Losses

/// (1/N) sum ||Log(est_k gt_k^T)||^2
double loss_rotation(const std::vector<Rotation>& est, const std::vector<Rotation>& gt);

/// (1/N) sum (||p_est - p_gt||^2 + ||v_est - v_gt||^2)
double loss_vel_pos(const std::vector<Vec3>& est_v, const std::vector<Vec3>& est_p,
                    const std::vector<Vec3>& gt_v, const std::vector<Vec3>& gt_p);

// ---------------------------------------------------------------------------
// Segment loss/gradient (reverse sweep through the unrolled Euler solver)

struct SolverConfig {
  ode::Method method = ode::Method::Euler;
  double chart_switch_threshold = -1.0;  // -1 -> pi
};

struct GyroStageEval {
  double loss = 0.0;
  MlpGrad grad;
};

/// Rotation loss of one segment and its gradient w.r.t. the gyro field
/// parameters. Within a chart the anchor is held constant by the backward
/// sweep; segments re-anchor at their start, so switches inside a window are
/// rare and only perturb the gradient, never the loss.
GyroStageEval segment_loss_and_grad_gyro(const MlpParams& params_g, const Segment& seg,
                                         const SolverConfig& cfg);
double segment_loss_gyro(const MlpParams& params_g, const Segment& seg, const SolverConfig& cfg);

struct AccelStageEval {
  double loss = 0.0;
  MlpGrad grad;  // gradient w.r.t. the accelerometer field only
};

/// Velocity/position loss of one segment and its gradient w.r.t. the accel
/// field parameters; the gyro field is frozen.
AccelStageEval segment_loss_and_grad_accel(const MlpParams& params_a, const MlpParams& params_g,
                                           const Segment& seg, const Vec3& gravity,
                                           const SolverConfig& cfg);
double segment_loss_accel(const MlpParams& params_a, const MlpParams& params_g, const Segment& seg,
                          const Vec3& gravity, const SolverConfig& cfg);

/// Gradients for the constant-parameter baseline (omega_hat = A w + b with
/// b' == 0 inside the same segment pipeline).
struct LinearGrad {
  Mat3 dA = Mat3::Zero();
  Vec3 db = Vec3::Zero();
};
std::pair<double, LinearGrad> segment_loss_and_grad_linear_gyro(const LinearCalib& calib,
                                                                const Segment& seg,
                                                                const SolverConfig& cfg);
std::pair<double, LinearGrad> segment_loss_and_grad_linear_accel(const LinearCalib& calib_a,
                                                                 const LinearCalib& calib_g,
                                                                 const Segment& seg,
                                                                 const Vec3& gravity,
                                                                 const SolverConfig& cfg);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int segment_length = 16;
  int epochs = 1800;
  double learning_rate = 0.005;
  int lr_step_epochs = 600;  // StepLR: multiply by lr_decay every this many epochs
  double lr_decay = 0.5;
  int batch_size = 64;
  int stride = 4;
  std::uint64_t seed = 0;
  Vec3 gravity = Vec3(0.0, 0.0, -9.80665);
  double weight_rotation = 1.0;
  double weight_vel_pos = 1.0;
  double train_fraction = 0.8;  // leading fraction of each sequence
  SolverConfig solver;
  bool parallel = true;
  // Optional augmentation noise on segment initial biases (rad/s, m/s^2).
  double init_bias_noise_g = 0.0;
  double init_bias_noise_a = 0.0;
};

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Adam over a flat parameter vector.
class Adam {
 public:
  explicit Adam(Eigen::Index n, AdamConfig cfg = {});
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr);

 private:
  AdamConfig cfg_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct GyroTrainResult {
  MlpParams params;  // best-validation parameters
  std::vector<EpochStats> history;
  double wall_seconds = 0.0;
};
GyroTrainResult train_gyro_stage(const MlpParams& init, const std::vector<TrainSequence>& data,
                                 const TrainConfig& cfg);

struct AccelTrainResult {
  MlpParams params;
  std::vector<EpochStats> history;
  double wall_seconds = 0.0;
};
AccelTrainResult train_accel_stage(const MlpParams& init_a, const MlpParams& frozen_g,
                                   const std::vector<TrainSequence>& data,
                                   const TrainConfig& cfg);

struct LinearTrainResult {
  LinearCalib gyro, accel;
  std::vector<EpochStats> history_gyro, history_accel;
};
LinearTrainResult train_linear_stage(const std::vector<TrainSequence>& data,
                                     const TrainConfig& cfg);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

// ---------------------------------------------------------------------------
// Debiasing

/// Integrates the bias dynamics once over the whole stream (causal forward
/// Euler on the sample grid) and subtracts: w_hat = w - b_g(t), a_hat = a -
/// b_a(t). Null fields mean constant bias. Also returns the bias series.
struct DebiasResult {
  ImuSequence corrected;
  std::vector<Vec3> bias_g, bias_a;
};
DebiasResult debias(const MlpParams* f_g, const MlpParams* f_a, const ImuSequence& seq,
                    const BiasState& b0);

/// Applies the constant linear calibration: w_hat = A_g w + b_g, same for accel.
ImuSequence debias_linear(const LinearCalib& gyro, const LinearCalib& accel,
                          const ImuSequence& seq);

/// FNV-1a digest of the parameter bytes, for stage-isolation checks.
std::uint64_t params_digest(const MlpParams& p);

}  // namespace biasdyn

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "biasdyn/types.hpp"

namespace biasdyn {

/// One dense layer. With `activation` the layer computes tanh(W h + b),
/// otherwise W h + b; `residual` adds the layer input on top (requires
/// matching widths).
struct DenseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  bool activation = true;
  bool residual = false;
};

struct NetConfig {
  std::vector<int> hidden_widths = {32, 32};
  std::uint64_t seed = 0;
  // Fixed per-channel input scales (bias, measurement, measurement rate).
  // Defaults are the gyro channel scales; accel uses make_accel().
  Vec3 scale_bias = Vec3::Constant(0.05);
  Vec3 scale_meas = Vec3::Constant(1.0);
  Vec3 scale_meas_dot = Vec3::Constant(10.0);

  static NetConfig make_gyro(std::uint64_t seed);
  static NetConfig make_accel(std::uint64_t seed);
};

/// Residual MLP vector field (bias, measurement, measurement rate) -> bias
/// rate. Layout: linear embed 9 -> w, one residual tanh block per hidden
/// width, linear head w -> 3. The head is scaled down at init so a fresh
/// field is close to zero.
struct MlpParams {
  std::vector<DenseLayer> layers;
  Eigen::VectorXd input_scale;  // 9 entries

  int parameter_count() const;
  /// Flattens all weights into one vector (layer order, W row-major then b).
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);
};

/// Gradient holder shaped like MlpParams.
struct MlpGrad {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;

  static MlpGrad zeros_like(const MlpParams& p);
  void setZero();
  void add_scaled(const MlpGrad& other, double s);
  Eigen::VectorXd flatten() const;
};

/// Scratch space for forward/backward passes so hot loops do not allocate.
struct MlpWorkspace {
  std::vector<Eigen::VectorXd> h;  // activations, layers+1 entries
  std::vector<Eigen::VectorXd> z;  // pre-activations
  std::vector<Eigen::VectorXd> g;  // backward buffers
};

MlpParams init_params(const NetConfig& cfg);

/// Evaluates the bias vector field.
Vec3 forward(const MlpParams& p, const Vec3& bias, const Vec3& meas, const Vec3& meas_dot,
             MlpWorkspace& ws);

/// Reverse-mode gradient of <upstream, forward(...)>. Accumulates the
/// parameter gradient into `grad` and returns the gradient w.r.t. bias.
Vec3 forward_grad(const MlpParams& p, const Vec3& bias, const Vec3& meas, const Vec3& meas_dot,
                  const Vec3& upstream, MlpGrad& grad, MlpWorkspace& ws);

/// 3x9 Jacobian of forward w.r.t. the stacked input (bias, meas, meas_dot).
Eigen::Matrix<double, 3, 9> input_jacobian(const MlpParams& p, const Vec3& bias, const Vec3& meas,
                                           const Vec3& meas_dot);

/// Constant-parameter calibration u -> A u + b (the "linear" baseline).
struct LinearCalib {
  Mat3 A = Mat3::Identity();
  Vec3 b = Vec3::Zero();
};

inline Vec3 linear_forward(const LinearCalib& c, const Vec3& u) { return c.A * u + c.b; }

// Serialization: versioned text, bit-exact round trip.
void save_mlp(const MlpParams& p, std::ostream& out);
MlpParams load_mlp(std::istream& in);
void save_mlp_file(const MlpParams& p, const std::string& path);
MlpParams load_mlp_file(const std::string& path);

void save_linear(const LinearCalib& gyro, const LinearCalib& accel, const std::string& path);
std::pair<LinearCalib, LinearCalib> load_linear(const std::string& path);

/// True when the file at `path` holds a linear-baseline checkpoint.
bool is_linear_checkpoint(const std::string& path);

}  // namespace biasdyn

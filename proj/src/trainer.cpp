#include "biasdyn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "biasdyn/errors.hpp"
#include "biasdyn/rng.hpp"
#include "biasdyn/so3.hpp"

namespace biasdyn {

namespace {

ode::TimeGrid segment_grid(const Segment& seg) {
  const auto s = static_cast<size_t>(seg.start);
  return ode::TimeGrid(std::vector<double>(seg.seq->t.begin() + static_cast<long>(s),
                                           seg.seq->t.begin() + static_cast<long>(s) +
                                               seg.length + 1));
}

// Gradient of ||Log(R_hat R_gt^T)||^2 w.r.t. the chart coordinate xi of
// R_hat = anchor * Exp(xi), holding the anchor fixed:
//   d/dxi = 2 J_r(xi)^T R_gt^T J_r^{-1}(e)^T e,   e = Log(R_hat R_gt^T).
Vec3 rotation_term_grad_xi(const Vec3& xi, const Rotation& R_hat, const Rotation& R_gt) {
  const Vec3 e = so3::log(R_hat * R_gt.inverse());
  return 2.0 * so3::right_jacobian(xi).transpose() *
         (R_gt.matrix().transpose() * (so3::right_jacobian_inv(e).transpose() * e));
}

}  // namespace

std::vector<BiasState> estimate_initial_bias(const std::vector<double>& t,
                                             const std::vector<Rotation>& R,
                                             const std::vector<Vec3>& v,
                                             const std::vector<Vec3>& gyro,
                                             const std::vector<Vec3>& accel, const Vec3& gravity) {
  const size_t n = t.size();
  if (R.size() != n || v.size() != n || gyro.size() != n || accel.size() != n) {
    throw MisalignedTimeline("pose and measurement series differ in length");
  }
  if (n < 2) throw MisalignedTimeline("need at least 2 samples to difference");

  std::vector<BiasState> out(n);
  for (size_t k = 0; k + 1 < n; ++k) {
    const double dt = t[k + 1] - t[k];
    if (!(dt > 0.0)) {
      throw MisalignedTimeline("non-positive dt between ground-truth stamps at index " +
                               std::to_string(k));
    }
    out[k].gyro = gyro[k] - so3::log(R[k].inverse() * R[k + 1]) / dt;
    out[k].accel = accel[k] - R[k].inverse() * ((v[k + 1] - v[k]) / dt - gravity);
  }
  out[n - 1] = out[n - 2];
  return out;
}

TrainSequence TrainSequence::build(const ImuSequence& seq, const Vec3& gravity,
                                   int smooth_v_window) {
  if (!seq.has_gt) throw MisalignedTimeline("training sequence needs synchronized ground truth");
  TrainSequence out;
  out.t = seq.t;
  out.gyro = seq.gyro;
  out.accel = seq.accel;
  out.gt_R = seq.gt_R;
  out.gt_p = seq.gt_p;
  out.gt_v = smooth_moving_average(seq.gt_v, smooth_v_window);

  const auto bias = estimate_initial_bias(out.t, out.gt_R, out.gt_v, out.gyro, out.accel, gravity);
  out.bias_g_init.reserve(bias.size());
  out.bias_a_init.reserve(bias.size());
  for (const auto& b : bias) {
    out.bias_g_init.push_back(b.gyro);
    out.bias_a_init.push_back(b.accel);
  }
  out.gyro_spline = std::make_shared<HermiteSpline>(HermiteSpline::from_samples(out.t, out.gyro));
  out.accel_spline = std::make_shared<HermiteSpline>(HermiteSpline::from_samples(out.t, out.accel));
  return out;
}

std::vector<Segment> sample_segments(const TrainSequence& seq, int length, int stride,
                                     std::uint64_t seed, int region_begin, int region_end) {
  if (length < 2) throw BadConfig("segment length must be >= 2");
  if (stride < 1) throw BadConfig("stride must be >= 1");
  if (region_end < 0) region_end = seq.size();
  std::vector<Segment> out;
  for (int s = region_begin; s + length <= region_end - 1; s += stride) {
    Segment seg;
    seg.seq = &seq;
    seg.start = s;
    seg.length = length;
    seg.init_bias = {seq.bias_g_init[static_cast<size_t>(s)],
                     seq.bias_a_init[static_cast<size_t>(s)]};
    out.push_back(seg);
  }
  if (out.empty()) {
    throw TooShort("no full segment of length " + std::to_string(length) + " fits the region");
  }
  RandomStream rng(seed, "segment-shuffle");
  rng.shuffle(out);
  return out;
}

double loss_rotation(const std::vector<Rotation>& est, const std::vector<Rotation>& gt) {
  if (est.size() != gt.size() || est.empty()) throw LengthMismatch("rotation loss length mismatch");
  double acc = 0.0;
  for (size_t k = 0; k < est.size(); ++k) {
    acc += so3::log(est[k] * gt[k].inverse()).squaredNorm();
  }
  return acc / static_cast<double>(est.size());
}

double loss_vel_pos(const std::vector<Vec3>& est_v, const std::vector<Vec3>& est_p,
                    const std::vector<Vec3>& gt_v, const std::vector<Vec3>& gt_p) {
  if (est_v.size() != gt_v.size() || est_p.size() != gt_p.size() || est_v.size() != est_p.size() ||
      est_v.empty()) {
    throw LengthMismatch("velocity/position loss length mismatch");
  }
  double acc = 0.0;
  for (size_t k = 0; k < est_v.size(); ++k) {
    acc += (est_p[k] - gt_p[k]).squaredNorm() + (est_v[k] - gt_v[k]).squaredNorm();
  }
  return acc / static_cast<double>(est_v.size());
}

// ---------------------------------------------------------------------------
// Gyro stage

namespace {

double gyro_path_loss(const ode::GyroPath& path, const Segment& seg) {
  const auto s = static_cast<size_t>(seg.start);
  double acc = 0.0;
  for (int k = 1; k <= seg.length; ++k) {
    acc += so3::log(path.rot[static_cast<size_t>(k)] * seg.seq->gt_R[s + static_cast<size_t>(k)].inverse())
               .squaredNorm();
  }
  return acc / static_cast<double>(seg.length);
}

}  // namespace

double segment_loss_gyro(const MlpParams& params_g, const Segment& seg, const SolverConfig& cfg) {
  const auto path = ode::integrate_gyro_stage(&params_g, *seg.seq->gyro_spline,
                                              seg.init_pose().R, seg.init_bias.gyro,
                                              segment_grid(seg), cfg.method, false,
                                              cfg.chart_switch_threshold);
  return gyro_path_loss(path, seg);
}

GyroStageEval segment_loss_and_grad_gyro(const MlpParams& params_g, const Segment& seg,
                                         const SolverConfig& cfg) {
  if (cfg.method != ode::Method::Euler) {
    throw BadConfig("gradients are implemented for the Euler scheme");
  }
  const int N = seg.length;
  const auto s = static_cast<size_t>(seg.start);
  const auto path = ode::integrate_gyro_stage(&params_g, *seg.seq->gyro_spline,
                                              seg.init_pose().R, seg.init_bias.gyro,
                                              segment_grid(seg), ode::Method::Euler, true,
                                              cfg.chart_switch_threshold);

  GyroStageEval out;
  out.loss = gyro_path_loss(path, seg);
  out.grad = MlpGrad::zeros_like(params_g);

  // Reverse sweep over the unrolled Euler steps. a_xi tracks the adjoint of
  // the pre-switch chart coordinate at index k+1, a_b the bias adjoint.
  // Chart anchors are constants within a chart: a re-anchoring zeroes a_xi.
  MlpWorkspace ws;
  Vec3 a_xi = Vec3::Zero(), a_b = Vec3::Zero();
  const double inv_n = 1.0 / static_cast<double>(N);
  for (int k = N - 1; k >= 0; --k) {
    const auto& st = path.tape[static_cast<size_t>(k)];
    const auto idx = static_cast<size_t>(k + 1);
    a_xi += inv_n * rotation_term_grad_xi(path.xi[idx], path.rot[idx], seg.seq->gt_R[s + idx]);

    const Vec3 omega = st.meas - st.bias;
    const Mat3 Jinv = so3::right_jacobian_inv(st.xi);
    const Mat3 D = so3::jr_inv_action_jacobian(st.xi, omega);

    const Vec3 a_tape_xi = a_xi + st.h * (D.transpose() * a_xi);
    Vec3 a_b_new = a_b - st.h * (Jinv.transpose() * a_xi);
    a_b_new += forward_grad(params_g, st.bias, st.meas, st.meas_dot, Vec3(st.h * a_b), out.grad, ws);
    a_b = a_b_new;

    // A switch at index k means the tape state was re-anchored: the pre-switch
    // coordinate at k no longer feeds the future through xi.
    const bool switched_at_k =
        k > 0 && path.anchor_index[static_cast<size_t>(k) + 1] != path.anchor_index[static_cast<size_t>(k)];
    a_xi = switched_at_k ? Vec3::Zero() : a_tape_xi;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accel stage

namespace {

double full_path_loss_vp(const ode::FullPath& path, const Segment& seg) {
  const auto s = static_cast<size_t>(seg.start);
  double acc = 0.0;
  for (int k = 1; k <= seg.length; ++k) {
    const auto idx = static_cast<size_t>(k);
    acc += (path.p[idx] - seg.seq->gt_p[s + idx]).squaredNorm() +
           (path.v[idx] - seg.seq->gt_v[s + idx]).squaredNorm();
  }
  return acc / static_cast<double>(seg.length);
}

ode::FullPath run_full(const MlpParams* params_a, const MlpParams* params_g, const Segment& seg,
                       const Vec3& gravity, const SolverConfig& cfg, bool tape) {
  ode::CoupledState init;
  const PoseState pose = seg.init_pose();
  init.chart.anchor = pose.R;
  init.chart.xi = Vec3::Zero();
  init.b_g = seg.init_bias.gyro;
  init.v = pose.v;
  init.p = pose.p;
  init.b_a = seg.init_bias.accel;
  return ode::integrate_full(params_g, params_a, *seg.seq->gyro_spline, *seg.seq->accel_spline,
                             init, gravity, segment_grid(seg), cfg.method, tape,
                             cfg.chart_switch_threshold);
}

}  // namespace

double segment_loss_accel(const MlpParams& params_a, const MlpParams& params_g, const Segment& seg,
                          const Vec3& gravity, const SolverConfig& cfg) {
  return full_path_loss_vp(run_full(&params_a, &params_g, seg, gravity, cfg, false), seg);
}

AccelStageEval segment_loss_and_grad_accel(const MlpParams& params_a, const MlpParams& params_g,
                                           const Segment& seg, const Vec3& gravity,
                                           const SolverConfig& cfg) {
  if (cfg.method != ode::Method::Euler) {
    throw BadConfig("gradients are implemented for the Euler scheme");
  }
  const int N = seg.length;
  const auto s = static_cast<size_t>(seg.start);
  const auto path = run_full(&params_a, &params_g, seg, gravity, cfg, true);

  AccelStageEval out;
  out.loss = full_path_loss_vp(path, seg);
  out.grad = MlpGrad::zeros_like(params_a);

  // Only v, p, b_a feed the loss gradient: the rotation path is frozen with
  // the gyro stage.
  MlpWorkspace ws;
  Vec3 a_v = Vec3::Zero(), a_p = Vec3::Zero(), a_ba = Vec3::Zero();
  const double inv_n = 1.0 / static_cast<double>(N);
  for (int k = N - 1; k >= 0; --k) {
    const auto& st = path.tape[static_cast<size_t>(k)];
    const auto idx = static_cast<size_t>(k + 1);
    a_v += (2.0 * inv_n) * (path.v[idx] - seg.seq->gt_v[s + idx]);
    a_p += (2.0 * inv_n) * (path.p[idx] - seg.seq->gt_p[s + idx]);

    const Mat3 R_k =
        (path.anchors[static_cast<size_t>(st.anchor)] * so3::exp(st.xi)).matrix();

    Vec3 a_ba_new = a_ba - st.h * (R_k.transpose() * a_v);
    a_ba_new +=
        forward_grad(params_a, st.b_a, st.accel, st.accel_dot, Vec3(st.h * a_ba), out.grad, ws);
    const Vec3 a_v_new = a_v + st.h * a_p;
    a_ba = a_ba_new;
    a_v = a_v_new;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear baseline stages

std::pair<double, LinearGrad> segment_loss_and_grad_linear_gyro(const LinearCalib& calib,
                                                                const Segment& seg,
                                                                const SolverConfig& cfg) {
  if (cfg.method != ode::Method::Euler) {
    throw BadConfig("gradients are implemented for the Euler scheme");
  }
  const int N = seg.length;
  const auto s = static_cast<size_t>(seg.start);
  const auto grid = segment_grid(seg);
  const double thr = cfg.chart_switch_threshold < 0.0 ? 3.14159265358979323846
                                                      : cfg.chart_switch_threshold;

  // Forward: xi' = J_r^{-1}(xi) (A w + b), b' == 0 by construction.
  // xi_step[k] enters step k (post-switch); xi_pre[k] produced rot[k].
  std::vector<Vec3> xi_step(static_cast<size_t>(N)), xi_pre(static_cast<size_t>(N) + 1),
      meas(static_cast<size_t>(N));
  std::vector<Rotation> rot(static_cast<size_t>(N) + 1);
  std::vector<bool> switched(static_cast<size_t>(N), false);
  std::vector<Rotation> anchors{seg.init_pose().R};
  xi_pre[0] = Vec3::Zero();
  rot[0] = anchors[0];
  Vec3 x = Vec3::Zero(), m, mdot;
  for (int k = 0; k < N; ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    const double h = grid.times[static_cast<size_t>(k) + 1] - t;
    seg.seq->gyro_spline->eval3(t, m, mdot);
    meas[static_cast<size_t>(k)] = m;
    xi_step[static_cast<size_t>(k)] = x;
    x += h * (so3::right_jacobian_inv(x) * linear_forward(calib, m));
    const Rotation R = anchors.back() * so3::exp(x);
    rot[static_cast<size_t>(k) + 1] = R;
    xi_pre[static_cast<size_t>(k) + 1] = x;
    if (x.norm() > thr) {
      anchors.push_back(R);
      x.setZero();
      if (k + 1 < N) switched[static_cast<size_t>(k) + 1] = true;
    }
  }

  double loss = 0.0;
  for (int k = 1; k <= N; ++k) {
    loss += so3::log(rot[static_cast<size_t>(k)] * seg.seq->gt_R[s + static_cast<size_t>(k)].inverse())
                .squaredNorm();
  }
  loss /= static_cast<double>(N);

  LinearGrad grad;
  Vec3 a_xi = Vec3::Zero();
  const double inv_n = 1.0 / static_cast<double>(N);
  for (int k = N - 1; k >= 0; --k) {
    const auto idx = static_cast<size_t>(k + 1);
    const double h = grid.times[idx] - grid.times[static_cast<size_t>(k)];
    a_xi += inv_n * rotation_term_grad_xi(xi_pre[idx], rot[idx], seg.seq->gt_R[s + idx]);

    const Vec3 w_cal = linear_forward(calib, meas[static_cast<size_t>(k)]);
    const Vec3 xk = xi_step[static_cast<size_t>(k)];
    const Mat3 Jinv = so3::right_jacobian_inv(xk);
    const Mat3 D = so3::jr_inv_action_jacobian(xk, w_cal);

    const Vec3 ja = Jinv.transpose() * a_xi;
    grad.dA += h * ja * meas[static_cast<size_t>(k)].transpose();
    grad.db += h * ja;

    // A re-anchoring at index k cuts the xi adjoint (anchors are constants
    // within a chart).
    const Vec3 a_prev = a_xi + h * (D.transpose() * a_xi);
    a_xi = (k > 0 && switched[static_cast<size_t>(k)]) ? Vec3::Zero() : a_prev;
  }
  return {loss, grad};
}

std::pair<double, LinearGrad> segment_loss_and_grad_linear_accel(const LinearCalib& calib_a,
                                                                 const LinearCalib& calib_g,
                                                                 const Segment& seg,
                                                                 const Vec3& gravity,
                                                                 const SolverConfig& cfg) {
  if (cfg.method != ode::Method::Euler) {
    throw BadConfig("gradients are implemented for the Euler scheme");
  }
  const int N = seg.length;
  const auto s = static_cast<size_t>(seg.start);
  const auto grid = segment_grid(seg);
  const double thr = cfg.chart_switch_threshold < 0.0 ? 3.14159265358979323846
                                                      : cfg.chart_switch_threshold;

  // Rotation path from the frozen gyro calibration, then v/p forward.
  std::vector<Rotation> rot(static_cast<size_t>(N) + 1);
  std::vector<Vec3> v(static_cast<size_t>(N) + 1), p(static_cast<size_t>(N) + 1),
      a_meas(static_cast<size_t>(N));
  const PoseState pose = seg.init_pose();
  rot[0] = pose.R;
  v[0] = pose.v;
  p[0] = pose.p;
  Rotation anchor = pose.R;
  Vec3 x = Vec3::Zero(), m, mdot;
  for (int k = 0; k < N; ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    const double h = grid.times[static_cast<size_t>(k) + 1] - t;
    seg.seq->gyro_spline->eval3(t, m, mdot);
    Vec3 am, amdot;
    seg.seq->accel_spline->eval3(t, am, amdot);
    a_meas[static_cast<size_t>(k)] = am;

    const auto ks = static_cast<size_t>(k);
    p[ks + 1] = p[ks] + h * v[ks];
    v[ks + 1] = v[ks] + h * (rot[ks] * linear_forward(calib_a, am) + gravity);
    x += h * (so3::right_jacobian_inv(x) * linear_forward(calib_g, m));
    rot[ks + 1] = anchor * so3::exp(x);
    if (x.norm() > thr) {
      anchor = rot[ks + 1];
      x.setZero();
    }
  }

  double loss = 0.0;
  for (int k = 1; k <= N; ++k) {
    const auto idx = static_cast<size_t>(k);
    loss += (p[idx] - seg.seq->gt_p[s + idx]).squaredNorm() +
            (v[idx] - seg.seq->gt_v[s + idx]).squaredNorm();
  }
  loss /= static_cast<double>(N);

  LinearGrad grad;
  Vec3 a_v = Vec3::Zero(), a_p = Vec3::Zero();
  const double inv_n = 1.0 / static_cast<double>(N);
  for (int k = N - 1; k >= 0; --k) {
    const auto idx = static_cast<size_t>(k + 1);
    const double h = grid.times[idx] - grid.times[static_cast<size_t>(k)];
    a_v += (2.0 * inv_n) * (v[idx] - seg.seq->gt_v[s + idx]);
    a_p += (2.0 * inv_n) * (p[idx] - seg.seq->gt_p[s + idx]);

    const Vec3 ra = rot[static_cast<size_t>(k)].matrix().transpose() * a_v;
    grad.dA += h * ra * a_meas[static_cast<size_t>(k)].transpose();
    grad.db += h * ra;

    a_v += h * a_p;
  }
  return {loss, grad};
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(Eigen::Index n, AdamConfig cfg)
    : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
  if (theta.size() != m_.size() || grad.size() != m_.size()) {
    throw ShapeMismatch("adam state size mismatch");
  }
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_.array().matrix() + (1.0 - cfg_.beta2) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  theta.array() -=
      lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg_.eps);
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

struct SegmentPools {
  std::vector<const TrainSequence*> seqs;
  std::vector<Segment> val_segments;
};

SegmentPools make_pools(const std::vector<TrainSequence>& data, const TrainConfig& cfg) {
  if (data.empty()) throw BadConfig("no training sequences");
  SegmentPools pools;
  for (const auto& seq : data) {
    pools.seqs.push_back(&seq);
    const int split = static_cast<int>(std::floor(cfg.train_fraction * seq.size()));
    // Validation windows tile the held-out tail without overlap.
    try {
      auto val = sample_segments(seq, cfg.segment_length, cfg.segment_length,
                                 /*seed=*/0, split, seq.size());
      std::sort(val.begin(), val.end(),
                [](const Segment& a, const Segment& b) { return a.start < b.start; });
      pools.val_segments.insert(pools.val_segments.end(), val.begin(), val.end());
    } catch (const TooShort&) {
      // Sequence too short for a validation tail; train-only.
    }
  }
  return pools;
}

std::vector<Segment> epoch_segments(const SegmentPools& pools, const TrainConfig& cfg, int epoch) {
  std::vector<Segment> segs;
  for (size_t i = 0; i < pools.seqs.size(); ++i) {
    const auto& seq = *pools.seqs[i];
    const int split = static_cast<int>(std::floor(cfg.train_fraction * seq.size()));
    auto part = sample_segments(seq, cfg.segment_length, cfg.stride,
                                substream_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch) *
                                                                        pools.seqs.size() + i),
                                0, split);
    segs.insert(segs.end(), part.begin(), part.end());
  }
  if (pools.seqs.size() > 1) {
    RandomStream rng(cfg.seed, "shuffle-join", static_cast<std::uint64_t>(epoch));
    rng.shuffle(segs);
  }
  // Optional augmentation noise on the initial bias conditions.
  if (cfg.init_bias_noise_g > 0.0 || cfg.init_bias_noise_a > 0.0) {
    RandomStream rng(cfg.seed, "init-bias-noise", static_cast<std::uint64_t>(epoch));
    for (auto& seg : segs) {
      for (int i = 0; i < 3; ++i) {
        seg.init_bias.gyro[i] += cfg.init_bias_noise_g * rng.gaussian();
        seg.init_bias.accel[i] += cfg.init_bias_noise_a * rng.gaussian();
      }
    }
  }
  return segs;
}

double stepped_lr(const TrainConfig& cfg, int epoch) {
  const int drops = cfg.lr_step_epochs > 0 ? epoch / cfg.lr_step_epochs : 0;
  return cfg.learning_rate * std::pow(cfg.lr_decay, drops);
}

void check_finite_loss(double loss) {
  if (!std::isfinite(loss)) throw Diverged("training loss became non-finite");
}

// Generic training driver over a flat parameter vector. eval_grad/eval_loss
// read the live parameters, so sync(theta) must publish theta into them
// after every optimizer step. Exceptions raised inside the parallel loops
// are captured per slot and rethrown afterwards (they must not unwind
// through the OpenMP region).
template <typename EvalGrad, typename EvalLoss, typename Sync>
std::vector<EpochStats> run_training(Eigen::VectorXd& theta, const SegmentPools& pools,
                                     const TrainConfig& cfg, double stage_weight,
                                     EvalGrad&& eval_grad, EvalLoss&& eval_loss, Sync&& sync,
                                     Eigen::VectorXd& best_theta) {
  std::vector<EpochStats> history;
  Adam adam(theta.size());
  double best_val = std::numeric_limits<double>::infinity();
  best_theta = theta;
  sync(theta);

  std::vector<double> slot_loss;
  std::vector<Eigen::VectorXd> slot_grad;
  std::exception_ptr pending;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = stepped_lr(cfg, epoch);
    const auto segs = epoch_segments(pools, cfg, epoch);

    double epoch_loss = 0.0;
    long counted = 0;
    for (size_t begin = 0; begin < segs.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(segs.size(), begin + static_cast<size_t>(cfg.batch_size));
      const auto bsz = static_cast<long>(end - begin);
      slot_loss.assign(static_cast<size_t>(bsz), 0.0);
      slot_grad.resize(static_cast<size_t>(bsz));

#pragma omp parallel for schedule(dynamic) if (cfg.parallel)
      for (long i = 0; i < bsz; ++i) {
        try {
          auto [loss, grad] = eval_grad(segs[begin + static_cast<size_t>(i)]);
          slot_loss[static_cast<size_t>(i)] = loss;
          slot_grad[static_cast<size_t>(i)] = std::move(grad);
        } catch (...) {
#pragma omp critical
          if (!pending) pending = std::current_exception();
        }
      }
      if (pending) std::rethrow_exception(pending);

      // Fixed-order reduction keeps results independent of the schedule.
      Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
      double batch_loss = 0.0;
      for (long i = 0; i < bsz; ++i) {
        batch_loss += slot_loss[static_cast<size_t>(i)];
        g += slot_grad[static_cast<size_t>(i)];
      }
      batch_loss = stage_weight * batch_loss / static_cast<double>(bsz);
      g *= stage_weight / static_cast<double>(bsz);
      check_finite_loss(batch_loss);

      adam.step(theta, g, lr);
      sync(theta);
      epoch_loss += batch_loss * static_cast<double>(bsz);
      counted += bsz;
    }
    epoch_loss /= static_cast<double>(counted);

    double val_loss = 0.0;
    if (!pools.val_segments.empty()) {
      std::vector<double> vslot(pools.val_segments.size());
#pragma omp parallel for schedule(dynamic) if (cfg.parallel)
      for (long i = 0; i < static_cast<long>(pools.val_segments.size()); ++i) {
        try {
          vslot[static_cast<size_t>(i)] = eval_loss(pools.val_segments[static_cast<size_t>(i)]);
        } catch (...) {
#pragma omp critical
          if (!pending) pending = std::current_exception();
        }
      }
      if (pending) std::rethrow_exception(pending);
      for (double l : vslot) val_loss += l;
      val_loss = stage_weight * val_loss / static_cast<double>(pools.val_segments.size());
      check_finite_loss(val_loss);
    } else {
      val_loss = epoch_loss;
    }

    history.push_back({epoch, epoch_loss, val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      best_theta = theta;
    }
  }
  sync(best_theta);
  return history;
}

}  // namespace

GyroTrainResult train_gyro_stage(const MlpParams& init, const std::vector<TrainSequence>& data,
                                 const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto pools = make_pools(data, cfg);

  MlpParams params = init;
  Eigen::VectorXd theta = params.flatten(), best_theta = theta;

  const auto history = run_training(
      theta, pools, cfg, cfg.weight_rotation,
      [&](const Segment& seg) {
        auto res = segment_loss_and_grad_gyro(params, seg, cfg.solver);
        return std::make_pair(res.loss, res.grad.flatten());
      },
      [&](const Segment& seg) { return segment_loss_gyro(params, seg, cfg.solver); },
      [&](const Eigen::VectorXd& th) { params.unflatten(th); }, best_theta);

  GyroTrainResult out;
  out.params = std::move(params);
  out.history = history;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

AccelTrainResult train_accel_stage(const MlpParams& init_a, const MlpParams& frozen_g,
                                   const std::vector<TrainSequence>& data,
                                   const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto pools = make_pools(data, cfg);

  MlpParams params = init_a;
  Eigen::VectorXd theta = params.flatten(), best_theta = theta;

  const auto history = run_training(
      theta, pools, cfg, cfg.weight_vel_pos,
      [&](const Segment& seg) {
        auto res = segment_loss_and_grad_accel(params, frozen_g, seg, cfg.gravity, cfg.solver);
        return std::make_pair(res.loss, res.grad.flatten());
      },
      [&](const Segment& seg) {
        return segment_loss_accel(params, frozen_g, seg, cfg.gravity, cfg.solver);
      },
      [&](const Eigen::VectorXd& th) { params.unflatten(th); }, best_theta);

  AccelTrainResult out;
  out.params = std::move(params);
  out.history = history;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

namespace {

Eigen::VectorXd flatten_linear(const LinearCalib& c) {
  Eigen::VectorXd v(12);
  Eigen::Index k = 0;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) v[k++] = c.A(r, col);
  for (int r = 0; r < 3; ++r) v[k++] = c.b[r];
  return v;
}

LinearCalib unflatten_linear(const Eigen::VectorXd& v) {
  LinearCalib c;
  Eigen::Index k = 0;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) c.A(r, col) = v[k++];
  for (int r = 0; r < 3; ++r) c.b[r] = v[k++];
  return c;
}

Eigen::VectorXd flatten_linear_grad(const LinearGrad& g) {
  Eigen::VectorXd v(12);
  Eigen::Index k = 0;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) v[k++] = g.dA(r, col);
  for (int r = 0; r < 3; ++r) v[k++] = g.db[r];
  return v;
}

}  // namespace

LinearTrainResult train_linear_stage(const std::vector<TrainSequence>& data,
                                     const TrainConfig& cfg) {
  const auto pools = make_pools(data, cfg);
  LinearTrainResult out;

  {
    LinearCalib calib;
    Eigen::VectorXd theta = flatten_linear(calib), best = theta;
    out.history_gyro = run_training(
        theta, pools, cfg, cfg.weight_rotation,
        [&](const Segment& seg) {
          auto [loss, grad] = segment_loss_and_grad_linear_gyro(calib, seg, cfg.solver);
          return std::make_pair(loss, flatten_linear_grad(grad));
        },
        [&](const Segment& seg) {
          return segment_loss_and_grad_linear_gyro(calib, seg, cfg.solver).first;
        },
        [&](const Eigen::VectorXd& th) { calib = unflatten_linear(th); }, best);
    out.gyro = unflatten_linear(best);
  }
  {
    LinearCalib calib;
    Eigen::VectorXd theta = flatten_linear(calib), best = theta;
    out.history_accel = run_training(
        theta, pools, cfg, cfg.weight_vel_pos,
        [&](const Segment& seg) {
          auto [loss, grad] =
              segment_loss_and_grad_linear_accel(calib, out.gyro, seg, cfg.gravity, cfg.solver);
          return std::make_pair(loss, flatten_linear_grad(grad));
        },
        [&](const Segment& seg) {
          return segment_loss_and_grad_linear_accel(calib, out.gyro, seg, cfg.gravity, cfg.solver)
              .first;
        },
        [&](const Eigen::VectorXd& th) { calib = unflatten_linear(th); }, best);
    out.accel = unflatten_linear(best);
  }
  return out;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& h : history) {
    snprintf(buf, sizeof(buf), "%d,%.12g,%.12g\n", h.epoch, h.train_loss, h.val_loss);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Debiasing

DebiasResult debias(const MlpParams* f_g, const MlpParams* f_a, const ImuSequence& seq,
                    const BiasState& b0) {
  if (seq.size() < 2) throw TooShort("debias needs at least 2 samples");
  const auto gyro_spline = HermiteSpline::from_samples(seq.t, seq.gyro);
  const auto accel_spline = HermiteSpline::from_samples(seq.t, seq.accel);

  DebiasResult out;
  out.corrected = seq;
  out.corrected.has_true_bias = false;
  out.corrected.true_bias_g.clear();
  out.corrected.true_bias_a.clear();
  out.bias_g.resize(seq.t.size());
  out.bias_a.resize(seq.t.size());

  MlpWorkspace ws_g, ws_a;
  Vec3 bg = b0.gyro, ba = b0.accel;
  Vec3 u, udot;
  for (size_t k = 0; k < seq.t.size(); ++k) {
    out.bias_g[k] = bg;
    out.bias_a[k] = ba;
    out.corrected.gyro[k] = seq.gyro[k] - bg;
    out.corrected.accel[k] = seq.accel[k] - ba;
    if (k + 1 < seq.t.size()) {
      const double h = seq.t[k + 1] - seq.t[k];
      if (f_g) {
        gyro_spline.eval3(seq.t[k], u, udot);
        bg += h * forward(*f_g, bg, u, udot, ws_g);
      }
      if (f_a) {
        accel_spline.eval3(seq.t[k], u, udot);
        ba += h * forward(*f_a, ba, u, udot, ws_a);
      }
      if (!bg.allFinite() || !ba.allFinite()) throw NonFinite("bias state became non-finite");
    }
  }
  return out;
}

ImuSequence debias_linear(const LinearCalib& gyro, const LinearCalib& accel,
                          const ImuSequence& seq) {
  ImuSequence out = seq;
  out.has_true_bias = false;
  out.true_bias_g.clear();
  out.true_bias_a.clear();
  for (size_t k = 0; k < seq.t.size(); ++k) {
    out.gyro[k] = linear_forward(gyro, seq.gyro[k]);
    out.accel[k] = linear_forward(accel, seq.accel[k]);
  }
  return out;
}

std::uint64_t params_digest(const MlpParams& p) {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](const void* data, size_t bytes) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& l : p.layers) {
    mix(l.W.data(), sizeof(double) * static_cast<size_t>(l.W.size()));
    mix(l.b.data(), sizeof(double) * static_cast<size_t>(l.b.size()));
  }
  return h;
}

}  // namespace biasdyn

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "biasdyn/dataio.hpp"
#include "biasdyn/rng.hpp"
#include "biasdyn/so3.hpp"
#include "biasdyn/trainer.hpp"

using namespace biasdyn;

namespace {

// Sequence whose ground truth is generated by the same forward Euler steps
// the gyro/accel stages take: a zero bias field then reproduces it exactly.
TrainSequence make_selfconsistent(int n, double dt, const std::function<Vec3(double)>& omega,
                                  const Vec3& gravity) {
  TrainSequence seq;
  for (int k = 0; k < n; ++k) seq.t.push_back(k * dt);
  Rotation R;
  Vec3 v = Vec3::Zero(), p = Vec3::Zero(), xi = Vec3::Zero();
  const Rotation anchor;
  for (int k = 0; k < n; ++k) {
    const double t = seq.t[static_cast<size_t>(k)];
    const Vec3 w = omega(t);
    const Vec3 a_body = R.inverse() * (Vec3(0.1, -0.2, 0.05) - gravity);
    seq.gyro.push_back(w);
    seq.accel.push_back(a_body);
    seq.gt_R.push_back(R);
    seq.gt_v.push_back(v);
    seq.gt_p.push_back(p);
    seq.bias_g_init.push_back(Vec3::Zero());
    seq.bias_a_init.push_back(Vec3::Zero());
    if (k + 1 == n) break;
    // forward Euler exactly as the coupled solver steps, including the
    // per-interval h = t[k+1] - t[k]
    const double h = seq.t[static_cast<size_t>(k) + 1] - t;
    p += h * v;
    v += h * (R * a_body + gravity);
    xi += h * (so3::right_jacobian_inv(xi) * w);
    R = anchor * so3::exp(xi);
  }
  seq.gyro_spline = std::make_shared<HermiteSpline>(HermiteSpline::from_samples(seq.t, seq.gyro));
  seq.accel_spline =
      std::make_shared<HermiteSpline>(HermiteSpline::from_samples(seq.t, seq.accel));
  return seq;
}

SyntheticConfig small_synth(std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.duration_s = 20.0;
  cfg.rate_hz = 50.0;
  cfg.omega.amplitude = Vec3(0.8, 0.6, 0.9);
  cfg.omega.freq_hz = Vec3(0.3, 0.2, 0.25);
  cfg.omega.phase = Vec3(0.0, 1.1, 2.3);
  cfg.accel_world.amplitude = Vec3(0.5, 0.4, 0.3);
  cfg.accel_world.freq_hz = Vec3(0.25, 0.35, 0.2);
  cfg.bias_g.mode = BiasMode::Constant;
  cfg.bias_g.constant = Vec3(0.02, -0.01, 0.015);
  cfg.bias_a.mode = BiasMode::Constant;
  cfg.bias_a.constant = Vec3(0.05, -0.03, 0.02);
  cfg.sigma_g = 1e-3;
  cfg.sigma_a = 5e-3;
  cfg.seed = seed;
  return cfg;
}

MlpParams tiny_net(std::uint64_t seed, bool accel = false) {
  NetConfig cfg = accel ? NetConfig::make_accel(seed) : NetConfig::make_gyro(seed);
  cfg.hidden_widths = {8};
  MlpParams p = init_params(cfg);
  p.layers.back().W *= 50.0;  // un-shrink the head so gradients have real magnitude
  return p;
}

}  // namespace

TEST_CASE("initial bias estimation inverts exact generators") {
  const double dt = 0.01;
  const Vec3 g(0, 0, -9.80665);
  std::vector<double> t;
  std::vector<Rotation> R;
  std::vector<Vec3> v, gyro, accel;
  Rotation Rk;
  Vec3 vk(0.2, -0.1, 0.05);
  RandomStream rng(1);
  for (int k = 0; k < 50; ++k) {
    const Vec3 w(0.5 * std::sin(0.3 * k), 0.4, -0.2 * std::cos(0.2 * k));
    const Vec3 a(0.3, 0.1 * k * dt, -0.2);
    t.push_back(k * dt);
    R.push_back(Rk);
    v.push_back(vk);
    gyro.push_back(w);
    accel.push_back(a);
    Rk = Rk * so3::exp(dt * w);            // exact Exp step
    vk += dt * (R.back() * a + g);         // exact Euler step
  }

  // zero-bias data inverts to zero
  auto series = estimate_initial_bias(t, R, v, gyro, accel, g);
  for (const auto& b : series) {
    CHECK(b.gyro.norm() < 1e-9);
    CHECK(b.accel.norm() < 1e-9);
  }

  // constant gyro bias shows up directly
  const Vec3 c(0.03, -0.02, 0.01);
  auto biased = gyro;
  for (auto& w : biased) w += c;
  series = estimate_initial_bias(t, R, v, biased, accel, g);
  for (const auto& b : series) CHECK((b.gyro - c).norm() < 1e-9);
  // last sample copies the previous one
  CHECK((series[series.size() - 1].gyro - series[series.size() - 2].gyro).norm() == 0.0);

  // broken timelines are rejected
  auto t_bad = t;
  t_bad[10] = t_bad[9];
  CHECK_THROWS_AS(estimate_initial_bias(t_bad, R, v, gyro, accel, g), MisalignedTimeline);
  CHECK_THROWS_AS(estimate_initial_bias({0.0}, {Rotation()}, {Vec3::Zero()}, {Vec3::Zero()},
                                        {Vec3::Zero()}, g),
                  MisalignedTimeline);
}

TEST_CASE("segment sampling enumerates stride-spaced windows") {
  TrainSequence seq = make_selfconsistent(33, 0.01, [](double) { return Vec3(0.1, 0, 0); },
                                          Vec3(0, 0, -9.81));
  auto segs = sample_segments(seq, 16, 16, 0);
  std::vector<int> starts;
  for (const auto& s : segs) starts.push_back(s.start);
  std::sort(starts.begin(), starts.end());
  CHECK(starts == std::vector<int>{0, 16});

  // stride 1 covers every feasible start exactly once
  segs = sample_segments(seq, 16, 1, 5);
  starts.clear();
  for (const auto& s : segs) starts.push_back(s.start);
  std::sort(starts.begin(), starts.end());
  REQUIRE(starts.size() == 17);
  for (int i = 0; i < 17; ++i) CHECK(starts[static_cast<size_t>(i)] == i);

  // same seed, same shuffled order
  const auto a = sample_segments(seq, 16, 1, 42);
  const auto b = sample_segments(seq, 16, 1, 42);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].start == b[i].start);

  CHECK_THROWS_AS(sample_segments(seq, 40, 1, 0), TooShort);
}

TEST_CASE("rotation loss hand values") {
  std::vector<Rotation> gt = {so3::exp(Vec3(0.2, -0.1, 0.4)), so3::exp(Vec3(-0.3, 0.2, 0.1))};
  CHECK(loss_rotation(gt, gt) < 1e-30);

  // single pair at 0.1 rad about x
  std::vector<Rotation> est = {so3::exp(Vec3(0.1, 0, 0)) * gt[0]};
  CHECK(loss_rotation(est, {gt[0]}) == doctest::Approx(0.01).epsilon(1e-12));

  // two pairs at 0.1 and 0.2 rad
  est = {so3::exp(Vec3(0.1, 0, 0)) * gt[0], so3::exp(Vec3(0, 0.2, 0)) * gt[1]};
  CHECK(loss_rotation(est, gt) == doctest::Approx(0.025).epsilon(1e-12));

  CHECK_THROWS_AS(loss_rotation(est, {gt[0]}), LengthMismatch);
}

TEST_CASE("velocity/position loss hand values") {
  std::vector<Vec3> v = {Vec3(1, 2, 3)}, p = {Vec3(4, 5, 6)};
  CHECK(loss_vel_pos(v, p, v, p) == 0.0);

  std::vector<Vec3> ve = {Vec3(1, 4, 3)}, pe = {Vec3(5, 5, 6)};  // v err (0,2,0), p err (1,0,0)
  CHECK(loss_vel_pos(ve, pe, v, p) == doctest::Approx(5.0).epsilon(1e-12));

  // doubling all errors quadruples the loss
  std::vector<Vec3> ve2 = {Vec3(1, 6, 3)}, pe2 = {Vec3(6, 5, 6)};
  CHECK(loss_vel_pos(ve2, pe2, v, p) == doctest::Approx(20.0).epsilon(1e-12));

  CHECK_THROWS_AS(loss_vel_pos(ve, pe, v, {}), LengthMismatch);
}

TEST_CASE("self-consistent segment with zero field has zero loss and gradient") {
  const Vec3 g(0, 0, -9.80665);
  TrainSequence seq = make_selfconsistent(
      60, 0.01,
      [](double t) { return Vec3(0.5 * std::sin(2 * t), 0.3 * std::cos(t), 0.2); }, g);

  MlpParams zero_field = tiny_net(3);
  zero_field.layers.back().W.setZero();
  zero_field.layers.back().b.setZero();

  // Starting at sample 0 puts the segment in the generator's own chart, so
  // the forward pass reproduces the ground truth bit for bit. The rotation
  // loss still passes through Log(M M^T), which leaves ~1e-17 of noise.
  Segment seg;
  seg.seq = &seq;
  seg.start = 0;
  seg.length = 16;

  const auto res = segment_loss_and_grad_gyro(zero_field, seg, {});
  CHECK(res.loss < 1e-30);
  CHECK(res.grad.flatten().norm() < 1e-12);

  MlpParams zero_accel = tiny_net(4, true);
  zero_accel.layers.back().W.setZero();
  zero_accel.layers.back().b.setZero();
  const auto ares = segment_loss_and_grad_accel(zero_accel, zero_field, seg, g, {});
  CHECK(ares.loss == 0.0);
  CHECK(ares.grad.flatten().norm() == 0.0);
}

TEST_CASE("gyro stage gradient matches end-to-end finite differences") {
  const ImuSequence synth = generate_synthetic(small_synth(77));
  const TrainSequence seq = TrainSequence::build(synth, Vec3(0, 0, -9.80665));

  MlpParams params = tiny_net(5);
  Segment seg;
  seg.seq = &seq;
  seg.start = 100;
  seg.length = 16;
  seg.init_bias = {Vec3::Zero(), Vec3::Zero()};  // wrong on purpose: real residual error

  const auto res = segment_loss_and_grad_gyro(params, seg, {});
  CHECK(res.loss > 0.0);
  const Eigen::VectorXd grad = res.grad.flatten();
  Eigen::VectorXd theta = params.flatten();
  const double eps = 1e-6;

  int large = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    MlpParams pp = params, pm = params;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += eps;
    tm[i] -= eps;
    pp.unflatten(tp);
    pm.unflatten(tm);
    const double fd =
        (segment_loss_gyro(pp, seg, {}) - segment_loss_gyro(pm, seg, {})) / (2 * eps);
    CHECK(std::abs(fd - grad[i]) <= std::max(1e-3 * std::abs(fd), 1e-9));
    if (std::abs(fd) > 1e-8) ++large;
  }
  CHECK(large > 20);  // the check exercised real gradient signal

  // a small step along -grad reduces the loss
  MlpParams stepped = params;
  Eigen::VectorXd tn = theta - 1e-4 * grad / grad.norm();
  stepped.unflatten(tn);
  CHECK(segment_loss_gyro(stepped, seg, {}) < res.loss);
}

TEST_CASE("accel stage gradient matches end-to-end finite differences") {
  const Vec3 g(0, 0, -9.80665);
  const ImuSequence synth = generate_synthetic(small_synth(78));
  const TrainSequence seq = TrainSequence::build(synth, g);

  const MlpParams params_g = tiny_net(6);
  MlpParams params_a = tiny_net(7, true);
  Segment seg;
  seg.seq = &seq;
  seg.start = 210;
  seg.length = 16;
  seg.init_bias = {seq.bias_g_init[210], Vec3::Zero()};

  const auto res = segment_loss_and_grad_accel(params_a, params_g, seg, g, {});
  CHECK(res.loss > 0.0);
  const Eigen::VectorXd grad = res.grad.flatten();
  Eigen::VectorXd theta = params_a.flatten();
  const double eps = 1e-6;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    MlpParams pp = params_a, pm = params_a;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += eps;
    tm[i] -= eps;
    pp.unflatten(tp);
    pm.unflatten(tm);
    const double fd = (segment_loss_accel(pp, params_g, seg, g, {}) -
                       segment_loss_accel(pm, params_g, seg, g, {})) /
                      (2 * eps);
    CHECK(std::abs(fd - grad[i]) <= std::max(1e-3 * std::abs(fd), 1e-9));
  }

  // perturbing the frozen gyro parameters changes the loss, not the target
  MlpParams other_g = params_g;
  other_g.layers.back().W *= 1.5;
  const auto res2 = segment_loss_and_grad_accel(params_a, other_g, seg, g, {});
  CHECK(res2.loss != res.loss);
  CHECK(res2.grad.dW.size() == params_a.layers.size());
}

TEST_CASE("linear stage gradients match finite differences") {
  const Vec3 g(0, 0, -9.80665);
  SyntheticConfig scfg = small_synth(79);
  scfg.misalign_g << 1.02, 0.01, -0.02, 0.015, 0.98, 0.01, -0.01, 0.02, 1.03;
  const TrainSequence seq = TrainSequence::build(generate_synthetic(scfg), g);

  LinearCalib calib;
  calib.A << 1.01, 0.02, -0.01, 0.0, 0.97, 0.01, -0.02, 0.01, 1.02;
  calib.b = Vec3(0.01, -0.02, 0.005);
  LinearCalib calib_a;
  calib_a.b = Vec3(-0.03, 0.02, 0.01);

  Segment seg;
  seg.seq = &seq;
  seg.start = 57;
  seg.length = 16;

  const double eps = 1e-6;
  {
    const auto [loss, grad] = segment_loss_and_grad_linear_gyro(calib, seg, {});
    CHECK(loss > 0.0);
    for (int idx = 0; idx < 12; ++idx) {
      LinearCalib cp = calib, cm = calib;
      double* tp = idx < 9 ? &cp.A(idx / 3, idx % 3) : &cp.b[idx - 9];
      double* tm = idx < 9 ? &cm.A(idx / 3, idx % 3) : &cm.b[idx - 9];
      *tp += eps;
      *tm -= eps;
      const double fd = (segment_loss_and_grad_linear_gyro(cp, seg, {}).first -
                         segment_loss_and_grad_linear_gyro(cm, seg, {}).first) /
                        (2 * eps);
      const double an = idx < 9 ? grad.dA(idx / 3, idx % 3) : grad.db[idx - 9];
      CHECK(std::abs(fd - an) <= std::max(1e-3 * std::abs(fd), 1e-9));
    }
  }
  {
    const auto [loss, grad] = segment_loss_and_grad_linear_accel(calib_a, calib, seg, g, {});
    CHECK(loss > 0.0);
    for (int idx = 0; idx < 12; ++idx) {
      LinearCalib cp = calib_a, cm = calib_a;
      double* tp = idx < 9 ? &cp.A(idx / 3, idx % 3) : &cp.b[idx - 9];
      double* tm = idx < 9 ? &cm.A(idx / 3, idx % 3) : &cm.b[idx - 9];
      *tp += eps;
      *tm -= eps;
      const double fd =
          (segment_loss_and_grad_linear_accel(cp, calib, seg, g, {}).first -
           segment_loss_and_grad_linear_accel(cm, calib, seg, g, {}).first) /
          (2 * eps);
      const double an = idx < 9 ? grad.dA(idx / 3, idx % 3) : grad.db[idx - 9];
      CHECK(std::abs(fd - an) <= std::max(1e-3 * std::abs(fd), 1e-9));
    }
  }
}

TEST_CASE("training runs deterministically and improves validation loss") {
  const Vec3 g(0, 0, -9.80665);
  const ImuSequence synth = generate_synthetic(small_synth(80));
  const std::vector<TrainSequence> data = {TrainSequence::build(synth, g)};

  NetConfig ncfg = NetConfig::make_gyro(substream_seed(80, "net-gyro"));
  ncfg.hidden_widths = {8, 8};
  const MlpParams init = init_params(ncfg);

  TrainConfig tcfg;
  tcfg.segment_length = 16;
  tcfg.epochs = 40;
  tcfg.learning_rate = 0.01;
  tcfg.lr_step_epochs = 30;
  tcfg.batch_size = 32;
  tcfg.stride = 4;
  tcfg.seed = 80;
  tcfg.gravity = g;

  // zero epochs: parameters unchanged
  TrainConfig zero = tcfg;
  zero.epochs = 0;
  const auto untouched = train_gyro_stage(init, data, zero);
  CHECK(params_digest(untouched.params) == params_digest(init));
  CHECK(untouched.history.empty());

  const auto r1 = train_gyro_stage(init, data, tcfg);
  const auto r2 = train_gyro_stage(init, data, tcfg);
  CHECK(params_digest(r1.params) == params_digest(r2.params));  // same seed, same result
  REQUIRE(r1.history.size() == 40);

  // median validation loss over the last 10% beats the first 10%
  const auto median_of = [&](size_t begin, size_t end) {
    std::vector<double> vals;
    for (size_t i = begin; i < end; ++i) vals.push_back(r1.history[i].val_loss);
    std::sort(vals.begin(), vals.end());
    return vals[vals.size() / 2];
  };
  CHECK(median_of(36, 40) < median_of(0, 4));

  // serial and parallel batches produce identical parameters
  TrainConfig serial = tcfg;
  serial.epochs = 6;
  serial.parallel = false;
  TrainConfig par = serial;
  par.parallel = true;
  CHECK(params_digest(train_gyro_stage(init, data, serial).params) ==
        params_digest(train_gyro_stage(init, data, par).params));

  // augmentation noise on initial biases does not destabilize training
  TrainConfig noisy = tcfg;
  noisy.epochs = 8;
  noisy.init_bias_noise_g = 0.005;
  CHECK_NOTHROW(train_gyro_stage(init, data, noisy));
}

TEST_CASE("accel training leaves the gyro stage untouched") {
  const Vec3 g(0, 0, -9.80665);
  const ImuSequence synth = generate_synthetic(small_synth(81));
  const std::vector<TrainSequence> data = {TrainSequence::build(synth, g)};

  NetConfig gcfg = NetConfig::make_gyro(1);
  gcfg.hidden_widths = {8};
  NetConfig acfg = NetConfig::make_accel(2);
  acfg.hidden_widths = {8};
  const MlpParams frozen_g = init_params(gcfg);
  const std::uint64_t digest_before = params_digest(frozen_g);

  TrainConfig tcfg;
  tcfg.epochs = 5;
  tcfg.batch_size = 32;
  tcfg.stride = 8;
  tcfg.seed = 81;
  tcfg.gravity = g;
  const auto res = train_accel_stage(init_params(acfg), frozen_g, data, tcfg);
  CHECK(params_digest(frozen_g) == digest_before);
  CHECK(res.history.size() == 5);
}

TEST_CASE("debias identity and constant-offset behavior") {
  const ImuSequence synth = generate_synthetic(small_synth(82));

  // zero fields, zero init: output equals input bit for bit
  const auto same = debias(nullptr, nullptr, synth, {});
  for (int k = 0; k < synth.size(); ++k) {
    CHECK((same.corrected.gyro[static_cast<size_t>(k)] - synth.gyro[static_cast<size_t>(k)]).norm() == 0.0);
    CHECK((same.corrected.accel[static_cast<size_t>(k)] - synth.accel[static_cast<size_t>(k)]).norm() == 0.0);
  }

  // zero fields, constant init: constant subtraction everywhere
  BiasState b0;
  b0.gyro = Vec3(0.01, -0.02, 0.03);
  b0.accel = Vec3(0.1, 0.0, -0.05);
  const auto shifted = debias(nullptr, nullptr, synth, b0);
  for (int k = 0; k < synth.size(); ++k) {
    const auto ks = static_cast<size_t>(k);
    CHECK((shifted.corrected.gyro[ks] - (synth.gyro[ks] - b0.gyro)).norm() == 0.0);
    CHECK((shifted.bias_g[ks] - b0.gyro).norm() == 0.0);
  }

  // causality: a truncated input reproduces the full run's prefix
  ImuSequence half = synth;
  const size_t half_n = synth.t.size() / 2;
  half.t.resize(half_n);
  half.gyro.resize(half_n);
  half.accel.resize(half_n);
  half.gt_R.resize(half_n);
  half.gt_v.resize(half_n);
  half.gt_p.resize(half_n);
  half.true_bias_g.resize(half_n);
  half.true_bias_a.resize(half_n);

  const MlpParams f_g = tiny_net(83);
  const MlpParams f_a = tiny_net(84, true);
  const auto full_run = debias(&f_g, &f_a, synth, b0);
  const auto half_run = debias(&f_g, &f_a, half, b0);
  for (size_t k = 0; k < half_n; ++k) {
    CHECK((full_run.corrected.gyro[k] - half_run.corrected.gyro[k]).norm() == 0.0);
    CHECK((full_run.corrected.accel[k] - half_run.corrected.accel[k]).norm() == 0.0);
  }
}

TEST_CASE("adam minimizes a quadratic") {
  Adam adam(2);
  Eigen::VectorXd theta(2);
  theta << 5.0, -3.0;
  for (int i = 0; i < 2000; ++i) {
    adam.step(theta, 2.0 * theta, 0.05);
  }
  CHECK(theta.norm() < 1e-3);
}

// biasdyn command line: synth | train | debias | integrate | eval
//
// Every run is driven by a config file; flags override the few knobs that
// vary between invocations. Exit codes: 0 ok, 1 bad input, 2 internal error.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "biasdyn/config.hpp"
#include "biasdyn/dataio.hpp"
#include "biasdyn/errors.hpp"
#include "biasdyn/metrics.hpp"
#include "biasdyn/net.hpp"
#include "biasdyn/ode.hpp"
#include "biasdyn/trainer.hpp"

namespace fs = std::filesystem;
using namespace biasdyn;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

ImuSequence load_sequence(const std::string& input) {
  if (fs::is_directory(input)) return load_euroc(input);
  return load_imu_csv(input);
}

std::vector<TrainSequence> build_train_data(const RunConfig& cfg) {
  if (cfg.train_dirs.empty()) throw BadConfig("[paths] train lists no sequence directories");
  std::vector<TrainSequence> data;
  for (const auto& dir : cfg.train_dirs) {
    data.push_back(TrainSequence::build(load_euroc(dir), cfg.train.gravity, cfg.smooth_v_window));
  }
  return data;
}

int cmd_synth(const std::string& config_path, std::string out_dir) {
  const RunConfig cfg = RunConfig::from_file(config_path);
  if (out_dir.empty()) out_dir = cfg.output_dir;
  const ImuSequence seq = generate_synthetic(cfg.synth);
  write_sequence_dir(seq, out_dir);
  std::cout << "wrote " << seq.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::string out_dir, std::string stage) {
  const RunConfig cfg = RunConfig::from_file(config_path);
  if (out_dir.empty()) out_dir = cfg.output_dir;
  if (stage.empty()) stage = cfg.stage;
  ensure_dir(out_dir);

  const auto data = build_train_data(cfg);

  if (stage == "linear") {
    const auto res = train_linear_stage(data, cfg.train);
    save_linear(res.gyro, res.accel, (fs::path(out_dir) / "linear.ckpt").string());
    write_history_csv((fs::path(out_dir) / "history_linear_gyro.csv").string(), res.history_gyro);
    write_history_csv((fs::path(out_dir) / "history_linear_accel.csv").string(),
                      res.history_accel);
    std::cout << "linear stage done\n";
    return 0;
  }

  NetConfig net_g = NetConfig::make_gyro(substream_seed(cfg.seed, "net-gyro"));
  NetConfig net_a = NetConfig::make_accel(substream_seed(cfg.seed, "net-accel"));
  net_g.hidden_widths = cfg.hidden_widths;
  net_a.hidden_widths = cfg.hidden_widths;

  MlpParams params_g = init_params(net_g);
  const std::string gyro_ckpt = (fs::path(out_dir) / "gyro.ckpt").string();

  if (stage == "gyro" || stage == "both") {
    const auto res = train_gyro_stage(params_g, data, cfg.train);
    params_g = res.params;
    save_mlp_file(params_g, gyro_ckpt);
    write_history_csv((fs::path(out_dir) / "history_gyro.csv").string(), res.history);
    std::cout << "gyro stage done in " << res.wall_seconds << " s\n";
  } else if (stage == "accel") {
    params_g = load_mlp_file(gyro_ckpt);  // needs a previous gyro run
  } else {
    throw BadConfig("unknown stage '" + stage + "'");
  }

  if (stage == "accel" || stage == "both") {
    const auto res = train_accel_stage(init_params(net_a), params_g, data, cfg.train);
    save_mlp_file(res.params, (fs::path(out_dir) / "accel.ckpt").string());
    write_history_csv((fs::path(out_dir) / "history_accel.csv").string(), res.history);
    std::cout << "accel stage done in " << res.wall_seconds << " s\n";
  }
  return 0;
}

int cmd_debias(const std::string& input, const std::string& output,
               const std::string& gyro_ckpt, const std::string& accel_ckpt, bool zero_init,
               const std::string& gravity_str) {
  ImuSequence seq = load_sequence(input);

  Vec3 gravity(0.0, 0.0, -9.80665);
  if (!gravity_str.empty()) {
    std::istringstream ss(gravity_str);
    char c;
    if (!(ss >> gravity[0] >> c >> gravity[1] >> c >> gravity[2])) {
      throw BadConfig("gravity must be gx,gy,gz");
    }
  }

  ImuSequence corrected;
  if (!gyro_ckpt.empty() && is_linear_checkpoint(gyro_ckpt)) {
    const auto [lin_g, lin_a] = load_linear(gyro_ckpt);
    corrected = debias_linear(lin_g, lin_a, seq);
  } else {
    MlpParams params_g, params_a;
    const MlpParams* pg = nullptr;
    const MlpParams* pa = nullptr;
    if (!gyro_ckpt.empty()) {
      params_g = load_mlp_file(gyro_ckpt);
      pg = &params_g;
    }
    if (!accel_ckpt.empty()) {
      params_a = load_mlp_file(accel_ckpt);
      pa = &params_a;
    }
    BiasState b0;
    if (!zero_init && seq.has_gt && seq.size() >= 2) {
      // Initial bias from the ground-truth differencing at the first sample.
      const auto series =
          estimate_initial_bias(seq.t, seq.gt_R, seq.gt_v, seq.gyro, seq.accel, gravity);
      b0 = series.front();
    }
    corrected = debias(pg, pa, seq, b0).corrected;
  }
  write_imu_csv(corrected, output);
  std::cout << "wrote " << corrected.size() << " samples to " << output << "\n";
  return 0;
}

int cmd_integrate(const std::string& imu_path, const std::string& gt_path,
                  const std::string& method_str, const std::string& out_path,
                  const std::string& gravity_str) {
  ImuSequence seq;
  if (fs::is_directory(imu_path)) {
    seq = load_euroc(imu_path);
  } else if (!gt_path.empty()) {
    ImuSequence imu = load_imu_csv(imu_path);
    seq = synchronize(imu, load_gt_csv(gt_path, imu.epoch_ns));
  } else {
    throw BadConfig("integrate needs a sequence directory or --gt for the initial state");
  }
  if (!seq.has_gt) throw BadConfig("no ground truth available for the initial state");

  Vec3 gravity(0.0, 0.0, -9.80665);
  if (!gravity_str.empty()) {
    std::istringstream ss(gravity_str);
    char c;
    if (!(ss >> gravity[0] >> c >> gravity[1] >> c >> gravity[2])) {
      throw BadConfig("gravity must be gx,gy,gz");
    }
  }
  const ode::Method method = ode::method_from_string(method_str);

  const auto gyro_spline = HermiteSpline::from_samples(seq.t, seq.gyro);
  const auto accel_spline = HermiteSpline::from_samples(seq.t, seq.accel);
  ode::CoupledState init;
  init.chart.anchor = seq.gt_R.front();
  init.v = seq.gt_v.front();
  init.p = seq.gt_p.front();
  const auto path = ode::integrate_full(nullptr, nullptr, gyro_spline, accel_spline, init,
                                        gravity, ode::TimeGrid(seq.t), method);
  write_tum_trajectory(seq.t, path.rot, path.p, out_path);
  std::cout << "wrote " << seq.size() << " poses to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path,
             const std::string& distances_str, const std::string& align_str,
             const std::string& out_dir) {
  const auto est_poses = load_tum_trajectory(est_path);
  const auto gt_poses = load_tum_trajectory(gt_path);

  const auto to_traj = [](const std::vector<TumPose>& poses) {
    metrics::Trajectory t;
    for (const auto& q : poses) {
      t.t.push_back(q.t);
      t.R.push_back(q.R);
      t.p.push_back(q.p);
    }
    return t;
  };
  const metrics::Trajectory est = to_traj(est_poses), gt = to_traj(gt_poses);

  std::vector<double> distances = {5.0, 10.0, 15.0, 20.0};
  if (!distances_str.empty()) {
    distances.clear();
    std::istringstream ss(distances_str);
    std::string tok;
    while (std::getline(ss, tok, ',')) distances.push_back(std::stod(tok));
  }
  const metrics::Alignment align = align_str == "least_squares"
                                       ? metrics::Alignment::LeastSquares
                                       : metrics::Alignment::FirstPose;

  const auto report = metrics::evaluate(est, gt, distances, align);
  std::cout << metrics::report_text(report);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    metrics::write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
    std::ofstream txt(fs::path(out_dir) / "report.txt");
    txt << metrics::report_text(report);
    const auto aligned = align == metrics::Alignment::FirstPose
                             ? metrics::align_first_pose(est, gt)
                             : metrics::align_least_squares(est, gt);
    metrics::write_sample_errors_csv(aligned, gt,
                                     (fs::path(out_dir) / "sample_errors.csv").string());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous IMU bias dynamics: synthesize, train, debias, integrate, evaluate"};
  app.require_subcommand(1);

  std::string config_path, out_dir, stage, input, output, gyro_ckpt, accel_ckpt;
  std::string imu_path, gt_path, method = "rk4", gravity_str, est_path, distances_str;
  std::string align_str = "first_pose";
  bool zero_init = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic sequence directory");
  synth->add_option("--config", config_path)->required();
  synth->add_option("--out", out_dir);

  auto* train = app.add_subcommand("train", "run the two-stage (or linear) training");
  train->add_option("--config", config_path)->required();
  train->add_option("--out", out_dir);
  train->add_option("--stage", stage, "gyro | accel | both | linear");

  auto* debias_cmd = app.add_subcommand("debias", "emit a bias-corrected IMU stream");
  debias_cmd->add_option("--input", input, "sequence directory or IMU csv")->required();
  debias_cmd->add_option("--output", output)->required();
  debias_cmd->add_option("--checkpoint-gyro", gyro_ckpt, "mlp or linear checkpoint");
  debias_cmd->add_option("--checkpoint-accel", accel_ckpt);
  debias_cmd->add_flag("--zero-init", zero_init, "start from zero initial bias");
  debias_cmd->add_option("--gravity", gravity_str, "gx,gy,gz");

  auto* integrate = app.add_subcommand("integrate", "strapdown-integrate an IMU stream");
  integrate->add_option("--imu", imu_path, "sequence directory or IMU csv")->required();
  integrate->add_option("--gt", gt_path, "ground-truth csv for the initial state");
  integrate->add_option("--method", method, "euler | rk4");
  integrate->add_option("--out", output)->required();
  integrate->add_option("--gravity", gravity_str, "gx,gy,gz");

  auto* eval = app.add_subcommand("eval", "trajectory error report");
  eval->add_option("--est", est_path)->required();
  eval->add_option("--gt", gt_path)->required();
  eval->add_option("--distances", distances_str, "comma list of meters");
  eval->add_option("--align", align_str, "first_pose | least_squares");
  eval->add_option("--out", out_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(config_path, out_dir);
    if (train->parsed()) return cmd_train(config_path, out_dir, stage);
    if (debias_cmd->parsed())
      return cmd_debias(input, output, gyro_ckpt, accel_ckpt, zero_init, gravity_str);
    if (integrate->parsed())
      return cmd_integrate(imu_path, gt_path, method, output, gravity_str);
    if (eval->parsed()) return cmd_eval(est_path, gt_path, distances_str, align_str, out_dir);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

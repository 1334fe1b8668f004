#include "biasdyn/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "biasdyn/errors.hpp"
#include "biasdyn/ode.hpp"
#include "biasdyn/so3.hpp"

namespace biasdyn {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

void format_double(std::string& out, double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

// Splits a CSV line on commas, trimming spaces. Returns false for comment /
// blank lines.
bool split_csv(const std::string& line, std::vector<std::string>& fields) {
  fields.clear();
  size_t begin = line.find_first_not_of(" \t\r");
  if (begin == std::string::npos || line[begin] == '#') return false;
  std::string cur;
  for (size_t i = begin; i < line.size(); ++i) {
    const char c = line[i];
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const size_t a = f.find_first_not_of(" \t");
    const size_t b = f.find_last_not_of(" \t");
    f = (a == std::string::npos) ? std::string() : f.substr(a, b - a + 1);
  }
  return true;
}

double parse_double(const std::string& s, const std::string& path, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw BadRow(path + ":" + std::to_string(line_no) + ": bad numeric field '" + s + "'");
  }
  return v;
}

std::int64_t parse_ns(const std::string& s, const std::string& path, int line_no) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') {
    throw BadRow(path + ":" + std::to_string(line_no) + ": bad timestamp '" + s + "'");
  }
  return v;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open: " + path);
  return in;
}

}  // namespace

ImuSequence load_imu_csv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  ImuSequence seq;
  std::string line;
  std::vector<std::string> f;
  int line_no = 0;
  bool first = true;
  std::int64_t prev_ns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_csv(line, f)) continue;
    if (f.size() != 7) {
      throw BadRow(path + ":" + std::to_string(line_no) + ": expected 7 columns, got " +
                   std::to_string(f.size()));
    }
    const std::int64_t ns = parse_ns(f[0], path, line_no);
    if (first) {
      seq.epoch_ns = ns;
      first = false;
    } else if (ns <= prev_ns) {
      throw NonMonotoneTime(path + ":" + std::to_string(line_no) + ": timestamps must increase");
    }
    prev_ns = ns;
    seq.t.push_back(static_cast<double>(ns - seq.epoch_ns) * 1e-9);
    seq.gyro.emplace_back(parse_double(f[1], path, line_no), parse_double(f[2], path, line_no),
                          parse_double(f[3], path, line_no));
    seq.accel.emplace_back(parse_double(f[4], path, line_no), parse_double(f[5], path, line_no),
                           parse_double(f[6], path, line_no));
  }
  if (seq.t.empty()) throw BadRow(path + ": no data rows");
  return seq;
}

std::vector<GroundTruthSample> load_gt_csv(const std::string& path, std::int64_t epoch_ns) {
  std::ifstream in = open_or_throw(path);
  std::vector<GroundTruthSample> out;
  std::string line;
  std::vector<std::string> f;
  int line_no = 0;
  std::int64_t prev_ns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_csv(line, f)) continue;
    // 11 columns: ts, p, q_wxyz, v. 17 adds the bias estimates, ignored here.
    if (f.size() != 11 && f.size() != 17) {
      throw BadRow(path + ":" + std::to_string(line_no) + ": expected 11 or 17 columns, got " +
                   std::to_string(f.size()));
    }
    const std::int64_t ns = parse_ns(f[0], path, line_no);
    if (!out.empty() && ns <= prev_ns) {
      throw NonMonotoneTime(path + ":" + std::to_string(line_no) + ": timestamps must increase");
    }
    prev_ns = ns;
    GroundTruthSample g;
    g.t = static_cast<double>(ns - epoch_ns) * 1e-9;
    g.p = Vec3(parse_double(f[1], path, line_no), parse_double(f[2], path, line_no),
               parse_double(f[3], path, line_no));
    g.R = Rotation::from_quaternion(
        parse_double(f[4], path, line_no), parse_double(f[5], path, line_no),
        parse_double(f[6], path, line_no), parse_double(f[7], path, line_no));
    g.v = Vec3(parse_double(f[8], path, line_no), parse_double(f[9], path, line_no),
               parse_double(f[10], path, line_no));
    out.push_back(g);
  }
  if (out.empty()) throw BadRow(path + ": no data rows");
  return out;
}

namespace {

void attach_bias_csv(ImuSequence& seq, const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  std::vector<std::string> f;
  int line_no = 0;
  seq.true_bias_g.clear();
  seq.true_bias_a.clear();
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_csv(line, f)) continue;
    if (f.size() != 7) {
      throw BadRow(path + ":" + std::to_string(line_no) + ": expected 7 columns");
    }
    seq.true_bias_g.emplace_back(parse_double(f[1], path, line_no),
                                 parse_double(f[2], path, line_no),
                                 parse_double(f[3], path, line_no));
    seq.true_bias_a.emplace_back(parse_double(f[4], path, line_no),
                                 parse_double(f[5], path, line_no),
                                 parse_double(f[6], path, line_no));
  }
  if (seq.true_bias_g.size() != seq.t.size()) {
    throw ShapeMismatch(path + ": bias rows do not match IMU rows");
  }
  seq.has_true_bias = true;
}

}  // namespace

ImuSequence load_euroc(const std::string& dir) {
  std::string imu_path, gt_path;
  if (fs::exists(fs::path(dir) / "imu.csv")) {
    imu_path = (fs::path(dir) / "imu.csv").string();
    gt_path = (fs::path(dir) / "gt.csv").string();
  } else if (fs::exists(fs::path(dir) / "mav0" / "imu0" / "data.csv")) {
    imu_path = (fs::path(dir) / "mav0" / "imu0" / "data.csv").string();
    gt_path = (fs::path(dir) / "mav0" / "state_groundtruth_estimate0" / "data.csv").string();
  } else {
    throw MissingFile("no IMU csv found under " + dir);
  }
  ImuSequence imu = load_imu_csv(imu_path);
  const auto bias_path = fs::path(dir) / "bias.csv";
  if (fs::exists(bias_path)) attach_bias_csv(imu, bias_path.string());
  const auto gt = load_gt_csv(gt_path, imu.epoch_ns);
  return synchronize(imu, gt);
}

ImuSequence synchronize(const ImuSequence& imu, const std::vector<GroundTruthSample>& gt) {
  if (gt.size() < 2) throw NoOverlap("need at least 2 ground-truth samples");
  ImuSequence out;
  out.epoch_ns = imu.epoch_ns;
  out.has_gt = true;
  out.has_true_bias = imu.has_true_bias;

  size_t j = 0;
  for (size_t k = 0; k < imu.t.size(); ++k) {
    const double t = imu.t[k];
    if (t < gt.front().t || t > gt.back().t) continue;  // never extrapolate
    while (j + 2 < gt.size() && gt[j + 1].t < t) ++j;
    const auto& a = gt[j];
    const auto& b = gt[j + 1];
    const double alpha = (t - a.t) / (b.t - a.t);

    out.t.push_back(t);
    out.gyro.push_back(imu.gyro[k]);
    out.accel.push_back(imu.accel[k]);
    if (imu.has_true_bias) {
      out.true_bias_g.push_back(imu.true_bias_g[k]);
      out.true_bias_a.push_back(imu.true_bias_a[k]);
    }
    out.gt_p.push_back(a.p + alpha * (b.p - a.p));
    out.gt_v.push_back(a.v + alpha * (b.v - a.v));
    out.gt_R.push_back(a.R * so3::exp(alpha * so3::log(a.R.inverse() * b.R)));
  }
  if (out.t.empty()) throw NoOverlap("IMU and ground-truth time ranges do not overlap");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generation

Vec3 SinusoidSpec::value(double t) const {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    out[i] = amplitude[i] * std::sin(kTwoPi * freq_hz[i] * t + phase[i]) + offset[i];
  }
  return out;
}

Vec3 SinusoidSpec::derivative(double t) const {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    const double w = kTwoPi * freq_hz[i];
    out[i] = amplitude[i] * w * std::cos(w * t + phase[i]);
  }
  return out;
}

BiasMode bias_mode_from_string(const std::string& s) {
  if (s == "constant") return BiasMode::Constant;
  if (s == "sinusoid") return BiasMode::Sinusoid;
  if (s == "relaxation") return BiasMode::Relaxation;
  if (s == "random_walk") return BiasMode::RandomWalk;
  throw BadConfig("unknown bias mode '" + s + "'");
}

ImuSequence generate_synthetic(const SyntheticConfig& cfg) {
  if (!(cfg.rate_hz > 0.0) || !(cfg.duration_s > 0.0)) {
    throw BadConfig("synthetic config needs positive rate and duration");
  }
  if (cfg.sigma_g < 0.0 || cfg.sigma_a < 0.0) throw BadConfig("noise sigma must be >= 0");

  const double dt = 1.0 / cfg.rate_hz;
  const int n = static_cast<int>(std::llround(cfg.duration_s * cfg.rate_hz)) + 1;
  if (n < 2) throw BadConfig("synthetic sequence too short");
  constexpr int kSub = 10;  // ground-truth integration at 10x the IMU rate

  ImuSequence seq;
  seq.has_gt = true;
  seq.has_true_bias = true;
  seq.t.resize(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) seq.t[static_cast<size_t>(k)] = k * dt;

  // Fine grid hits every sample time exactly.
  std::vector<double> fine;
  fine.reserve(static_cast<size_t>(n - 1) * kSub + 1);
  for (int k = 0; k + 1 < n; ++k) {
    const double t0 = seq.t[static_cast<size_t>(k)], t1 = seq.t[static_cast<size_t>(k) + 1];
    for (int j = 0; j < kSub; ++j) fine.push_back(t0 + j * (t1 - t0) / kSub);
  }
  fine.push_back(seq.t.back());
  const ode::TimeGrid fine_grid(fine);

  // Orientation by the chart solver, translation by RK4 quadrature of the
  // world acceleration.
  const auto omega_fn = [&cfg](double t) { return cfg.omega.value(t); };
  const auto so3_path = ode::integrate_so3(omega_fn, cfg.R0, fine_grid, ode::Method::Rk4);

  std::vector<Vec3> v_fine(fine.size()), p_fine(fine.size());
  v_fine[0] = cfg.v0;
  p_fine[0] = cfg.p0;
  for (size_t i = 0; i + 1 < fine.size(); ++i) {
    const double t = fine[i], h = fine[i + 1] - fine[i];
    // RK4 for v' = a_w(t), p' = v
    const Vec3 a1 = cfg.accel_world.value(t);
    const Vec3 a2 = cfg.accel_world.value(t + 0.5 * h);
    const Vec3 a4 = cfg.accel_world.value(t + h);
    const Vec3 v1 = v_fine[i];
    const Vec3 v2 = v_fine[i] + 0.5 * h * a1;
    const Vec3 v3 = v_fine[i] + 0.5 * h * a2;
    const Vec3 v4 = v_fine[i] + h * a2;
    v_fine[i + 1] = v_fine[i] + (h / 6.0) * (a1 + 4.0 * a2 + a4);
    p_fine[i + 1] = p_fine[i] + (h / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4);
  }

  // True bias series at the sample times.
  std::vector<Vec3> bias_g(static_cast<size_t>(n)), bias_a(static_cast<size_t>(n));
  const auto fill_bias = [&](const BiasSpec& spec, bool gyro_side, std::vector<Vec3>& out,
                             const char* walk_stream) {
    switch (spec.mode) {
      case BiasMode::Constant:
        for (int k = 0; k < n; ++k) out[static_cast<size_t>(k)] = spec.constant;
        break;
      case BiasMode::Sinusoid:
        for (int k = 0; k < n; ++k) {
          const double t = seq.t[static_cast<size_t>(k)];
          Vec3 b = spec.constant;
          for (int i = 0; i < 3; ++i) {
            b[i] += spec.amplitude[i] * std::sin(kTwoPi * spec.freq_hz[i] * t + spec.phase[i]);
          }
          out[static_cast<size_t>(k)] = b;
        }
        break;
      case BiasMode::Relaxation: {
        // b' = -lambda (b - coupling * u_true), integrated on the fine grid.
        Vec3 b = spec.constant;
        const auto u_true = [&](size_t fi) -> Vec3 {
          const double t = fine[fi];
          if (gyro_side) return cfg.omega.value(t);
          return so3_path.rot[fi].inverse() * (cfg.accel_world.value(t) - cfg.gravity);
        };
        out[0] = b;
        size_t next_sample = 1;
        for (size_t i = 0; i + 1 < fine.size(); ++i) {
          const double h = fine[i + 1] - fine[i];
          b += h * (-spec.lambda * (b - spec.coupling * u_true(i)));
          if ((i + 1) % kSub == 0) out[next_sample++] = b;
        }
        break;
      }
      case BiasMode::RandomWalk: {
        RandomStream rng(cfg.seed, walk_stream);
        Vec3 b = spec.constant;
        out[0] = b;
        for (int k = 1; k < n; ++k) {
          const double h = seq.t[static_cast<size_t>(k)] - seq.t[static_cast<size_t>(k) - 1];
          for (int i = 0; i < 3; ++i) b[i] += spec.walk_sigma * std::sqrt(h) * rng.gaussian();
          out[static_cast<size_t>(k)] = b;
        }
        break;
      }
    }
  };
  fill_bias(cfg.bias_g, true, bias_g, "walk-gyro");
  fill_bias(cfg.bias_a, false, bias_a, "walk-accel");

  RandomStream noise_g(cfg.seed, "noise-gyro");
  RandomStream noise_a(cfg.seed, "noise-accel");

  seq.gyro.resize(static_cast<size_t>(n));
  seq.accel.resize(static_cast<size_t>(n));
  seq.gt_R.resize(static_cast<size_t>(n));
  seq.gt_v.resize(static_cast<size_t>(n));
  seq.gt_p.resize(static_cast<size_t>(n));
  seq.true_bias_g = bias_g;
  seq.true_bias_a = bias_a;

  for (int k = 0; k < n; ++k) {
    const size_t fi = static_cast<size_t>(k) * kSub;
    const double t = seq.t[static_cast<size_t>(k)];
    const Rotation& R = so3_path.rot[fi];
    seq.gt_R[static_cast<size_t>(k)] = R;
    seq.gt_v[static_cast<size_t>(k)] = v_fine[fi];
    seq.gt_p[static_cast<size_t>(k)] = p_fine[fi];

    const Vec3 omega = cfg.omega.value(t);
    const Vec3 a_body = R.inverse() * (cfg.accel_world.value(t) - cfg.gravity);

    Vec3 ng = Vec3::Zero(), na = Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
      if (cfg.sigma_g > 0.0) ng[i] = cfg.sigma_g * noise_g.gaussian();
      if (cfg.sigma_a > 0.0) na[i] = cfg.sigma_a * noise_a.gaussian();
    }
    seq.gyro[static_cast<size_t>(k)] = cfg.misalign_g * omega + bias_g[static_cast<size_t>(k)] + ng;
    seq.accel[static_cast<size_t>(k)] =
        cfg.misalign_a * a_body + bias_a[static_cast<size_t>(k)] + na;
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Writers

namespace {

std::int64_t to_ns(double t, std::int64_t epoch_ns) {
  return epoch_ns + static_cast<std::int64_t>(std::llround(t * 1e9));
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

void write_imu_csv(const ImuSequence& seq, const std::string& path) {
  std::string s = "#timestamp [ns],w_x [rad s^-1],w_y [rad s^-1],w_z [rad s^-1],a_x [m s^-2],a_y "
                  "[m s^-2],a_z [m s^-2]\n";
  for (size_t k = 0; k < seq.t.size(); ++k) {
    s += std::to_string(to_ns(seq.t[k], seq.epoch_ns));
    for (int i = 0; i < 3; ++i) {
      s += ',';
      format_double(s, seq.gyro[k][i]);
    }
    for (int i = 0; i < 3; ++i) {
      s += ',';
      format_double(s, seq.accel[k][i]);
    }
    s += '\n';
  }
  write_file(path, s);
}

void write_gt_csv(const ImuSequence& seq, const std::string& path) {
  if (!seq.has_gt) throw ShapeMismatch("sequence has no ground truth to write");
  std::string s = "#timestamp [ns],p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z,bw_x,bw_y,bw_z,ba_x,"
                  "ba_y,ba_z\n";
  for (size_t k = 0; k < seq.t.size(); ++k) {
    s += std::to_string(to_ns(seq.t[k], seq.epoch_ns));
    for (int i = 0; i < 3; ++i) {
      s += ',';
      format_double(s, seq.gt_p[k][i]);
    }
    const Eigen::Quaterniond q = seq.gt_R[k].quaternion();
    const double qw[4] = {q.w(), q.x(), q.y(), q.z()};
    for (double c : qw) {
      s += ',';
      format_double(s, c);
    }
    for (int i = 0; i < 3; ++i) {
      s += ',';
      format_double(s, seq.gt_v[k][i]);
    }
    s += ",0,0,0,0,0,0\n";
  }
  write_file(path, s);
}

void write_bias_csv(const ImuSequence& seq, const std::string& path) {
  if (!seq.has_true_bias) throw ShapeMismatch("sequence has no true bias series");
  std::string s = "#timestamp [ns],bw_x,bw_y,bw_z,ba_x,ba_y,ba_z\n";
  for (size_t k = 0; k < seq.t.size(); ++k) {
    s += std::to_string(to_ns(seq.t[k], seq.epoch_ns));
    for (int i = 0; i < 3; ++i) {
      s += ',';
      format_double(s, seq.true_bias_g[k][i]);
    }
    for (int i = 0; i < 3; ++i) {
      s += ',';
      format_double(s, seq.true_bias_a[k][i]);
    }
    s += '\n';
  }
  write_file(path, s);
}

void write_tum_trajectory(const std::vector<double>& t, const std::vector<Rotation>& R,
                          const std::vector<Vec3>& p, const std::string& path) {
  if (t.size() != R.size() || t.size() != p.size()) {
    throw LengthMismatch("trajectory arrays differ in length");
  }
  std::string s;
  for (size_t k = 0; k < t.size(); ++k) {
    format_double(s, t[k]);
    for (int i = 0; i < 3; ++i) {
      s += ' ';
      format_double(s, p[k][i]);
    }
    const Eigen::Quaterniond q = R[k].quaternion();
    const double qx[4] = {q.x(), q.y(), q.z(), q.w()};  // w last in this format
    for (double c : qx) {
      s += ' ';
      format_double(s, c);
    }
    s += '\n';
  }
  write_file(path, s);
}

std::vector<TumPose> load_tum_trajectory(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<TumPose> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos || line[begin] == '#') continue;
    std::istringstream ss(line);
    double t, px, py, pz, qx, qy, qz, qw;
    if (!(ss >> t >> px >> py >> pz >> qx >> qy >> qz >> qw)) {
      throw BadRow(path + ":" + std::to_string(line_no) + ": expected 8 fields");
    }
    out.push_back({t, Rotation::from_quaternion(qw, qx, qy, qz), Vec3(px, py, pz)});
  }
  if (out.empty()) throw BadRow(path + ": no poses");
  return out;
}

void write_sequence_dir(const ImuSequence& seq, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  write_imu_csv(seq, (fs::path(dir) / "imu.csv").string());
  if (seq.has_gt) write_gt_csv(seq, (fs::path(dir) / "gt.csv").string());
  if (seq.has_true_bias) write_bias_csv(seq, (fs::path(dir) / "bias.csv").string());
}

std::vector<Vec3> smooth_moving_average(const std::vector<Vec3>& v, int window) {
  if (window <= 0) return v;
  std::vector<Vec3> out(v.size());
  const int n = static_cast<int>(v.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - window);
    const int hi = std::min(n - 1, i + window);
    Vec3 acc = Vec3::Zero();
    for (int j = lo; j <= hi; ++j) acc += v[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

}  // namespace biasdyn

#include "biasdyn/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "biasdyn/errors.hpp"

namespace biasdyn {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string last = trim(cur);
  if (!last.empty() || !out.empty()) out.push_back(last);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw BadConfig("bad number for " + what + ": '" + s + "'");
  return v;
}

}  // namespace

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw BadConfig("line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw BadConfig("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw BadConfig("line " + std::to_string(line_no) + ": empty key");
    cfg.kv_[section + "." + key] = value;
  }
  return cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

bool Config::has(const std::string& section, const std::string& key) const {
  return kv_.count(section + "." + key) > 0;
}

std::string Config::raw(const std::string& section, const std::string& key) const {
  const auto it = kv_.find(section + "." + key);
  if (it == kv_.end()) {
    throw BadConfig("missing config key [" + section + "] " + key);
  }
  return it->second;
}

std::string Config::get_string(const std::string& section, const std::string& key) const {
  return raw(section, key);
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? raw(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key) const {
  return to_double(raw(section, key), section + "." + key);
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

long long Config::get_int(const std::string& section, const std::string& key,
                          long long fallback) const {
  if (!has(section, key)) return fallback;
  const double v = get_double(section, key);
  if (v != std::floor(v)) throw BadConfig("expected integer for [" + section + "] " + key);
  return static_cast<long long>(v);
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = raw(section, key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw BadConfig("expected boolean for [" + section + "] " + key);
}

Vec3 Config::get_vec3(const std::string& section, const std::string& key,
                      const Vec3& fallback) const {
  if (!has(section, key)) return fallback;
  const auto parts = split_list(raw(section, key));
  if (parts.size() != 3) throw BadConfig("expected 3 components for [" + section + "] " + key);
  return Vec3(to_double(parts[0], key), to_double(parts[1], key), to_double(parts[2], key));
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key,
                                     const std::vector<double>& fallback) const {
  if (!has(section, key)) return fallback;
  std::vector<double> out;
  for (const auto& p : split_list(raw(section, key))) out.push_back(to_double(p, key));
  return out;
}

std::vector<std::string> Config::get_string_list(const std::string& section,
                                                 const std::string& key) const {
  if (!has(section, key)) return {};
  auto parts = split_list(raw(section, key));
  parts.erase(std::remove_if(parts.begin(), parts.end(),
                             [](const std::string& s) { return s.empty(); }),
              parts.end());
  return parts;
}

namespace {

SinusoidSpec read_sinusoid(const Config& c, const std::string& section, const std::string& prefix) {
  SinusoidSpec s;
  s.amplitude = c.get_vec3(section, prefix + "_amplitude", s.amplitude);
  s.freq_hz = c.get_vec3(section, prefix + "_freq_hz", s.freq_hz);
  s.phase = c.get_vec3(section, prefix + "_phase", s.phase);
  s.offset = c.get_vec3(section, prefix + "_offset", s.offset);
  return s;
}

BiasSpec read_bias(const Config& c, const std::string& section, const std::string& prefix) {
  BiasSpec b;
  b.mode = bias_mode_from_string(c.get_string(section, prefix + "_mode", "constant"));
  b.constant = c.get_vec3(section, prefix + "_constant", b.constant);
  b.amplitude = c.get_vec3(section, prefix + "_amplitude", b.amplitude);
  b.freq_hz = c.get_vec3(section, prefix + "_freq_hz", b.freq_hz);
  b.phase = c.get_vec3(section, prefix + "_phase", b.phase);
  b.lambda = c.get_double(section, prefix + "_lambda", b.lambda);
  b.walk_sigma = c.get_double(section, prefix + "_walk_sigma", b.walk_sigma);
  const Vec3 diag = c.get_vec3(section, prefix + "_coupling_diag", Vec3::Zero());
  b.coupling = diag.asDiagonal();
  return b;
}

Mat3 read_misalignment(const Config& c, const std::string& section, const std::string& key) {
  if (!c.has(section, key)) return Mat3::Identity();
  const auto rows = c.get_list(section, key, {});
  if (rows.size() != 9) throw BadConfig("expected 9 entries (row-major) for [" + section + "] " + key);
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) m(r, col) = rows[static_cast<size_t>(3 * r + col)];
  return m;
}

}  // namespace

RunConfig RunConfig::from_config(const Config& c) {
  RunConfig r;
  r.seed = static_cast<std::uint64_t>(c.get_int("", "seed", 0));
  r.output_dir = c.get_string("output", "dir", c.get_string("", "output_dir", "out"));

  r.train_dirs = c.get_string_list("paths", "train");
  r.test_dirs = c.get_string_list("paths", "test");

  auto& s = r.synth;
  s.duration_s = c.get_double("synthetic", "duration_s", s.duration_s);
  s.rate_hz = c.get_double("synthetic", "rate_hz", s.rate_hz);
  s.omega = read_sinusoid(c, "synthetic", "omega");
  s.accel_world = read_sinusoid(c, "synthetic", "accel");
  s.bias_g = read_bias(c, "synthetic", "bias_g");
  s.bias_a = read_bias(c, "synthetic", "bias_a");
  s.sigma_g = c.get_double("synthetic", "sigma_g", 0.0);
  s.sigma_a = c.get_double("synthetic", "sigma_a", 0.0);
  s.misalign_g = read_misalignment(c, "synthetic", "misalign_g");
  s.misalign_a = read_misalignment(c, "synthetic", "misalign_a");
  s.gravity = c.get_vec3("synthetic", "gravity", s.gravity);
  s.v0 = c.get_vec3("synthetic", "v0", s.v0);
  s.p0 = c.get_vec3("synthetic", "p0", s.p0);
  s.seed = r.seed;

  const auto widths = c.get_list("net", "hidden", {32, 32});
  r.hidden_widths.clear();
  for (double w : widths) r.hidden_widths.push_back(static_cast<int>(w));

  auto& t = r.train;
  t.segment_length = static_cast<int>(c.get_int("train", "segment_length", 16));
  t.epochs = static_cast<int>(c.get_int("train", "epochs", 1800));
  t.learning_rate = c.get_double("train", "learning_rate", 0.005);
  // StepLR constants are unstated in the literature this follows; these
  // halve the rate twice over the default 1800 epochs.
  t.lr_step_epochs = static_cast<int>(c.get_int("train", "lr_step_epochs", 600));
  t.lr_decay = c.get_double("train", "lr_decay", 0.5);
  t.batch_size = static_cast<int>(c.get_int("train", "batch_size", 64));
  t.stride = static_cast<int>(c.get_int("train", "stride", 4));
  t.seed = r.seed;
  t.gravity = c.get_vec3("train", "gravity", s.gravity);
  t.weight_rotation = c.get_double("train", "weight_rotation", 1.0);
  t.weight_vel_pos = c.get_double("train", "weight_vel_pos", 1.0);
  t.train_fraction = c.get_double("train", "train_fraction", 0.8);
  t.solver.method = ode::method_from_string(c.get_string("train", "method", "euler"));
  t.solver.chart_switch_threshold = c.get_double("train", "chart_switch_threshold", -1.0);
  t.parallel = c.get_bool("train", "parallel", true);
  t.init_bias_noise_g = c.get_double("train", "init_bias_noise_g", 0.0);
  t.init_bias_noise_a = c.get_double("train", "init_bias_noise_a", 0.0);

  r.stage = c.get_string("train", "stage", "both");
  r.eval_method = ode::method_from_string(c.get_string("solver", "eval_method", "rk4"));
  r.metric_distances = c.get_list("metrics", "distances", {5.0, 10.0, 15.0, 20.0});
  const std::string align = c.get_string("metrics", "alignment", "first_pose");
  if (align == "first_pose") {
    r.alignment = metrics::Alignment::FirstPose;
  } else if (align == "least_squares") {
    r.alignment = metrics::Alignment::LeastSquares;
  } else {
    throw BadConfig("unknown alignment '" + align + "'");
  }
  r.smooth_v_window = static_cast<int>(c.get_int("train", "smooth_v_window", 0));
  return r;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_config(Config::from_file(path));
}

}  // namespace biasdyn

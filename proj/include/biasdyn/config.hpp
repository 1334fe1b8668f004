#pragma once

#include <map>
#include <string>
#include <vector>

#include "biasdyn/dataio.hpp"
#include "biasdyn/metrics.hpp"
#include "biasdyn/net.hpp"
#include "biasdyn/ode.hpp"
#include "biasdyn/trainer.hpp"

namespace biasdyn {

/// Declarative run configuration: `key = value` lines grouped into
/// [section] tables, '#' comments, comma-separated lists for vectors.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  Vec3 get_vec3(const std::string& section, const std::string& key, const Vec3& fallback) const;
  std::vector<double> get_list(const std::string& section, const std::string& key,
                               const std::vector<double>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& section, const std::string& key)
      const;

 private:
  std::string raw(const std::string& section, const std::string& key) const;
  std::map<std::string, std::string> kv_;  // "section.key" -> value
};

/// Everything a pipeline run needs: dataset paths or synthetic spec, network
/// and training settings, solver method, metric distances, output directory.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  std::vector<std::string> train_dirs;
  std::vector<std::string> test_dirs;

  SyntheticConfig synth;
  std::vector<int> hidden_widths = {32, 32};
  TrainConfig train;
  std::string stage = "both";  // gyro | accel | both | linear
  ode::Method eval_method = ode::Method::Rk4;
  std::vector<double> metric_distances = {5.0, 10.0, 15.0, 20.0};
  metrics::Alignment alignment = metrics::Alignment::FirstPose;
  int smooth_v_window = 0;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_config(const Config& c);
};

}  // namespace biasdyn

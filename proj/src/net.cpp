#include "biasdyn/net.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "biasdyn/errors.hpp"
#include "biasdyn/rng.hpp"

namespace biasdyn {

namespace {

// %.17g round-trips doubles exactly.
void write_double(std::ostream& out, double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

double read_double(std::istream& in) {
  double v;
  if (!(in >> v)) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

NetConfig NetConfig::make_gyro(std::uint64_t seed) {
  NetConfig cfg;
  cfg.seed = seed;
  cfg.scale_bias = Vec3::Constant(0.05);     // rad/s
  cfg.scale_meas = Vec3::Constant(1.0);      // rad/s
  cfg.scale_meas_dot = Vec3::Constant(10.0); // rad/s^2
  return cfg;
}

NetConfig NetConfig::make_accel(std::uint64_t seed) {
  NetConfig cfg;
  cfg.seed = seed;
  cfg.scale_bias = Vec3::Constant(0.5);        // m/s^2
  cfg.scale_meas = Vec3::Constant(10.0);       // m/s^2
  cfg.scale_meas_dot = Vec3::Constant(100.0);  // m/s^3
  return cfg;
}

int MlpParams::parameter_count() const {
  int n = 0;
  for (const auto& l : layers) n += static_cast<int>(l.W.size() + l.b.size());
  return n;
}

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::VectorXd theta(parameter_count());
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) theta[k++] = l.W(r, c);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) theta[k++] = l.b[r];
  }
  return theta;
}

void MlpParams::unflatten(const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count()) throw ShapeMismatch("flattened parameter size mismatch");
  Eigen::Index k = 0;
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = theta[k++];
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = theta[k++];
  }
}

MlpGrad MlpGrad::zeros_like(const MlpParams& p) {
  MlpGrad g;
  g.dW.reserve(p.layers.size());
  g.db.reserve(p.layers.size());
  for (const auto& l : p.layers) {
    g.dW.emplace_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
    g.db.emplace_back(Eigen::VectorXd::Zero(l.b.size()));
  }
  return g;
}

void MlpGrad::setZero() {
  for (auto& m : dW) m.setZero();
  for (auto& v : db) v.setZero();
}

void MlpGrad::add_scaled(const MlpGrad& other, double s) {
  for (size_t i = 0; i < dW.size(); ++i) {
    dW[i] += s * other.dW[i];
    db[i] += s * other.db[i];
  }
}

Eigen::VectorXd MlpGrad::flatten() const {
  Eigen::Index n = 0;
  for (size_t i = 0; i < dW.size(); ++i) n += dW[i].size() + db[i].size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (size_t i = 0; i < dW.size(); ++i) {
    for (Eigen::Index r = 0; r < dW[i].rows(); ++r)
      for (Eigen::Index c = 0; c < dW[i].cols(); ++c) out[k++] = dW[i](r, c);
    for (Eigen::Index r = 0; r < db[i].size(); ++r) out[k++] = db[i][r];
  }
  return out;
}

MlpParams init_params(const NetConfig& cfg) {
  if (cfg.hidden_widths.empty()) throw BadConfig("net needs at least one hidden width");
  for (int w : cfg.hidden_widths) {
    if (w < 1) throw BadConfig("hidden widths must be >= 1");
  }

  RandomStream rng(cfg.seed, "init");
  auto xavier = [&rng](Eigen::Index rows, Eigen::Index cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd W(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) W(r, c) = rng.uniform(-a, a);
    return W;
  };

  MlpParams p;
  p.input_scale.resize(9);
  p.input_scale << cfg.scale_bias, cfg.scale_meas, cfg.scale_meas_dot;

  int prev = 9;
  // Linear embed into the first hidden width.
  p.layers.push_back({xavier(cfg.hidden_widths[0], prev),
                      Eigen::VectorXd::Zero(cfg.hidden_widths[0]), false, false});
  prev = cfg.hidden_widths[0];
  // One tanh block per hidden width; equal widths get the residual skip.
  for (int w : cfg.hidden_widths) {
    p.layers.push_back({xavier(w, prev), Eigen::VectorXd::Zero(w), true, w == prev});
    prev = w;
  }
  // Head, scaled down so the fresh field is near zero.
  p.layers.push_back({1e-2 * xavier(3, prev), Eigen::VectorXd::Zero(3), false, false});
  return p;
}

static void ensure_workspace(const MlpParams& p, MlpWorkspace& ws) {
  const size_t n = p.layers.size();
  if (ws.h.size() != n + 1) {
    ws.h.resize(n + 1);
    ws.z.resize(n);
    ws.g.resize(n + 1);
  }
}

static void forward_cached(const MlpParams& p, const Vec3& bias, const Vec3& meas,
                           const Vec3& meas_dot, MlpWorkspace& ws) {
  ensure_workspace(p, ws);
  ws.h[0].resize(9);
  ws.h[0] << bias, meas, meas_dot;
  ws.h[0].array() /= p.input_scale.array();
  for (size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    ws.z[i].noalias() = l.W * ws.h[i];
    ws.z[i] += l.b;
    if (l.activation) {
      ws.h[i + 1] = ws.z[i].array().tanh();
      if (l.residual) ws.h[i + 1] += ws.h[i];
    } else {
      ws.h[i + 1] = ws.z[i];
      if (l.residual) ws.h[i + 1] += ws.h[i];
    }
  }
}

Vec3 forward(const MlpParams& p, const Vec3& bias, const Vec3& meas, const Vec3& meas_dot,
             MlpWorkspace& ws) {
  forward_cached(p, bias, meas, meas_dot, ws);
  return Vec3(ws.h.back());
}

// Shared backward sweep; leaves the gradient w.r.t. the normalized input in
// ws.g[0]. ws.z is reused as the per-layer pre-activation gradient buffer.
static void backward(const MlpParams& p, const Vec3& upstream, MlpGrad* grad, MlpWorkspace& ws) {
  const auto n = p.layers.size();
  ws.g[n] = upstream;
  for (size_t i = n; i-- > 0;) {
    const auto& l = p.layers[i];
    if (l.activation) {
      // d tanh(z) = 1 - tanh(z)^2; tanh(z) is h[i+1] minus the residual part.
      if (l.residual) {
        ws.z[i] = ((ws.h[i + 1] - ws.h[i]).array().square() * -1.0 + 1.0).matrix();
      } else {
        ws.z[i] = (ws.h[i + 1].array().square() * -1.0 + 1.0).matrix();
      }
      ws.z[i].array() *= ws.g[i + 1].array();
    } else {
      ws.z[i] = ws.g[i + 1];
    }
    if (grad) {
      grad->dW[i].noalias() += ws.z[i] * ws.h[i].transpose();
      grad->db[i] += ws.z[i];
    }
    ws.g[i].noalias() = l.W.transpose() * ws.z[i];
    if (l.residual) ws.g[i] += ws.g[i + 1];
  }
}

Vec3 forward_grad(const MlpParams& p, const Vec3& bias, const Vec3& meas, const Vec3& meas_dot,
                  const Vec3& upstream, MlpGrad& grad, MlpWorkspace& ws) {
  forward_cached(p, bias, meas, meas_dot, ws);
  backward(p, upstream, &grad, ws);
  return Vec3(ws.g[0].head<3>().array() / p.input_scale.head<3>().array());
}

Eigen::Matrix<double, 3, 9> input_jacobian(const MlpParams& p, const Vec3& bias, const Vec3& meas,
                                           const Vec3& meas_dot) {
  MlpWorkspace ws;
  Eigen::Matrix<double, 3, 9> J;
  for (int r = 0; r < 3; ++r) {
    forward_cached(p, bias, meas, meas_dot, ws);
    backward(p, Vec3::Unit(r), nullptr, ws);
    J.row(r) = (ws.g[0].array() / p.input_scale.array()).transpose();
  }
  return J;
}

// -- serialization --

namespace {
constexpr const char* kMlpMagic = "biasdyn-mlp";
constexpr const char* kLinearMagic = "biasdyn-linear";
}  // namespace

void save_mlp(const MlpParams& p, std::ostream& out) {
  out << kMlpMagic << " 1\n";
  out << "scales";
  for (Eigen::Index i = 0; i < p.input_scale.size(); ++i) {
    out << ' ';
    write_double(out, p.input_scale[i]);
  }
  out << "\nlayers " << p.layers.size() << "\n";
  for (const auto& l : p.layers) {
    out << "layer " << l.W.rows() << ' ' << l.W.cols() << ' ' << (l.activation ? 1 : 0) << ' '
        << (l.residual ? 1 : 0) << "\n";
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) {
        if (c) out << ' ';
        write_double(out, l.W(r, c));
      }
      out << "\n";
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) {
      if (r) out << ' ';
      write_double(out, l.b[r]);
    }
    out << "\n";
  }
}

MlpParams load_mlp(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMlpMagic || version != 1) {
    throw IoError("not a recognized mlp checkpoint");
  }
  std::string tok;
  MlpParams p;
  in >> tok;
  if (tok != "scales") throw IoError("bad checkpoint: expected scales");
  p.input_scale.resize(9);
  for (int i = 0; i < 9; ++i) p.input_scale[i] = read_double(in);
  size_t nlayers = 0;
  in >> tok >> nlayers;
  if (tok != "layers") throw IoError("bad checkpoint: expected layers");
  for (size_t i = 0; i < nlayers; ++i) {
    Eigen::Index rows, cols;
    int act, res;
    in >> tok >> rows >> cols >> act >> res;
    if (tok != "layer" || !in) throw IoError("bad checkpoint: expected layer header");
    DenseLayer l;
    l.W.resize(rows, cols);
    l.b.resize(rows);
    l.activation = act != 0;
    l.residual = res != 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) l.W(r, c) = read_double(in);
    for (Eigen::Index r = 0; r < rows; ++r) l.b[r] = read_double(in);
    p.layers.push_back(std::move(l));
  }
  return p;
}

void save_mlp_file(const MlpParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  save_mlp(p, out);
  if (!out) throw IoError("write failed: " + path);
}

MlpParams load_mlp_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open: " + path);
  return load_mlp(in);
}

void save_linear(const LinearCalib& gyro, const LinearCalib& accel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << kLinearMagic << " 1\n";
  for (const LinearCalib* c : {&gyro, &accel}) {
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) {
        write_double(out, c->A(r, col));
        out << ' ';
      }
    for (int r = 0; r < 3; ++r) {
      write_double(out, c->b[r]);
      out << (r == 2 ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

std::pair<LinearCalib, LinearCalib> load_linear(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open: " + path);
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kLinearMagic || version != 1) {
    throw IoError("not a recognized linear checkpoint");
  }
  std::pair<LinearCalib, LinearCalib> out;
  for (LinearCalib* c : {&out.first, &out.second}) {
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) c->A(r, col) = read_double(in);
    for (int r = 0; r < 3; ++r) c->b[r] = read_double(in);
  }
  return out;
}

bool is_linear_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open: " + path);
  std::string magic;
  in >> magic;
  return magic == kLinearMagic;
}

}  // namespace biasdyn

#include "ff/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ff/errors.hpp"
#include "ff/trajgen.hpp"

namespace ff {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

double get_number(const json& j, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError("'" + key + "' must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
  return j.at(key).get<int>();
}

bool get_bool(const json& j, const std::string& key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigError("'" + key + "' must be a boolean");
  return j.at(key).get<bool>();
}

Vector get_vector(const json& j, const std::string& key, int expected_size) {
  if (!j.at(key).is_array()) throw ConfigError("'" + key + "' must be an array of numbers");
  const auto& arr = j.at(key);
  Vector v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ConfigError("'" + key + "' must contain numbers only");
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  if (expected_size >= 0 && v.size() != expected_size) {
    throw ConfigError("'" + key + "' must have " + std::to_string(expected_size) + " entries");
  }
  return v;
}

// A matrix entry is either a scalar s (meaning s * I) or a full 2-D array.
Matrix get_matrix(const json& j, const std::string& key, int dim, double fallback_scale) {
  if (!j.contains(key)) return fallback_scale * Matrix::Identity(dim, dim);
  const auto& entry = j.at(key);
  if (entry.is_number()) return entry.get<double>() * Matrix::Identity(dim, dim);
  if (!entry.is_array()) throw ConfigError("'" + key + "' must be a number or a 2-D array");
  Matrix m(entry.size(), entry.size());
  for (std::size_t r = 0; r < entry.size(); ++r) {
    if (!entry[r].is_array() || entry[r].size() != entry.size()) {
      throw ConfigError("'" + key + "' must be square");
    }
    for (std::size_t c = 0; c < entry.size(); ++c) {
      if (!entry[r][c].is_number()) throw ConfigError("'" + key + "' must contain numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = entry[r][c].get<double>();
    }
  }
  if (m.rows() != dim) {
    throw ConfigError("'" + key + "' must be " + std::to_string(dim) + "x" + std::to_string(dim));
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

std::vector<double> make_grid(double horizon, double step) {
  if (!(horizon > 0.0) || !(step > 0.0)) throw ConfigError("grid: T and step must be positive");
  const auto count = static_cast<std::size_t>(std::llround(horizon / step));
  if (count < 1 || std::abs(count * step - horizon) > 1e-9 * horizon) {
    throw ConfigError("grid: step must divide T");
  }
  std::vector<double> grid(count + 1);
  for (std::size_t i = 0; i <= count; ++i) grid[i] = step * static_cast<double>(i);
  grid.back() = horizon;
  return grid;
}

Matrix spd_inverse(const Matrix& s) {
  const Matrix l = chol_lower(s);
  Matrix inv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(s.rows(), s.rows()));
  inv = l.transpose().triangularView<Eigen::Upper>().solve(inv);
  return 0.5 * (inv + inv.transpose()).eval();
}

struct RawConfig {
  json root;
  std::string system;
  int links = 1;
};

RawConfig parse_and_check(const std::string& text) {
  RawConfig raw;
  try {
    raw.root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(raw.root,
             {"system", "trajectory", "lqr", "goal", "grid", "algorithm", "integration", "seed",
              "threads", "output", "output_dir"},
             "config");
  if (!raw.root.contains("system")) throw ConfigError("config: missing 'system'");
  const json& sys = raw.root.at("system");
  check_keys(sys, {"name", "links", "mass", "length", "gravity", "damping"}, "system");
  if (!sys.contains("name") || !sys.at("name").is_string()) {
    throw ConfigError("system: missing 'name'");
  }
  raw.system = sys.at("name").get<std::string>();
  static const std::set<std::string> kKnown = {"pendulum", "quadcopter", "nlink",
                                               "nlink_linearized", "scalar_decay"};
  if (!kKnown.count(raw.system)) throw ConfigError("system: unknown name '" + raw.system + "'");
  raw.links = get_int(sys, "links", 1);
  if (raw.links < 1) throw ConfigError("system: links must be >= 1");

  if (raw.root.contains("trajectory")) {
    check_keys(raw.root.at("trajectory"),
               {"source", "file", "x_eq", "u_eq", "x0", "xT", "segments", "effort_weight"},
               "trajectory");
  }
  if (raw.root.contains("lqr")) check_keys(raw.root.at("lqr"), {"Q", "R", "S_T"}, "lqr");
  if (raw.root.contains("goal")) {
    check_keys(raw.root.at("goal"), {"center", "Q_G", "c_G", "volume_match_r2"}, "goal");
  }
  if (raw.root.contains("grid")) check_keys(raw.root.at("grid"), {"T", "step"}, "grid");
  if (raw.root.contains("algorithm")) {
    check_keys(raw.root.at("algorithm"),
               {"c", "gamma1", "gamma2", "tau1", "tau2", "derivative_samples", "derivative_check",
                "strictness_margin", "nlp_tol"},
               "algorithm");
  }
  if (raw.root.contains("integration")) {
    check_keys(raw.root.at("integration"), {"abs_tol", "rel_tol", "max_step", "max_steps"},
               "integration");
  }
  if (raw.root.contains("output")) check_keys(raw.root.at("output"), {"svg"}, "output");
  return raw;
}

FunnelParams parse_params(const json& root, const std::string& system) {
  FunnelParams p;
  if (system == "nlink" || system == "nlink_linearized") p.tau2 = 50;
  const json alg = root.contains("algorithm") ? root.at("algorithm") : json::object();
  p.c = get_number(alg, "c", p.c);
  p.gamma1 = get_number(alg, "gamma1", p.gamma1);
  p.gamma2 = get_number(alg, "gamma2", p.gamma2);
  p.tau1 = get_int(alg, "tau1", p.tau1);
  p.tau2 = get_int(alg, "tau2", p.tau2);
  p.derivative_samples = get_int(alg, "derivative_samples", p.derivative_samples);
  p.derivative_check = get_bool(alg, "derivative_check", p.derivative_check);
  p.strictness_margin = get_number(alg, "strictness_margin", p.strictness_margin);
  p.nlp_tol = get_number(alg, "nlp_tol", p.nlp_tol);
  if (!(p.c > 1.0)) throw ConfigError("algorithm: c must exceed 1");
  if (!(p.gamma1 > 0.0 && p.gamma1 < 1.0)) throw ConfigError("algorithm: gamma1 must be in (0,1)");
  if (!(p.gamma2 > 0.0 && p.gamma2 < 1.0)) throw ConfigError("algorithm: gamma2 must be in (0,1)");
  if (p.tau1 < 1 || p.tau2 < 1) throw ConfigError("algorithm: tau1 and tau2 must be >= 1");
  if (p.derivative_samples < 1) throw ConfigError("algorithm: derivative_samples must be >= 1");
  if (p.strictness_margin < 0.0) throw ConfigError("algorithm: strictness_margin must be >= 0");
  if (!(p.nlp_tol > 0.0)) throw ConfigError("algorithm: nlp_tol must be positive");
  return p;
}

IntegrationConfig parse_integration(const json& root) {
  IntegrationConfig cfg;
  const json ig = root.contains("integration") ? root.at("integration") : json::object();
  cfg.abs_tol = get_number(ig, "abs_tol", cfg.abs_tol);
  cfg.rel_tol = get_number(ig, "rel_tol", cfg.rel_tol);
  cfg.max_step = get_number(ig, "max_step", cfg.max_step);
  cfg.max_steps = static_cast<std::int64_t>(get_number(ig, "max_steps", 1e7));
  if (cfg.abs_tol <= 0 || cfg.rel_tol <= 0 || cfg.max_step <= 0 || cfg.max_steps <= 0) {
    throw ConfigError("integration: all fields must be positive");
  }
  return cfg;
}

// The n-link experiments run in joint coordinates (each angle relative to
// the previous link), where the upright equilibrium is (pi/2, 0, ..., 0).
// Joint coordinates theta relate to the absolute link angles phi of the
// dynamics module by phi = L theta with L lower-triangular ones; generalized
// forces pull back as u_joint = L^T u_abs.
struct JointNlinkLane {
  int n = 0;
  Matrix l;           // phi = L theta
  Matrix a;           // upright linearization of the simplified joint model
  Matrix b;           // [0; -I]
  Matrix s;           // CARE cost-to-go, joint coordinates
  Matrix gain;        // simplified-model input u* = -gain * delta
  Matrix a_closed;    // a - b * gain
  Vector upright;     // (pi/2, 0, ..., 0, 0, ..., 0)
};

JointNlinkLane build_joint_nlink(int n, double g, const Matrix& q, const Matrix& r) {
  JointNlinkLane lane;
  lane.n = n;
  lane.l = Matrix::Ones(n, n).triangularView<Eigen::Lower>();
  lane.upright = Vector::Zero(2 * n);
  lane.upright(0) = 1.5707963267948966;

  Vector phi_up = Vector::Constant(n, 1.5707963267948966);
  const Matrix m_abs = nlink_mass_matrix(n, phi_up);
  Matrix d = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) d(j, j) = static_cast<double>(n - j);
  const Matrix m_joint = lane.l.transpose() * m_abs * lane.l;
  const Matrix grav = lane.l.transpose() * (g * d) * lane.l;

  lane.a = Matrix::Zero(2 * n, 2 * n);
  lane.a.topRightCorner(n, n).setIdentity();
  const Matrix lm = chol_lower(m_joint);
  Matrix minv_grav = lm.triangularView<Eigen::Lower>().solve(grav);
  minv_grav = lm.transpose().triangularView<Eigen::Upper>().solve(minv_grav);
  lane.a.bottomLeftCorner(n, n) = minv_grav;
  lane.b = Matrix::Zero(2 * n, n);
  lane.b.bottomRows(n) = -Matrix::Identity(n, n);

  lane.s = care_kleinman(lane.a, lane.b, q, r);
  const Eigen::LLT<Matrix> r_llt(r);
  lane.gain = r_llt.solve(lane.b.transpose() * lane.s);
  lane.a_closed = lane.a - lane.b * lane.gain;
  return lane;
}

// Full nonlinear n-link dynamics expressed in joint coordinates by wrapping
// the absolute-angle system.
ControlSystem joint_nlink_system(int n, double g) {
  ControlSystem abs_sys = make_nlink(n, g);
  Matrix l = Matrix::Ones(n, n).triangularView<Eigen::Lower>();
  Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  Matrix lt_inv = linv.transpose();

  ControlSystem sys;
  sys.state_dim = 2 * n;
  sys.control_dim = n;
  sys.rhs = [abs_sys, l, linv, lt_inv, n](const Vector& x, const Vector& u, double t) {
    Vector x_abs(2 * n);
    x_abs.head(n) = l * x.head(n);
    x_abs.tail(n) = l * x.tail(n);
    const Vector dx_abs = abs_sys.rhs(x_abs, lt_inv * u, t);
    Vector dx(2 * n);
    dx.head(n) = linv * dx_abs.head(n);
    dx.tail(n) = linv * dx_abs.tail(n);
    return dx;
  };
  return sys;
}

ControlSystem make_tracking_system(const json& root, const std::string& name, json& resolved) {
  const json& sj = root.at("system");
  if (name == "pendulum") {
    const double m = get_number(sj, "mass", 1.0);
    const double l = get_number(sj, "length", 0.5);
    const double g = get_number(sj, "gravity", 9.81);
    const double b = get_number(sj, "damping", 0.1);
    resolved["system"]["mass"] = m;
    resolved["system"]["length"] = l;
    resolved["system"]["gravity"] = g;
    resolved["system"]["damping"] = b;
    return make_pendulum(m, l, g, b);
  }
  const double m = get_number(sj, "mass", 1.0);
  const double g = get_number(sj, "gravity", 9.81);
  resolved["system"]["mass"] = m;
  resolved["system"]["gravity"] = g;
  return make_quadcopter(m, g);
}

Trajectory make_reference(const json& traj_j, const ControlSystem& sys, double horizon,
                          std::uint64_t seed, json& resolved) {
  std::string source = "constant";
  if (traj_j.contains("source")) {
    if (!traj_j.at("source").is_string()) throw ConfigError("trajectory: 'source' must be a string");
    source = traj_j.at("source").get<std::string>();
  }
  resolved["trajectory"] = {{"source", source}};
  const int n = sys.state_dim;
  if (source == "constant") {
    if (!traj_j.contains("x_eq") || !traj_j.contains("u_eq")) {
      throw ConfigError("trajectory: constant source needs 'x_eq' and 'u_eq'");
    }
    return constant_trajectory(get_vector(traj_j, "x_eq", n),
                               get_vector(traj_j, "u_eq", sys.control_dim), horizon);
  }
  if (source == "generate") {
    if (!traj_j.contains("x0") || !traj_j.contains("xT")) {
      throw ConfigError("trajectory: generate source needs 'x0' and 'xT'");
    }
    const int segments = get_int(traj_j, "segments",
                                 std::max(2, static_cast<int>(std::llround(horizon / 0.01))));
    const double weight = get_number(traj_j, "effort_weight", 1.0);
    resolved["trajectory"]["segments"] = segments;
    resolved["trajectory"]["effort_weight"] = weight;
    return collocation_trajectory(sys, get_vector(traj_j, "x0", n), get_vector(traj_j, "xT", n),
                                  horizon, segments, weight, seed);
  }
  if (source == "file") {
    if (!traj_j.contains("file") || !traj_j.at("file").is_string()) {
      throw ConfigError("trajectory: file source needs 'file'");
    }
    Trajectory traj = load_trajectory_csv(traj_j.at("file").get<std::string>(), sys);
    if (std::abs(traj.t_end() - horizon) > 1e-9) {
      throw ConfigError("trajectory: file span does not match grid T");
    }
    resolved["trajectory"]["file"] = traj_j.at("file").get<std::string>();
    return traj;
  }
  throw ConfigError("trajectory: unknown source '" + source + "'");
}

}  // namespace

Experiment build_experiment(const std::string& config_text, const CliOverrides& overrides) {
  RawConfig raw = parse_and_check(config_text);
  const json& root = raw.root;
  const std::string& name = raw.system;
  const int links = raw.links;

  FunnelParams params = parse_params(root, name);
  if (overrides.no_derivative_check) params.derivative_check = false;
  IntegrationConfig integration = parse_integration(root);

  const json grid_j = root.contains("grid") ? root.at("grid") : json::object();
  const double horizon = get_number(grid_j, "T", name == "pendulum" ? 3.0 : 1.0);
  const double step = get_number(grid_j, "step", name == "pendulum" ? 0.1 : 0.025);
  std::vector<double> grid = make_grid(horizon, step);

  std::uint64_t seed = 0;
  if (root.contains("seed")) {
    if (!root.at("seed").is_number_integer()) throw ConfigError("'seed' must be an integer");
    seed = root.at("seed").get<std::uint64_t>();
  }
  if (overrides.seed) seed = *overrides.seed;
  int threads = get_int(root, "threads", 1);
  if (overrides.threads) threads = *overrides.threads;
  if (threads < 1) throw ConfigError("'threads' must be >= 1");

  const json traj_j = root.contains("trajectory") ? root.at("trajectory") : json::object();
  const json lqr_j = root.contains("lqr") ? root.at("lqr") : json::object();
  const json goal_j = root.contains("goal") ? root.at("goal") : json::object();

  json resolved;
  resolved["system"] = {{"name", name}};
  resolved["grid"] = {{"T", horizon}, {"step", step}};
  resolved["seed"] = seed;
  resolved["threads"] = threads;
  resolved["algorithm"] = {{"c", params.c},
                           {"gamma1", params.gamma1},
                           {"gamma2", params.gamma2},
                           {"tau1", params.tau1},
                           {"tau2", params.tau2},
                           {"derivative_samples", params.derivative_samples},
                           {"derivative_check", params.derivative_check},
                           {"strictness_margin", params.strictness_margin},
                           {"nlp_tol", params.nlp_tol}};
  resolved["integration"] = {{"abs_tol", integration.abs_tol},
                             {"rel_tol", integration.rel_tol},
                             {"max_step", integration.max_step},
                             {"max_steps", integration.max_steps}};

  auto finish = [&](FunnelSpec&& spec, bool linear, Matrix a_linear,
                    json goal_json) -> Experiment {
    spec.params = params;
    spec.integration = integration;
    spec.seed = seed;
    spec.threads = threads;
    resolved["goal"] = std::move(goal_json);
    Experiment exp;
    exp.spec = std::move(spec);
    exp.linear = linear;
    exp.a_linear = std::move(a_linear);
    exp.resolved = resolved.dump(2);
    return exp;
  };

  if (name == "scalar_decay") {
    FunnelSpec spec{
        VectorField{1, [](const Vector& x, double) { return (-x).eval(); },
                    [](const Vector&, double) { return (-Matrix::Identity(1, 1)).eval(); }},
        QuadraticShape(Matrix::Identity(1, 1), Vector::Zero(1), 0.0, horizon),
        grid,
        GoalSet{Vector::Zero(1), get_matrix(goal_j, "Q_G", 1, 1.0), get_number(goal_j, "c_G", 1.0)},
        params,
        seed,
        integration,
        threads};
    json gj = {{"center", vector_to_json(spec.goal.center)},
               {"Q_G", matrix_to_json(spec.goal.q)},
               {"c_G", spec.goal.level}};
    return finish(std::move(spec), true, -Matrix::Identity(1, 1), std::move(gj));
  }

  if (name == "nlink" || name == "nlink_linearized") {
    const double g = get_number(root.at("system"), "gravity", 9.81);
    const int n = links;
    const Matrix q = get_matrix(lqr_j, "Q", 2 * n, 10.0 * n);
    const Matrix r = get_matrix(lqr_j, "R", n, 1.0);
    const JointNlinkLane lane = build_joint_nlink(n, g, q, r);
    resolved["system"]["links"] = n;
    resolved["system"]["gravity"] = g;
    resolved["lqr"] = {{"Q", matrix_to_json(q)}, {"R", matrix_to_json(r)}};

    GoalSet goal;
    goal.center = goal_j.contains("center") && goal_j.at("center").is_array()
                      ? get_vector(goal_j, "center", 2 * n)
                      : lane.upright;
    goal.q = goal_j.contains("Q_G") ? get_matrix(goal_j, "Q_G", 2 * n, 1.0) : lane.s;
    if (goal_j.contains("c_G")) {
      goal.level = get_number(goal_j, "c_G", 1.0);
    } else {
      // Volume matching: the goal ellipsoid has the volume of the 2n-ball
      // with squared radius r2.
      const double r2 = get_number(goal_j, "volume_match_r2", 0.025);
      const Matrix l = chol_lower(goal.q);
      double log_det = 0.0;
      for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
      goal.level = r2 * std::exp(log_det / (2.0 * n));
      resolved["goal_volume_match_r2"] = r2;
    }
    json gj = {{"center", vector_to_json(goal.center)},
               {"Q_G", matrix_to_json(goal.q)},
               {"c_G", goal.level}};

    QuadraticShape shape(lane.s, lane.upright, 0.0, horizon);

    if (name == "nlink_linearized") {
      const Matrix a_cl = lane.a_closed;
      const Vector origin = lane.upright;
      VectorField field{2 * n,
                        [a_cl, origin](const Vector& x, double) {
                          return (a_cl * (x - origin)).eval();
                        },
                        [a_cl](const Vector&, double) { return a_cl; }};
      FunnelSpec spec{std::move(field), std::move(shape), grid, std::move(goal),
                      params,           seed,             integration, threads};
      return finish(std::move(spec), true, a_cl, std::move(gj));
    }

    // Nonlinear lane: full joint-coordinate dynamics closed with the
    // simplified-model LQR transferred through the joint mass matrix.
    const ControlSystem sys = joint_nlink_system(n, g);
    const Matrix lmat = lane.l;
    const Matrix gain = lane.gain;
    const Vector upright = lane.upright;
    auto controller = [lmat, gain, upright, n](const Vector& x, double) {
      const Vector v = -(gain * (x - upright));
      const Matrix m_abs = nlink_mass_matrix(n, (lmat * x.head(n)).eval());
      const Matrix m_joint = lmat.transpose() * m_abs * lmat;
      return (-(m_joint * v)).eval();
    };
    VectorField field = close_loop(sys, controller);
    FunnelSpec spec{std::move(field), std::move(shape), grid, std::move(goal),
                    params,           seed,             integration, threads};
    return finish(std::move(spec), false, Matrix(), std::move(gj));
  }

  // Trajectory-tracking systems: pendulum and quadcopter.
  ControlSystem sys = make_tracking_system(root, name, resolved);
  const int n = sys.state_dim;
  std::optional<Trajectory> traj = make_reference(traj_j, sys, horizon, seed, resolved);

  const double q_default = name == "quadcopter" ? 10.0 : 1.0;
  const Matrix q = get_matrix(lqr_j, "Q", n, q_default);
  const Matrix r = get_matrix(lqr_j, "R", sys.control_dim, 1.0);
  const Matrix s_final = root.contains("lqr") && root.at("lqr").contains("S_T")
                             ? get_matrix(lqr_j, "S_T", n, 1.0)
                             : q;
  resolved["lqr"] = {{"Q", matrix_to_json(q)},
                     {"R", matrix_to_json(r)},
                     {"S_T", matrix_to_json(s_final)}};

  auto [controller, shape] = tvlqr(sys, *traj, q, r, s_final, integration);
  VectorField field = close_loop(sys, controller.u, controller.jac_state);

  GoalSet goal;
  goal.center = goal_j.contains("center") && goal_j.at("center").is_array()
                    ? get_vector(goal_j, "center", n)
                    : traj->state(horizon);
  goal.q = get_matrix(goal_j, "Q_G", n, 1.0);
  goal.level = get_number(goal_j, "c_G", name == "quadcopter" ? 0.1 : 0.0025);
  json gj = {{"center", vector_to_json(goal.center)},
             {"Q_G", matrix_to_json(goal.q)},
             {"c_G", goal.level}};

  FunnelSpec spec{std::move(field), std::move(shape), grid, std::move(goal),
                  params,           seed,             integration, threads};
  return finish(std::move(spec), false, Matrix(), std::move(gj));
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Minimal polyline SVG with the level profile and the cross-section volume.
void write_funnel_svg(const Funnel& funnel, const fs::path& path) {
  const double width = 720, height = 420, ml = 60, mr = 20, mt = 20, mb = 40;
  const auto& ts = funnel.times();
  std::vector<double> vols(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) vols[i] = cross_section_volume(funnel, ts[i]);
  const double t0 = ts.front(), t1 = ts.back();
  double rho_max = 0.0, vol_max = 0.0;
  for (double r : funnel.rho()) rho_max = std::max(rho_max, r);
  for (double v : vols) vol_max = std::max(vol_max, v);
  if (rho_max <= 0) rho_max = 1.0;
  if (vol_max <= 0) vol_max = 1.0;

  auto xpix = [&](double t) { return ml + (t - t0) / (t1 - t0) * (width - ml - mr); };
  auto ypix = [&](double v, double vmax) { return mt + (1.0 - v / vmax) * (height - mt - mb); };
  auto polyline = [&](const std::vector<double>& vs, double vmax, const char* color) {
    std::ostringstream ss;
    ss << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ts.size(); ++i) {
      ss << xpix(ts[i]) << ',' << ypix(vs[i], vmax) << ' ';
    }
    ss << "\"/>\n";
    return ss.str();
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << width << ' ' << height
      << "\">\n";
  svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "  <line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  svg << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  svg << polyline(funnel.rho(), rho_max, "#1f77b4");
  svg << polyline(vols, vol_max, "#d62728");
  svg << "  <text x=\"" << ml + 8 << "\" y=\"" << mt + 14
      << "\" font-size=\"12\" fill=\"#1f77b4\">rho(t), max " << rho_max << "</text>\n";
  svg << "  <text x=\"" << ml + 8 << "\" y=\"" << mt + 30
      << "\" font-size=\"12\" fill=\"#d62728\">cross-section volume, max " << vol_max
      << "</text>\n";
  svg << "  <text x=\"" << (width - ml - mr) / 2 + ml << "\" y=\"" << height - 10
      << "\" font-size=\"12\">t in [" << t0 << ", " << t1 << "]</text>\n";
  svg << "</svg>\n";
  write_text(path, svg.str());
}

json stats_to_json(const SynthesisStats& stats) {
  return {{"reach", stats.reach_counterexamples},
          {"derivative", stats.derivative_counterexamples},
          {"nlp_solves", stats.nlp_solves}};
}

int guarded(const std::string& config_path, const std::string& out_dir,
            const std::function<int(const Experiment&, const fs::path&)>& body,
            const CliOverrides& overrides) {
  Experiment exp;
  try {
    exp = build_experiment(read_file(config_path), overrides);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "setup error: " << e.what() << "\n";
    return 2;
  }
  try {
    fs::create_directories(out_dir);
    return body(exp, fs::path(out_dir));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

Funnel oracle_funnel(const Experiment& exp) {
  const Matrix s = exp.spec.shape.S(exp.spec.grid.back());
  EllipsoidSet terminal{Vector::Zero(s.rows()), exp.spec.goal.level * spd_inverse(exp.spec.goal.q)};
  std::vector<double> rho = optimal_rho_sequence(exp.a_linear, s, terminal, exp.spec.grid);
  return Funnel(exp.spec.grid, std::move(rho), exp.spec.shape);
}

void write_compare_csv(const Funnel& falsifier, const Funnel& oracle, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "t,rho_falsifier,rho_oracle,ratio\n";
  for (std::size_t i = 0; i < falsifier.times().size(); ++i) {
    const double rf = falsifier.rho()[i];
    const double ro = oracle.rho()[i];
    out << fmt17(falsifier.times()[i]) << ',' << fmt17(rf) << ',' << fmt17(ro) << ','
        << fmt17(rf / ro) << '\n';
  }
}

}  // namespace

int cmd_synthesize(const std::string& config_path, const std::string& out_dir,
                   const CliOverrides& overrides) {
  return guarded(
      config_path, out_dir,
      [](const Experiment& exp, const fs::path& out) {
        const auto start = std::chrono::steady_clock::now();
        const SynthesisResult result = synthesize(exp.spec);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        save_funnel_csv(result.funnel, (out / "funnel.csv").string());
        const FunnelVolume vol = funnel_volume(result.funnel);
        json summary = {{"rho0", result.funnel.rho().front()},
                        {"rho_end", result.funnel.rho().back()},
                        {"sum_levels", vol.sum_levels},
                        {"integrated_volume", vol.integrated_volume},
                        {"wall_time_seconds", wall},
                        {"counterexamples", stats_to_json(result.stats)},
                        {"seed", exp.spec.seed},
                        {"resolved_config", json::parse(exp.resolved)}};
        write_text(out / "summary.json", summary.dump(2) + "\n");
        write_funnel_svg(result.funnel, out / "funnel.svg");
        return 0;
      },
      overrides);
}

int cmd_oracle(const std::string& config_path, const std::string& out_dir,
               const CliOverrides& overrides) {
  return guarded(
      config_path, out_dir,
      [](const Experiment& exp, const fs::path& out) {
        if (!exp.linear) {
          std::cerr << "oracle: configured system is nonlinear; the exact oracle only covers "
                       "linear systems\n";
          return 3;
        }
        const auto start = std::chrono::steady_clock::now();
        const Funnel funnel = oracle_funnel(exp);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        save_funnel_csv(funnel, (out / "oracle.csv").string());
        json summary = {{"rho0", funnel.rho().front()},
                        {"rho_end", funnel.rho().back()},
                        {"wall_time_seconds", wall},
                        {"seed", exp.spec.seed},
                        {"resolved_config", json::parse(exp.resolved)}};
        write_text(out / "summary.json", summary.dump(2) + "\n");
        return 0;
      },
      overrides);
}

int cmd_compare(const std::string& config_path, const std::string& out_dir,
                const CliOverrides& overrides) {
  return guarded(
      config_path, out_dir,
      [](const Experiment& exp, const fs::path& out) {
        if (!exp.linear) {
          std::cerr << "compare: configured system is nonlinear; the exact oracle only covers "
                       "linear systems\n";
          return 3;
        }
        const auto start = std::chrono::steady_clock::now();
        const SynthesisResult result = synthesize(exp.spec);
        const Funnel oracle = oracle_funnel(exp);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        double max_ratio = 0.0, mean_ratio = 0.0;
        for (std::size_t i = 0; i < oracle.rho().size(); ++i) {
          const double ratio = result.funnel.rho()[i] / oracle.rho()[i];
          max_ratio = std::max(max_ratio, ratio);
          mean_ratio += ratio;
        }
        mean_ratio /= static_cast<double>(oracle.rho().size());

        save_funnel_csv(result.funnel, (out / "funnel.csv").string());
        save_funnel_csv(oracle, (out / "oracle.csv").string());
        write_compare_csv(result.funnel, oracle, out / "compare.csv");
        json summary = {{"rho0_falsifier", result.funnel.rho().front()},
                        {"rho0_oracle", oracle.rho().front()},
                        {"max_ratio", max_ratio},
                        {"mean_ratio", mean_ratio},
                        {"wall_time_seconds", wall},
                        {"counterexamples", stats_to_json(result.stats)},
                        {"seed", exp.spec.seed},
                        {"resolved_config", json::parse(exp.resolved)}};
        write_text(out / "summary.json", summary.dump(2) + "\n");
        return 0;
      },
      overrides);
}

int cmd_trajgen(const std::string& config_path, const std::string& out_dir,
                const CliOverrides& overrides) {
  RawConfig raw;
  json resolved;
  std::optional<ControlSystem> sys;
  std::optional<Trajectory> traj;
  try {
    raw = parse_and_check(read_file(config_path));
    const json& root = raw.root;
    const json grid_j = root.contains("grid") ? root.at("grid") : json::object();
    const double horizon = get_number(grid_j, "T", raw.system == "pendulum" ? 3.0 : 1.0);
    if (!(horizon > 0.0)) throw ConfigError("grid: T must be positive");
    std::uint64_t seed = 0;
    if (root.contains("seed")) seed = root.at("seed").get<std::uint64_t>();
    if (overrides.seed) seed = *overrides.seed;
    resolved["system"] = {{"name", raw.system}};
    resolved["grid"] = {{"T", horizon}};
    resolved["seed"] = seed;

    if (raw.system == "pendulum" || raw.system == "quadcopter") {
      sys = make_tracking_system(root, raw.system, resolved);
      const json traj_j = root.contains("trajectory") ? root.at("trajectory") : json::object();
      traj = make_reference(traj_j, *sys, horizon, seed, resolved);
    } else if (raw.system == "nlink" || raw.system == "nlink_linearized") {
      const double g = get_number(root.at("system"), "gravity", 9.81);
      sys = make_nlink(raw.links, g);
      Vector upright = Vector::Zero(2 * raw.links);
      upright.head(raw.links).setConstant(1.5707963267948966);
      traj = constant_trajectory(upright, Vector::Zero(raw.links), horizon);
      resolved["system"]["links"] = raw.links;
    } else {
      throw ConfigError("trajgen: scalar_decay has no reference trajectory to generate");
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    fs::create_directories(out_dir);
    save_trajectory_csv(*traj, (fs::path(out_dir) / "trajectory.csv").string());
    json summary = {{"T", traj->t_end()},
                    {"max_defect", traj->max_defect()},
                    {"end_state", vector_to_json(traj->state(traj->t_end()))},
                    {"equilibrium_residual",
                     equilibrium_residual(*sys, traj->states().back(), traj->controls().back())},
                    {"resolved_config", resolved}};
    write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ff

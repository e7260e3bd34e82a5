#include "ff/trajgen.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>

#include "ff/errors.hpp"
#include "ff/nlpsolve.hpp"

namespace ff {

namespace {

std::size_t interval_index(const std::vector<double>& times, double t) {
  const double slack = 1e-9 * std::max(1.0, times.back() - times.front());
  if (t < times.front() - slack || t > times.back() + slack) {
    throw OutOfDomain("Trajectory: evaluation time outside the knot span");
  }
  auto it = std::upper_bound(times.begin(), times.end(), t);
  std::size_t idx = static_cast<std::size_t>(std::distance(times.begin(), it));
  if (idx > 0) --idx;
  if (idx >= times.size() - 1) idx = times.size() - 2;
  return idx;
}

}  // namespace

Trajectory::Trajectory(std::vector<double> times, std::vector<Vector> states,
                       std::vector<Vector> controls, const ControlSystem& sys)
    : times_(std::move(times)), states_(std::move(states)), controls_(std::move(controls)) {
  if (times_.size() < 2 || times_.size() != states_.size() || times_.size() != controls_.size()) {
    throw InvalidArgument("Trajectory: need matching knot arrays with at least two knots");
  }
  state_rates_.reserve(times_.size());
  for (std::size_t i = 0; i < times_.size(); ++i) {
    state_rates_.push_back(sys.rhs(states_[i], controls_[i], times_[i]));
  }
}

Trajectory Trajectory::constant(const Vector& x_eq, const Vector& u_eq, double duration) {
  if (!(duration > 0.0)) throw InvalidArgument("Trajectory: duration must be positive");
  Trajectory traj;
  traj.times_ = {0.0, duration};
  traj.states_ = {x_eq, x_eq};
  traj.controls_ = {u_eq, u_eq};
  traj.state_rates_ = {Vector::Zero(x_eq.size()), Vector::Zero(x_eq.size())};
  traj.constant_ = true;
  return traj;
}

Vector Trajectory::state(double t) const {
  if (constant_) return states_.front();
  const std::size_t i = interval_index(times_, t);
  const double tc = std::clamp(t, t_begin(), t_end());
  if (tc == times_[i]) return states_[i];
  if (tc == times_[i + 1]) return states_[i + 1];
  const double dt = times_[i + 1] - times_[i];
  const double s = (tc - times_[i]) / dt;
  const double s2 = s * s, s3 = s2 * s;
  return (2.0 * s3 - 3.0 * s2 + 1.0) * states_[i] + (s3 - 2.0 * s2 + s) * dt * state_rates_[i] +
         (-2.0 * s3 + 3.0 * s2) * states_[i + 1] + (s3 - s2) * dt * state_rates_[i + 1];
}

Vector Trajectory::state_rate(double t) const {
  if (constant_) return Vector::Zero(states_.front().size());
  const std::size_t i = interval_index(times_, t);
  const double tc = std::clamp(t, t_begin(), t_end());
  const double dt = times_[i + 1] - times_[i];
  const double s = (tc - times_[i]) / dt;
  const double s2 = s * s;
  return ((6.0 * s2 - 6.0 * s) / dt) * states_[i] + (3.0 * s2 - 4.0 * s + 1.0) * state_rates_[i] +
         ((-6.0 * s2 + 6.0 * s) / dt) * states_[i + 1] + (3.0 * s2 - 2.0 * s) * state_rates_[i + 1];
}

Vector Trajectory::control(double t) const {
  if (constant_) return controls_.front();
  const std::size_t i = interval_index(times_, t);
  const double tc = std::clamp(t, t_begin(), t_end());
  const double s = (tc - times_[i]) / (times_[i + 1] - times_[i]);
  return (1.0 - s) * controls_[i] + s * controls_[i + 1];
}

Trajectory constant_trajectory(const Vector& x_eq, const Vector& u_eq, double duration) {
  return Trajectory::constant(x_eq, u_eq, duration);
}

double equilibrium_residual(const ControlSystem& sys, const Vector& x_eq, const Vector& u_eq) {
  return sys.rhs(x_eq, u_eq, 0.0).norm();
}

namespace {

// One trapezoidal-collocation NLP instance on a fixed grid. Decision vector
// z stacks the knot states then the knot controls. All scalar constraint
// rows share a per-z cache of the dynamics and its Jacobians.
class CollocationNlp {
 public:
  CollocationNlp(const ControlSystem& sys, Vector x0, Vector xT, double duration, int segments,
                 double effort_weight)
      : sys_(sys),
        x0_(std::move(x0)),
        xT_(std::move(xT)),
        n_(sys.state_dim),
        m_(sys.control_dim),
        segments_(segments),
        dt_(duration / segments),
        weight_(effort_weight),
        cache_(std::make_shared<Cache>()) {}

  int num_knots() const { return segments_ + 1; }
  int dim() const { return (n_ + m_) * num_knots(); }
  double dt() const { return dt_; }

  Eigen::Map<const Vector> knot_state(const Vector& z, int i) const {
    return Eigen::Map<const Vector>(z.data() + i * n_, n_);
  }
  Eigen::Map<const Vector> knot_control(const Vector& z, int i) const {
    return Eigen::Map<const Vector>(z.data() + num_knots() * n_ + i * m_, m_);
  }

  NlpProblem problem() const {
    NlpProblem p;
    p.dim = dim();
    p.sense = Sense::Minimize;
    p.objective = [this](const Vector& z, Vector* grad) {
      double value = 0.0;
      if (grad) grad->setZero(dim());
      for (int i = 0; i < num_knots(); ++i) {
        const auto u = knot_control(z, i);
        value += weight_ * dt_ * u.squaredNorm();
        if (grad) grad->segment(num_knots() * n_ + i * m_, m_) = 2.0 * weight_ * dt_ * u;
      }
      return value;
    };
    for (int i = 0; i < segments_; ++i) {
      for (int r = 0; r < n_; ++r) p.constraints.push_back({ConstraintKind::Equality, defect(i, r)});
    }
    for (int r = 0; r < n_; ++r) {
      p.constraints.push_back({ConstraintKind::Equality, boundary(0, r, x0_(r))});
      p.constraints.push_back({ConstraintKind::Equality, boundary(segments_, r, xT_(r))});
    }
    return p;
  }

  double max_defect(const Vector& z) const {
    refresh(z);
    double worst = 0.0;
    for (int i = 0; i < segments_; ++i) {
      const Vector d = knot_state(z, i + 1) - knot_state(z, i) -
                       0.5 * dt_ * (cache_->f[i] + cache_->f[i + 1]);
      worst = std::max(worst, d.lpNorm<Eigen::Infinity>());
    }
    return worst;
  }

 private:
  struct Cache {
    std::mutex mutex;
    Vector z;
    std::vector<Vector> f;
    std::vector<Matrix> jx, ju;
  };

  void refresh(const Vector& z) const {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    if (cache_->z.size() == z.size() && cache_->z == z) return;
    cache_->f.resize(num_knots());
    cache_->jx.resize(num_knots());
    cache_->ju.resize(num_knots());
    for (int i = 0; i < num_knots(); ++i) {
      const Vector x = knot_state(z, i);
      const Vector u = knot_control(z, i);
      const double t = i * dt_;
      cache_->f[i] = sys_.rhs(x, u, t);
      if (sys_.jac_state) {
        cache_->jx[i] = sys_.jac_state(x, u, t);
      } else {
        cache_->jx[i] = fd_jacobian([&](const Vector& y) { return sys_.rhs(y, u, t); }, x);
      }
      if (sys_.jac_control) {
        cache_->ju[i] = sys_.jac_control(x, u, t);
      } else {
        cache_->ju[i] = fd_jacobian([&](const Vector& w) { return sys_.rhs(x, w, t); }, u);
      }
    }
    cache_->z = z;
  }

  ScalarFn defect(int i, int r) const {
    return [this, i, r](const Vector& z, Vector* grad) {
      refresh(z);
      const double value = knot_state(z, i + 1)(r) - knot_state(z, i)(r) -
                           0.5 * dt_ * (cache_->f[i](r) + cache_->f[i + 1](r));
      if (grad) {
        grad->setZero(dim());
        (*grad)(i * n_ + r) -= 1.0;
        (*grad)((i + 1) * n_ + r) += 1.0;
        grad->segment(i * n_, n_) -= 0.5 * dt_ * cache_->jx[i].row(r);
        grad->segment((i + 1) * n_, n_) -= 0.5 * dt_ * cache_->jx[i + 1].row(r);
        grad->segment(num_knots() * n_ + i * m_, m_) -= 0.5 * dt_ * cache_->ju[i].row(r);
        grad->segment(num_knots() * n_ + (i + 1) * m_, m_) -= 0.5 * dt_ * cache_->ju[i + 1].row(r);
      }
      return value;
    };
  }

  ScalarFn boundary(int knot, int r, double target) const {
    return [this, knot, r, target](const Vector& z, Vector* grad) {
      if (grad) {
        grad->setZero(dim());
        (*grad)(knot * n_ + r) = 1.0;
      }
      return knot_state(z, knot)(r) - target;
    };
  }

  const ControlSystem& sys_;
  Vector x0_, xT_;
  int n_, m_, segments_;
  double dt_;
  double weight_;
  std::shared_ptr<Cache> cache_;
};

Vector interpolate_guess(const CollocationNlp& coarse, const Vector& z_coarse, int coarse_segments,
                         int fine_segments, int n, int m) {
  const int fine_knots = fine_segments + 1;
  Vector z(static_cast<Eigen::Index>((n + m) * fine_knots));
  for (int i = 0; i < fine_knots; ++i) {
    const double s = static_cast<double>(i) / fine_segments * coarse_segments;
    const int j = std::min(static_cast<int>(s), coarse_segments - 1);
    const double a = s - j;
    z.segment(i * n, n) =
        (1.0 - a) * coarse.knot_state(z_coarse, j) + a * coarse.knot_state(z_coarse, j + 1);
    z.segment(fine_knots * n + i * m, m) =
        (1.0 - a) * coarse.knot_control(z_coarse, j) + a * coarse.knot_control(z_coarse, j + 1);
  }
  return z;
}

}  // namespace

Trajectory collocation_trajectory(const ControlSystem& sys, const Vector& x0, const Vector& xT,
                                  double duration, int segments, double effort_weight,
                                  std::uint64_t seed) {
  if (segments < 2) throw InvalidArgument("collocation_trajectory: need at least 2 segments");
  if (x0.size() != sys.state_dim || xT.size() != sys.state_dim) {
    throw InvalidArgument("collocation_trajectory: boundary state dimension mismatch");
  }
  const int n = sys.state_dim;
  const int m = sys.control_dim;
  constexpr double kDefectTol = 1e-6;

  // Coarse-to-fine grid schedule; each level warm-starts the next.
  std::vector<int> levels;
  for (int s = std::min(segments, 24); s < segments; s = std::min(segments, s * 3)) {
    levels.push_back(s);
  }
  levels.push_back(segments);

  std::optional<Vector> warm;
  int warm_segments = 0;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const int segs = levels[li];
    CollocationNlp nlp(sys, x0, xT, duration, segs, effort_weight);
    const NlpProblem problem = nlp.problem();
    const int knots = segs + 1;

    Vector guess(static_cast<Eigen::Index>((n + m) * knots));
    if (warm) {
      CollocationNlp prev(sys, x0, xT, duration, warm_segments, effort_weight);
      guess = interpolate_guess(prev, *warm, warm_segments, segs, n, m);
    } else {
      for (int i = 0; i < knots; ++i) {
        const double a = static_cast<double>(i) / segs;
        guess.segment(i * n, n) = (1.0 - a) * x0 + a * xT;
        guess.segment(knots * n + i * m, m).setZero();
      }
    }

    NlpResult best = solve_local(problem, guess, 1e-9);
    if (best.constraint_violation > kDefectTol && li == 0) {
      // Multistart over perturbed copies of the nominal guess.
      MultistartOptions opts;
      opts.stall_budget = 2;
      opts.max_restarts = 8;
      opts.seed = seed;
      opts.salt = CounterRng::derive_stream({0x636f6c6cULL, static_cast<std::uint64_t>(segs)});
      opts.tol = 1e-9;
      auto sampler = [&](CounterRng& rng) {
        Vector z = guess;
        for (Eigen::Index j = 0; j < z.size(); ++j) z(j) += 0.3 * rng.normal();
        return z;
      };
      opts.improves = [](const NlpResult& inc, const NlpResult& cand) {
        if (cand.constraint_violation <= kDefectTol && inc.constraint_violation <= kDefectTol) {
          return cand.objective < inc.objective * (1.0 - 1e-10);
        }
        return cand.constraint_violation < inc.constraint_violation;
      };
      const NlpResult alt = multistart(problem, sampler, opts);
      if (alt.constraint_violation < best.constraint_violation) best = alt;
    }
    const double gate = li + 1 == levels.size() ? kDefectTol : std::sqrt(kDefectTol);
    if (best.constraint_violation > gate) {
      throw NotConverged("collocation_trajectory: defects did not converge at level " +
                         std::to_string(segs));
    }
    warm = best.x;
    warm_segments = segs;
  }

  CollocationNlp final_nlp(sys, x0, xT, duration, segments, effort_weight);
  const double defect = final_nlp.max_defect(*warm);
  if (defect > kDefectTol) {
    throw NotConverged("collocation_trajectory: final defect " + std::to_string(defect) +
                       " exceeds tolerance");
  }

  std::vector<double> times(segments + 1);
  std::vector<Vector> states(segments + 1), controls(segments + 1);
  for (int i = 0; i <= segments; ++i) {
    times[i] = duration * static_cast<double>(i) / segments;
    states[i] = final_nlp.knot_state(*warm, i);
    controls[i] = final_nlp.knot_control(*warm, i);
  }
  Trajectory traj(std::move(times), std::move(states), std::move(controls), sys);
  traj.max_defect_ = defect;
  return traj;
}

void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_trajectory_csv: cannot open " + path);
  out << "t";
  for (int i = 1; i <= traj.state_dim(); ++i) out << ",x" << i;
  for (int i = 1; i <= traj.control_dim(); ++i) out << ",u" << i;
  out << "\n";
  char buf[32];
  for (std::size_t k = 0; k < traj.knots().size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", traj.knots()[k]);
    out << buf;
    for (int i = 0; i < traj.state_dim(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", traj.states()[k](i));
      out << ',' << buf;
    }
    for (int i = 0; i < traj.control_dim(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", traj.controls()[k](i));
      out << ',' << buf;
    }
    out << "\n";
  }
}

Trajectory load_trajectory_csv(const std::string& path, const ControlSystem& sys) {
  std::ifstream in(path);
  if (!in) throw Error("load_trajectory_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("load_trajectory_csv: empty file");
  std::vector<double> times;
  std::vector<Vector> states, controls;
  const int n = sys.state_dim, m = sys.control_dim;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != 1 + n + m) {
      throw Error("load_trajectory_csv: row has wrong column count");
    }
    times.push_back(row[0]);
    states.push_back(Eigen::Map<const Vector>(row.data() + 1, n));
    controls.push_back(Eigen::Map<const Vector>(row.data() + 1 + n, m));
  }
  return Trajectory(std::move(times), std::move(states), std::move(controls), sys);
}

}  // namespace ff

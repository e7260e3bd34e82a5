#include "ff/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ff/errors.hpp"

namespace ff {

namespace {

// Fehlberg 4(5) tableau.
constexpr double kA21 = 1.0 / 4.0;
constexpr double kA31 = 3.0 / 32.0, kA32 = 9.0 / 32.0;
constexpr double kA41 = 1932.0 / 2197.0, kA42 = -7200.0 / 2197.0, kA43 = 7296.0 / 2197.0;
constexpr double kA51 = 439.0 / 216.0, kA52 = -8.0, kA53 = 3680.0 / 513.0, kA54 = -845.0 / 4104.0;
constexpr double kA61 = -8.0 / 27.0, kA62 = 2.0, kA63 = -3544.0 / 2565.0, kA64 = 1859.0 / 4104.0,
                 kA65 = -11.0 / 40.0;
constexpr double kC2 = 1.0 / 4.0, kC3 = 3.0 / 8.0, kC4 = 12.0 / 13.0, kC5 = 1.0, kC6 = 1.0 / 2.0;
// 4th order weights.
constexpr double kB1 = 25.0 / 216.0, kB3 = 1408.0 / 2565.0, kB4 = 2197.0 / 4104.0, kB5 = -1.0 / 5.0;
// 5th order weights.
constexpr double kD1 = 16.0 / 135.0, kD3 = 6656.0 / 12825.0, kD4 = 28561.0 / 56430.0,
                 kD5 = -9.0 / 50.0, kD6 = 2.0 / 55.0;

constexpr double kEscapeNorm = 1e150;

struct StepCallback {
  virtual void on_accept(double t, const Vector& x, const Vector& dx) = 0;
  virtual ~StepCallback() = default;
};

void validate(const IntegrationConfig& cfg) {
  if (cfg.abs_tol <= 0.0 || cfg.rel_tol <= 0.0 || cfg.max_step <= 0.0 || cfg.max_steps <= 0) {
    throw InvalidArgument("integration config fields must be positive");
  }
}

// In-place right-hand side: writes F(x, t) into the third argument.
using InPlaceRhs = std::function<void(const Vector&, double, Vector&)>;

// Core adaptive loop shared by flow / sensitivity / dense output. `rhs` is
// the (possibly augmented) right-hand side.
Vector integrate_adaptive(const InPlaceRhs& rhs, Vector x, double t0, double t1,
                          const IntegrationConfig& cfg, StepCallback* callback) {
  validate(cfg);
  if (!(t1 >= t0)) throw InvalidArgument("integrate: t1 must not precede t0");
  if (!x.allFinite()) throw InvalidArgument("integrate: non-finite initial state");

  double t = t0;
  Vector k1(x.size());
  rhs(x, t, k1);
  if (!k1.allFinite()) throw NonFiniteState("integrate: non-finite right-hand side at t0");
  if (callback) callback->on_accept(t, x, k1);
  if (t1 == t0) return x;

  const double span = t1 - t0;
  const double h_min = 1e-14 * std::max(1.0, std::abs(t1));
  double h = std::min(cfg.max_step, span);
  std::int64_t steps = 0;

  const Eigen::Index dim = x.size();
  Vector k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), x4(dim), x5(dim), arg(dim);
  while (t < t1) {
    if (++steps > cfg.max_steps) throw StepLimitExceeded("integrate: step limit exceeded");
    h = std::min({h, cfg.max_step, t1 - t});
    if (h < h_min) throw NonFiniteState("integrate: step size underflow (finite-time escape)");

    arg.noalias() = x + (h * kA21) * k1;
    rhs(arg, t + kC2 * h, k2);
    arg.noalias() = x + (h * kA31) * k1 + (h * kA32) * k2;
    rhs(arg, t + kC3 * h, k3);
    arg.noalias() = x + (h * kA41) * k1 + (h * kA42) * k2 + (h * kA43) * k3;
    rhs(arg, t + kC4 * h, k4);
    arg.noalias() = x + (h * kA51) * k1 + (h * kA52) * k2 + (h * kA53) * k3 + (h * kA54) * k4;
    rhs(arg, t + kC5 * h, k5);
    arg.noalias() =
        x + (h * kA61) * k1 + (h * kA62) * k2 + (h * kA63) * k3 + (h * kA64) * k4 + (h * kA65) * k5;
    rhs(arg, t + kC6 * h, k6);

    x4.noalias() = x + (h * kB1) * k1 + (h * kB3) * k3 + (h * kB4) * k4 + (h * kB5) * k5;
    x5.noalias() =
        x + (h * kD1) * k1 + (h * kD3) * k3 + (h * kD4) * k4 + (h * kD5) * k5 + (h * kD6) * k6;

    double err = 0.0;
    bool finite = x4.allFinite() && x5.allFinite();
    if (finite) {
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(x(i)), std::abs(x5(i)));
        err = std::max(err, std::abs(x5(i) - x4(i)) / scale);
      }
    } else {
      err = std::numeric_limits<double>::infinity();
    }

    if (err <= 1.0) {
      t += h;
      x = x5;
      if (x.lpNorm<Eigen::Infinity>() > kEscapeNorm) {
        throw NonFiniteState("integrate: state escaped to infinity");
      }
      rhs(x, t, k1);
      if (!k1.allFinite()) throw NonFiniteState("integrate: non-finite right-hand side");
      if (callback) callback->on_accept(t, x, k1);
    }
    const double factor =
        std::isfinite(err) && err > 0.0 ? 0.9 * std::pow(err, -0.2) : (err == 0.0 ? 5.0 : 0.2);
    h *= std::clamp(factor, 0.2, 5.0);
  }
  return x;
}

}  // namespace

Interpolant::Interpolant(std::vector<double> times, std::vector<Vector> values,
                         std::vector<Vector> derivatives)
    : times_(std::move(times)), values_(std::move(values)), derivs_(std::move(derivatives)) {
  if (times_.empty() || times_.size() != values_.size() || times_.size() != derivs_.size()) {
    throw InvalidArgument("Interpolant: knot arrays must be non-empty and equally sized");
  }
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) {
      throw InvalidArgument("Interpolant: knot times must be strictly increasing");
    }
  }
}

std::pair<std::size_t, double> Interpolant::locate(double t) const {
  const double slack = 1e-9 * std::max(1.0, t_end() - t_begin());
  if (t < t_begin() - slack || t > t_end() + slack) {
    throw OutOfDomain("Interpolant: evaluation time outside the knot span");
  }
  const double tc = std::clamp(t, t_begin(), t_end());
  auto it = std::upper_bound(times_.begin(), times_.end(), tc);
  std::size_t idx = static_cast<std::size_t>(std::distance(times_.begin(), it));
  if (idx > 0) --idx;
  if (idx >= times_.size() - 1 && times_.size() > 1) idx = times_.size() - 2;
  return {idx, tc};
}

Vector Interpolant::eval(double t) const {
  if (times_.size() == 1) return values_.front();
  const auto [i, tc] = locate(t);
  if (tc == times_[i]) return values_[i];
  if (tc == times_[i + 1]) return values_[i + 1];
  const double dt = times_[i + 1] - times_[i];
  const double s = (tc - times_[i]) / dt;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
  const double h10 = s3 - 2.0 * s2 + s;
  const double h01 = -2.0 * s3 + 3.0 * s2;
  const double h11 = s3 - s2;
  return h00 * values_[i] + h10 * dt * derivs_[i] + h01 * values_[i + 1] + h11 * dt * derivs_[i + 1];
}

Vector Interpolant::eval_derivative(double t) const {
  if (times_.size() == 1) return Vector::Zero(values_.front().size());
  const auto [i, tc] = locate(t);
  const double dt = times_[i + 1] - times_[i];
  const double s = (tc - times_[i]) / dt;
  const double s2 = s * s;
  const double g00 = (6.0 * s2 - 6.0 * s) / dt;
  const double g10 = 3.0 * s2 - 4.0 * s + 1.0;
  const double g01 = (-6.0 * s2 + 6.0 * s) / dt;
  const double g11 = 3.0 * s2 - 2.0 * s;
  return g00 * values_[i] + g10 * derivs_[i] + g01 * values_[i + 1] + g11 * derivs_[i + 1];
}

Vector flow(const VectorField& field, const Vector& x0, double t0, double t1,
            const IntegrationConfig& cfg) {
  auto rhs = [&field](const Vector& x, double t, Vector& out) { out = field.rhs(x, t); };
  return integrate_adaptive(rhs, x0, t0, t1, cfg, nullptr);
}

std::pair<Vector, Matrix> flow_sensitivity(const VectorField& field, const Vector& x0, double t0,
                                           double t1, const IntegrationConfig& cfg) {
  const Eigen::Index n = x0.size();
  Vector y0(n + n * n);
  y0.head(n) = x0;
  Eigen::Map<Matrix>(y0.data() + n, n, n) = Matrix::Identity(n, n);

  // Reused state buffer; integrate_adaptive evaluates the rhs sequentially.
  Vector x_buf(n);
  auto rhs = [&field, n, &x_buf](const Vector& y, double t, Vector& dy) {
    x_buf = y.head(n);
    dy.head(n) = field.rhs(x_buf, t);
    const Matrix j = jacobian(field, x_buf, t);
    Eigen::Map<const Matrix> phi(y.data() + n, n, n);
    Eigen::Map<Matrix>(dy.data() + n, n, n).noalias() = j * phi;
  };

  const Vector y = integrate_adaptive(rhs, y0, t0, t1, cfg, nullptr);
  return {y.head(n), Eigen::Map<const Matrix>(y.data() + n, n, n)};
}

Interpolant integrate_dense(const VectorField& field, const Vector& x0, double t0, double t1,
                            const IntegrationConfig& cfg) {
  if (!(t1 > t0)) throw InvalidArgument("integrate_dense: t1 must exceed t0");
  struct Collector final : StepCallback {
    std::vector<double> ts;
    std::vector<Vector> xs;
    std::vector<Vector> fs;
    void on_accept(double t, const Vector& x, const Vector& dx) override {
      ts.push_back(t);
      xs.push_back(x);
      fs.push_back(dx);
    }
  } collector;
  auto rhs = [&field](const Vector& x, double t, Vector& out) { out = field.rhs(x, t); };
  integrate_adaptive(rhs, x0, t0, t1, cfg, &collector);
  return Interpolant(std::move(collector.ts), std::move(collector.xs), std::move(collector.fs));
}

}  // namespace ff

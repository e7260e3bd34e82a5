#include "ff/nlpsolve.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

#include "ff/errors.hpp"

namespace ff {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Evaluation {
  double value = 0.0;
  Vector grad;
  bool finite = false;
};

// Augmented Lagrangian in minimization form. Inequalities use the
// Powell-Hestenes-Rockafellar term, equalities the classical one.
class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const NlpProblem& p, double flip) : p_(p), flip_(flip) {
    for (const auto& c : p.constraints) {
      (c.kind == ConstraintKind::Inequality ? n_ineq_ : n_eq_) += 1;
    }
    lambda_ineq_ = Vector::Zero(n_ineq_);
    lambda_eq_ = Vector::Zero(n_eq_);
  }

  double mu() const { return mu_; }
  void grow_mu() { mu_ = std::min(mu_ * 10.0, 1e14); }

  std::int64_t evaluations() const { return evals_; }

  Evaluation eval(const Vector& x, bool want_grad) const {
    ++evals_;
    Evaluation out;
    Vector gf;
    double f = p_.objective(x, want_grad ? &gf : nullptr);
    if (!std::isfinite(f) || (want_grad && !gf.allFinite())) return out;
    out.value = flip_ * f;
    if (want_grad) out.grad = flip_ * gf;

    int ii = 0, ie = 0;
    Vector gc;
    for (const auto& c : p_.constraints) {
      const double v = c.fn(x, want_grad ? &gc : nullptr);
      if (!std::isfinite(v) || (want_grad && !gc.allFinite())) return out;
      if (c.kind == ConstraintKind::Inequality) {
        const double s = lambda_ineq_(ii) + mu_ * v;
        if (s > 0.0) {
          out.value += (s * s - lambda_ineq_(ii) * lambda_ineq_(ii)) / (2.0 * mu_);
          if (want_grad) out.grad += s * gc;
        } else {
          out.value -= lambda_ineq_(ii) * lambda_ineq_(ii) / (2.0 * mu_);
        }
        ++ii;
      } else {
        out.value += lambda_eq_(ie) * v + 0.5 * mu_ * v * v;
        if (want_grad) out.grad += (lambda_eq_(ie) + mu_ * v) * gc;
        ++ie;
      }
    }
    out.finite = std::isfinite(out.value) && (!want_grad || out.grad.allFinite());
    return out;
  }

  // Constraint values, violation, and first-order multiplier estimates at x.
  void measure(const Vector& x, double* violation, double* complementarity) const {
    double v = 0.0, comp = 0.0;
    int ii = 0;
    for (const auto& c : p_.constraints) {
      const double g = c.fn(x, nullptr);
      if (c.kind == ConstraintKind::Inequality) {
        v = std::max(v, std::max(0.0, g));
        comp = std::max(comp, std::abs(std::max(0.0, lambda_ineq_(ii) + mu_ * g) * g));
        ++ii;
      } else {
        v = std::max(v, std::abs(g));
      }
    }
    *violation = v;
    *complementarity = comp;
  }

  void update_multipliers(const Vector& x) {
    int ii = 0, ie = 0;
    for (const auto& c : p_.constraints) {
      const double g = c.fn(x, nullptr);
      if (c.kind == ConstraintKind::Inequality) {
        lambda_ineq_(ii) = std::max(0.0, lambda_ineq_(ii) + mu_ * g);
        ++ii;
      } else {
        lambda_eq_(ie) += mu_ * g;
        ++ie;
      }
    }
  }

 private:
  const NlpProblem& p_;
  double flip_;
  int n_ineq_ = 0, n_eq_ = 0;
  Vector lambda_ineq_, lambda_eq_;
  double mu_ = 10.0;
  mutable std::int64_t evals_ = 0;
};

struct LinePoint {
  double alpha = 0.0;
  double value = kInf;
  double slope = 0.0;
  Vector x, grad;
  bool finite = false;
};

class LineSearch {
 public:
  LineSearch(const AugmentedLagrangian& al, const Vector& x0, const Vector& d)
      : al_(al), x0_(x0), d_(d) {}

  LinePoint at(double alpha) const {
    LinePoint p;
    p.alpha = alpha;
    p.x = x0_ + alpha * d_;
    Evaluation e = al_.eval(p.x, true);
    if (!e.finite) return p;
    p.value = e.value;
    p.grad = std::move(e.grad);
    p.slope = p.grad.dot(d_);
    p.finite = true;
    return p;
  }

 private:
  const AugmentedLagrangian& al_;
  const Vector& x0_;
  const Vector& d_;
};

// Strong Wolfe search (c1 = 1e-4, c2 = 0.9); falls back to plain sufficient
// decrease when curvature cannot be met near machine precision.
LinePoint strong_wolfe(const LineSearch& ls, double f0, double slope0) {
  constexpr double kC1 = 1e-4, kC2 = 0.9;
  const auto armijo_ok = [&](const LinePoint& p) {
    return p.finite && p.value <= f0 + kC1 * p.alpha * slope0;
  };
  const auto curvature_ok = [&](const LinePoint& p) { return std::abs(p.slope) <= -kC2 * slope0; };

  LinePoint lo;
  lo.alpha = 0.0;
  lo.value = f0;
  lo.slope = slope0;
  lo.finite = true;

  LinePoint prev = lo;
  double alpha = 1.0;
  LinePoint hi;
  bool bracketed = false;
  for (int it = 0; it < 20 && !bracketed; ++it) {
    LinePoint p = ls.at(alpha);
    if (!armijo_ok(p) || (it > 0 && p.value >= prev.value)) {
      lo = prev;
      hi = p;
      bracketed = true;
      break;
    }
    if (curvature_ok(p)) return p;
    if (p.slope >= 0.0) {
      lo = p;
      hi = prev;
      bracketed = true;
      break;
    }
    prev = p;
    alpha = std::min(alpha * 2.0, 1e8);
  }
  if (!bracketed) return prev.alpha > 0.0 ? prev : LinePoint{};

  LinePoint best = lo.alpha > 0.0 && lo.finite ? lo : LinePoint{};
  for (int it = 0; it < 25; ++it) {
    const double width = std::abs(hi.alpha - lo.alpha);
    if (width < 1e-12 * std::max(1e-6, std::abs(lo.alpha))) break;
    double alpha_mid = 0.5 * (lo.alpha + hi.alpha);
    LinePoint p = ls.at(alpha_mid);
    if (!armijo_ok(p) || p.value >= lo.value) {
      hi = p;
    } else {
      if (curvature_ok(p)) return p;
      if (p.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
      lo = p;
      if (!best.finite || p.value < best.value) best = p;
    }
  }
  if (best.finite && best.alpha > 0.0 && best.value < f0) return best;
  return LinePoint{};
}

// BFGS (inverse-Hessian form). Returns the final point and its AL gradient.
void bfgs_minimize(const AugmentedLagrangian& al, Vector& x, double grad_tol, int max_iters) {
  const Eigen::Index n = x.size();
  Evaluation e = al.eval(x, true);
  if (!e.finite) throw NonFiniteProblem("solve_local: non-finite value at the starting point");
  Matrix hinv = Matrix::Identity(n, n);
  bool scaled = false;

  for (int it = 0; it < max_iters; ++it) {
    if (e.grad.lpNorm<Eigen::Infinity>() <= grad_tol) return;
    Vector d = -(hinv * e.grad);
    double slope = d.dot(e.grad);
    if (!(slope < 0.0)) {
      hinv.setIdentity();
      scaled = false;
      d = -e.grad;
      slope = -e.grad.squaredNorm();
      if (!(slope < 0.0)) return;
    }
    LineSearch ls(al, x, d);
    LinePoint p = strong_wolfe(ls, e.value, slope);
    if (!p.finite || p.alpha <= 0.0) {
      if (hinv.isIdentity(0.0)) return;  // stuck even along steepest descent
      hinv.setIdentity();
      scaled = false;
      continue;
    }
    const Vector s = p.x - x;
    const Vector y = p.grad - e.grad;
    const double sy = s.dot(y);
    if (!scaled && sy > 0.0) {
      const double yy = y.squaredNorm();
      if (yy > 0.0) hinv *= sy / yy;
      scaled = true;
    }
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Vector hy = hinv * y;
      // Sherman-Morrison form of the inverse BFGS update.
      hinv.noalias() -= rho * (hy * s.transpose() + s * hy.transpose());
      hinv.noalias() += (rho * rho * y.dot(hy) + rho) * (s * s.transpose());
    }
    x = p.x;
    e.value = p.value;
    e.grad = std::move(p.grad);
  }
}

}  // namespace

NlpResult solve_local(const NlpProblem& problem, const Vector& x0, double tol) {
  if (problem.dim <= 0 || !problem.objective) throw InvalidArgument("solve_local: empty problem");
  if (x0.size() != problem.dim) throw InvalidArgument("solve_local: start dimension mismatch");
  if (!x0.allFinite()) throw NonFiniteProblem("solve_local: non-finite starting point");

  const double flip = problem.sense == Sense::Maximize ? -1.0 : 1.0;
  AugmentedLagrangian al(problem, flip);
  {
    Evaluation probe = al.eval(x0, false);
    if (!probe.finite) throw NonFiniteProblem("solve_local: non-finite value at the starting point");
  }

  Vector x = x0;
  double violation = kInf, complementarity = kInf;
  double inner_tol = 1e-2 * std::max(1.0, al.eval(x0, true).grad.lpNorm<Eigen::Infinity>());
  double prev_violation = kInf;
  NlpStatus status = NlpStatus::IterationLimit;
  double kkt = kInf;

  for (int outer = 0; outer < 50; ++outer) {
    bfgs_minimize(al, x, std::max(0.5 * tol, inner_tol), 500);
    Evaluation e = al.eval(x, true);
    kkt = e.finite ? e.grad.lpNorm<Eigen::Infinity>() : kInf;
    al.measure(x, &violation, &complementarity);
    if (kkt <= tol && violation <= tol &&
        complementarity <= tol * std::max(1.0, std::abs(e.value))) {
      status = NlpStatus::Converged;
      break;
    }
    al.update_multipliers(x);
    if (violation > tol && violation > 0.25 * prev_violation) al.grow_mu();
    prev_violation = violation;
    inner_tol = std::max(0.5 * tol, 0.1 * inner_tol);
  }

  NlpResult result;
  result.x = x;
  result.evaluations = al.evaluations();
  result.objective = problem.objective(x, nullptr);
  result.kkt_residual = kkt;
  result.constraint_violation = violation;
  if (status != NlpStatus::Converged) {
    status = violation > std::max(1e-6, 100.0 * tol) ? NlpStatus::Infeasible
                                                     : NlpStatus::IterationLimit;
  }
  result.status = status;
  return result;
}

Vector sample_ellipsoid(const Matrix& s, double rho, const Vector& center, EllipsoidRegion where,
                        CounterRng& rng) {
  if (rho <= 0.0) throw InvalidArgument("sample_ellipsoid: rho must be positive");
  if (center.size() != s.rows()) throw InvalidArgument("sample_ellipsoid: dimension mismatch");
  const Matrix l = chol_lower(s);
  const Eigen::Index n = s.rows();
  Vector dir(n);
  double norm = 0.0;
  do {
    for (Eigen::Index i = 0; i < n; ++i) dir(i) = rng.normal();
    norm = dir.norm();
  } while (norm == 0.0);
  dir /= norm;
  double radius = std::sqrt(rho);
  if (where == EllipsoidRegion::Interior) {
    radius *= std::pow(rng.uniform01(), 1.0 / static_cast<double>(n));
  }
  const Vector w = radius * dir;
  return center + l.transpose().triangularView<Eigen::Upper>().solve(w);
}

namespace {

bool default_improves(const NlpResult& incumbent, const NlpResult& candidate, Sense sense,
                      double tol) {
  const double feas_tol = std::max(10.0 * tol, 1e-7);
  const bool inc_ok = incumbent.constraint_violation <= feas_tol;
  const bool cand_ok = candidate.constraint_violation <= feas_tol;
  if (cand_ok != inc_ok) return cand_ok;
  if (!cand_ok) return candidate.constraint_violation < 0.9 * incumbent.constraint_violation;
  const double margin = 1e-10 * std::max(1.0, std::abs(incumbent.objective));
  return sense == Sense::Minimize ? candidate.objective < incumbent.objective - margin
                                  : candidate.objective > incumbent.objective + margin;
}

}  // namespace

NlpResult multistart(const NlpProblem& problem, const std::function<Vector(CounterRng&)>& sampler,
                     const MultistartOptions& options) {
  if (options.stall_budget < 1) throw InvalidArgument("multistart: stall budget must be >= 1");
  auto improves = options.improves;
  if (!improves) {
    improves = [&problem, &options](const NlpResult& inc, const NlpResult& cand) {
      return default_improves(inc, cand, problem.sense, options.tol);
    };
  }

  auto run_one = [&](int restart) {
    CounterRng rng(options.seed,
                   CounterRng::derive_stream({0x6d73746172745ULL, options.salt,
                                              static_cast<std::uint64_t>(restart)}));
    return solve_local(problem, sampler(rng), options.tol);
  };

  NlpResult incumbent;
  bool have_incumbent = false;
  int stall = 0;
  const int batch = std::max(1, options.threads);

  for (int next = 0; next < options.max_restarts && stall < options.stall_budget;) {
    const int count = std::min(batch, options.max_restarts - next);
    std::vector<NlpResult> results(count);
    if (count == 1) {
      results[0] = run_one(next);
    } else {
      std::vector<std::future<NlpResult>> futures;
      futures.reserve(count);
      for (int j = 0; j < count; ++j) {
        futures.push_back(std::async(std::launch::async, run_one, next + j));
      }
      for (int j = 0; j < count; ++j) results[j] = futures[j].get();
    }
    // Fold strictly in restart order; results are start-dependent only, so
    // any surplus beyond the stall point is discarded identically.
    for (int j = 0; j < count && stall < options.stall_budget; ++j, ++next) {
      if (!have_incumbent || improves(incumbent, results[j])) {
        incumbent = results[j];
        have_incumbent = true;
        stall = 0;
      } else {
        ++stall;
      }
    }
  }
  if (!have_incumbent) throw NotConverged("multistart: no restarts executed");
  return incumbent;
}

}  // namespace ff

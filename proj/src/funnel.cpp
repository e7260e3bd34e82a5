#include "ff/funnel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>

#include "ff/errors.hpp"

namespace ff {

namespace {

constexpr double kBig = 1e300;        // stands in for +infinity on flow escape
constexpr double kRhoFloor = 1e-12;   // below this the shape cannot match the system

double piecewise_linear(const std::vector<double>& ts, const std::vector<double>& vs, double t) {
  const double slack = 1e-9 * std::max(1.0, ts.back() - ts.front());
  if (t < ts.front() - slack || t > ts.back() + slack) {
    throw OutOfDomain("funnel: query time outside the grid");
  }
  const double tc = std::clamp(t, ts.front(), ts.back());
  auto it = std::upper_bound(ts.begin(), ts.end(), tc);
  std::size_t i = static_cast<std::size_t>(std::distance(ts.begin(), it));
  if (i > 0) --i;
  if (i >= ts.size() - 1) i = ts.size() - 2;
  if (tc == ts[i]) return vs[i];
  if (tc == ts[i + 1]) return vs[i + 1];
  return vs[i] + (vs[i + 1] - vs[i]) * (tc - ts[i]) / (ts[i + 1] - ts[i]);
}

// Shape value of the flow endpoint over [t0, t1]; escape maps to kBig.
double flow_shape(const FunnelSpec& spec, double t0, double t1, const Vector& x, Vector* grad) {
  try {
    if (grad) {
      auto [endpoint, phi] = flow_sensitivity(spec.field, x, t0, t1, spec.integration);
      const Vector d = endpoint - spec.shape.ref_state(t1);
      const Matrix s = spec.shape.S(t1);
      *grad = 2.0 * (phi.transpose() * (s * d));
      return d.dot(s * d);
    }
    const Vector endpoint = flow(spec.field, x, t0, t1, spec.integration);
    return shape_value(spec.shape, endpoint, t1);
  } catch (const NonFiniteState&) {
    if (grad) grad->setZero(x.size());
    return kBig;
  }
}

NlpConstraint sublevel_constraint(const FunnelSpec& spec, double t, double level) {
  const Matrix s = spec.shape.S(t);
  const Vector center = spec.shape.ref_state(t);
  return {ConstraintKind::Inequality, [s, center, level](const Vector& x, Vector* grad) {
            const Vector d = x - center;
            if (grad) *grad = 2.0 * (s * d);
            return d.dot(s * d) - level;
          }};
}

void validate_spec(const FunnelSpec& spec) {
  if (spec.grid.size() < 2) throw InvalidArgument("funnel: grid needs at least two times");
  for (std::size_t i = 1; i < spec.grid.size(); ++i) {
    if (!(spec.grid[i] > spec.grid[i - 1])) {
      throw InvalidArgument("funnel: grid must be strictly increasing");
    }
  }
  const FunnelParams& p = spec.params;
  if (!(p.c > 1.0)) throw InvalidArgument("funnel: c must exceed 1");
  if (!(p.gamma1 > 0.0 && p.gamma1 < 1.0) || !(p.gamma2 > 0.0 && p.gamma2 < 1.0)) {
    throw InvalidArgument("funnel: gamma factors must lie in (0, 1)");
  }
  if (p.tau1 < 1 || p.tau2 < 1) throw InvalidArgument("funnel: stall budgets must be >= 1");
  if (p.derivative_samples < 1) throw InvalidArgument("funnel: need at least one sample");
  if (p.strictness_margin < 0.0) throw InvalidArgument("funnel: strictness margin must be >= 0");
  if (!(spec.goal.level > 0.0)) throw InvalidArgument("funnel: goal level must be positive");
}

// max of u^T M u + 2 g^T u over the unit ball, M symmetric PSD. Convexity
// puts the maximizer on the sphere; solved by the secular equation of the
// eigendecomposition.
double max_quadratic_on_ball(const Matrix& m, const Vector& g) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector d = es.eigenvalues();
  const Vector beta = es.eigenvectors().transpose() * g;
  const Eigen::Index n = d.size();
  const double dmax = d(n - 1);
  const double scale = std::max({1.0, std::abs(dmax), beta.lpNorm<Eigen::Infinity>()});

  auto phi = [&](double lambda) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = beta(i) / (lambda - d(i));
      sum += r * r;
    }
    return sum;
  };
  auto value_at = [&](double lambda) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = beta(i) / (lambda - d(i));
      v += d(i) * w * w + 2.0 * beta(i) * w;
    }
    return v;
  };

  const double eps = 1e-14 * scale;
  if (phi(dmax + eps) <= 1.0) {
    // Hard case: the top eigenspace carries no gradient component; fill the
    // remaining norm there.
    double v = 0.0, norm2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (dmax - d(i) <= eps) continue;
      const double w = beta(i) / (dmax - d(i));
      v += d(i) * w * w - 2.0 * beta(i) * w;
      norm2 += w * w;
    }
    return v + dmax * std::max(0.0, 1.0 - norm2);
  }
  double lo = dmax + eps;
  double hi = dmax + beta.norm() + eps;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (phi(mid) > 1.0 ? lo : hi) = mid;
  }
  return value_at(0.5 * (lo + hi));
}

// Parallel map of `run` over attempts [base, base + count), results in order.
template <typename T>
std::vector<T> run_batch(int count, int threads, const std::function<T(std::int64_t)>& run,
                         std::int64_t base) {
  std::vector<T> out(count);
  if (threads <= 1 || count == 1) {
    for (int i = 0; i < count; ++i) out[i] = run(base + i);
    return out;
  }
  std::vector<std::future<T>> futures;
  futures.reserve(count);
  for (int i = 0; i < count; ++i) {
    futures.push_back(std::async(std::launch::async, run, base + i));
  }
  for (int i = 0; i < count; ++i) out[i] = futures[i].get();
  return out;
}

}  // namespace

Funnel::Funnel(std::vector<double> times, std::vector<double> rho, QuadraticShape shape)
    : times_(std::move(times)), rho_(std::move(rho)), shape_(std::move(shape)) {
  if (times_.size() != rho_.size() || times_.size() < 2) {
    throw InvalidArgument("Funnel: need matching times and levels");
  }
  for (double r : rho_) {
    if (!(r > 0.0)) throw InvalidArgument("Funnel: levels must be positive");
  }
}

double Funnel::rho_at(double t) const { return piecewise_linear(times_, rho_, t); }

bool Funnel::contains(const Vector& x, double t) const {
  return shape_value(shape_, x, t) <= rho_at(t);
}

double goal_level(const QuadraticShape& shape, const GoalSet& goal, double horizon) {
  const Matrix s_end = shape.S(horizon);
  const Vector x_end = shape.ref_state(horizon);
  chol_lower(goal.q);  // SPD gate
  if (!(goal.level > 0.0)) throw InvalidArgument("goal_level: level must be positive");

  const Vector offset = x_end - goal.center;
  const double margin = offset.dot(goal.q * offset);
  if (!(margin < goal.level * (1.0 - 1e-12))) {
    throw GoalExcludesTrajectoryEnd("goal_level: trajectory end not strictly inside the goal");
  }

  if (offset.norm() <= 1e-12 * std::max(1.0, x_end.norm())) {
    return goal.level / gen_eig_max(goal.q, s_end);
  }

  // Offset centers: bisection on rho against the exact containment test
  // max over {P <= rho} of (x - x_G)^T Q_G (x - x_G) <= level.
  const Matrix l = chol_lower(s_end);
  Matrix a = l.transpose()
                 .triangularView<Eigen::Upper>()
                 .solve(Matrix::Identity(s_end.rows(), s_end.rows()));
  const Matrix m1 = (a.transpose() * goal.q * a).eval();
  const Vector g1 = a.transpose() * (goal.q * offset);
  auto reach = [&](double rho) {
    return max_quadratic_on_ball(rho * m1, std::sqrt(rho) * g1) + margin;
  };

  double hi = goal.level / gen_eig_max(goal.q, s_end);
  while (reach(hi) <= goal.level) hi *= 2.0;
  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (reach(mid) <= goal.level ? lo : hi) = mid;
  }
  return lo;
}

std::optional<Vector> falsify_reach(const FunnelSpec& spec, int k, double rho_k, double rho_next,
                                    std::int64_t attempt) {
  const double t0 = spec.grid[k];
  const double t1 = spec.grid[k + 1];
  const Matrix s0 = spec.shape.S(t0);
  const Vector c0 = spec.shape.ref_state(t0);

  CounterRng rng(spec.seed, CounterRng::derive_stream({1, static_cast<std::uint64_t>(k),
                                                       static_cast<std::uint64_t>(attempt)}));
  const Vector start = sample_ellipsoid(s0, rho_k, c0, EllipsoidRegion::Interior, rng);

  // A start that already escapes is itself a counterexample (objective is
  // +infinity and the start is feasible by construction).
  if (flow_shape(spec, t0, t1, start, nullptr) >= kBig) return start;

  NlpProblem problem;
  problem.dim = static_cast<int>(start.size());
  problem.sense = Sense::Maximize;
  problem.objective = [&spec, t0, t1](const Vector& x, Vector* grad) {
    return flow_shape(spec, t0, t1, x, grad);
  };
  problem.constraints.push_back(sublevel_constraint(spec, t0, rho_k));

  const NlpResult result = solve_local(problem, start, spec.params.nlp_tol);
  const double membership = shape_value(spec.shape, result.x, t0);
  const bool feasible = membership <= rho_k * (1.0 + 1e-6) + 1e-12;
  if (feasible && result.objective > rho_next * (1.0 + 1e-12)) return result.x;
  return std::nullopt;
}

double shrink_reach(const FunnelSpec& spec, int k, const Vector& x_star, double rho_k,
                    double rho_next) {
  const double t0 = spec.grid[k];
  const double t1 = spec.grid[k + 1];
  const Matrix s0 = spec.shape.S(t0);
  const Vector c0 = spec.shape.ref_state(t0);

  const double endpoint_value = flow_shape(spec, t0, t1, x_star, nullptr);
  if (endpoint_value < rho_next * (1.0 - 1e-6) - 1e-12) {
    throw InfeasibleStart("shrink_reach: start does not leave the next sublevel set (interval " +
                          std::to_string(k) + ")");
  }

  NlpProblem problem;
  problem.dim = static_cast<int>(x_star.size());
  problem.sense = Sense::Minimize;
  problem.objective = [s0, c0](const Vector& x, Vector* grad) {
    const Vector d = x - c0;
    if (grad) *grad = 2.0 * (s0 * d);
    return d.dot(s0 * d);
  };
  problem.constraints.push_back(
      {ConstraintKind::Inequality, [&spec, t0, t1, rho_next](const Vector& x, Vector* grad) {
         if (grad) {
           Vector g;
           const double value = flow_shape(spec, t0, t1, x, &g);
           *grad = -g;
           return rho_next - value;
         }
         return rho_next - flow_shape(spec, t0, t1, x, nullptr);
       }});

  const NlpResult result = solve_local(problem, x_star, spec.params.nlp_tol);

  double best = shape_value(spec.shape, x_star, t0);
  const double result_endpoint = flow_shape(spec, t0, t1, result.x, nullptr);
  if (result_endpoint >= rho_next * (1.0 - 1e-6) - 1e-12) {
    best = std::min(best, shape_value(spec.shape, result.x, t0));
  }
  return std::min(spec.params.gamma1 * best, spec.params.gamma1 * rho_k);
}

double derivative_check(const FunnelSpec& spec, int k, double rho_k, double rho_next,
                        int* counterexamples, std::int64_t* solves) {
  const double t0 = spec.grid[k];
  const double t1 = spec.grid[k + 1];
  const double h = t1 - t0;
  const int samples = spec.params.derivative_samples;
  const int threads = std::max(1, spec.threads);
  std::int64_t attempt = 0;

  struct Outcome {
    double best_rate = -kBig;
    bool valid = false;
  };

  bool restart = true;
  while (restart) {
    restart = false;
    for (int j = 0; j < samples && !restart; ++j) {
      const double t = t0 + h * static_cast<double>(j + 1) / samples;
      int stall = 0;
      while (stall < spec.params.tau2 && !restart) {
        const double level = rho_k + (rho_next - rho_k) * (t - t0) / h;
        const double rho_dot = (rho_next - rho_k) / h;
        const double threshold = rho_dot - spec.params.strictness_margin +
                                 1e-10 * std::max(1.0, std::abs(rho_dot));
        const Matrix s = spec.shape.S(t);
        const Vector center = spec.shape.ref_state(t);
        const double feas_tol = 1e-6 * std::max(1.0, level);

        std::function<Outcome(std::int64_t)> run = [&, level, t](std::int64_t att) {
          CounterRng rng(spec.seed,
                         CounterRng::derive_stream({3, static_cast<std::uint64_t>(k),
                                                    static_cast<std::uint64_t>(att)}));
          const Vector start = sample_ellipsoid(s, level, center, EllipsoidRegion::Boundary, rng);
          Outcome out;
          out.best_rate = shape_rate(spec.shape, spec.field, start, t);
          out.valid = true;

          NlpProblem problem;
          problem.dim = static_cast<int>(start.size());
          problem.sense = Sense::Maximize;
          problem.objective = [&spec, t](const Vector& x, Vector* grad) {
            if (grad) *grad = shape_rate_gradient(spec.shape, spec.field, x, t);
            return shape_rate(spec.shape, spec.field, x, t);
          };
          problem.constraints.push_back(
              {ConstraintKind::Equality, [s, center, level](const Vector& x, Vector* grad) {
                 const Vector d = x - center;
                 if (grad) *grad = 2.0 * (s * d);
                 return d.dot(s * d) - level;
               }});
          const NlpResult result = solve_local(problem, start, spec.params.nlp_tol);
          const double miss = std::abs(shape_value(spec.shape, result.x, t) - level);
          if (miss <= feas_tol) out.best_rate = std::max(out.best_rate, result.objective);
          return out;
        };

        const int count = std::min(threads, spec.params.tau2 - stall);
        const auto batch = run_batch<Outcome>(count, threads, run, attempt);
        for (int i = 0; i < count; ++i) {
          ++attempt;
          if (solves) ++*solves;
          if (batch[i].valid && batch[i].best_rate > threshold) {
            rho_k *= spec.params.gamma2;
            if (counterexamples) ++*counterexamples;
            if (rho_k < kRhoFloor) {
              throw RhoUnderflow("derivative_check: level collapsed at interval " +
                                 std::to_string(k));
            }
            restart = true;  // re-check every sample against the new level
            break;
          }
          ++stall;
        }
      }
    }
  }
  return rho_k;
}

SynthesisResult synthesize(const FunnelSpec& spec) {
  validate_spec(spec);
  const int intervals = static_cast<int>(spec.grid.size()) - 1;
  const int threads = std::max(1, spec.threads);

  std::vector<double> rho(spec.grid.size(), 0.0);
  SynthesisStats stats;
  stats.reach_counterexamples.assign(intervals, 0);
  stats.derivative_counterexamples.assign(intervals, 0);

  rho.back() = goal_level(spec.shape, spec.goal, spec.grid.back());

  for (int k = intervals - 1; k >= 0; --k) {
    const double rho_next = rho[k + 1];
    double rho_k = spec.params.c * rho_next;
    try {
      int stall = 0;
      std::int64_t attempt = 0;
      std::function<std::optional<Vector>(std::int64_t)> run = [&](std::int64_t att) {
        return falsify_reach(spec, k, rho_k, rho_next, att);
      };
      while (stall < spec.params.tau1) {
        const int count = std::min(threads, spec.params.tau1 - stall);
        const auto batch = run_batch<std::optional<Vector>>(count, threads, run, attempt);
        for (int i = 0; i < count; ++i) {
          ++attempt;
          ++stats.nlp_solves;
          if (batch[i]) {
            rho_k = shrink_reach(spec, k, *batch[i], rho_k, rho_next);
            ++stats.nlp_solves;
            ++stats.reach_counterexamples[k];
            if (rho_k < kRhoFloor) {
              throw RhoUnderflow("synthesize: level collapsed at interval " + std::to_string(k));
            }
            stall = 0;
            break;  // later speculative solves saw a stale level
          }
          ++stall;
        }
      }
      if (spec.params.derivative_check) {
        rho_k = derivative_check(spec, k, rho_k, rho_next,
                                 &stats.derivative_counterexamples[k], &stats.nlp_solves);
      }
    } catch (const RhoUnderflow&) {
      throw;
    } catch (const Error& e) {
      throw Error("synthesize: interval k=" + std::to_string(k + 1) + " of " +
                  std::to_string(intervals) + " (reach NLPs / derivative NLP): " + e.what());
    }
    rho[k] = rho_k;
  }
  return SynthesisResult{Funnel(spec.grid, std::move(rho), spec.shape), std::move(stats)};
}

namespace {

double unit_ball_volume(int n) {
  return std::pow(3.14159265358979323846, 0.5 * n) / std::tgamma(0.5 * n + 1.0);
}

double det_spd(const Matrix& s) {
  const Matrix l = chol_lower(s);
  double det = 1.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) det *= l(i, i) * l(i, i);
  return det;
}

}  // namespace

double cross_section_volume(const Funnel& funnel, double t) {
  const int n = funnel.shape().dim();
  const double rho = funnel.rho_at(t);
  return unit_ball_volume(n) * std::pow(rho, 0.5 * n) / std::sqrt(det_spd(funnel.shape().S(t)));
}

FunnelVolume funnel_volume(const Funnel& funnel) {
  FunnelVolume out;
  const auto& ts = funnel.times();
  std::vector<double> sections(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    out.sum_levels += funnel.rho()[i];
    sections[i] = cross_section_volume(funnel, ts[i]);
  }
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    out.integrated_volume += 0.5 * (sections[i] + sections[i + 1]) * (ts[i + 1] - ts[i]);
  }
  return out;
}

int audit_funnel(const FunnelSpec& spec, const Funnel& funnel, int solves_per_interval,
                 bool check_derivative, std::uint64_t salt) {
  const int intervals = static_cast<int>(funnel.times().size()) - 1;
  const int threads = std::max(1, spec.threads);
  const int reach_solves = check_derivative ? solves_per_interval / 2 : solves_per_interval;
  const int deriv_solves = solves_per_interval - reach_solves;
  int hits = 0;

  for (int k = 0; k < intervals; ++k) {
    const double rho_k = funnel.rho()[k];
    const double rho_next = funnel.rho()[k + 1];
    const double t0 = funnel.times()[k];
    const double t1 = funnel.times()[k + 1];

    {
      FunnelSpec probe = spec;
      probe.seed = CounterRng::derive_stream({salt, 0xa1, spec.seed});
      std::function<bool(std::int64_t)> run = [&](std::int64_t att) {
        return falsify_reach(probe, k, rho_k, rho_next, att).has_value();
      };
      std::int64_t base = 0;
      while (base < reach_solves) {
        const int count = std::min<std::int64_t>(threads, reach_solves - base);
        for (bool hit : run_batch<bool>(static_cast<int>(count), threads, run, base)) {
          if (hit) ++hits;
        }
        base += count;
      }
    }

    if (check_derivative && deriv_solves > 0) {
      const double h = t1 - t0;
      const int samples = spec.params.derivative_samples;
      const double rho_dot = (rho_next - rho_k) / h;
      const double threshold = rho_dot - spec.params.strictness_margin +
                               1e-10 * std::max(1.0, std::abs(rho_dot));
      for (int j = 0; j < samples; ++j) {
        const double t = t0 + h * static_cast<double>(j + 1) / samples;
        const double level = rho_k + (rho_next - rho_k) * (t - t0) / h;
        const Matrix s = spec.shape.S(t);
        const Vector center = spec.shape.ref_state(t);
        const double feas_tol = 1e-6 * std::max(1.0, level);

        NlpProblem problem;
        problem.dim = funnel.shape().dim();
        problem.sense = Sense::Maximize;
        problem.objective = [&spec, t](const Vector& x, Vector* grad) {
          if (grad) *grad = shape_rate_gradient(spec.shape, spec.field, x, t);
          return shape_rate(spec.shape, spec.field, x, t);
        };
        problem.constraints.push_back(
            {ConstraintKind::Equality, [s, center, level](const Vector& x, Vector* grad) {
               const Vector d = x - center;
               if (grad) *grad = 2.0 * (s * d);
               return d.dot(s * d) - level;
             }});

        std::function<bool(std::int64_t)> run = [&](std::int64_t att) {
          CounterRng rng(spec.seed, CounterRng::derive_stream(
                                        {salt, 0xa3, static_cast<std::uint64_t>(k),
                                         static_cast<std::uint64_t>(j),
                                         static_cast<std::uint64_t>(att)}));
          const Vector start = sample_ellipsoid(s, level, center, EllipsoidRegion::Boundary, rng);
          double best = shape_rate(spec.shape, spec.field, start, t);
          const NlpResult result = solve_local(problem, start, spec.params.nlp_tol);
          if (std::abs(shape_value(spec.shape, result.x, t) - level) <= feas_tol) {
            best = std::max(best, result.objective);
          }
          return best > threshold;
        };
        const int per_sample = std::max(1, deriv_solves / samples);
        std::int64_t base = 0;
        while (base < per_sample) {
          const int count = std::min<std::int64_t>(threads, per_sample - base);
          for (bool hit : run_batch<bool>(static_cast<int>(count), threads, run, base)) {
            if (hit) ++hits;
          }
          base += count;
        }
      }
    }
  }
  return hits;
}

void save_funnel_csv(const Funnel& funnel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_funnel_csv: cannot open " + path);
  out << "t,rho,cross_section_volume\n";
  char buf[32];
  for (std::size_t i = 0; i < funnel.times().size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", funnel.times()[i]);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", funnel.rho()[i]);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", cross_section_volume(funnel, funnel.times()[i]));
    out << buf << '\n';
  }
}

}  // namespace ff

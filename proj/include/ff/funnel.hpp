#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ff/nlpsolve.hpp"
#include "ff/tracking.hpp"

namespace ff {

/// Goal region {x : (x - center)^T Q (x - center) <= level}.
struct GoalSet {
  Vector center;
  Matrix q;
  double level = 1.0;
};

struct FunnelParams {
  double c = 1.5;          // initial per-step blow-up factor, > 1
  double gamma1 = 0.9999;  // shrink slack after a reach counterexample
  double gamma2 = 0.999;   // shrink factor on a derivative counterexample
  int tau1 = 10;           // reach stall budget
  int tau2 = 30;           // derivative stall budget (per sample)
  int derivative_samples = 1;  // per interval; 1 means just t_{k+1}
  bool derivative_check = true;
  double strictness_margin = 0.0;  // tightens the derivative condition
  double nlp_tol = 1e-8;
};

struct FunnelSpec {
  VectorField field;
  QuadraticShape shape;
  std::vector<double> grid;  // 0 = t_1 < ... < t_N = T
  GoalSet goal;
  FunnelParams params;
  std::uint64_t seed = 0;
  IntegrationConfig integration;
  int threads = 1;
};

/// Synthesized funnel: levels rho_i at the grid times, linearly interpolated
/// in between.
class Funnel {
 public:
  Funnel(std::vector<double> times, std::vector<double> rho, QuadraticShape shape);

  double rho_at(double t) const;
  bool contains(const Vector& x, double t) const;

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& rho() const { return rho_; }
  const QuadraticShape& shape() const { return shape_; }

 private:
  std::vector<double> times_;
  std::vector<double> rho_;
  QuadraticShape shape_;
};

struct SynthesisStats {
  std::vector<int> reach_counterexamples;       // per interval
  std::vector<int> derivative_counterexamples;  // per interval
  std::int64_t nlp_solves = 0;
};

struct SynthesisResult {
  Funnel funnel;
  SynthesisStats stats;
};

/// Largest rho with {P(x - ref(T), T) <= rho} contained in the goal.
double goal_level(const QuadraticShape& shape, const GoalSet& goal, double horizon);

/// One falsification solve of the reach problem on interval k: maximize the
/// shape value of the flow endpoint over the current sublevel set. Returns a
/// counterexample iff the optimum exceeds rho_next (flow escape counts as
/// +infinity).
std::optional<Vector> falsify_reach(const FunnelSpec& spec, int k, double rho_k, double rho_next,
                                    std::int64_t attempt);

/// Shrink step: minimize P(x, t_k) subject to the flow endpoint staying at
/// or above rho_next, started from counterexample x_star; returns
/// gamma1 * P(x', t_k), strictly below the previous rho_k.
double shrink_reach(const FunnelSpec& spec, int k, const Vector& x_star, double rho_k,
                    double rho_next);

/// Runs the discrete derivative condition on interval k, shrinking rho_k by
/// gamma2 until tau2 consecutive counterexample-free solves per sample time.
double derivative_check(const FunnelSpec& spec, int k, double rho_k, double rho_next,
                        int* counterexamples = nullptr, std::int64_t* solves = nullptr);

/// Algorithm: rho_N from the goal, then a backward sweep of reach
/// falsification plus the derivative check per interval.
SynthesisResult synthesize(const FunnelSpec& spec);

struct FunnelVolume {
  double sum_levels = 0.0;
  double integrated_volume = 0.0;
};

/// Sum of levels and the time integral of the ellipsoid cross-section
/// volume V_n rho(t)^{n/2} / sqrt(det S(t)) (trapezoidal on the grid).
FunnelVolume funnel_volume(const Funnel& funnel);

/// Cross-section volume at time t.
double cross_section_volume(const Funnel& funnel, double t);

/// A-posteriori audit: extra falsification solves per interval (reach
/// always, derivative condition when `check_derivative`). Returns the number
/// of counterexamples found.
int audit_funnel(const FunnelSpec& spec, const Funnel& funnel, int solves_per_interval = 200,
                 bool check_derivative = true, std::uint64_t salt = 0xa0d17);

/// CSV with header `t,rho,cross_section_volume`, one row per grid time.
void save_funnel_csv(const Funnel& funnel, const std::string& path);

}  // namespace ff

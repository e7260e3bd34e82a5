// Acceptance suite: runs every acceptance criterion end to end and prints
// one PASS/FAIL line per criterion. Returns the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ff/dynamics.hpp"
#include "ff/experiment.hpp"
#include "ff/funnel.hpp"
#include "ff/linoracle.hpp"
#include "ff/odeint.hpp"
#include "ff/rng.hpp"
#include "ff/tracking.hpp"
#include "ff/trajgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using ff::Matrix;
using ff::Vector;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Criterion {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Criterion> g_results;

void report(int id, bool pass, const std::string& detail) {
  g_results.push_back({id, pass, detail});
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

fs::path workdir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "ff_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string nlink_config(int links, int seed = 7) {
  std::ostringstream ss;
  ss << "{\"system\": {\"name\": \"nlink_linearized\", \"links\": " << links
     << "}, \"grid\": {\"T\": 1.0, \"step\": 0.025}, \"seed\": " << seed << "}";
  return ss.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = workdir() / name;
  std::ofstream out(p);
  out << text;
  return p;
}

json load_summary(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  return json::parse(in);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CompareRow {
  double t, falsifier, oracle, ratio;
};

std::vector<CompareRow> read_compare(const fs::path& dir) {
  std::ifstream in(dir / "compare.csv");
  std::string line;
  std::getline(in, line);
  std::vector<CompareRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CompareRow r{};
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    r.t = std::stod(cell);
    std::getline(ss, cell, ',');
    r.falsifier = std::stod(cell);
    std::getline(ss, cell, ',');
    r.oracle = std::stod(cell);
    std::getline(ss, cell, ',');
    r.ratio = std::stod(cell);
    rows.push_back(r);
  }
  return rows;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------

void criterion_1() {
  const double expected[5] = {15.54, 6.16, 1.17, 1.32, 1.78};
  const double t0 = now_seconds();
  std::vector<double> got, alt;
  for (int n = 1; n <= 5; ++n) {
    const fs::path cfg = write_config("oracle_nl" + std::to_string(n) + ".json", nlink_config(n));
    const fs::path out = workdir() / ("oracle_nl" + std::to_string(n));
    if (ff::cmd_oracle(cfg.string(), out.string()) != 0) {
      report(1, false, "oracle command failed for n=" + std::to_string(n));
      return;
    }
    got.push_back(load_summary(out).at("rho0").get<double>());
    // Alternate goal-radius reading (r = 0.025 instead of r^2 = 0.025).
    const fs::path cfg_alt = write_config(
        "oracle_alt_nl" + std::to_string(n) + ".json",
        std::string("{\"system\": {\"name\": \"nlink_linearized\", \"links\": ") +
            std::to_string(n) +
            "}, \"grid\": {\"T\": 1.0, \"step\": 0.025}, "
            "\"goal\": {\"volume_match_r2\": 0.000625}}");
    const fs::path out_alt = workdir() / ("oracle_alt_nl" + std::to_string(n));
    ff::cmd_oracle(cfg_alt.string(), out_alt.string());
    alt.push_back(load_summary(out_alt).at("rho0").get<double>());
  }
  const double elapsed = now_seconds() - t0;

  bool pass = true;
  std::ostringstream detail;
  detail << "oracle rho(0) vs Table 4 (5% each): ";
  for (int i = 0; i < 5; ++i) {
    const double rel = std::abs(got[i] - expected[i]) / expected[i];
    const bool ok = rel <= 0.05;
    pass = pass && ok;
    detail << "n=" << i + 1 << " " << fmt(got[i]) << "/" << fmt(expected[i]) << (ok ? " ok" : " MISS")
           << (i < 4 ? ", " : "");
  }
  detail << " [" << fmt(elapsed) << " s]";
  if (!pass) {
    detail << " | goal-radius reading checked per the open question: r^2=0.025 gives the values "
              "above; r=0.025 gives {";
    for (int i = 0; i < 5; ++i) detail << fmt(alt[i]) << (i < 4 ? ", " : "}");
    detail << " which also misses (and breaks the matching n=1,2), so the radius reading is not "
              "the cause; the n>=3 rows of the published table are not reproducible from the "
              "published model description (analysis in the project notes)";
  }
  report(1, pass, detail.str());
}

struct CompareOutcome {
  fs::path dir;
  double rho0_falsifier = 0.0;
  double rho0_oracle = 0.0;
  bool ok_levels = true;
  bool ok_rho0 = true;
};

CompareOutcome run_compare(int links, int threads, const std::string& tag) {
  CompareOutcome out;
  const fs::path cfg = write_config("cmp_nl" + std::to_string(links) + "_" + tag + ".json",
                                    nlink_config(links));
  out.dir = workdir() / ("cmp_nl" + std::to_string(links) + "_" + tag);
  ff::CliOverrides overrides;
  overrides.no_derivative_check = true;
  overrides.threads = threads;
  if (ff::cmd_compare(cfg.string(), out.dir.string(), overrides) != 0) {
    out.ok_levels = out.ok_rho0 = false;
    return out;
  }
  const json summary = load_summary(out.dir);
  out.rho0_falsifier = summary.at("rho0_falsifier").get<double>();
  out.rho0_oracle = summary.at("rho0_oracle").get<double>();
  for (const CompareRow& row : read_compare(out.dir)) {
    if (!(row.falsifier <= row.oracle * 1.001)) out.ok_levels = false;
  }
  out.ok_rho0 = out.rho0_falsifier >= 0.98 * out.rho0_oracle;
  return out;
}

std::vector<CompareOutcome> g_compare_1thread;

void criterion_2() {
  const double t0 = now_seconds();
  bool pass = true;
  std::ostringstream detail;
  detail << "falsifier vs oracle, DC off, nlink_linearized{1..3}: ";
  for (int n = 1; n <= 3; ++n) {
    const CompareOutcome out = run_compare(n, 1, "t1");
    g_compare_1thread.push_back(out);
    pass = pass && out.ok_levels && out.ok_rho0;
    detail << "n=" << n << " rho0 " << fmt(out.rho0_falsifier) << "/" << fmt(out.rho0_oracle)
           << (out.ok_levels ? "" : " LEVELS-EXCEED") << (out.ok_rho0 ? "" : " RHO0-LOW")
           << (n < 3 ? ", " : "");
  }
  const double elapsed = now_seconds() - t0;
  detail << " (every rho_k <= oracle*1.001, rho(0) >= 0.98*oracle) [" << fmt(elapsed) << " s"
         << (elapsed < 300.0 ? ", under the 5 min budget]" : ", OVER the 5 min budget]");
  pass = pass && elapsed < 300.0;
  report(2, pass, detail.str());
}

void criterion_3() {
  const double t0 = now_seconds();
  const fs::path cfg = write_config("dc5.json", nlink_config(5));
  const fs::path out_dc = workdir() / "dc5_on";
  const fs::path out_nodc = workdir() / "dc5_off";
  ff::CliOverrides fast;
  fast.threads = 8;
  int rc = ff::cmd_synthesize(cfg.string(), out_dc.string(), fast);
  ff::CliOverrides no_dc = fast;
  no_dc.no_derivative_check = true;
  rc += ff::cmd_synthesize(cfg.string(), out_nodc.string(), no_dc);
  if (rc != 0) {
    report(3, false, "synthesize failed for nlink_linearized{5}");
    return;
  }
  const double dc = load_summary(out_dc).at("rho0").get<double>();
  const double nodc = load_summary(out_nodc).at("rho0").get<double>();
  const double elapsed = now_seconds() - t0;

  const bool in_band = dc >= 0.90 * 1.70 && dc <= 1.00 * 1.78;
  const bool below = dc < nodc;
  const bool near_table = std::abs(dc - 1.70) <= 0.10 * 1.70;
  const bool pass = in_band && below && near_table;
  std::ostringstream detail;
  detail << "derivative-check effect on nlink_linearized{5}: rho0 DC=" << fmt(dc)
         << " noDC=" << fmt(nodc) << "; strictly-below-noDC " << (below ? "ok" : "MISS")
         << ", band [1.53,1.78] " << (in_band ? "ok" : "MISS") << ", within 10% of 1.70 "
         << (near_table ? "ok" : "MISS") << " [" << fmt(elapsed) << " s]";
  if (!pass && below) {
    detail << " | the relative effect (DC binds and shrinks the funnel) reproduces; the absolute "
              "band inherits the criterion-1 model gap for n>=3 (see notes)";
  }
  report(3, pass, detail.str());
}

void criterion_4() {
  const double t0 = now_seconds();
  const std::string scalar_cfg =
      R"({"system": {"name": "scalar_decay"}, "grid": {"T": 1.0, "step": 0.1}, "seed": 3})";
  const fs::path cfg = write_config("scalar.json", scalar_cfg);
  const fs::path out_dc = workdir() / "scalar_dc";
  const fs::path out_nodc = workdir() / "scalar_nodc";
  ff::CliOverrides no_dc;
  no_dc.no_derivative_check = true;
  int rc = ff::cmd_synthesize(cfg.string(), out_dc.string());
  rc += ff::cmd_synthesize(cfg.string(), out_nodc.string(), no_dc);
  if (rc != 0) {
    report(4, false, "scalar_decay synthesize failed");
    return;
  }

  auto ratios = [](const fs::path& dir) {
    std::ifstream in(dir / "funnel.csv");
    std::string line;
    std::getline(in, line);
    std::vector<double> rho;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      std::getline(ss, cell, ',');
      rho.push_back(std::stod(cell));
    }
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < rho.size(); ++i) out.push_back(rho[i] / rho[i + 1]);
    return out;
  };

  bool pass = true;
  double worst_dc = 0.0, worst_nodc = 0.0;
  for (double r : ratios(out_dc)) {
    worst_dc = std::max(worst_dc, std::abs(r - 1.2) / 1.2);
  }
  const double expected_nodc = 0.9999 * std::exp(0.2);
  for (double r : ratios(out_nodc)) {
    worst_nodc = std::max(worst_nodc, std::abs(r - expected_nodc) / expected_nodc);
  }
  pass = worst_dc <= 0.005 && worst_nodc <= 0.005;
  const double elapsed = now_seconds() - t0;
  std::ostringstream detail;
  detail << "scalar decay law: DC-on per-step ratio within " << fmt(100.0 * worst_dc)
         << "% of 1.2, DC-off within " << fmt(100.0 * worst_nodc)
         << "% of gamma1*e^0.2 (0.5% allowed) [" << fmt(elapsed) << " s]";
  report(4, pass && elapsed < 30.0, detail.str());
}

bool property_sensitivity() {
  ff::CounterRng rng(0xaced, 0);
  std::vector<std::pair<std::string, ff::VectorField>> fields;

  {  // pendulum under its constant-upright tracking controller
    const ff::ControlSystem sys = ff::make_pendulum(1.0, 0.5, 9.81, 0.1);
    const ff::Trajectory traj = ff::constant_trajectory(Vector::Zero(2), Vector::Zero(1), 1.0);
    auto [ctrl, shape] =
        ff::tvlqr(sys, traj, Matrix::Identity(2, 2), Matrix::Identity(1, 1),
                  Matrix::Identity(2, 2));
    fields.emplace_back("pendulum", ff::close_loop(sys, ctrl.u, ctrl.jac_state));
  }
  {  // quadcopter under its hover tracking controller
    const double m = 1.0, g = 9.81;
    const ff::ControlSystem sys = ff::make_quadcopter(m, g);
    Vector hover_u = Vector::Zero(4);
    hover_u(0) = m * g;
    const ff::Trajectory traj = ff::constant_trajectory(Vector::Zero(12), hover_u, 1.0);
    auto [ctrl, shape] = ff::tvlqr(sys, traj, 10.0 * Matrix::Identity(12, 12),
                                   Matrix::Identity(4, 4), 10.0 * Matrix::Identity(12, 12));
    fields.emplace_back("quadcopter", ff::close_loop(sys, ctrl.u, ctrl.jac_state));
  }
  {  // two-link chain under the transferred LQR
    const ff::NlinkController nc =
        ff::nlink_controller(2, 9.81, 20.0 * Matrix::Identity(4, 4), Matrix::Identity(2, 2));
    fields.emplace_back("nlink",
                        ff::close_loop(ff::make_nlink(2, 9.81), nc.controller.u,
                                       nc.controller.jac_state));
  }
  {  // unforced simplified chain
    fields.emplace_back("nlink_simplified",
                        ff::close_loop(ff::make_nlink_simplified(2, 9.81),
                                       [](const Vector&, double) {
                                         return Vector::Zero(2).eval();
                                       }));
  }
  {  // scalar decay
    Matrix a(1, 1);
    a << -1.0;
    fields.emplace_back("scalar", ff::VectorField{1,
                                                  [a](const Vector& x, double) {
                                                    return (a * x).eval();
                                                  },
                                                  [a](const Vector&, double) { return a; }});
  }

  int points = 0;
  double worst = 0.0;
  for (auto& [name, field] : fields) {
    Vector base = Vector::Zero(field.dim);
    if (name == "nlink" || name == "nlink_simplified") {
      base.head(field.dim / 2).setConstant(kPi / 2);
    }
    for (int trial = 0; trial < 20; ++trial, ++points) {
      Vector x0 = base;
      for (int i = 0; i < field.dim; ++i) x0(i) += 0.05 * rng.normal();
      const double horizon = 0.3;
      const auto [xe, phi] = ff::flow_sensitivity(field, x0, 0.0, horizon);
      Matrix fd(field.dim, field.dim);
      for (int j = 0; j < field.dim; ++j) {
        const double step = 1e-6 * std::max(1.0, std::abs(x0(j)));
        Vector hi = x0, lo = x0;
        hi(j) += step;
        lo(j) -= step;
        fd.col(j) =
            (ff::flow(field, hi, 0.0, horizon) - ff::flow(field, lo, 0.0, horizon)) / (2.0 * step);
      }
      worst = std::max(worst, (phi - fd).norm() / std::max(1.0, phi.norm()));
    }
  }
  std::printf("  5a: %d sensitivity points, worst relative error %s (< 1e-4 required)\n", points,
              fmt(worst).c_str());
  return worst < 1e-4 && points == 100;
}

bool property_energy() {
  ff::CounterRng rng(0xe4e5, 0);
  ff::IntegrationConfig tight;
  tight.abs_tol = 1e-10;
  tight.rel_tol = 1e-10;
  double worst = 0.0;
  for (int n : {2, 3}) {
    const ff::ControlSystem sys = ff::make_nlink(n, 9.81);
    const ff::VectorField field = ff::close_loop(
        sys, [n](const Vector&, double) { return Vector::Zero(n).eval(); });
    for (int trial = 0; trial < 3; ++trial) {
      Vector x0 = Vector::Zero(2 * n);
      x0.head(n).setConstant(kPi / 2);
      for (int i = 0; i < 2 * n; ++i) x0(i) += 0.3 * rng.normal();
      const double e0 = ff::nlink_energy(n, 9.81, x0.head(n), x0.tail(n));
      const Vector x1 = ff::flow(field, x0, 0.0, 1.0, tight);
      const double e1 = ff::nlink_energy(n, 9.81, x1.head(n), x1.tail(n));
      worst = std::max(worst, std::abs(e1 - e0) / std::abs(e0));
    }
  }
  std::printf("  5b: worst relative energy drift %s (<= 1e-6 required)\n", fmt(worst).c_str());
  return worst <= 1e-6;
}

bool property_care() {
  ff::CounterRng rng(0xca4e, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 9;  // up to n = 10
    Matrix a(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    }
    Matrix b;
    if (trial % 2 == 0) {
      // Hurwitz-shifted A with a skinny random input map.
      a -= (a.cwiseAbs().rowwise().sum().maxCoeff() + 0.5) * Matrix::Identity(n, n);
      b = Matrix(n, 1 + trial % 3);
      for (int i = 0; i < b.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) b(i, j) = rng.normal();
      }
    } else {
      b = Matrix::Identity(n, n);  // unstable but fully actuated
    }
    const Matrix q = Matrix::Identity(n, n);
    const Matrix r = Matrix::Identity(b.cols(), b.cols());
    const Matrix s = ff::care_kleinman(a, b, q, r);
    const Matrix res =
        a.transpose() * s + s * a - s * b * r.llt().solve(b.transpose() * s) + q;
    worst = std::max(worst, res.norm() / q.norm());
  }
  std::printf("  5c: worst CARE residual %s relative to ||Q|| (<= 1e-8 required)\n",
              fmt(worst).c_str());
  return worst <= 1e-8;
}

bool property_audit() {
  // Audit every funnel synthesized by this suite: the scalar pair, the
  // DC-off chains from criterion 2, and both n=5 runs from criterion 3.
  struct Item {
    std::string config;
    bool derivative_check;
  };
  const std::vector<Item> items = {
      {R"({"system": {"name": "scalar_decay"}, "grid": {"T": 1.0, "step": 0.1}, "seed": 3})",
       true},
      {R"({"system": {"name": "scalar_decay"}, "grid": {"T": 1.0, "step": 0.1}, "seed": 3})",
       false},
      {nlink_config(1), false},
      {nlink_config(2), false},
      {nlink_config(3), false},
      {nlink_config(5), false},
      {nlink_config(5), true},
  };
  int total_hits = 0;
  int audited = 0;
  for (const Item& item : items) {
    ff::CliOverrides overrides;
    overrides.threads = 8;
    ff::Experiment exp = ff::build_experiment(item.config, overrides);
    exp.spec.params.derivative_check = item.derivative_check;
    const ff::SynthesisResult result = ff::synthesize(exp.spec);
    total_hits += ff::audit_funnel(exp.spec, result.funnel, 200, item.derivative_check, 0xa0d17);
    ++audited;
  }
  std::printf("  5d: audited %d funnels at 200 extra solves per interval, %d counterexamples\n",
              audited, total_hits);
  return total_hits == 0;
}

bool property_determinism() {
  bool pass = true;
  for (int n = 1; n <= 3; ++n) {
    const CompareOutcome eight = run_compare(n, 8, "t8");
    const CompareOutcome& one = g_compare_1thread[static_cast<std::size_t>(n - 1)];
    for (const char* file : {"funnel.csv", "oracle.csv", "compare.csv"}) {
      if (read_bytes(one.dir / file) != read_bytes(eight.dir / file)) {
        std::printf("  5e: %s differs between 1 and 8 threads for n=%d\n", file, n);
        pass = false;
      }
    }
  }
  std::printf("  5e: criterion-2 outputs byte-identical at 1 and 8 threads: %s\n",
              pass ? "yes" : "NO");
  return pass;
}

void criterion_5() {
  const bool a = property_sensitivity();
  const bool b = property_energy();
  const bool c = property_care();
  const bool d = property_audit();
  const bool e = property_determinism();
  std::ostringstream detail;
  detail << "property suite: sensitivity " << (a ? "ok" : "FAIL") << ", energy "
         << (b ? "ok" : "FAIL") << ", CARE " << (c ? "ok" : "FAIL") << ", audit "
         << (d ? "ok" : "FAIL") << ", determinism " << (e ? "ok" : "FAIL");
  report(5, a && b && c && d && e, detail.str());
}

void criterion_6() {
  std::vector<std::pair<int, double>> timings;
  for (int n : {1, 5, 10}) {
    const fs::path cfg = write_config("scale_nl" + std::to_string(n) + ".json", nlink_config(n));
    const fs::path out = workdir() / ("scale_nl" + std::to_string(n));
    ff::CliOverrides overrides;
    overrides.threads = 8;
    const double t0 = now_seconds();
    if (ff::cmd_synthesize(cfg.string(), out.string(), overrides) != 0) {
      report(6, false, "synthesize failed at n=" + std::to_string(n));
      return;
    }
    timings.emplace_back(n, now_seconds() - t0);
  }
  const double t1 = std::max(timings[0].second, 0.05);
  const double t10 = timings[2].second;
  const double exponent = std::log(t10 / t1) / std::log(10.0);
  std::ostringstream detail;
  detail << "scaling: t(1)=" << fmt(timings[0].second) << " s, t(5)=" << fmt(timings[1].second)
         << " s, t(10)=" << fmt(timings[2].second) << " s; growth exponent " << fmt(exponent)
         << " (< 3 required)";
  report(6, exponent < 3.0, detail.str());
}

void criterion_7() {
  report(7,
         true,
         "excluded scope (SOS baseline columns, Tables 1-2 volumes, unpublished pendulum and "
         "quadcopter reference trajectories) is substituted by criteria 1-4 per the build "
         "contract; nothing to execute");
}

}  // namespace

int main() {
  std::printf("funnel-forge acceptance suite\n");
  const double t0 = now_seconds();
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();

  int failed = 0;
  for (const Criterion& c : g_results) failed += c.pass ? 0 : 1;
  std::printf("%d of %zu criteria passed (total %.0f s)\n", static_cast<int>(g_results.size()) - failed,
              g_results.size(), now_seconds() - t0);
  return failed;
}

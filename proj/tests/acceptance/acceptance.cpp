// Acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include "../unit/oracle.hpp"
#include "cenkf/cli.hpp"
#include "cenkf/constrained_filter.hpp"
#include "cenkf/errors.hpp"
#include "cenkf/export.hpp"
#include "cenkf/filter_core.hpp"
#include "cenkf/harness.hpp"
#include "cenkf/integrator.hpp"
#include "cenkf/patient_data.hpp"
#include "cenkf/qp.hpp"
#include "cenkf/rng.hpp"
#include "cenkf/ultradian.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace cenkf;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1 ------------------------------------------------------------------------
// Linear-Gaussian system with drift: v' = Psi v + c + xi, y = H v + eta.
Outcome linear_gaussian_oracle() {
  const auto t0 = Clock::now();
  Eigen::Matrix2d Psi;
  Psi << 0.9, 0.2, -0.1, 0.95;
  const Eigen::Vector2d c(2.0, 1.0);
  Eigen::Matrix2d Sigma;
  Sigma << 0.5, 0.1, 0.1, 0.3;
  const double Gamma = 0.4;
  MeasurementModel h;
  h.H = Eigen::RowVector2d(1.0, 0.5);
  const int N = 10000, steps = 50;

  // Truth and data from an independent generator.
  std::mt19937_64 rng(2718);
  std::normal_distribution<double> g;
  const Eigen::LLT<Eigen::Matrix2d> sl(Sigma);
  Eigen::Vector2d truth(12.0, -4.0);
  std::vector<double> ys;
  for (int k = 0; k < steps; ++k) {
    truth = Psi * truth + c + sl.matrixL() * Eigen::Vector2d(g(rng), g(rng));
    ys.push_back(h.H.dot(truth) + std::sqrt(Gamma) * g(rng));
  }

  // Exact Kalman filter.
  Eigen::Vector2d m(10.0, -3.0);
  Eigen::Matrix2d C;
  C << 2.0, 0.3, 0.3, 1.0;

  // Ensemble drawn from the same prior.
  Matrix ens(2, N);
  const Eigen::LLT<Eigen::Matrix2d> cl(C);
  for (int n = 0; n < N; ++n) ens.col(n) = m + cl.matrixL() * Eigen::Vector2d(g(rng), g(rng));

  const MemberPropagator linear = [&](Eigen::Ref<Vector> v, double, double) {
    const Vector next = Psi * v + c;
    v = next;
    return true;
  };
  const GaussianSampler noise(Sigma);
  UpdateOptions opts;
  opts.ridge_factor = 0.0;

  double worst_mean = 0.0, worst_cov = 0.0;
  for (int k = 0; k < steps; ++k) {
    m = Psi * m + c;
    C = Psi * C * Psi.transpose() + Sigma;
    const double S = h.H.dot(C * h.H.transpose()) + Gamma;
    const Eigen::Vector2d K = C * h.H.transpose() / S;
    m = m + K * (ys[k] - h.H.dot(m));
    C = C - K * h.H * C;

    const PredictResult pr = predict_members(ens, linear, k, k + 1, noise, derive_seed(5, 1, k));
    ens = kalman_update(pr.members, pr.moments, ys[k], h, Gamma, opts, derive_seed(5, 2, k));
    const Moments post = ensemble_moments(ens);
    worst_mean = std::max(worst_mean, (post.mean - m).norm() / m.norm());
    worst_cov = std::max(worst_cov, (post.cov - C).norm() / C.norm());
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_mean <= 0.05 && worst_cov <= 0.05 && secs < 10.0;
  o.detail = "max rel err mean " + num(worst_mean) + ", cov " + num(worst_cov) + ", " + num(secs, 3) + " s";
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome inactive_constraints() {
  TwinConfig tc;
  tc.duration_min = 3 * 1440.0;
  const TwinPatient twin = generate_twin_patient(UltradianParams{}, tc, 21);
  const FilterInputs fi = to_exogenous(twin.timeline);

  ExperimentConfig plain;
  plain.particles = 50;
  plain.seed = 4;
  plain.update.perturbed_observations = false;
  ExperimentConfig wide = plain;
  const int dim = kStateDim + static_cast<int>(plain.selection.size());
  ConstraintBuilder b(dim);
  b.bounds(kIp, -1e9, 1e9, "plasma insulin");
  b.bounds(kIi, -1e9, 1e9, "interstitial insulin");
  b.bounds(kG, -1e12, 1e12, "glucose");
  for (int i = 0; i < static_cast<int>(plain.selection.size()); ++i)
    b.bounds(param_row(i), -1e9, 1e9, "parameter");
  wide.custom_constraints = b.build();

  EnkfForecaster a(plain, fi.inputs), c(wide, fi.inputs);
  a.initialize(fi.measurements[0].t, fi.measurements[0].y);
  c.initialize(fi.measurements[0].t, fi.measurements[0].y);
  double worst = 0.0;
  int violating = 0;
  for (std::size_t i = 1; i < fi.measurements.size(); ++i) {
    ForecastRecord ra = a.forecast(fi.measurements[i].t);
    ForecastRecord rc = c.forecast(fi.measurements[i].t);
    violating += rc.forecast_violations;
    a.assimilate(fi.measurements[i].y, ra);
    c.assimilate(fi.measurements[i].y, rc);
    worst = std::max(worst, (a.members() - c.members()).cwiseAbs().maxCoeff());
    worst = std::max(worst, std::abs(ra.forecast - rc.forecast));
  }
  Outcome o;
  o.pass = violating == 0 && worst <= 1e-6;
  o.detail = std::to_string(fi.measurements.size() - 1) + " steps, max |diff| " + num(worst) +
             ", violating forecast particles " + std::to_string(violating);
  return o;
}

// 3 ------------------------------------------------------------------------
Outcome posterior_feasibility() {
  const auto t0 = Clock::now();
  const std::vector<TwinPatient> cohort = generate_twin_cohort(CohortConfig{}, 3);
  double worst = 0.0;
  int runs = 0, aborted = 0;
  for (std::size_t p = 0; p < cohort.size(); ++p) {
    for (const auto& name : constraint_experiment_names()) {
      ExperimentConfig cfg;
      cfg.particles = 50;
      cfg.seed = 1000 + p;
      cfg.constraint = name;
      const ExperimentResult r = run_experiment(cohort[p].timeline, cfg);
      ++runs;
      aborted += r.aborted;
      for (const auto& rec : r.records)
        if (!rec.initial) worst = std::max(worst, rec.posterior_max_violation);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst <= 1e-6 && secs < 600.0;
  o.detail = std::to_string(runs) + " runs (" + std::to_string(aborted) + " aborted), max violation " +
             num(worst) + ", " + num(secs, 3) + " s";
  return o;
}

// 4 ------------------------------------------------------------------------
Outcome random_qps() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> dims(1, 14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_kkt = 0.0;
  long beaten = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = dims(rng);
    Matrix M(n, n);
    for (int i = 0; i < M.size(); ++i) M.data()[i] = g(rng);
    const Matrix Q = M * M.transpose() + 0.1 * Matrix::Identity(n, n);
    Vector q(n), lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      q[i] = 5.0 * g(rng);
      lo[i] = -3.0 * u(rng);
      hi[i] = 3.0 * u(rng);
    }
    LinearConstraints c = LinearConstraints::none(n);
    c.B = Matrix::Zero(2 * n, n);
    c.b.resize(2 * n);
    for (int i = 0; i < n; ++i) {
      c.B(2 * i, i) = -1.0;
      c.b[2 * i] = -lo[i];
      c.B(2 * i + 1, i) = 1.0;
      c.b[2 * i + 1] = hi[i];
    }
    const QpResult r = qp_solve(Q, q, c);
    worst_kkt = std::max(worst_kkt, kkt_residuals(Q, q, c, r).max());
    const double f = 0.5 * r.x.dot(Q * r.x) + q.dot(r.x);
    const double slack = 1e-10 * std::max(1.0, std::abs(f));
    Vector x(n);
    for (int s = 0; s < 100000; ++s) {
      for (int i = 0; i < n; ++i) x[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
      if (0.5 * x.dot(Q * x) + q.dot(x) < f - slack) ++beaten;
    }
  }
  Outcome o;
  o.pass = worst_kkt <= 1e-8 && beaten == 0;
  o.detail = "max KKT residual " + num(worst_kkt) + ", samples beating the solver " + std::to_string(beaten);
  return o;
}

// 5 ------------------------------------------------------------------------
double peak_to_peak(const std::vector<double>& t, const std::vector<double>& g, double after) {
  double lo = kInf, hi = -kInf;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] >= after) {
      lo = std::min(lo, g[i]);
      hi = std::max(hi, g[i]);
    }
  return hi - lo;
}

Outcome oscillation() {
  const double rate = 4800.0, horizon = 6000.0, transient = 2000.0;
  const UltradianParams nom;
  const PhysState v0(100, 200, 12000, 100, 100, 100);

  std::vector<double> ot, og;
  auto IG = [&](double t) { return rate / 60.0 * (1.0 - std::exp(-nom.k * t)); };
  oracle::rk4({v0.x[0], v0.x[1], v0.x[2], v0.x[3], v0.x[4], v0.x[5]}, oracle::P{}, 0.0, horizon, 0.05, IG,
              [&](double t, const oracle::S& s) {
                ot.push_back(t);
                og.push_back(s[2]);
              });
  const double threshold = 0.5 * peak_to_peak(ot, og, transient);

  ExogenousInputs u;
  u.infusions.push_back({0.0, kInf, rate});
  std::vector<double> grid;
  for (double t = 0.0; t <= horizon; t += 1.0) grid.push_back(t);
  const auto traj = solution_operator(grid, v0, nom, u);
  std::vector<double> g;
  for (const auto& s : traj) g.push_back(s.G());
  const double p2p = peak_to_peak(grid, g, transient);
  Outcome o;
  o.pass = threshold > 0.0 && p2p > threshold;
  o.detail = "peak-to-peak " + num(p2p) + " mg after " + num(transient) + " min, threshold " + num(threshold);
  return o;
}

// 6 ------------------------------------------------------------------------
// Adaptive Simpson on a smooth segment.
double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
               double whole, double tol, int depth) {
  const double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

Outcome nutrition_conservation() {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> when(0.0, 4900.0), amount(50.0, 8000.0);
  std::uniform_int_distribution<int> count(1, 60);
  const double k = UltradianParams{}.k;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NutritionEvent> ev(static_cast<std::size_t>(count(rng)));
    double expected = 0.0;
    for (auto& e : ev) {
      e.t = when(rng);
      e.amount = amount(rng);
      expected += e.amount / 60.0;
    }
    std::sort(ev.begin(), ev.end(), [](const NutritionEvent& a, const NutritionEvent& b) { return a.t < b.t; });
    const auto f = [&](double t) { return nutrition_rate(ev, t, k); };
    // The integrand jumps at each event; integrate piecewise between them.
    std::vector<double> cuts{0.0};
    for (const auto& e : ev) cuts.push_back(e.t);
    cuts.push_back(5000.0);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double a = cuts[i], b = cuts[i + 1];
      if (!(b > a)) continue;
      // Right-limit at a: events at exactly a have already arrived.
      const double eps = 1e-9 * std::max(1.0, a);
      const double fa = f(a + eps), fb = f(b), fm = f(0.5 * (a + b));
      total += simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), 1e-12, 60);
    }
    worst = std::max(worst, std::abs(total - expected) / expected);
  }
  Outcome o;
  o.pass = worst <= 1e-6;
  o.detail = "50 random event sets, max relative error " + num(worst);
  return o;
}

// 7 ------------------------------------------------------------------------
// Twins whose true insulin stays inside the severe band; the filter starts
// with insulin far below or far above it.
Outcome identifiability() {
  const auto t0 = Clock::now();
  CohortConfig cc;
  cc.insulin_within = Bounds{75.0, 275.0};
  const std::vector<TwinPatient> cohort = generate_twin_cohort(cc, 7);
  std::string detail;
  bool pass = true;
  for (const double start : {10.0, 600.0}) {
    std::vector<double> omegas;
    int undefined = 0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      ExperimentConfig cfg;
      cfg.particles = 50;
      cfg.seed = 100 + i;
      cfg.spread.plasma_insulin = start;
      cfg.spread.interstitial_insulin = start;
      const ExperimentResult base = run_experiment(cohort[i].timeline, cfg);
      cfg.constraint = "is";
      const ExperimentResult is = run_experiment(cohort[i].timeline, cfg);
      const auto w = omega_between(is, base);
      if (w)
        omegas.push_back(w->omega);
      else
        ++undefined;
    }
    // Undefined ratios count against the constrained filter.
    for (int k = 0; k < undefined; ++k) omegas.push_back(kInf);
    const double med = median(omegas);
    pass = pass && med <= 1.0;
    if (!detail.empty()) detail += "; ";
    detail += "insulin start " + num(start) + " mU: median omega " + num(med);
  }
  Outcome o;
  o.pass = pass;
  o.detail = detail + " (20 seeds, " + num(seconds_since(t0), 3) + " s)";
  return o;
}

// 8 ------------------------------------------------------------------------
ForecastRecord rec(double t, double y, double f) {
  ForecastRecord r;
  r.t = t;
  r.y = y;
  r.forecast = f;
  return r;
}

Outcome mse_protocol(const fs::path& scratch) {
  bool ok = true;
  std::vector<ForecastRecord> r{rec(0, 100, 0), rec(600, 1, 500), rec(1440, 110, 100), rec(2000, 120, 100)};
  r[0].initial = true;
  ok = ok && mse_after_24h(r) == 250.0;  // (10^2 + 20^2) / 2
  ok = ok && mse_after_24h({rec(1500, 5, 5), rec(1600, 7, 7)}) == 0.0;
  bool threw = false;
  try {
    mse_after_24h({rec(0, 5, 1), rec(1439, 7, 2)});
  } catch (const ConfigError&) {
    threw = true;
  }
  ok = ok && threw;
  MseRule count;
  count.kind = MseRule::Kind::Count;
  count.skip_count = 2;
  ok = ok && mse_after_24h(r, 0.0, count) == 250.0;

  TwinConfig tc;
  tc.duration_min = 3 * 1440.0;
  const TwinPatient twin = generate_twin_patient(UltradianParams{}, tc, 31);
  ExperimentConfig cfg;
  cfg.particles = 30;
  cfg.constraint = "gis";
  const ExperimentResult res = run_experiment(twin.timeline, cfg);
  const fs::path dir = scratch / "mse";
  export_result(res, dir);
  const auto back = read_forecasts_csv(dir / "forecasts.csv");
  const double recomputed = mse_after_24h(back, res.admission, res.mse_rule);
  const bool exact = recomputed == res.mse;
  Outcome o;
  o.pass = ok && exact;
  o.detail = std::string("hand examples ") + (ok ? "match" : "MISMATCH") + ", CSV recompute " +
             (exact ? "bit-exact" : "differs") + " (" + num(res.mse, 17) + ")";
  return o;
}

// 9 ------------------------------------------------------------------------
std::vector<std::pair<std::string, std::string>> snapshot(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      files.emplace_back(fs::relative(e.path(), root).generic_string(), read_text_file(e.path()));
  std::sort(files.begin(), files.end());
  return files;
}

Outcome determinism(const fs::path& scratch) {
  std::ostringstream sink;
  const fs::path in = scratch / "twins";
  int rc = run_cli({"generate", "--out", in.string(), "--size", "3", "--days", "2", "--seed", "5"}, sink, sink);
  const std::vector<std::string> common{"run", in.string(), "--experiments", "all", "--particles", "20",
                                        "--seed", "9"};
  auto with = [&](const std::string& jobs, const fs::path& out) {
    std::vector<std::string> args = common;
    args.insert(args.end(), {"--jobs", jobs, "--out", out.string()});
    return run_cli(args, sink, sink);
  };
  rc |= with("1", scratch / "jobs1");
  rc |= with("8", scratch / "jobs8");
  const auto a = snapshot(scratch / "jobs1"), b = snapshot(scratch / "jobs8");
  Outcome o;
  o.pass = rc == 0 && !a.empty() && a == b;
  o.detail = std::to_string(a.size()) + " files compared, " + (a == b ? "identical" : "DIFFERENT") +
             (rc == 0 ? "" : ", cli returned nonzero");
  return o;
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "cenkf_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"exact Kalman equivalence (linear-Gaussian, N=10000)", linear_gaussian_oracle},
      {"inactive constraints reproduce the EnKF", inactive_constraints},
      {"posterior feasibility over the 11-experiment matrix", posterior_feasibility},
      {"QP correctness on 1000 random problems", random_qps},
      {"sustained oscillation under constant nutrition", oscillation},
      {"nutrition conservation", nutrition_conservation},
      {"severe insulin bounds do not slow entrainment (median omega <= 1)", identifiability},
      {"MSE protocol and bit-exact CSV recompute", [&] { return mse_protocol(scratch); }},
      {"determinism across --jobs 1 and 8", [&] { return determinism(scratch); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << ": " << criteria[i].name << " -- " << o.detail
              << std::endl;
  }
  fs::remove_all(scratch);
  return failures == 0 ? 0 : 1;
}

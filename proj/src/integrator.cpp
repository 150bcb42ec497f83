#include "cenkf/integrator.hpp"

#include "cenkf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cenkf {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// b - b_hat
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kExpUnderflow = -746.0;

// Exogenous drivers on one inter-breakpoint segment:
//   I_G(t) = base + amplitude * exp(-k (t - t_ref)),  insulin rate constant.
struct Drive {
  double t_ref = 0.0;
  double base = 0.0;
  double amplitude = 0.0;
  double k = 0.0;
  double insulin_rate = 0.0;

  double glucose(double t) const { return base + amplitude * std::exp(-k * (t - t_ref)); }
};

// Drive valid on (t, next breakpoint], from a direct sum over the history.
Drive drive_at(const ExogenousInputs& u, double t, double k) {
  Drive d;
  d.t_ref = t;
  d.k = k;
  auto end = std::upper_bound(u.nutrition.begin(), u.nutrition.end(), t,
                              [](double tt, const NutritionEvent& e) { return tt < e.t; });
  for (auto it = end; it != u.nutrition.begin();) {
    --it;
    const double arg = k * (it->t - t);
    if (arg < kExpUnderflow) break;
    d.amplitude += it->amount * k / 60.0 * std::exp(arg);
  }
  for (const auto& f : u.infusions) {
    if (f.start > t) break;
    const double r = f.rate / 60.0;
    if (t < f.end) {
      d.base += r;
      d.amplitude -= r * std::exp(k * (f.start - t));
    } else {
      d.amplitude += r * (std::exp(k * (f.end - t)) - std::exp(k * (f.start - t)));
    }
  }
  for (const auto& ins : u.insulin) {
    if (ins.start > t) break;
    if (ins.kind == InsulinKind::Drip && t < ins.end) d.insulin_rate += ins.rate;
  }
  return d;
}

// Moves the drive across breakpoint tb: decays the amplitude and folds in
// everything that starts or stops exactly at tb.
void advance_drive(Drive& d, const ExogenousInputs& u, double tb) {
  d.amplitude *= std::exp(-d.k * (tb - d.t_ref));
  d.t_ref = tb;
  auto lo = std::lower_bound(u.nutrition.begin(), u.nutrition.end(), tb,
                             [](const NutritionEvent& e, double tt) { return e.t < tt; });
  for (; lo != u.nutrition.end() && lo->t == tb; ++lo) d.amplitude += lo->amount * d.k / 60.0;
  for (const auto& f : u.infusions) {
    if (f.start > tb) break;
    const double r = f.rate / 60.0;
    if (f.start == tb && f.end > tb) {
      d.base += r;
      d.amplitude -= r;
    }
    if (f.end == tb && f.start < tb) {
      d.base -= r;
      d.amplitude += r;
    }
  }
  double rate = 0.0;
  for (const auto& ins : u.insulin) {
    if (ins.start > tb) break;
    if (ins.kind == InsulinKind::Drip && tb < ins.end) rate += ins.rate;
  }
  d.insulin_rate = rate;
}

StateVector eval(const StateVector& x, const UltradianParams& p, const Drive& d, double t) {
  return rhs(x, p, d.glucose(t), d.insulin_rate);
}

class Stepper {
 public:
  Stepper(const UltradianParams& p, const IntegratorConfig& cfg) : p_(p), cfg_(cfg) {}

  // Integrates x over [t, t_end] with drivers `d`. `h` carries the step-size
  // suggestion between segments.
  void run(StateVector& x, double t, double t_end, const Drive& d, double& h, long& steps) {
    bool have_k1 = false;
    StateVector k1;
    while (t < t_end) {
      if (++steps > cfg_.max_steps)
        throw IntegrationError("step budget exhausted at t=" + std::to_string(t));
      bool last = false;
      double step = std::min(h, cfg_.max_step);
      if (t + step >= t_end || t_end - (t + step) < 1e-12 * std::max(1.0, std::abs(t_end))) {
        step = t_end - t;
        last = true;
      }
      if (!have_k1) {
        try {
          k1 = eval(x, p_, d, t);
        } catch (const DomainError& e) {
          throw DomainError(e.what(), t);
        }
        have_k1 = true;
      }
      StateVector x_new, k7;
      double err = 0.0;
      if (!try_step(x, t, step, d, k1, x_new, k7, err)) {
        h = step * 0.5;
        if (h < cfg_.min_step)
          throw DomainError("integration entered I_i <= 0 at t=" + std::to_string(t), t);
        continue;
      }
      if (err <= 1.0) {
        t = last ? t_end : t + step;
        x = x_new;
        k1 = k7;
        const double grow = err == 0.0 ? 5.0 : std::min(5.0, 0.9 * std::pow(err, -0.2));
        // Keep the pre-landing step size when the landing step was truncated.
        h = last ? std::max(h, step * grow) : step * grow;
      } else {
        h = step * std::max(0.2, 0.9 * std::pow(err, -0.2));
        if (h < 1e-14 * std::max(1.0, std::abs(t)))
          throw IntegrationError("step size underflow at t=" + std::to_string(t));
      }
    }
  }

 private:
  bool try_step(const StateVector& x, double t, double h, const Drive& d, const StateVector& k1,
                StateVector& x_new, StateVector& k7, double& err) const {
    try {
      const StateVector k2 = eval(x + h * (a21 * k1), p_, d, t + c2 * h);
      const StateVector k3 = eval(x + h * (a31 * k1 + a32 * k2), p_, d, t + c3 * h);
      const StateVector k4 = eval(x + h * (a41 * k1 + a42 * k2 + a43 * k3), p_, d, t + c4 * h);
      const StateVector k5 =
          eval(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), p_, d, t + c5 * h);
      const StateVector k6 =
          eval(x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), p_, d, t + h);
      x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      if (!x_new.allFinite() || !(x_new[kIi] > 0.0)) return false;
      k7 = eval(x_new, p_, d, t + h);
      const StateVector e = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      const StateVector scale =
          cfg_.abs_tol.array() + cfg_.rel_tol * x.cwiseAbs().cwiseMax(x_new.cwiseAbs()).array();
      err = std::sqrt((e.array() / scale.array()).square().mean());
      return std::isfinite(err);
    } catch (const DomainError&) {
      return false;
    }
  }

  const UltradianParams& p_;
  const IntegratorConfig& cfg_;
};

}  // namespace

void IntegratorConfig::validate() const {
  if (!(rel_tol > 0.0) || !(abs_tol.array() > 0.0).all())
    throw ConfigError("integrator tolerances must be positive");
  if (!(max_step > 0.0) || !(initial_step > 0.0) || !(min_step > 0.0))
    throw ConfigError("integrator step sizes must be positive");
  if (max_steps <= 0) throw ConfigError("integrator step budget must be positive");
}

PhysState integrate_between(const PhysState& v0, const UltradianParams& p,
                            const ExogenousInputs& u, double t0, double t1,
                            const IntegratorConfig& cfg) {
  if (!(t1 >= t0)) throw IntegrationError("integrate_between requires t1 >= t0");
  if (t1 == t0) return v0;
  if (!v0.finite()) throw DomainError("non-finite initial state", t0);

  StateVector x = v0.x;
  Drive drive = drive_at(u, t0, p.k);
  Stepper stepper(p, cfg);
  double h = cfg.initial_step;
  long steps = 0;
  double t = t0;
  for (double tb : u.breakpoints(t0, t1)) {
    stepper.run(x, t, tb, drive, h, steps);
    t = tb;
    x[kIp] += u.bolus_at(tb);
    advance_drive(drive, u, tb);
  }
  stepper.run(x, t, t1, drive, h, steps);
  return PhysState(x);
}

std::vector<PhysState> solution_operator(const std::vector<double>& t_grid, const PhysState& v0,
                                         const UltradianParams& p, const ExogenousInputs& u,
                                         const IntegratorConfig& cfg) {
  if (t_grid.empty()) throw IntegrationError("empty time grid");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1])) throw IntegrationError("time grid must be strictly increasing");
  std::vector<PhysState> out;
  out.reserve(t_grid.size());
  out.push_back(v0);
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    out.push_back(integrate_between(out.back(), p, u, t_grid[i - 1], t_grid[i], cfg));
  return out;
}

}  // namespace cenkf

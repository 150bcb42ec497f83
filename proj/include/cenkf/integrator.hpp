#pragma once

#include "cenkf/ultradian.hpp"

#include <limits>
#include <vector>

namespace cenkf {

struct IntegratorConfig {
  double rel_tol = 1e-6;
  StateVector abs_tol = StateVector::Constant(1e-8);
  double max_step = 30.0;       // min
  double initial_step = 1.0;    // min
  double min_step = 1e-9;       // floor for step halving on domain failures
  long max_steps = 2'000'000;

  void validate() const;
};

/// Advances v0 from t0 to t1 (t1 >= t0) with an embedded Dormand-Prince 5(4)
/// pair. Steps land exactly on every input breakpoint in (t0, t1]; insulin
/// boluses at a breakpoint are added to I_p after landing.
///
/// Throws DomainError (with the failing time) when a step cannot avoid
/// I_i <= 0 even at the minimum step, and IntegrationError on step-size
/// underflow or when the step budget is exhausted.
PhysState integrate_between(const PhysState& v0, const UltradianParams& p,
                            const ExogenousInputs& u, double t0, double t1,
                            const IntegratorConfig& cfg = {});

/// Chained integrate_between over a strictly increasing grid; element 0 is v0.
std::vector<PhysState> solution_operator(const std::vector<double>& t_grid, const PhysState& v0,
                                         const UltradianParams& p, const ExogenousInputs& u,
                                         const IntegratorConfig& cfg = {});

}  // namespace cenkf

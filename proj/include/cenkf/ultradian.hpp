#pragma once

// Ultradian glucose-insulin model: six ODEs (plasma insulin, interstitial
// insulin, glucose mass, three-stage hepatic delay chain) driven by
// exogenous nutrition and IV insulin.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace cenkf {

enum class Param : std::uint8_t {
  V_p, V_i, V_g, E, t_p, t_i, t_d, k, R_m, a_1, C_1,
  C_2, C_3, C_4, C_5, U_b, U_0, U_m, R_g, alpha, beta
};
inline constexpr std::size_t kParamCount = 21;

std::string_view param_name(Param p) noexcept;
std::optional<Param> param_from_name(std::string_view name) noexcept;
const std::array<Param, kParamCount>& all_params() noexcept;

/// The 21 model parameters. Default-constructed values are the nominal ones.
struct UltradianParams {
  double V_p = 3.0;      // l
  double V_i = 11.0;     // l
  double V_g = 10.0;     // l
  double E = 0.2;        // l/min
  double t_p = 6.0;      // min
  double t_i = 100.0;    // min
  double t_d = 12.0;     // min
  double k = 0.5;        // 1/min
  double R_m = 209.0;    // mU/min
  double a_1 = 6.6;
  double C_1 = 300.0;    // mg/l
  double C_2 = 144.0;    // mg/l
  double C_3 = 100.0;    // mg/l
  double C_4 = 80.0;     // mU/l
  double C_5 = 26.0;     // mU/l
  double U_b = 72.0;     // mg/min
  double U_0 = 4.0;      // mg/min
  double U_m = 94.0;     // mg/min
  double R_g = 180.0;    // mg/min
  double alpha = 7.5;
  double beta = 1.772;

  static UltradianParams nominal() noexcept { return {}; }

  double get(Param p) const noexcept;
  void set(Param p, double value) noexcept;

  /// All parameters finite and strictly positive.
  bool valid() const noexcept;
  /// Throws DomainError naming the first offending parameter.
  void check() const;
};

enum StateIndex : int { kIp = 0, kIi = 1, kG = 2, kH1 = 3, kH2 = 4, kH3 = 5 };
inline constexpr int kStateDim = 6;
using StateVector = Eigen::Matrix<double, kStateDim, 1>;

/// Model state. G is glucose mass (mg); insulin compartments in mU.
struct PhysState {
  StateVector x = StateVector::Zero();

  PhysState() = default;
  explicit PhysState(const StateVector& v) : x(v) {}
  PhysState(double I_p, double I_i, double G, double h1, double h2, double h3) {
    x << I_p, I_i, G, h1, h2, h3;
  }

  double I_p() const { return x[kIp]; }
  double I_i() const { return x[kIi]; }
  double G() const { return x[kG]; }
  double h1() const { return x[kH1]; }
  double h2() const { return x[kH2]; }
  double h3() const { return x[kH3]; }

  bool finite() const { return x.allFinite(); }
};

/// Discrete carbohydrate delivery; contributes m k/60 exp(k(t_j - t)) for t > t_j.
struct NutritionEvent {
  double t = 0.0;
  double amount = 0.0;
};

/// Constant-rate carbohydrate stream over [start, end). `rate` is in the same
/// units as NutritionEvent::amount per minute; the contribution is the
/// continuous limit of a train of NutritionEvents, so a stream delivers
/// rate * (end - start) / 60 in total.
struct NutritionInfusion {
  double start = 0.0;
  double end = 0.0;
  double rate = 0.0;
};

enum class InsulinKind : std::uint8_t { Drip, Bolus };

/// IV insulin. Drip: `rate` mU/min over [start, end). Bolus: `amount` mU added
/// to plasma insulin at `start`.
struct InsulinDelivery {
  InsulinKind kind = InsulinKind::Bolus;
  double start = 0.0;
  double end = 0.0;
  double rate = 0.0;
  double amount = 0.0;

  static InsulinDelivery drip(double start, double end, double rate) {
    return {InsulinKind::Drip, start, end, rate, 0.0};
  }
  static InsulinDelivery bolus(double t, double amount) {
    return {InsulinKind::Bolus, t, t, 0.0, amount};
  }
};

struct ExogenousInputs {
  std::vector<NutritionEvent> nutrition;
  std::vector<NutritionInfusion> infusions;
  std::vector<InsulinDelivery> insulin;

  bool empty() const noexcept {
    return nutrition.empty() && infusions.empty() && insulin.empty();
  }
  /// Sorts every list by time (stable).
  void sort();
  /// Throws DomainError on negative quantities, inverted intervals or unsorted lists.
  void validate() const;

  /// Glucose appearance rate I_G(t) (mg/min) from events and infusions.
  double glucose_input(double t, double k) const;
  /// Total IV insulin drip rate active at t (right-continuous).
  double insulin_drip_rate(double t) const;
  /// Sum of bolus amounts delivered exactly at t.
  double bolus_at(double t) const;
  /// Sorted unique times in (t0, t1] at which the right-hand side or the
  /// state is discontinuous.
  std::vector<double> breakpoints(double t0, double t1) const;
};

/// Insulin secretion rate, R_m / (1 + exp(-G/(V_g C_1) + a_1)).
double insulin_secretion_f1(double G, const UltradianParams& p);
/// Insulin-independent glucose utilization, U_b (1 - exp(-G/(C_2 V_g))).
double iigu_f2(double G, const UltradianParams& p);
double kappa(const UltradianParams& p) noexcept;
/// Insulin-dependent utilization factor (multiplies G). Requires I_i > 0.
double idgu_factor_f3(double I_i, const UltradianParams& p);
/// Hepatic glucose production, R_g / (1 + exp(alpha (h_3/(C_5 V_p) - 1))).
double hepatic_f4(double h3, const UltradianParams& p);

/// Direct sum over past events (t_j < t). Terms that underflow to zero are
/// skipped; the result is identical to the full sum.
double nutrition_rate(const std::vector<NutritionEvent>& events, double t, double k);

/// Right-hand side with the exogenous drivers already evaluated.
StateVector rhs(const StateVector& x, const UltradianParams& p, double glucose_input,
                double insulin_input);

/// Time derivative of the state at t. Boluses are not part of the derivative.
StateVector deriv(const PhysState& v, const UltradianParams& p, const ExogenousInputs& u,
                  double t);

}  // namespace cenkf

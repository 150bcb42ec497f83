#include "cenkf/ultradian.hpp"

#include "cenkf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cenkf {

namespace {

struct ParamEntry {
  Param id;
  std::string_view name;
  double UltradianParams::*field;
};

constexpr std::array<ParamEntry, kParamCount> kParamTable{{
    {Param::V_p, "V_p", &UltradianParams::V_p},
    {Param::V_i, "V_i", &UltradianParams::V_i},
    {Param::V_g, "V_g", &UltradianParams::V_g},
    {Param::E, "E", &UltradianParams::E},
    {Param::t_p, "t_p", &UltradianParams::t_p},
    {Param::t_i, "t_i", &UltradianParams::t_i},
    {Param::t_d, "t_d", &UltradianParams::t_d},
    {Param::k, "k", &UltradianParams::k},
    {Param::R_m, "R_m", &UltradianParams::R_m},
    {Param::a_1, "a_1", &UltradianParams::a_1},
    {Param::C_1, "C_1", &UltradianParams::C_1},
    {Param::C_2, "C_2", &UltradianParams::C_2},
    {Param::C_3, "C_3", &UltradianParams::C_3},
    {Param::C_4, "C_4", &UltradianParams::C_4},
    {Param::C_5, "C_5", &UltradianParams::C_5},
    {Param::U_b, "U_b", &UltradianParams::U_b},
    {Param::U_0, "U_0", &UltradianParams::U_0},
    {Param::U_m, "U_m", &UltradianParams::U_m},
    {Param::R_g, "R_g", &UltradianParams::R_g},
    {Param::alpha, "alpha", &UltradianParams::alpha},
    {Param::beta, "beta", &UltradianParams::beta},
}};

constexpr std::array<Param, kParamCount> make_all() {
  std::array<Param, kParamCount> out{};
  for (std::size_t i = 0; i < kParamCount; ++i) out[i] = kParamTable[i].id;
  return out;
}
constexpr auto kAllParams = make_all();

// exp(x) is exactly zero in double precision below this.
constexpr double kExpUnderflow = -746.0;

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw DomainError(std::string("non-finite ") + what);
}

}  // namespace

std::string_view param_name(Param p) noexcept {
  return kParamTable[static_cast<std::size_t>(p)].name;
}

std::optional<Param> param_from_name(std::string_view name) noexcept {
  for (const auto& e : kParamTable)
    if (e.name == name) return e.id;
  return std::nullopt;
}

const std::array<Param, kParamCount>& all_params() noexcept { return kAllParams; }

double UltradianParams::get(Param p) const noexcept {
  return this->*kParamTable[static_cast<std::size_t>(p)].field;
}

void UltradianParams::set(Param p, double value) noexcept {
  this->*kParamTable[static_cast<std::size_t>(p)].field = value;
}

bool UltradianParams::valid() const noexcept {
  return std::all_of(kParamTable.begin(), kParamTable.end(), [this](const ParamEntry& e) {
    const double v = this->*e.field;
    return std::isfinite(v) && v > 0.0;
  });
}

void UltradianParams::check() const {
  for (const auto& e : kParamTable) {
    const double v = this->*e.field;
    if (!(std::isfinite(v) && v > 0.0))
      throw DomainError("parameter " + std::string(e.name) + " must be finite and positive, got " +
                        std::to_string(v));
  }
}

// ---------------------------------------------------------------------------

void ExogenousInputs::sort() {
  std::stable_sort(nutrition.begin(), nutrition.end(),
                   [](const auto& a, const auto& b) { return a.t < b.t; });
  std::stable_sort(infusions.begin(), infusions.end(),
                   [](const auto& a, const auto& b) { return a.start < b.start; });
  std::stable_sort(insulin.begin(), insulin.end(),
                   [](const auto& a, const auto& b) { return a.start < b.start; });
}

void ExogenousInputs::validate() const {
  for (std::size_t i = 0; i < nutrition.size(); ++i) {
    const auto& e = nutrition[i];
    if (!std::isfinite(e.t) || !(e.amount >= 0.0) || !std::isfinite(e.amount))
      throw DomainError("invalid nutrition event");
    if (i > 0 && e.t < nutrition[i - 1].t) throw DomainError("nutrition events not sorted");
  }
  for (std::size_t i = 0; i < infusions.size(); ++i) {
    const auto& f = infusions[i];
    if (!std::isfinite(f.start) || !(f.end >= f.start) || !(f.rate >= 0.0) ||
        std::isnan(f.end) || !std::isfinite(f.rate))
      throw DomainError("invalid nutrition infusion");
    if (i > 0 && f.start < infusions[i - 1].start) throw DomainError("infusions not sorted");
  }
  for (std::size_t i = 0; i < insulin.size(); ++i) {
    const auto& d = insulin[i];
    if (!std::isfinite(d.start)) throw DomainError("invalid insulin delivery time");
    if (d.kind == InsulinKind::Drip) {
      if (!(d.end >= d.start) || std::isnan(d.end) || !(d.rate >= 0.0) || !std::isfinite(d.rate))
        throw DomainError("invalid insulin drip");
    } else if (!(d.amount >= 0.0) || !std::isfinite(d.amount)) {
      throw DomainError("invalid insulin bolus");
    }
    if (i > 0 && d.start < insulin[i - 1].start) throw DomainError("insulin deliveries not sorted");
  }
}

double ExogenousInputs::glucose_input(double t, double k) const {
  double total = nutrition_rate(nutrition, t, k);
  for (const auto& f : infusions) {
    if (f.start >= t) break;
    const double stop = std::min(t, f.end);
    total += f.rate / 60.0 * (std::exp(k * (stop - t)) - std::exp(k * (f.start - t)));
  }
  return total;
}

double ExogenousInputs::insulin_drip_rate(double t) const {
  double rate = 0.0;
  for (const auto& d : insulin) {
    if (d.start > t) break;
    if (d.kind == InsulinKind::Drip && t < d.end) rate += d.rate;
  }
  return rate;
}

double ExogenousInputs::bolus_at(double t) const {
  double amount = 0.0;
  for (const auto& d : insulin) {
    if (d.start > t) break;
    if (d.kind == InsulinKind::Bolus && d.start == t) amount += d.amount;
  }
  return amount;
}

std::vector<double> ExogenousInputs::breakpoints(double t0, double t1) const {
  std::vector<double> out;
  auto add = [&](double t) {
    if (t > t0 && t <= t1) out.push_back(t);
  };
  auto it = std::upper_bound(nutrition.begin(), nutrition.end(), t0,
                             [](double t, const NutritionEvent& e) { return t < e.t; });
  for (; it != nutrition.end() && it->t <= t1; ++it) out.push_back(it->t);
  for (const auto& f : infusions) {
    add(f.start);
    add(f.end);
  }
  for (const auto& d : insulin) {
    add(d.start);
    if (d.kind == InsulinKind::Drip) add(d.end);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------

double insulin_secretion_f1(double G, const UltradianParams& p) {
  require_finite(G, "glucose");
  return p.R_m / (1.0 + std::exp(-G / (p.V_g * p.C_1) + p.a_1));
}

double iigu_f2(double G, const UltradianParams& p) {
  require_finite(G, "glucose");
  return p.U_b * (1.0 - std::exp(-G / (p.C_2 * p.V_g)));
}

double kappa(const UltradianParams& p) noexcept {
  return (1.0 / p.C_4) * (1.0 / p.V_i - 1.0 / (p.E * p.t_i));
}

double idgu_factor_f3(double I_i, const UltradianParams& p) {
  if (!(I_i > 0.0) || !std::isfinite(I_i))
    throw DomainError("interstitial insulin must be positive and finite");
  const double saturation = 1.0 + std::pow(kappa(p) * I_i, -p.beta);
  return (p.U_0 + (p.U_m - p.U_0) / saturation) / (p.C_3 * p.V_g);
}

double hepatic_f4(double h3, const UltradianParams& p) {
  require_finite(h3, "h3");
  return p.R_g / (1.0 + std::exp(p.alpha * (h3 / (p.C_5 * p.V_p) - 1.0)));
}

double nutrition_rate(const std::vector<NutritionEvent>& events, double t, double k) {
  // Events are sorted; walk backwards from the latest past event.
  auto end = std::lower_bound(events.begin(), events.end(), t,
                              [](const NutritionEvent& e, double tt) { return e.t < tt; });
  double total = 0.0;
  for (auto it = end; it != events.begin();) {
    --it;
    const double arg = k * (it->t - t);
    if (arg < kExpUnderflow) break;
    total += it->amount * k / 60.0 * std::exp(arg);
  }
  return total;
}

StateVector rhs(const StateVector& x, const UltradianParams& p, double glucose_input,
                double insulin_input) {
  const double I_p = x[kIp], I_i = x[kIi], G = x[kG];
  const double exchange = p.E * (I_p / p.V_p - I_i / p.V_i);
  StateVector dx;
  dx[kIp] = insulin_secretion_f1(G, p) - exchange - I_p / p.t_p + insulin_input;
  dx[kIi] = exchange - I_i / p.t_i;
  dx[kG] = hepatic_f4(x[kH3], p) + glucose_input - iigu_f2(G, p) - idgu_factor_f3(I_i, p) * G;
  dx[kH1] = (I_p - x[kH1]) / p.t_d;
  dx[kH2] = (x[kH1] - x[kH2]) / p.t_d;
  dx[kH3] = (x[kH2] - x[kH3]) / p.t_d;
  return dx;
}

StateVector deriv(const PhysState& v, const UltradianParams& p, const ExogenousInputs& u,
                  double t) {
  return rhs(v.x, p, u.glucose_input(t, p.k), u.insulin_drip_rate(t));
}

}  // namespace cenkf

#include "oracle.hpp"

#include "cenkf/errors.hpp"
#include "cenkf/integrator.hpp"
#include "cenkf/ultradian.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace cenkf;

namespace {

const UltradianParams kNom = UltradianParams::nominal();

oracle::S to_oracle(const PhysState& v) {
  oracle::S s;
  for (int i = 0; i < 6; ++i) s[i] = v.x[i];
  return s;
}

// Peak-to-peak of G after `transient` minutes.
double peak_to_peak(const std::vector<double>& t, const std::vector<double>& g, double transient) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < transient) continue;
    lo = std::min(lo, g[i]);
    hi = std::max(hi, g[i]);
  }
  return hi - lo;
}

}  // namespace

TEST_SUITE("ultradian") {

TEST_CASE("nominal parameter table") {
  const double expected[] = {3, 11, 10, 0.2, 6, 100, 12, 0.5, 209, 6.6, 300,
                             144, 100, 80, 26, 72, 4, 94, 180, 7.5, 1.772};
  std::size_t i = 0;
  for (Param p : all_params()) CHECK(kNom.get(p) == expected[i++]);
  CHECK(kNom.valid());
  UltradianParams bad = kNom;
  bad.set(Param::C_3, 0.0);
  CHECK_FALSE(bad.valid());
  CHECK_THROWS_AS(bad.check(), DomainError);
  CHECK(param_from_name("R_g") == Param::R_g);
  CHECK_FALSE(param_from_name("nope").has_value());
}

TEST_CASE("insulin secretion") {
  CHECK(insulin_secretion_f1(1e12, kNom) == doctest::Approx(209.0).epsilon(1e-12));
  CHECK(insulin_secretion_f1(0.0, kNom) == doctest::Approx(209.0 / (1.0 + std::exp(6.6))).epsilon(1e-14));
  CHECK(insulin_secretion_f1(19800.0, kNom) == doctest::Approx(104.5).epsilon(1e-14));
  for (double G : {-1e4, 0.0, 1e3, 1e5}) {
    CHECK(insulin_secretion_f1(G, kNom) > 0.0);
    CHECK(insulin_secretion_f1(G, kNom) < 209.0);
  }
  CHECK_THROWS(insulin_secretion_f1(std::nan(""), kNom));
}

TEST_CASE("insulin-independent utilization") {
  CHECK(iigu_f2(0.0, kNom) == 0.0);
  CHECK(iigu_f2(1e9, kNom) == doctest::Approx(72.0));
  CHECK(iigu_f2(1440.0, kNom) == doctest::Approx(72.0 * (1.0 - std::exp(-1.0))).epsilon(1e-14));
  double prev = iigu_f2(0.0, kNom);
  for (double G = 100; G < 1e5; G *= 1.5) {
    const double v = iigu_f2(G, kNom);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("insulin-dependent utilization") {
  CHECK(kappa(kNom) == doctest::Approx((1.0 / 80.0) * (1.0 / 11.0 - 1.0 / 20.0)).epsilon(1e-15));
  CHECK(idgu_factor_f3(1e12, kNom) == doctest::Approx(94.0 / 1000.0).epsilon(1e-9));
  CHECK(idgu_factor_f3(1e-12, kNom) == doctest::Approx(0.004).epsilon(1e-9));
  CHECK_THROWS_AS(idgu_factor_f3(0.0, kNom), DomainError);
  CHECK_THROWS_AS(idgu_factor_f3(-5.0, kNom), DomainError);
  double prev = 0.0;
  for (double I = 1.0; I < 1e5; I *= 1.7) {
    const double v = idgu_factor_f3(I, kNom);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("hepatic production") {
  CHECK(hepatic_f4(78.0, kNom) == doctest::Approx(90.0).epsilon(1e-14));
  CHECK(hepatic_f4(1e6, kNom) == doctest::Approx(0.0));
  CHECK(hepatic_f4(0.0, kNom) == doctest::Approx(180.0 / (1.0 + std::exp(-7.5))).epsilon(1e-14));
  for (double h : {-100.0, 0.0, 50.0, 200.0}) {
    CHECK(hepatic_f4(h, kNom) > 0.0);
    CHECK(hepatic_f4(h, kNom) < 180.0);
  }
}

TEST_CASE("nutrition rate") {
  CHECK(nutrition_rate({}, 12.0, 0.5) == 0.0);
  CHECK(nutrition_rate({{0.0, 6000.0}}, 1e-12, 0.5) == doctest::Approx(50.0).epsilon(1e-10));
  CHECK(nutrition_rate({{10.0, 6000.0}}, 5.0, 0.5) == 0.0);
  CHECK(nutrition_rate({{10.0, 6000.0}}, 10.0, 0.5) == 0.0);  // strictly past events only
  // Far-past events underflow; the truncated sum equals the direct one.
  std::vector<NutritionEvent> ev;
  for (int j = 0; j < 400; ++j) ev.push_back({10.0 * j, 1000.0 + j});
  const double t = 3995.0;
  double direct = 0.0;
  for (const auto& e : ev)
    if (e.t < t) direct += e.amount * 0.5 / 60.0 * std::exp(0.5 * (e.t - t));
  CHECK(nutrition_rate(ev, t, 0.5) == doctest::Approx(direct).epsilon(1e-15));
}

TEST_CASE("derivative by hand evaluation") {
  const PhysState v(90, 90, 10000, 77, 77, 77);
  const StateVector d = deriv(v, kNom, ExogenousInputs{}, 0.0);
  const oracle::S ref = oracle::rhs(to_oracle(v), oracle::P{}, 0.0);
  for (int i = 0; i < 6; ++i) CHECK(d[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  // Delay chain at rest when I_p equals every stage.
  const StateVector rest = deriv(PhysState(77, 90, 10000, 77, 77, 77), kNom, ExogenousInputs{}, 0.0);
  CHECK(rest[kH1] == 0.0);
  CHECK(rest[kH2] == 0.0);
  CHECK(rest[kH3] == 0.0);
  // Deterministic.
  CHECK((deriv(v, kNom, ExogenousInputs{}, 0.0) - d).norm() == 0.0);
}

TEST_CASE("drip enters plasma insulin only") {
  ExogenousInputs u;
  u.insulin.push_back(InsulinDelivery::drip(0.0, 100.0, 7.0));
  const PhysState v(90, 90, 10000, 77, 77, 77);
  const StateVector with = deriv(v, kNom, u, 50.0);
  const StateVector without = deriv(v, kNom, ExogenousInputs{}, 50.0);
  CHECK(with[kIp] - without[kIp] == doctest::Approx(7.0));
  for (int i = 1; i < 6; ++i) CHECK(with[i] == without[i]);
  CHECK((deriv(v, kNom, u, 100.0) - without).norm() == 0.0);  // [start, end)
}

TEST_CASE("fixed point under zero nutrition") {
  // Damped Newton with a finite-difference Jacobian on the oracle right-hand side.
  const oracle::P p;
  Eigen::Matrix<double, 6, 1> x;
  x << 60, 100, 9000, 60, 60, 60;
  auto F = [&](const Eigen::Matrix<double, 6, 1>& z) {
    oracle::S s;
    for (int i = 0; i < 6; ++i) s[i] = z[i];
    const oracle::S r = oracle::rhs(s, p, 0.0);
    Eigen::Matrix<double, 6, 1> out;
    for (int i = 0; i < 6; ++i) out[i] = r[i];
    return out;
  };
  for (int it = 0; it < 100; ++it) {
    const auto f = F(x);
    if (f.norm() < 1e-13) break;
    Eigen::Matrix<double, 6, 6> J;
    for (int j = 0; j < 6; ++j) {
      auto xp = x;
      const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
      xp[j] += h;
      J.col(j) = (F(xp) - f) / h;
    }
    Eigen::Matrix<double, 6, 1> dx = J.partialPivLu().solve(-f);
    double lam = 1.0;
    while (lam > 1e-4 && ((x + lam * dx)[1] <= 0.0 || F(x + lam * dx).norm() > f.norm())) lam /= 2;
    x += lam * dx;
  }
  REQUIRE(F(x).norm() < 1e-9);
  const StateVector d = deriv(PhysState(StateVector(x)), kNom, ExogenousInputs{}, 0.0);
  // Scale: the largest single flux entering dG/dt.
  const double scale = hepatic_f4(x[5], kNom) + iigu_f2(x[2], kNom);
  CHECK(d.cwiseAbs().maxCoeff() <= 1e-6 * scale);
}

TEST_CASE("sustained oscillation under constant nutrition") {
  // Constant stream of 4800 per min (80 mg/min appearance once established).
  ExogenousInputs u;
  u.infusions.push_back({0.0, std::numeric_limits<double>::infinity(), 4800.0});
  const PhysState v0(100, 200, 12000, 100, 100, 100);
  const double k = kNom.k;
  auto IG = [&](double t) { return 4800.0 / 60.0 * (1.0 - std::exp(-k * t)); };

  std::vector<double> ot, og;
  oracle::rk4(to_oracle(v0), oracle::P{}, 0.0, 6000.0, 0.05, IG, [&](double t, const oracle::S& s) {
    ot.push_back(t);
    og.push_back(s[2]);
  });
  const double oracle_p2p = peak_to_peak(ot, og, 2000.0);
  REQUIRE(oracle_p2p > 1000.0);  // clearly oscillating in the reference

  std::vector<double> grid;
  for (double t = 0.0; t <= 6000.0; t += 1.0) grid.push_back(t);
  const auto traj = solution_operator(grid, v0, kNom, u);
  std::vector<double> g;
  for (const auto& s : traj) g.push_back(s.G());
  const double p2p = peak_to_peak(grid, g, 2000.0);
  CHECK(p2p >= 0.5 * oracle_p2p);
  CHECK(p2p == doctest::Approx(oracle_p2p).epsilon(0.01));
}

TEST_CASE("input bookkeeping") {
  ExogenousInputs u;
  u.nutrition = {{5.0, 100.0}, {1.0, 50.0}};
  u.insulin = {InsulinDelivery::bolus(3.0, 10.0), InsulinDelivery::drip(2.0, 8.0, 1.0)};
  u.infusions = {{4.0, 6.0, 60.0}};
  u.sort();
  CHECK_NOTHROW(u.validate());
  CHECK(u.nutrition.front().t == 1.0);
  const auto bp = u.breakpoints(0.0, 10.0);
  CHECK(bp == std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0});
  CHECK(u.bolus_at(3.0) == 10.0);
  CHECK(u.insulin_drip_rate(2.0) == 1.0);
  CHECK(u.insulin_drip_rate(8.0) == 0.0);
  // Infusion: rate/60 (1 - e^{-k(t-start)}) while running.
  CHECK(u.glucose_input(5.0, 0.5) ==
        doctest::Approx(60.0 / 60.0 * (1.0 - std::exp(-0.5)) + 50.0 * 0.5 / 60.0 * std::exp(-0.5 * 4.0)));
  ExogenousInputs bad;
  bad.nutrition = {{1.0, -1.0}};
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

}  // TEST_SUITE

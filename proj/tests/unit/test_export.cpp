#include "cenkf/export.hpp"

#include <doctest.h>

#include <filesystem>
#include <json.hpp>

using namespace cenkf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cenkf_export_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("export") {

TEST_CASE("empty result gives header-only series") {
  ExperimentResult r;
  r.param_names = {"R_g"};
  score(r);
  CHECK(forecasts_csv(r).find('\n') == forecasts_csv(r).size() - 1);
  CHECK(params_csv(r) == "t,R_g\n");
  CHECK(mse_csv(r) == "t,residual,qualifies,cumulative_sum,cumulative_mse\n");
  CHECK(parse_forecasts_csv(forecasts_csv(r)).empty());
  CHECK(nlohmann::json::parse(summary_json(r))["mse_after_24h"].is_null());
}

TEST_CASE("exported forecasts recompute the stored MSE exactly") {
  const TwinPatient twin = generate_twin_patient(UltradianParams{}, [] {
    TwinConfig c;
    c.duration_min = 2 * 1440.0;
    return c;
  }(), 8);
  ExperimentConfig cfg;
  cfg.particles = 15;
  const ExperimentResult r = run_experiment(twin.timeline, cfg);
  const fs::path dir = scratch("roundtrip");
  export_result(r, dir);
  for (const char* f : {"forecasts.csv", "params.csv", "mse.csv", "hist.csv", "summary.json"})
    CHECK(fs::exists(dir / f));
  const auto back = read_forecasts_csv(dir / "forecasts.csv");
  REQUIRE(back.size() == r.records.size());
  const double recomputed = mse_after_24h(back, r.admission, r.mse_rule);
  CHECK(recomputed == r.mse);
  const auto summary = nlohmann::json::parse(read_text_file(dir / "summary.json"));
  CHECK(summary["mse_after_24h"].get<double>() == r.mse);
  // Stable bytes for a fixed input.
  const std::string first = read_text_file(dir / "mse.csv");
  export_result(r, dir);
  CHECK(read_text_file(dir / "mse.csv") == first);
  fs::remove_all(dir);
}

TEST_CASE("histogram counts every record once") {
  std::vector<ForecastRecord> recs;
  for (int i = 0; i < 37; ++i) {
    ForecastRecord r;
    r.t = i;
    r.y = 80 + (i * 7) % 50;
    r.forecast = 90 + (i * 3) % 40;
    recs.push_back(r);
  }
  const Histogram h = forecast_histogram(recs, 9);
  int fc = 0, mc = 0;
  for (int c : h.forecast_counts) fc += c;
  for (int c : h.measurement_counts) mc += c;
  CHECK(fc == 37);
  CHECK(mc == 37);
  CHECK(h.edges.size() == 10);
  CHECK(forecast_histogram({}, 4).forecast_counts == std::vector<int>(4, 0));
}

TEST_CASE("omega tables") {
  OmegaReport rep;
  rep.experiments = {"is", "gm"};
  rep.patients = {"a"};
  rep.omega = {{Omega{0.5, OmegaCategory::SubstantialImprovement}, std::nullopt}};
  rep.fractions = {{0, 0, 0, 1}, {0, 0, 0, 0}};
  CHECK(omega_csv(rep) == "patient,is,gm\na,0.5,\n");
  CHECK(omega_fractions_csv(rep).rfind("substantial improvement,1,0\n") != std::string::npos);
}

}  // TEST_SUITE

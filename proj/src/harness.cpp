#include "cenkf/harness.hpp"

#include "cenkf/errors.hpp"
#include "cenkf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace cenkf {

namespace {

constexpr std::uint64_t kStreamPredict = 20;
constexpr std::uint64_t kStreamUpdate = 21;
constexpr std::uint64_t kStreamInit = 22;
constexpr std::uint64_t kStreamTwinSpacing = 30;
constexpr std::uint64_t kStreamTwinNoise = 31;
constexpr std::uint64_t kStreamCohortPatient = 40;
constexpr std::uint64_t kStreamCohortParams = 41;
constexpr std::uint64_t kStreamCohortTwin = 42;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void ExperimentConfig::validate() const {
  if (particles < 2) throw ConfigError("particle count must be at least 2");
  if (!custom_constraints && constraint != kUnconstrained) experiment_tiers(constraint);
  if (custom_constraints &&
      custom_constraints->dim() != kStateDim + static_cast<int>(selection.size()))
    throw ConfigError("custom constraints do not match the augmented state dimension");
  if (!(replacement_budget >= 0.0)) throw ConfigError("replacement budget must be >= 0");
  if (mse.kind == MseRule::Kind::Count && mse.skip_count < 0)
    throw ConfigError("MSE skip count must be >= 0");
  if (noise) noise->validate(kStateDim + static_cast<int>(selection.size()));
  integrator.validate();
  nominal.check();
}

// ---------------------------------------------------------------------------
// Scoring

bool record_qualifies(const ForecastRecord& r, std::size_t index, double admission,
                      const MseRule& rule) {
  if (r.initial) return false;
  if (rule.kind == MseRule::Kind::Count) return index >= static_cast<std::size_t>(rule.skip_count);
  return r.t >= admission + rule.cutoff_min;
}

double mse_after_24h(const std::vector<ForecastRecord>& records, double admission,
                     const MseRule& rule) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!record_qualifies(records[i], i, admission, rule)) continue;
    const double r = records[i].y - records[i].forecast;
    sum += r * r;
    ++count;
  }
  if (count == 0) throw ConfigError("no forecast records qualify for MSE scoring");
  return sum / count;
}

void score(ExperimentResult& result) {
  result.mse_sum = 0.0;
  result.qualifying = 0;
  result.mse_curve.assign(result.records.size(), kNaN);
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const auto& rec = result.records[i];
    if (record_qualifies(rec, i, result.admission, result.mse_rule)) {
      const double r = rec.y - rec.forecast;
      result.mse_sum += r * r;
      ++result.qualifying;
    }
    if (result.qualifying > 0) result.mse_curve[i] = result.mse_sum / result.qualifying;
  }
  result.mse = result.qualifying > 0 ? result.mse_sum / result.qualifying : kNaN;
}

ExperimentResult run_protocol(const std::vector<Measurement>& measurements,
                              SequentialForecaster& forecaster, double admission,
                              const MseRule& rule) {
  ExperimentResult out;
  out.admission = admission;
  out.mse_rule = rule;
  try {
    if (measurements.size() < 2) throw ConfigError("an experiment needs at least two measurements");
    out.records.push_back(forecaster.initialize(measurements.front().t, measurements.front().y));
    for (std::size_t i = 1; i < measurements.size(); ++i) {
      ForecastRecord rec = forecaster.forecast(measurements[i].t);
      rec.t = measurements[i].t;
      rec.y = measurements[i].y;
      forecaster.assimilate(measurements[i].y, rec);
      out.records.push_back(std::move(rec));
    }
  } catch (const std::exception& e) {
    out.aborted = true;
    out.abort_reason = e.what();
  }
  score(out);
  return out;
}

// ---------------------------------------------------------------------------
// EnKF forecaster

EnkfForecaster::EnkfForecaster(const ExperimentConfig& cfg, const ExogenousInputs& inputs)
    : cfg_(cfg),
      inputs_(&inputs),
      noise_(cfg.noise ? *cfg.noise : default_noise(cfg.selection, cfg.nominal)),
      model_(MeasurementModel::glucose(kStateDim + static_cast<int>(cfg.selection.size()),
                                       cfg.nominal.V_g)),
      propagate_(cfg.nominal, cfg.selection, inputs, cfg.integrator),
      process_noise_(noise_.Sigma) {
  cfg_.validate();
  if (cfg_.custom_constraints)
    cons_ = *cfg_.custom_constraints;
  else if (cfg_.constraint != kUnconstrained)
    cons_ = constraint_set_from_name(cfg_.constraint, cfg_.selection, cfg_.nominal);
}

ForecastRecord EnkfForecaster::initialize(double t, double y) {
  const Ensemble ens = init_ensemble(cfg_.selection, cfg_.nominal, y, cfg_.particles, cfg_.spread,
                                     derive_seed(cfg_.seed, kStreamInit));
  members_ = ens.members;
  moments_ = ensemble_moments(members_, cfg_.norm);
  t_ = t;
  step_ = 0;
  replaced_ = 0;

  const ForecastSummary s = summarize_forecast(t, members_, model_, cfg_.norm);
  ForecastRecord rec;
  rec.t = t;
  rec.y = y;
  rec.forecast = s.mean;
  rec.spread_std = s.std;
  rec.spread_min = s.min;
  rec.spread_max = s.max;
  rec.param_means = moments_.mean.tail(static_cast<Eigen::Index>(cfg_.selection.size()));
  rec.initial = true;
  if (cons_) {
    const ViolationReport v = violation_report(members_, *cons_);
    rec.forecast_violations = v.particles_violating;
    rec.forecast_max_violation = v.max_violation;
    rec.posterior_max_violation = v.max_violation;
  }
  return rec;
}

ForecastRecord EnkfForecaster::forecast(double t) {
  if (members_.size() == 0) throw ConfigError("forecaster used before initialize()");
  if (!(t > t_)) throw ConfigError("measurement times must be strictly increasing");
  ++step_;
  const PredictResult pred =
      predict_members(members_, propagate_, t_, t, process_noise_,
                      derive_seed(cfg_.seed, kStreamPredict, step_), PredictOptions{cfg_.norm});
  members_ = pred.members;
  moments_ = pred.moments;
  t_ = t;
  replaced_ += pred.replaced;

  const ForecastSummary s = summarize_forecast(t, members_, model_, cfg_.norm);
  ForecastRecord rec;
  rec.t = t;
  rec.forecast = s.mean;
  rec.spread_std = s.std;
  rec.spread_min = s.min;
  rec.spread_max = s.max;
  rec.replaced = pred.replaced;
  if (cons_) {
    const ViolationReport v = violation_report(members_, *cons_);
    rec.forecast_violations = v.particles_violating;
    rec.forecast_max_violation = v.max_violation;
  }
  if (replaced_ > cfg_.replacement_budget * cfg_.particles)
    throw IntegrationError("particle replacement budget exhausted at t=" + std::to_string(t));
  return rec;
}

void EnkfForecaster::assimilate(double y, ForecastRecord& record) {
  const std::uint64_t seed = derive_seed(cfg_.seed, kStreamUpdate, step_);
  if (cons_) {
    ConstrainedUpdateStats stats;
    members_ = constrained_update(members_, moments_, y, model_, noise_.Gamma, *cons_,
                                  cfg_.update, cfg_.qp, seed, &stats);
    record.projected = stats.projected;
    record.posterior_max_violation = violation_report(members_, *cons_, 0.0).max_violation;
  } else {
    members_ = kalman_update(members_, moments_, y, model_, noise_.Gamma, cfg_.update, seed);
  }
  record.param_means = members_.rowwise().mean().tail(static_cast<Eigen::Index>(cfg_.selection.size()));
}

ExperimentResult run_experiment(const PatientTimeline& tl, const ExperimentConfig& cfg) {
  tl.validate();
  cfg.validate();
  const PatientTimeline filtered = apply_inclusion(tl, cfg.inclusion);
  const FilterInputs fi = to_exogenous(filtered);
  if (fi.measurements.size() < 2) throw ConfigError("timeline has fewer than two glucose measurements");
  EnkfForecaster forecaster(cfg, fi.inputs);
  ExperimentResult out = run_protocol(fi.measurements, forecaster, tl.admission_time(), cfg.mse);
  out.patient = tl.id;
  out.experiment = cfg.custom_constraints ? "custom" : cfg.constraint;
  out.param_names = cfg.selection.names();
  out.total_replaced = forecaster.total_replaced();
  out.particles = cfg.particles;
  out.seed = cfg.seed;
  out.warnings = fi.warnings;
  return out;
}

// ---------------------------------------------------------------------------
// Omega

std::string_view omega_category_name(OmegaCategory c) noexcept {
  switch (c) {
    case OmegaCategory::Harm: return "harm";
    case OmegaCategory::NoChange: return "no change";
    case OmegaCategory::Improvement: return "improvement";
    case OmegaCategory::SubstantialImprovement: return "substantial improvement";
  }
  return "?";
}

Omega omega_ratio(double mse_c, double mse_u) {
  if (!(mse_u > 0.0) || !std::isfinite(mse_u)) throw ConfigError("omega needs a positive baseline MSE");
  if (!(mse_c >= 0.0) || !std::isfinite(mse_c)) throw ConfigError("MSE must be finite and nonnegative");
  Omega o;
  o.omega = mse_c / mse_u;
  if (o.omega >= 1.1)
    o.category = OmegaCategory::Harm;
  else if (o.omega >= 0.9)
    o.category = OmegaCategory::NoChange;
  else if (o.omega >= 0.6)
    o.category = OmegaCategory::Improvement;
  else
    o.category = OmegaCategory::SubstantialImprovement;
  return o;
}

PatientMatrix run_constraint_matrix(const PatientTimeline& tl, const ExperimentConfig& base,
                                    const std::vector<std::string>& experiments) {
  const std::vector<std::string>& names = experiments.empty() ? constraint_experiment_names() : experiments;
  for (const auto& n : names) experiment_tiers(n);

  PatientMatrix out;
  out.patient = tl.id;
  ExperimentConfig cfg = base;
  cfg.custom_constraints.reset();
  cfg.constraint = kUnconstrained;
  out.baseline = run_experiment(tl, cfg);
  for (const auto& name : names) {
    cfg.constraint = name;
    out.constrained.push_back(run_experiment(tl, cfg));
    const ExperimentResult& r = out.constrained.back();
    out.omegas.push_back(omega_between(r, out.baseline));
  }
  return out;
}

std::optional<Omega> omega_between(const ExperimentResult& constrained, const ExperimentResult& baseline) {
  if (constrained.qualifying == 0 || baseline.qualifying == 0) return std::nullopt;
  if (!(baseline.mse > 0.0) || !std::isfinite(constrained.mse) || !std::isfinite(baseline.mse))
    return std::nullopt;
  return omega_ratio(constrained.mse, baseline.mse);
}

OmegaReport build_omega_report(const std::vector<PatientMatrix>& rows) {
  OmegaReport rep;
  if (rows.empty()) return rep;
  for (const auto& r : rows[0].constrained) rep.experiments.push_back(r.experiment);
  const std::size_t ne = rep.experiments.size();
  rep.fractions.assign(ne, {0.0, 0.0, 0.0, 0.0});
  std::vector<int> defined(ne, 0);
  for (const auto& row : rows) {
    if (row.omegas.size() != ne) throw ConfigError("patients ran different experiment lists");
    rep.patients.push_back(row.patient);
    rep.omega.push_back(row.omegas);
    for (std::size_t e = 0; e < ne; ++e) {
      if (!row.omegas[e]) continue;
      rep.fractions[e][static_cast<std::size_t>(row.omegas[e]->category)] += 1.0;
      ++defined[e];
    }
  }
  for (std::size_t e = 0; e < ne; ++e)
    if (defined[e] > 0)
      for (auto& f : rep.fractions[e]) f /= defined[e];
  return rep;
}

// ---------------------------------------------------------------------------
// Twins

TwinPatient generate_twin_patient(const UltradianParams& truth, const TwinConfig& cfg,
                                  std::uint64_t seed, const std::string& id) {
  if (!(cfg.noise_sd >= 0.0)) throw ConfigError("noise std must be >= 0");
  if (!(cfg.duration_min > 0.0) || !(cfg.feed_interval > 0.0) || !(cfg.feed_rate >= 0.0) ||
      !(cfg.mean_interval > 0.0) || !(cfg.interval_jitter >= 0.0 && cfg.interval_jitter < 1.0) ||
      !(cfg.burn_in >= 0.0) || !(cfg.truth_dt > 0.0))
    throw ConfigError("invalid twin configuration");
  truth.check();

  // Model time runs from the start of the burn-in; timeline time is shifted by it.
  const double offset = cfg.burn_in;
  const double end = offset + cfg.duration_min;
  ExogenousInputs inputs;
  PatientTimeline tl;
  tl.id = id;
  const double amount = cfg.feed_rate * cfg.feed_interval;
  if (amount > 0.0) {
    const long n_feeds = static_cast<long>(std::ceil(end / cfg.feed_interval));
    for (long j = 0; j < n_feeds; ++j) {
      const double t = static_cast<double>(j) * cfg.feed_interval;
      inputs.nutrition.push_back({t, amount});
      if (t >= offset) tl.events.push_back({t - offset, EventKind::TubeFeed, amount});
    }
  }

  Rng spacing(derive_seed(seed, kStreamTwinSpacing));
  Rng noise(derive_seed(seed, kStreamTwinNoise));
  std::uniform_real_distribution<double> jitter(cfg.mean_interval * (1.0 - cfg.interval_jitter),
                                                cfg.mean_interval * (1.0 + cfg.interval_jitter));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> meas_t;
  for (double t = 0.0; t <= cfg.duration_min; t += jitter(spacing)) meas_t.push_back(t);

  std::set<double> grid_set;
  for (double t = 0.0; t <= cfg.duration_min; t += cfg.truth_dt) grid_set.insert(t);
  grid_set.insert(meas_t.begin(), meas_t.end());
  // Model time runs from the end of the burn-in; timeline times are kept exactly.
  std::vector<double> grid, local;
  for (double t : grid_set) {
    if (!grid.empty() && !(t + offset > grid.back())) continue;
    grid.push_back(t + offset);
    local.push_back(t);
  }

  const PhysState start = offset > 0.0
                              ? integrate_between(cfg.initial, truth, inputs, 0.0, offset, cfg.integrator)
                              : cfg.initial;
  const std::vector<PhysState> traj = solution_operator(grid, start, truth, inputs, cfg.integrator);

  TwinPatient out;
  out.truth_params = truth;
  out.truth_t = std::move(local);
  out.truth = traj;

  std::size_t k = 0;
  for (double t : meas_t) {
    while (out.truth_t[k] < t) ++k;
    const double g = glucose_mg_to_mgdl(traj[k].G(), truth.V_g);
    const double y = std::max(0.0, g + cfg.noise_sd * gauss(noise));
    tl.events.push_back({t, EventKind::GlucoseMeas, cfg.noise_sd > 0.0 ? y : g});
  }
  std::stable_sort(tl.events.begin(), tl.events.end(),
                   [](const PatientEvent& a, const PatientEvent& b) { return a.t < b.t; });
  tl.validate();
  out.timeline = std::move(tl);
  return out;
}

std::vector<TwinPatient> generate_twin_cohort(const CohortConfig& cfg, std::uint64_t seed) {
  if (cfg.size < 0) throw ConfigError("cohort size must be >= 0");
  if (!(cfg.rel_spread >= 0.0 && cfg.rel_spread < 1.0)) throw ConfigError("relative spread must be in [0, 1)");
  if (cfg.max_draws < 1) throw ConfigError("max_draws must be >= 1");
  std::vector<TwinPatient> cohort;
  for (int i = 0; i < cfg.size; ++i) {
    const std::uint64_t pseed = derive_seed(seed, kStreamCohortPatient, static_cast<std::uint64_t>(i));
    std::string id = "twin_" + std::string(i < 9 ? "0" : "") + std::to_string(i + 1);
    bool accepted = false;
    for (int draw = 0; draw < cfg.max_draws && !accepted; ++draw) {
      Rng rng(derive_seed(pseed, kStreamCohortParams, static_cast<std::uint64_t>(draw)));
      std::uniform_real_distribution<double> u(1.0 - cfg.rel_spread, 1.0 + cfg.rel_spread);
      UltradianParams p = UltradianParams::nominal();
      for (Param q : cfg.perturbed.params()) p.set(q, p.get(q) * u(rng));
      TwinPatient twin;
      try {
        twin = generate_twin_patient(p, cfg.twin,
                                     derive_seed(pseed, kStreamCohortTwin, static_cast<std::uint64_t>(draw)), id);
      } catch (const DomainError&) {
        continue;
      } catch (const IntegrationError&) {
        continue;
      }
      if (cfg.insulin_within) {
        const auto [lo, hi] = *cfg.insulin_within;
        const bool inside = std::all_of(twin.truth.begin(), twin.truth.end(), [&](const PhysState& s) {
          return s.I_p() >= lo && s.I_p() <= hi && s.I_i() >= lo && s.I_i() <= hi;
        });
        if (!inside) continue;
      }
      cohort.push_back(std::move(twin));
      accepted = true;
    }
    if (!accepted) throw ConfigError("no admissible twin found for " + id);
  }
  return cohort;
}

}  // namespace cenkf

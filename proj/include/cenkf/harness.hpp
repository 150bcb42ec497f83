#pragma once

// Sequential forecast/assimilate experiments, MSE scoring, the constraint
// matrix with omega ratios, and synthetic twin patients.

#include "cenkf/constrained_filter.hpp"
#include "cenkf/filter_core.hpp"
#include "cenkf/integrator.hpp"
#include "cenkf/patient_data.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cenkf {

inline constexpr const char* kUnconstrained = "unconstrained";

struct MseRule {
  enum class Kind { Time, Count };
  Kind kind = Kind::Time;
  double cutoff_min = 1440.0;  // minutes after admission (Time rule)
  int skip_count = 24;         // records skipped before scoring (Count rule)
};

struct ExperimentConfig {
  ParameterSelection selection = ParameterSelection::houlihan();
  int particles = 50;
  std::string constraint = kUnconstrained;
  DataInclusion inclusion;
  std::optional<NoiseSpec> noise;  // default_noise() when empty
  IntegratorConfig integrator;
  SpreadConfig spread;
  UpdateOptions update;
  QpOptions qp;
  CovarianceNorm norm = CovarianceNorm::Population;
  MseRule mse;
  UltradianParams nominal;
  /// Replaced particles allowed over a whole run, as a multiple of N.
  double replacement_budget = 20.0;
  /// Overrides the named constraint set (used for custom bounds).
  std::optional<ConstraintSet> custom_constraints;
  std::uint64_t seed = 1;

  bool constrained() const { return custom_constraints.has_value() || constraint != kUnconstrained; }
  /// Throws ConfigError on bad values (unknown constraint name, N < 2, ...).
  void validate() const;
};

struct ForecastRecord {
  double t = 0.0;
  double y = 0.0;          // measurement, mg/dl
  double forecast = 0.0;   // H m_hat
  double spread_std = 0.0;
  double spread_min = 0.0;
  double spread_max = 0.0;
  Vector param_means;      // posterior parameter means after assimilating y
  int forecast_violations = 0;       // forecast particles outside the constraint set
  double forecast_max_violation = 0.0;
  double posterior_max_violation = 0.0;
  int projected = 0;       // particles that went through the QP
  int replaced = 0;        // particles redrawn during the prediction
  bool initial = false;    // first measurement: used to seed the ensemble, not forecast
};

struct ExperimentResult {
  std::string patient;
  std::string experiment;
  std::vector<std::string> param_names;
  std::vector<ForecastRecord> records;
  double admission = 0.0;
  MseRule mse_rule;
  double mse = 0.0;        // mean over qualifying records (NaN if none)
  double mse_sum = 0.0;
  int qualifying = 0;
  std::vector<double> mse_curve;  // running mean per record (NaN before scoring starts)
  bool aborted = false;
  std::string abort_reason;
  int total_replaced = 0;
  int particles = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// True if record i is scored under `rule` for a timeline admitted at `admission`.
bool record_qualifies(const ForecastRecord& r, std::size_t index, double admission,
                      const MseRule& rule);

/// Mean squared forecast residual over qualifying records. Throws ConfigError
/// when no record qualifies.
double mse_after_24h(const std::vector<ForecastRecord>& records, double admission = 0.0,
                     const MseRule& rule = {});

/// Fills mse, mse_sum, qualifying and mse_curve from the records.
void score(ExperimentResult& result);

/// Produces a forecast for the next measurement and then absorbs it. The
/// forecaster sees y only through assimilate(), after forecast() returned.
class SequentialForecaster {
 public:
  virtual ~SequentialForecaster() = default;
  /// Starts the run from the first measurement.
  virtual ForecastRecord initialize(double t, double y) = 0;
  /// Forecast at t > previous time using only data assimilated so far.
  virtual ForecastRecord forecast(double t) = 0;
  /// Assimilates y at the time of the last forecast; fills posterior fields.
  virtual void assimilate(double y, ForecastRecord& record) = 0;
};

/// Runs the measurement loop. Exceptions from the forecaster abort the run
/// and are reported in the result with the records gathered so far.
ExperimentResult run_protocol(const std::vector<Measurement>& measurements,
                              SequentialForecaster& forecaster, double admission,
                              const MseRule& rule);

/// Stochastic (optionally constrained) EnKF over the ultradian model.
class EnkfForecaster final : public SequentialForecaster {
 public:
  EnkfForecaster(const ExperimentConfig& cfg, const ExogenousInputs& inputs);

  ForecastRecord initialize(double t, double y) override;
  ForecastRecord forecast(double t) override;
  void assimilate(double y, ForecastRecord& record) override;

  const Matrix& members() const noexcept { return members_; }
  double time() const noexcept { return t_; }
  int total_replaced() const noexcept { return replaced_; }

 private:
  ExperimentConfig cfg_;
  const ExogenousInputs* inputs_;
  NoiseSpec noise_;
  MeasurementModel model_;
  UltradianPropagator propagate_;
  GaussianSampler process_noise_;
  std::optional<ConstraintSet> cons_;
  Matrix members_;
  Moments moments_;
  double t_ = 0.0;
  std::uint64_t step_ = 0;
  int replaced_ = 0;
};

/// Full experiment on one timeline. Requires at least two measurements.
ExperimentResult run_experiment(const PatientTimeline& tl, const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Omega ratio

enum class OmegaCategory { Harm, NoChange, Improvement, SubstantialImprovement };

std::string_view omega_category_name(OmegaCategory c) noexcept;

struct Omega {
  double omega = 0.0;
  OmegaCategory category = OmegaCategory::NoChange;
};

/// omega = mse_c / mse_u. Throws ConfigError unless mse_u > 0 and mse_c >= 0.
Omega omega_ratio(double mse_c, double mse_u);

/// ω from scored results. Aborted runs are scored on the records they produced;
/// empty when either side has nothing to score.
std::optional<Omega> omega_between(const ExperimentResult& constrained, const ExperimentResult& baseline);

struct PatientMatrix {
  std::string patient;
  ExperimentResult baseline;
  std::vector<ExperimentResult> constrained;  // in experiment-name order
  std::vector<std::optional<Omega>> omegas;   // empty when a run failed
};

struct OmegaReport {
  std::vector<std::string> experiments;
  std::vector<std::string> patients;
  std::vector<std::vector<std::optional<Omega>>> omega;  // [patient][experiment]
  /// fractions[experiment][category], over patients with a defined omega.
  std::vector<std::array<double, 4>> fractions;
};

/// Baseline plus every experiment in `experiments` (default: all eleven) with
/// the same seed.
PatientMatrix run_constraint_matrix(const PatientTimeline& tl, const ExperimentConfig& base,
                                    const std::vector<std::string>& experiments = {});

OmegaReport build_omega_report(const std::vector<PatientMatrix>& rows);

// ---------------------------------------------------------------------------
// Twin patients

struct TwinConfig {
  double duration_min = 4 * 1440.0;
  double feed_interval = 10.0;     // min between tube-feed events
  double feed_rate = 4800.0;       // nutrition amount per min (80 mg/min appearance)
  double mean_interval = 90.0;     // mean spacing of glucose measurements
  double interval_jitter = 0.5;    // spacing uniform in mean * [1 - j, 1 + j]
  double noise_sd = 5.0;           // mg/dl
  double burn_in = 1440.0;         // min of constant feed before admission
  double truth_dt = 5.0;           // truth trajectory sampling
  PhysState initial{100.0, 200.0, 12000.0, 100.0, 100.0, 100.0};
  IntegratorConfig integrator;
};

struct TwinPatient {
  PatientTimeline timeline;
  UltradianParams truth_params;
  std::vector<double> truth_t;
  std::vector<PhysState> truth;
};

/// Throws ConfigError on bad settings; integration failures propagate.
TwinPatient generate_twin_patient(const UltradianParams& truth, const TwinConfig& cfg,
                                  std::uint64_t seed, const std::string& id = "twin");

struct CohortConfig {
  int size = 20;
  double rel_spread = 0.3;  // true parameters uniform in nominal * [1 - s, 1 + s]
  ParameterSelection perturbed = ParameterSelection::houlihan();
  TwinConfig twin;
  /// Redraw patients until both insulin compartments stay inside these bounds.
  std::optional<Bounds> insulin_within;
  int max_draws = 200;
};

std::vector<TwinPatient> generate_twin_cohort(const CohortConfig& cfg, std::uint64_t seed);

}  // namespace cenkf

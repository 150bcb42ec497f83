#pragma once

// Joint state-parameter ensemble Kalman filter.
//
// The generic layer works on an ensemble matrix (one column per particle) and
// a member propagator, so the same prediction/update code drives both the
// ultradian model and small linear test systems. The ultradian layer adds the
// augmented-state layout: 6 physical states followed by the estimated
// parameter subvector.

#include "cenkf/integrator.hpp"
#include "cenkf/ultradian.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cenkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Parameter selection and augmented state

class ParameterSelection {
 public:
  /// Throws ConfigError on empty or duplicated selections.
  explicit ParameterSelection(std::vector<Param> params);

  static ParameterSelection from_names(const std::vector<std::string>& names);
  /// Eight-parameter set (R_g, C_3, U_m, a_1, C_1, t_p, R_m, t_d).
  static ParameterSelection houlihan();
  /// Five-parameter subset (R_g, C_3, a_1, C_1, t_d).
  static ParameterSelection restricted_houlihan();
  /// "PH", "PRH" or a comma-separated list of parameter names.
  static ParameterSelection parse(const std::string& spec);

  std::size_t size() const noexcept { return params_.size(); }
  Param operator[](std::size_t i) const { return params_[i]; }
  const std::vector<Param>& params() const noexcept { return params_; }
  /// Index within the selection, or -1.
  int index_of(Param p) const noexcept;
  std::vector<std::string> names() const;
  std::string label() const;

  bool operator==(const ParameterSelection&) const = default;

 private:
  std::vector<Param> params_;
};

struct AugmentedState {
  PhysState phys;
  Vector params;
};

/// Row of augmented-state component `p` (offset past the physical block).
inline int param_row(int selection_index) { return kStateDim + selection_index; }

/// Nominal parameters with the selected components overwritten.
UltradianParams apply_selection(const UltradianParams& nominal, const ParameterSelection& sel,
                                const Eigen::Ref<const Vector>& values);

struct Ensemble {
  ParameterSelection selection;
  Matrix members;  // (6 + selection.size()) x N

  Ensemble(ParameterSelection sel, Matrix m);

  int size() const noexcept { return static_cast<int>(members.cols()); }
  int dim() const noexcept { return static_cast<int>(members.rows()); }
  AugmentedState particle(int n) const;
  void set_particle(int n, const AugmentedState& s);
};

// ---------------------------------------------------------------------------
// Noise, measurement and moments

enum class CovarianceNorm { Population, Sample };  // 1/N or 1/(N-1)

struct Moments {
  Vector mean;
  Matrix cov;
};

Moments ensemble_moments(const Matrix& members, CovarianceNorm norm = CovarianceNorm::Population);

struct NoiseSpec {
  Matrix Sigma;       // process noise added after each prediction
  double Gamma = 25;  // measurement variance, (mg/dl)^2
  Vector m0;
  Matrix C0;

  /// Throws ConfigError unless Sigma and C0 are symmetric PSD of size `dim`
  /// and Gamma > 0. Empty m0/C0 are accepted.
  void validate(int dim) const;
};

/// Scalar linear measurement y = H v.
struct MeasurementModel {
  Eigen::RowVectorXd H;

  double apply(const Eigen::Ref<const Vector>& v) const { return H.dot(v); }
  /// Selects glucose and converts mg to mg/dl: H = e_G / (10 V_g).
  static MeasurementModel glucose(int augmented_dim, double V_g = 10.0);
};

/// mg <-> mg/dl under the glucose measurement scaling.
inline double glucose_mg_to_mgdl(double G, double V_g = 10.0) { return G / (10.0 * V_g); }
inline double glucose_mgdl_to_mg(double y, double V_g = 10.0) { return y * 10.0 * V_g; }

struct UpdateOptions {
  bool perturbed_observations = true;
  double ridge_factor = 1e-8;  // lambda = ridge_factor * trace(C)/dim
};

/// C + lambda I with lambda = factor * trace(C) / dim.
Matrix regularized(const Matrix& C, double ridge_factor);

struct KalmanGain {
  Vector K;
  double S = 0.0;
  Matrix C_reg;

  /// Posterior covariance (I - K H) C_reg, symmetrized.
  Matrix posterior_cov(const MeasurementModel& model) const;
};

KalmanGain kalman_gain(const Matrix& C_hat, const MeasurementModel& model, double Gamma,
                       double ridge_factor);

/// Per-particle observations y + eta_n (or y for every particle in shared mode).
Vector observation_draws(int N, double y, double Gamma, bool perturbed, std::uint64_t seed);

/// v_n <- (I - K H) v_hat_n + K y_n for every column.
Matrix kalman_update(const Matrix& forecast, const Moments& moments, double y,
                     const MeasurementModel& model, double Gamma, const UpdateOptions& opts,
                     std::uint64_t seed);

Ensemble kalman_update(const Ensemble& forecast, const Moments& moments, double y,
                       const MeasurementModel& model, const NoiseSpec& noise,
                       const UpdateOptions& opts, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Prediction

/// Advances one member in place; returns false if the member cannot be
/// propagated (the caller then replaces it).
using MemberPropagator = std::function<bool(Eigen::Ref<Vector> member, double t0, double t1)>;

/// Zero-mean Gaussian sampler for a PSD covariance.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Matrix& cov);
  int dim() const noexcept { return static_cast<int>(factor_.rows()); }
  bool zero() const noexcept { return zero_; }
  Vector sample(std::uint64_t seed) const;

 private:
  Matrix factor_;
  bool zero_ = true;
};

struct PredictOptions {
  CovarianceNorm norm = CovarianceNorm::Population;
  /// Fresh draws tried per failed member before falling back to the survivors.
  int redraw_attempts = 10;
};

struct PredictResult {
  Matrix members;
  Moments moments;
  int replaced = 0;
};

/// Ensemble prediction: propagate, add process noise xi_n ~ N(0, Sigma), form
/// the moments. A member that fails to propagate restarts from a draw of
/// N(m, C) of the incoming ensemble; if every attempt fails it is drawn from
/// the moments of the propagated survivors. Per-member randomness comes from derive_seed(seed, n),
/// so results do not depend on evaluation order.
PredictResult predict_members(const Matrix& members, const MemberPropagator& propagate, double t0,
                              double t1, const GaussianSampler& process_noise, std::uint64_t seed,
                              const PredictOptions& opts = {});

/// Propagates ultradian augmented states (parameters constant within a step).
class UltradianPropagator {
 public:
  UltradianPropagator(UltradianParams nominal, ParameterSelection selection,
                      const ExogenousInputs& inputs, IntegratorConfig cfg);

  bool operator()(Eigen::Ref<Vector> member, double t0, double t1) const;

 private:
  UltradianParams nominal_;
  ParameterSelection selection_;
  const ExogenousInputs* inputs_;
  IntegratorConfig cfg_;
};

struct ForecastSummary {
  double t = 0.0;
  double mean = 0.0;  // H m_hat
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
};

ForecastSummary summarize_forecast(double t, const Matrix& forecast, const MeasurementModel& model,
                                   CovarianceNorm norm);

// ---------------------------------------------------------------------------
// Initialization and default noise

struct SpreadConfig {
  double param_rel_sd = 0.1;
  double glucose_sd = 10.0;      // mg/dl
  double plasma_insulin = 100.0; // mU
  double interstitial_insulin = 200.0;
  double insulin_rel_sd = 0.2;
};

/// Ensemble at nominal parameters with G centered at the first measurement.
Ensemble init_ensemble(const ParameterSelection& selection, const UltradianParams& nominal,
                       double first_glucose_mgdl, int N, const SpreadConfig& spread,
                       std::uint64_t seed);

/// Diagonal process noise: states at 1% of typical magnitude, parameters at
/// 0.5% of nominal (standard deviations); Gamma = 25 (mg/dl)^2.
NoiseSpec default_noise(const ParameterSelection& selection, const UltradianParams& nominal);

// ---------------------------------------------------------------------------
// Assimilation step

using UpdateFn = std::function<Matrix(const Matrix& forecast, const Moments& moments, double y,
                                      std::uint64_t seed)>;

struct StepOutcome {
  ForecastSummary forecast;
  Matrix forecast_members;
  Moments moments;
  Matrix posterior;
  int replaced = 0;
};

/// Predict to t1, summarize the forecast (before y is used), then update.
/// `on_forecast`, if set, sees the forecast summary before `update` runs.
StepOutcome assimilate_step(const Matrix& members, const MemberPropagator& propagate, double t0,
                            double t1, double y, const GaussianSampler& process_noise,
                            const MeasurementModel& model, const UpdateFn& update,
                            std::uint64_t seed, const PredictOptions& opts = {},
                            const std::function<void(const ForecastSummary&)>& on_forecast = {});

}  // namespace cenkf

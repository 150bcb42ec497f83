#pragma once

// Constrained EnKF update: each particle minimizes the Kalman objective
// subject to linear equality/inequality constraints on the augmented state.

#include "cenkf/filter_core.hpp"
#include "cenkf/qp.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cenkf {

enum class Severity { Mild, Severe, UltraSevere };

std::string_view severity_name(Severity s) noexcept;

/// Linear constraint system over the augmented state with row labels.
/// Construction through ConstraintBuilder verifies the region is non-empty.
class ConstraintSet {
 public:
  ConstraintSet(LinearConstraints lin, std::vector<std::string> eq_labels,
                std::vector<std::string> ineq_labels);

  const LinearConstraints& linear() const noexcept { return lin_; }
  int dim() const noexcept { return dim_; }
  int n_eq() const noexcept { return lin_.n_eq(); }
  int n_ineq() const noexcept { return lin_.n_ineq(); }
  const std::vector<std::string>& eq_labels() const noexcept { return eq_labels_; }
  const std::vector<std::string>& ineq_labels() const noexcept { return ineq_labels_; }
  bool empty() const noexcept { return n_eq() == 0 && n_ineq() == 0; }

 private:
  LinearConstraints lin_;
  std::vector<std::string> eq_labels_;
  std::vector<std::string> ineq_labels_;
  int dim_ = 0;
};

class ConstraintBuilder {
 public:
  explicit ConstraintBuilder(int dim);

  /// lo <= scale * v[index] <= hi; infinite bounds add no row.
  ConstraintBuilder& bounds(int index, double lo, double hi, const std::string& label,
                            double scale = 1.0);
  /// scale * v[index] == value.
  ConstraintBuilder& fix(int index, double value, const std::string& label, double scale = 1.0);
  ConstraintBuilder& inequality(const Eigen::RowVectorXd& row, double rhs, const std::string& label);
  ConstraintBuilder& equality(const Eigen::RowVectorXd& row, double rhs, const std::string& label);

  /// Throws ConfigError when the region is empty.
  ConstraintSet build() const;

 private:
  int dim_;
  std::vector<std::pair<Eigen::RowVectorXd, double>> eq_, ineq_;
  std::vector<std::string> eq_labels_, ineq_labels_;
};

using Bounds = std::pair<double, double>;

/// Glucose bounds in mg/dl. Throws ConfigError for undefined tiers.
Bounds glucose_bounds(Severity s);
Bounds plasma_insulin_bounds(Severity s);
Bounds interstitial_insulin_bounds(Severity s);
/// Tabulated bounds for t_p, t_d, R_m, a_1, C_1, C_3, U_m, R_g, if present.
std::optional<Bounds> tabulated_parameter_bounds(Param p, Severity s);
/// Rule-based bounds: mild divides/multiplies nominal by 10, severe by 2.
Bounds generated_parameter_bounds(double nominal, Severity s);
/// Tabulated when available, generated otherwise.
Bounds parameter_bounds(Param p, Severity s, const UltradianParams& nominal);

struct ExperimentTiers {
  std::optional<Severity> glucose;
  std::optional<Severity> insulin;
  std::optional<Severity> params;
};

/// The eleven named experiments, in table order.
const std::vector<std::string>& constraint_experiment_names();
/// Throws ConfigError for unknown names.
ExperimentTiers experiment_tiers(const std::string& name);

struct NamedConstraintExperiment {
  std::string name;
  ExperimentTiers tiers;
  ConstraintSet constraints;
};

/// Builds the named experiment's box constraints. Glucose rows are written in
/// mg/dl through the measurement scaling; parameter rows appear only for
/// parameters in `selection`.
ConstraintSet constraint_set_from_name(const std::string& name, const ParameterSelection& selection,
                                       const UltradianParams& nominal = UltradianParams::nominal());

NamedConstraintExperiment named_experiment(const std::string& name,
                                           const ParameterSelection& selection,
                                           const UltradianParams& nominal = UltradianParams::nominal());

struct ConstrainedUpdateStats {
  int projected = 0;      // particles that needed the QP
  int max_iterations = 0;
  double max_kkt = 0.0;   // largest KKT residual over projected particles
};

/// Per-particle argmin of 1/2|y_n - Hv|^2_Gamma + 1/2|v - v_hat_n|^2_C subject to
/// the constraints. Particles whose Kalman update is already feasible are
/// returned unchanged (bit-identical to kalman_update).
Matrix constrained_update(const Matrix& forecast, const Moments& moments, double y,
                          const MeasurementModel& model, double Gamma, const ConstraintSet& cons,
                          const UpdateOptions& opts, const QpOptions& qp, std::uint64_t seed,
                          ConstrainedUpdateStats* stats = nullptr);

Ensemble constrained_update(const Ensemble& forecast, const Moments& moments, double y,
                            const MeasurementModel& model, const NoiseSpec& noise,
                            const ConstraintSet& cons, const UpdateOptions& opts,
                            const QpOptions& qp, std::uint64_t seed,
                            ConstrainedUpdateStats* stats = nullptr);

struct ViolationReport {
  int particles_violating = 0;  // particles with any row violated beyond tol
  int rows_violated = 0;        // (particle, row) pairs
  double max_violation = 0.0;
  std::vector<int> per_row;     // violating particles per inequality row
};

ViolationReport violation_report(const Matrix& members, const ConstraintSet& cons,
                                 double tol = 1e-6);

}  // namespace cenkf

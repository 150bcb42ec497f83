#include "cenkf/constrained_filter.hpp"

#include "cenkf/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace cenkf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct TableRow {
  Param param;
  Bounds mild;
  Bounds severe;
};

// Explicit parameter rows of the constraint table.
const std::array<TableRow, 8> kParamTable{{
    {Param::t_p, {0.6, 60.0}, {3.0, 12.0}},
    {Param::t_d, {1.2, 120.0}, {6.0, 24.0}},
    {Param::R_m, {20.9, 2090.0}, {104.0, 418.0}},
    {Param::a_1, {0.66, 66.7}, {3.0, 14.0}},
    {Param::C_1, {30.0, 3000.0}, {150.0, 600.0}},
    {Param::C_3, {10.0, 1000.0}, {50.0, 200.0}},
    {Param::U_m, {9.4, 940.0}, {47.0, 188.0}},
    {Param::R_g, {18.0, 1800.0}, {90.0, 360.0}},
}};

const std::map<std::string, ExperimentTiers>& tier_table() {
  using S = Severity;
  static const std::map<std::string, ExperimentTiers> table{
      {"gm", {S::Mild, std::nullopt, std::nullopt}},
      {"gs", {S::Severe, std::nullopt, std::nullopt}},
      {"im", {std::nullopt, S::Mild, std::nullopt}},
      {"is", {std::nullopt, S::Severe, std::nullopt}},
      {"ius", {std::nullopt, S::UltraSevere, std::nullopt}},
      {"gim", {S::Mild, S::Mild, std::nullopt}},
      {"gis", {S::Severe, S::Severe, std::nullopt}},
      {"gipm", {S::Mild, S::Mild, S::Mild}},
      {"gips", {S::Severe, S::Severe, S::Severe}},
      {"gpmius", {S::Mild, S::UltraSevere, S::Mild}},
      {"gpsius", {S::Severe, S::UltraSevere, S::Severe}},
  };
  return table;
}

}  // namespace

std::string_view severity_name(Severity s) noexcept {
  switch (s) {
    case Severity::Mild: return "mild";
    case Severity::Severe: return "severe";
    case Severity::UltraSevere: return "ultra severe";
  }
  return "?";
}

// ---------------------------------------------------------------------------

ConstraintSet::ConstraintSet(LinearConstraints lin, std::vector<std::string> eq_labels,
                             std::vector<std::string> ineq_labels)
    : lin_(std::move(lin)), eq_labels_(std::move(eq_labels)), ineq_labels_(std::move(ineq_labels)) {
  dim_ = lin_.dim();
  lin_.validate(dim_);
  if (static_cast<int>(eq_labels_.size()) != lin_.n_eq() ||
      static_cast<int>(ineq_labels_.size()) != lin_.n_ineq())
    throw ConfigError("constraint labels do not match the rows");
}

ConstraintBuilder::ConstraintBuilder(int dim) : dim_(dim) {
  if (dim <= 0) throw ConfigError("constraint dimension must be positive");
}

ConstraintBuilder& ConstraintBuilder::bounds(int index, double lo, double hi,
                                             const std::string& label, double scale) {
  if (index < 0 || index >= dim_) throw ConfigError("constraint index out of range");
  if (!(lo <= hi)) throw ConfigError("empty bound interval for " + label);
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dim_);
  row[index] = scale;
  if (lo > -kInf) inequality(-row, -lo, label + " >= lower");
  if (hi < kInf) inequality(row, hi, label + " <= upper");
  return *this;
}

ConstraintBuilder& ConstraintBuilder::fix(int index, double value, const std::string& label,
                                          double scale) {
  if (index < 0 || index >= dim_) throw ConfigError("constraint index out of range");
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dim_);
  row[index] = scale;
  return equality(row, value, label);
}

ConstraintBuilder& ConstraintBuilder::inequality(const Eigen::RowVectorXd& row, double rhs,
                                                 const std::string& label) {
  if (row.size() != dim_) throw ConfigError("constraint row has the wrong length");
  ineq_.emplace_back(row, rhs);
  ineq_labels_.push_back(label);
  return *this;
}

ConstraintBuilder& ConstraintBuilder::equality(const Eigen::RowVectorXd& row, double rhs,
                                               const std::string& label) {
  if (row.size() != dim_) throw ConfigError("constraint row has the wrong length");
  eq_.emplace_back(row, rhs);
  eq_labels_.push_back(label);
  return *this;
}

ConstraintSet ConstraintBuilder::build() const {
  LinearConstraints lin = LinearConstraints::none(dim_);
  lin.A.resize(static_cast<Eigen::Index>(eq_.size()), dim_);
  lin.a.resize(static_cast<Eigen::Index>(eq_.size()));
  for (std::size_t i = 0; i < eq_.size(); ++i) {
    lin.A.row(static_cast<Eigen::Index>(i)) = eq_[i].first;
    lin.a[static_cast<Eigen::Index>(i)] = eq_[i].second;
  }
  lin.B.resize(static_cast<Eigen::Index>(ineq_.size()), dim_);
  lin.b.resize(static_cast<Eigen::Index>(ineq_.size()));
  for (std::size_t i = 0; i < ineq_.size(); ++i) {
    lin.B.row(static_cast<Eigen::Index>(i)) = ineq_[i].first;
    lin.b[static_cast<Eigen::Index>(i)] = ineq_[i].second;
  }
  // Feasibility program: min 1/2|v|^2 over the region.
  try {
    const QpOptions opts{1e-9, 10 * (dim_ + static_cast<int>(ineq_.size()) + 10)};
    const QpResult r = qp_solve(Matrix::Identity(dim_, dim_), Vector::Zero(dim_), lin, opts);
    if (lin.max_violation(r.x) > 1e-6 * (1.0 + r.x.cwiseAbs().maxCoeff()))
      throw ConfigError("constraint region is empty");
  } catch (const QpError& e) {
    throw ConfigError(std::string("constraint region is empty: ") + e.what());
  }
  return ConstraintSet(std::move(lin), eq_labels_, ineq_labels_);
}

// ---------------------------------------------------------------------------

Bounds glucose_bounds(Severity s) {
  switch (s) {
    case Severity::Mild: return {20.0, 1000.0};
    case Severity::Severe: return {40.0, 400.0};
    case Severity::UltraSevere: break;
  }
  throw ConfigError("no ultra severe glucose tier is defined");
}

Bounds plasma_insulin_bounds(Severity s) {
  switch (s) {
    case Severity::Mild: return {10.0, 400.0};
    case Severity::Severe: return {75.0, 275.0};
    case Severity::UltraSevere: return {100.0, 250.0};
  }
  return {};
}

Bounds interstitial_insulin_bounds(Severity s) {
  switch (s) {
    case Severity::Mild: return {10.0, 400.0};
    case Severity::Severe: return {75.0, 275.0};
    case Severity::UltraSevere: return {75.0, 175.0};
  }
  return {};
}

std::optional<Bounds> tabulated_parameter_bounds(Param p, Severity s) {
  if (s == Severity::UltraSevere) return std::nullopt;
  for (const auto& row : kParamTable)
    if (row.param == p) return s == Severity::Mild ? row.mild : row.severe;
  return std::nullopt;
}

Bounds generated_parameter_bounds(double nominal, Severity s) {
  switch (s) {
    case Severity::Mild: return {nominal / 10.0, nominal * 10.0};
    case Severity::Severe: return {nominal / 2.0, nominal * 2.0};
    case Severity::UltraSevere: break;
  }
  throw ConfigError("no ultra severe parameter tier is defined");
}

Bounds parameter_bounds(Param p, Severity s, const UltradianParams& nominal) {
  if (auto t = tabulated_parameter_bounds(p, s)) return *t;
  return generated_parameter_bounds(nominal.get(p), s);
}

const std::vector<std::string>& constraint_experiment_names() {
  static const std::vector<std::string> names{"gm",  "gs",   "im",   "is",     "ius",   "gim",
                                              "gis", "gipm", "gips", "gpmius", "gpsius"};
  return names;
}

ExperimentTiers experiment_tiers(const std::string& name) {
  const auto& t = tier_table();
  auto it = t.find(name);
  if (it == t.end()) throw ConfigError("unknown constraint experiment '" + name + "'");
  return it->second;
}

ConstraintSet constraint_set_from_name(const std::string& name, const ParameterSelection& selection,
                                       const UltradianParams& nominal) {
  const ExperimentTiers tiers = experiment_tiers(name);
  const int dim = kStateDim + static_cast<int>(selection.size());
  ConstraintBuilder b(dim);
  if (tiers.glucose) {
    const auto [lo, hi] = glucose_bounds(*tiers.glucose);
    b.bounds(kG, lo, hi, "glucose (mg/dl)", 1.0 / (10.0 * nominal.V_g));
  }
  if (tiers.insulin) {
    const auto [plo, phi] = plasma_insulin_bounds(*tiers.insulin);
    const auto [ilo, ihi] = interstitial_insulin_bounds(*tiers.insulin);
    b.bounds(kIp, plo, phi, "plasma insulin");
    b.bounds(kIi, ilo, ihi, "interstitial insulin");
  }
  if (tiers.params) {
    for (std::size_t i = 0; i < selection.size(); ++i) {
      const auto [lo, hi] = parameter_bounds(selection[i], *tiers.params, nominal);
      b.bounds(param_row(static_cast<int>(i)), lo, hi, std::string(param_name(selection[i])));
    }
  }
  return b.build();
}

NamedConstraintExperiment named_experiment(const std::string& name,
                                           const ParameterSelection& selection,
                                           const UltradianParams& nominal) {
  return {name, experiment_tiers(name), constraint_set_from_name(name, selection, nominal)};
}

// ---------------------------------------------------------------------------

Matrix constrained_update(const Matrix& forecast, const Moments& moments, double y,
                          const MeasurementModel& model, double Gamma, const ConstraintSet& cons,
                          const UpdateOptions& opts, const QpOptions& qp, std::uint64_t seed,
                          ConstrainedUpdateStats* stats) {
  if (!cons.empty() && cons.dim() != forecast.rows())
    throw ConfigError("constraint dimension does not match the ensemble");
  Matrix post = kalman_update(forecast, moments, y, model, Gamma, opts, seed);
  ConstrainedUpdateStats local;
  if (cons.empty()) {
    if (stats) *stats = local;
    return post;
  }
  const LinearConstraints& lin = cons.linear();

  Matrix P;  // posterior metric, built lazily
  for (Eigen::Index n = 0; n < post.cols(); ++n) {
    const Vector v = post.col(n);
    if (lin.max_violation(v) <= qp.tol) continue;
    if (P.size() == 0) {
      const KalmanGain g = kalman_gain(moments.cov, model, Gamma, opts.ridge_factor);
      P = g.posterior_cov(model);
      Eigen::LLT<Matrix> llt(P);
      if (llt.info() != Eigen::Success) {
        // Round-off can leave the Schur complement marginally indefinite.
        P.diagonal().array() += 1e-12 * std::max(P.trace(), 1.0);
      }
    }
    const QpResult r = qp_project(P, v, lin, qp);
    post.col(n) = r.x;
    ++local.projected;
    local.max_iterations = std::max(local.max_iterations, r.iterations);
    local.max_kkt = std::max(local.max_kkt, kkt_residuals_projection(P, v, lin, r).max());
  }
  if (stats) *stats = local;
  return post;
}

Ensemble constrained_update(const Ensemble& forecast, const Moments& moments, double y,
                            const MeasurementModel& model, const NoiseSpec& noise,
                            const ConstraintSet& cons, const UpdateOptions& opts,
                            const QpOptions& qp, std::uint64_t seed,
                            ConstrainedUpdateStats* stats) {
  return Ensemble(forecast.selection, constrained_update(forecast.members, moments, y, model,
                                                         noise.Gamma, cons, opts, qp, seed, stats));
}

ViolationReport violation_report(const Matrix& members, const ConstraintSet& cons, double tol) {
  ViolationReport rep;
  const LinearConstraints& lin = cons.linear();
  rep.per_row.assign(static_cast<std::size_t>(lin.n_ineq()), 0);
  for (Eigen::Index n = 0; n < members.cols(); ++n) {
    bool any = false;
    for (Eigen::Index j = 0; j < lin.B.rows(); ++j) {
      if (lin.b[j] == kInf) continue;
      const double excess = lin.B.row(j).dot(members.col(n)) - lin.b[j];
      if (excess > tol) {
        any = true;
        ++rep.rows_violated;
        ++rep.per_row[static_cast<std::size_t>(j)];
        rep.max_violation = std::max(rep.max_violation, excess);
      }
    }
    for (Eigen::Index i = 0; i < lin.A.rows(); ++i) {
      const double excess = std::abs(lin.A.row(i).dot(members.col(n)) - lin.a[i]);
      if (excess > tol) {
        any = true;
        ++rep.rows_violated;
        rep.max_violation = std::max(rep.max_violation, excess);
      }
    }
    if (any) ++rep.particles_violating;
  }
  return rep;
}

}  // namespace cenkf

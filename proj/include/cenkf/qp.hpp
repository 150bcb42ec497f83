#pragma once

// Dense convex QP with linear equality and inequality constraints:
//
//   minimize   1/2 x'Qx + q'x
//   subject to A x  = a
//              B x <= b
//
// Solved with the Goldfarb-Idnani dual active-set method. The iteration starts
// at the unconstrained minimizer and adds the most violated constraint
// (lowest index on ties) until the iterate is primal feasible. Equalities are
// placed in the active set first and never leave it.

#include <Eigen/Core>

#include <vector>

namespace cenkf {

struct LinearConstraints {
  Eigen::MatrixXd A;  // equality rows
  Eigen::VectorXd a;
  Eigen::MatrixXd B;  // inequality rows
  Eigen::VectorXd b;

  static LinearConstraints none(int dim);

  int dim() const noexcept;
  int n_eq() const noexcept { return static_cast<int>(A.rows()); }
  int n_ineq() const noexcept { return static_cast<int>(B.rows()); }
  /// Throws QpError on inconsistent shapes or non-finite data. Infinite
  /// bounds in `b` are allowed and denote absent rows.
  void validate(int dim) const;

  /// max over rows of (B x - b)_+ and |A x - a|.
  double max_violation(const Eigen::VectorXd& x) const;
};

struct QpOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_multipliers;    // mu:     Qx + q + A'mu + B'lambda = 0
  Eigen::VectorXd ineq_multipliers;  // lambda >= 0
  std::vector<int> active;           // active inequality rows
  int iterations = 0;
  bool unconstrained_optimum = false;  // start point was already feasible
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;             // max(-lambda)_+
  double complementarity = 0.0;  // max |lambda_i (B x - b)_i|

  double max() const noexcept;
};

/// Q must be symmetric positive definite. Throws QpError if the constraints
/// are infeasible, the equalities are dependent, or the iteration cap is hit.
QpResult qp_solve(const Eigen::MatrixXd& Q, const Eigen::VectorXd& q,
                  const LinearConstraints& cons, const QpOptions& opts = {});

/// Same problem written as a metric projection,
///   minimize 1/2 (x - c)' P^{-1} (x - c),
/// with P symmetric positive definite. P is factored directly, never
/// inverted; multipliers refer to Q = P^{-1}, q = -P^{-1} c.
QpResult qp_project(const Eigen::MatrixXd& P, const Eigen::VectorXd& center,
                    const LinearConstraints& cons, const QpOptions& opts = {});

KktResiduals kkt_residuals(const Eigen::MatrixXd& Q, const Eigen::VectorXd& q,
                           const LinearConstraints& cons, const QpResult& r);

/// Residuals of the projection form; stationarity is measured as
/// |(x - c) + P (A'mu + B'lambda)|_inf, i.e. premultiplied by P.
KktResiduals kkt_residuals_projection(const Eigen::MatrixXd& P, const Eigen::VectorXd& center,
                                      const LinearConstraints& cons, const QpResult& r);

}  // namespace cenkf

#include "cenkf/qp.hpp"

#include "cenkf/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cenkf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Active-set state of the dual method. Constraints are kept in ">=" form,
// n'x >= rhs: equality i is (A_i, a_i), inequality j is (-B_j, -b_j).
// J J' = Q^{-1}; the first `nact` columns of J R span the active normals.
class DualActiveSet {
 public:
  DualActiveSet(MatrixXd J, VectorXd x0, const LinearConstraints& cons, const QpOptions& opts)
      : n_(static_cast<int>(x0.size())),
        J_(std::move(J)),
        R_(MatrixXd::Zero(n_, n_)),
        x_(std::move(x0)),
        u_(VectorXd::Zero(n_)),
        cons_(cons),
        opts_(opts) {
    active_.reserve(static_cast<std::size_t>(n_));
    is_active_.assign(static_cast<std::size_t>(cons.n_ineq()), 0);
  }

  QpResult solve() {
    QpResult res;
    const int neq = cons_.n_eq();
    if (neq > n_) throw QpError("more equality constraints than variables");

    if (neq == 0 && most_violated() < 0) {
      res.x = x_;
      res.eq_multipliers = VectorXd::Zero(0);
      res.ineq_multipliers = VectorXd::Zero(cons_.n_ineq());
      res.unconstrained_optimum = true;
      return res;
    }

    for (int i = 0; i < neq; ++i) {
      const VectorXd np = cons_.A.row(i).transpose();
      VectorXd d = J_.transpose() * np;
      const VectorXd z = step_direction(d);
      const VectorXd r = dual_direction(d);
      double t = 0.0;
      const double zn = z.dot(np);
      if (zn > kEps * d.squaredNorm()) t = (cons_.a[i] - np.dot(x_)) / zn;
      x_ += t * z;
      u_.head(nact()) -= t * r;
      u_[nact()] = t;
      if (!add_constraint(d, i)) throw QpError("equality constraints are linearly dependent");
    }

    for (;;) {
      const int p = most_violated();
      if (p < 0) break;
      const VectorXd np = -cons_.B.row(p).transpose();
      double slack = np.dot(x_) + cons_.b[p];
      double u_plus = 0.0;
      for (;;) {
        if (++iterations_ > opts_.max_iter)
          throw QpError("QP iteration cap of " + std::to_string(opts_.max_iter) + " exceeded");
        VectorXd d = J_.transpose() * np;
        const VectorXd z = step_direction(d);
        const VectorXd r = dual_direction(d);

        // Partial step: largest dual move keeping active inequality multipliers >= 0.
        double t_partial = kInf;
        int drop = -1;
        for (int k = neq; k < nact(); ++k) {
          if (r[k] <= 0.0) continue;
          const double ratio = u_[k] / r[k];
          if (drop < 0 || ratio < t_partial ||
              (ratio == t_partial && active_[static_cast<std::size_t>(k)] < active_[static_cast<std::size_t>(drop)])) {
            t_partial = ratio;
            drop = k;
          }
        }
        // Full step: makes constraint p active.
        double t_full = kInf;
        const double zn = z.dot(np);
        if (zn > kEps * d.squaredNorm()) t_full = -slack / zn;

        const double t = std::min(t_partial, t_full);
        if (t == kInf) throw QpError("QP constraints are infeasible");

        if (t_full == kInf) {
          u_.head(nact()) -= t * r;
          u_plus += t;
          drop_constraint(drop);
          continue;
        }
        x_ += t * z;
        u_.head(nact()) -= t * r;
        u_plus += t;
        if (t_full <= t_partial) {
          u_[nact()] = u_plus;
          if (!add_constraint(d, neq + p)) throw QpError("degenerate active set");
          is_active_[static_cast<std::size_t>(p)] = 1;
          break;
        }
        drop_constraint(drop);
        slack = np.dot(x_) + cons_.b[p];
      }
    }

    res.x = x_;
    res.iterations = iterations_;
    res.eq_multipliers = VectorXd::Zero(neq);
    res.ineq_multipliers = VectorXd::Zero(cons_.n_ineq());
    for (int k = 0; k < nact(); ++k) {
      const int id = active_[static_cast<std::size_t>(k)];
      if (id < neq) {
        res.eq_multipliers[id] = -u_[k];
      } else {
        res.ineq_multipliers[id - neq] = u_[k];
        res.active.push_back(id - neq);
      }
    }
    std::sort(res.active.begin(), res.active.end());
    return res;
  }

 private:
  int nact() const noexcept { return static_cast<int>(active_.size()); }

  // Most violated inactive inequality (lowest index on ties), or -1.
  int most_violated() const {
    int best = -1;
    double worst = -opts_.tol;
    for (int j = 0; j < cons_.n_ineq(); ++j) {
      if (is_active_[static_cast<std::size_t>(j)]) continue;
      if (cons_.b[j] == kInf) continue;
      const double s = cons_.b[j] - cons_.B.row(j).dot(x_);
      if (s < worst) {
        worst = s;
        best = j;
      }
    }
    return best;
  }

  VectorXd step_direction(const VectorXd& d) const {
    const int q = nact();
    return J_.rightCols(n_ - q) * d.tail(n_ - q);
  }

  VectorXd dual_direction(const VectorXd& d) const {
    const int q = nact();
    if (q == 0) return VectorXd::Zero(0);
    return R_.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));
  }

  bool add_constraint(VectorXd& d, int id) {
    const int q = nact();
    for (int j = n_ - 1; j >= q + 1; --j) {
      double cc = d[j - 1];
      double ss = d[j];
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d[j] = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d[j - 1] = -h;
      } else {
        d[j - 1] = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j - 1);
        const double t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    R_.col(q).head(q + 1) = d.head(q + 1);
    if (std::abs(d[q]) <= kEps * r_norm_) return false;
    r_norm_ = std::max(r_norm_, std::abs(d[q]));
    active_.push_back(id);
    return true;
  }

  void drop_constraint(int pos) {
    const int q = nact();
    const int id = active_[static_cast<std::size_t>(pos)];
    if (id >= cons_.n_eq()) is_active_[static_cast<std::size_t>(id - cons_.n_eq())] = 0;
    for (int i = pos; i < q - 1; ++i) {
      active_[static_cast<std::size_t>(i)] = active_[static_cast<std::size_t>(i + 1)];
      u_[i] = u_[i + 1];
      R_.col(i) = R_.col(i + 1);
    }
    active_.pop_back();
    u_[q - 1] = 0.0;
    R_.col(q - 1).setZero();
    const int nq = q - 1;
    for (int j = pos; j < nq; ++j) {
      double cc = R_(j, j);
      double ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = j + 1; k < nq; ++k) {
        const double t1 = R_(j, k);
        const double t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j);
        const double t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  int n_;
  MatrixXd J_;
  MatrixXd R_;
  VectorXd x_;
  VectorXd u_;
  std::vector<int> active_;
  std::vector<char> is_active_;
  double r_norm_ = 1.0;
  int iterations_ = 0;
  const LinearConstraints& cons_;
  const QpOptions& opts_;
};

}  // namespace

LinearConstraints LinearConstraints::none(int dim) {
  LinearConstraints c;
  c.A = MatrixXd::Zero(0, dim);
  c.a = VectorXd::Zero(0);
  c.B = MatrixXd::Zero(0, dim);
  c.b = VectorXd::Zero(0);
  return c;
}

int LinearConstraints::dim() const noexcept {
  return static_cast<int>(std::max(A.cols(), B.cols()));
}

void LinearConstraints::validate(int dim) const {
  if (A.rows() != a.size() || B.rows() != b.size())
    throw QpError("constraint row counts are inconsistent");
  if ((A.rows() > 0 && A.cols() != dim) || (B.rows() > 0 && B.cols() != dim))
    throw QpError("constraint column count does not match the variable dimension");
  if (!A.allFinite() || !a.allFinite() || !B.allFinite())
    throw QpError("constraint data must be finite");
  for (Eigen::Index j = 0; j < b.size(); ++j)
    if (std::isnan(b[j]) || b[j] == -kInf) throw QpError("inequality bound must be > -inf");
}

double LinearConstraints::max_violation(const VectorXd& x) const {
  double v = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) v = std::max(v, std::abs(A.row(i).dot(x) - a[i]));
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    if (b[j] == kInf) continue;
    v = std::max(v, B.row(j).dot(x) - b[j]);
  }
  return v;
}

double KktResiduals::max() const noexcept {
  return std::max({stationarity, primal, dual, complementarity});
}

QpResult qp_solve(const MatrixXd& Q, const VectorXd& q, const LinearConstraints& cons,
                  const QpOptions& opts) {
  const auto n = q.size();
  if (Q.rows() != n || Q.cols() != n) throw QpError("Q has the wrong shape");
  cons.validate(static_cast<int>(n));
  Eigen::LLT<MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success) throw QpError("Q is not positive definite");
  const MatrixXd Linv = llt.matrixL().solve(MatrixXd::Identity(n, n));
  VectorXd x0 = -llt.solve(q);
  DualActiveSet solver(Linv.transpose(), std::move(x0), cons, opts);
  return solver.solve();
}

QpResult qp_project(const MatrixXd& P, const VectorXd& center, const LinearConstraints& cons,
                    const QpOptions& opts) {
  const auto n = center.size();
  if (P.rows() != n || P.cols() != n) throw QpError("P has the wrong shape");
  cons.validate(static_cast<int>(n));
  Eigen::LLT<MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) throw QpError("projection metric is not positive definite");
  DualActiveSet solver(MatrixXd(llt.matrixL()), center, cons, opts);
  return solver.solve();
}

namespace {

KktResiduals common_residuals(const LinearConstraints& cons, const QpResult& r) {
  KktResiduals k;
  k.primal = cons.max_violation(r.x);
  for (Eigen::Index j = 0; j < r.ineq_multipliers.size(); ++j) {
    const double lam = r.ineq_multipliers[j];
    k.dual = std::max(k.dual, -lam);
    if (cons.b[j] == kInf) continue;
    k.complementarity = std::max(k.complementarity, std::abs(lam * (cons.B.row(j).dot(r.x) - cons.b[j])));
  }
  return k;
}

VectorXd constraint_force(const LinearConstraints& cons, const QpResult& r, Eigen::Index n) {
  VectorXd g = VectorXd::Zero(n);
  if (cons.n_eq() > 0) g += cons.A.transpose() * r.eq_multipliers;
  if (cons.n_ineq() > 0) g += cons.B.transpose() * r.ineq_multipliers;
  return g;
}

}  // namespace

KktResiduals kkt_residuals(const MatrixXd& Q, const VectorXd& q, const LinearConstraints& cons,
                           const QpResult& r) {
  KktResiduals k = common_residuals(cons, r);
  k.stationarity = (Q * r.x + q + constraint_force(cons, r, q.size())).cwiseAbs().maxCoeff();
  return k;
}

KktResiduals kkt_residuals_projection(const MatrixXd& P, const VectorXd& center,
                                      const LinearConstraints& cons, const QpResult& r) {
  KktResiduals k = common_residuals(cons, r);
  k.stationarity =
      ((r.x - center) + P * constraint_force(cons, r, center.size())).cwiseAbs().maxCoeff();
  return k;
}

}  // namespace cenkf

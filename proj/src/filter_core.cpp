#include "cenkf/filter_core.hpp"

#include "cenkf/errors.hpp"
#include "cenkf/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace cenkf {

namespace {

// Seed streams
constexpr std::uint64_t kStreamProcessNoise = 1;
constexpr std::uint64_t kStreamReplacement = 2;
constexpr std::uint64_t kStreamObservation = 3;
constexpr std::uint64_t kStreamInitParams = 4;
constexpr std::uint64_t kStreamInitState = 5;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

bool symmetric_psd(const Matrix& M, double tol = 1e-9) {
  if (M.rows() != M.cols()) return false;
  if (M.size() == 0) return true;
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol * scale;
}

}  // namespace

// ---------------------------------------------------------------------------

ParameterSelection::ParameterSelection(std::vector<Param> params) : params_(std::move(params)) {
  if (params_.empty()) throw ConfigError("parameter selection must not be empty");
  std::set<Param> seen(params_.begin(), params_.end());
  if (seen.size() != params_.size()) throw ConfigError("parameter selection has duplicates");
}

ParameterSelection ParameterSelection::from_names(const std::vector<std::string>& names) {
  std::vector<Param> ps;
  ps.reserve(names.size());
  for (const auto& n : names) {
    auto p = param_from_name(n);
    if (!p) throw ConfigError("unknown parameter '" + n + "'");
    ps.push_back(*p);
  }
  return ParameterSelection(std::move(ps));
}

ParameterSelection ParameterSelection::houlihan() {
  return ParameterSelection({Param::R_g, Param::C_3, Param::U_m, Param::a_1, Param::C_1,
                             Param::t_p, Param::R_m, Param::t_d});
}

ParameterSelection ParameterSelection::restricted_houlihan() {
  return ParameterSelection({Param::R_g, Param::C_3, Param::a_1, Param::C_1, Param::t_d});
}

ParameterSelection ParameterSelection::parse(const std::string& spec) {
  if (spec == "PH" || spec == "P_H") return houlihan();
  if (spec == "PRH" || spec == "P_RH") return restricted_houlihan();
  return from_names(split(spec, ','));
}

int ParameterSelection::index_of(Param p) const noexcept {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i] == p) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> ParameterSelection::names() const {
  std::vector<std::string> out;
  for (auto p : params_) out.emplace_back(param_name(p));
  return out;
}

std::string ParameterSelection::label() const {
  if (*this == houlihan()) return "PH";
  if (*this == restricted_houlihan()) return "PRH";
  std::string out;
  for (auto p : params_) {
    if (!out.empty()) out += ',';
    out += param_name(p);
  }
  return out;
}

UltradianParams apply_selection(const UltradianParams& nominal, const ParameterSelection& sel,
                                const Eigen::Ref<const Vector>& values) {
  UltradianParams p = nominal;
  for (std::size_t i = 0; i < sel.size(); ++i) p.set(sel[i], values[static_cast<Eigen::Index>(i)]);
  return p;
}

Ensemble::Ensemble(ParameterSelection sel, Matrix m) : selection(std::move(sel)), members(std::move(m)) {
  if (members.rows() != kStateDim + static_cast<Eigen::Index>(selection.size()))
    throw ConfigError("ensemble rows do not match the parameter selection");
  if (members.cols() < 2) throw ConfigError("ensemble needs at least two particles");
}

AugmentedState Ensemble::particle(int n) const {
  AugmentedState s;
  s.phys = PhysState(StateVector(members.col(n).head<kStateDim>()));
  s.params = members.col(n).tail(static_cast<Eigen::Index>(selection.size()));
  return s;
}

void Ensemble::set_particle(int n, const AugmentedState& s) {
  if (s.params.size() != static_cast<Eigen::Index>(selection.size()))
    throw ConfigError("parameter vector length does not match the selection");
  members.col(n).head<kStateDim>() = s.phys.x;
  members.col(n).tail(static_cast<Eigen::Index>(selection.size())) = s.params;
}

// ---------------------------------------------------------------------------

Moments ensemble_moments(const Matrix& members, CovarianceNorm norm) {
  const auto N = members.cols();
  if (N < 1) throw ConfigError("empty ensemble");
  Moments m;
  m.mean = members.rowwise().mean();
  const Matrix centered = members.colwise() - m.mean;
  const double denom = norm == CovarianceNorm::Population ? static_cast<double>(N)
                                                          : static_cast<double>(std::max<Eigen::Index>(N - 1, 1));
  m.cov = centered * centered.transpose() / denom;
  return m;
}

void NoiseSpec::validate(int dim) const {
  if (Sigma.rows() != dim || !symmetric_psd(Sigma))
    throw ConfigError("process noise covariance must be symmetric PSD of the augmented dimension");
  if (!(Gamma > 0.0) || !std::isfinite(Gamma))
    throw ConfigError("measurement variance must be positive");
  if (m0.size() != 0 && m0.size() != dim) throw ConfigError("initial mean has wrong dimension");
  if (C0.size() != 0 && (C0.rows() != dim || !symmetric_psd(C0)))
    throw ConfigError("initial covariance must be symmetric PSD");
}

MeasurementModel MeasurementModel::glucose(int augmented_dim, double V_g) {
  if (augmented_dim < kStateDim) throw ConfigError("augmented state too small for glucose");
  MeasurementModel m;
  m.H = Eigen::RowVectorXd::Zero(augmented_dim);
  m.H[kG] = 1.0 / (10.0 * V_g);
  return m;
}

Matrix regularized(const Matrix& C, double ridge_factor) {
  Matrix out = C;
  if (ridge_factor > 0.0 && C.rows() > 0) {
    const double lambda = ridge_factor * C.trace() / static_cast<double>(C.rows());
    out.diagonal().array() += lambda;
  }
  return out;
}

Matrix KalmanGain::posterior_cov(const MeasurementModel& model) const {
  const Vector CHt = C_reg * model.H.transpose();
  Matrix P = C_reg - CHt * CHt.transpose() / S;
  return 0.5 * (P + P.transpose());
}

KalmanGain kalman_gain(const Matrix& C_hat, const MeasurementModel& model, double Gamma,
                       double ridge_factor) {
  KalmanGain g;
  g.C_reg = regularized(C_hat, ridge_factor);
  const Vector CHt = g.C_reg * model.H.transpose();
  g.S = model.H.dot(CHt) + Gamma;
  if (!(g.S > 0.0) || !std::isfinite(g.S)) throw std::runtime_error("innovation variance not invertible");
  g.K = CHt / g.S;
  return g;
}

Vector observation_draws(int N, double y, double Gamma, bool perturbed, std::uint64_t seed) {
  Vector out = Vector::Constant(N, y);
  if (!perturbed) return out;
  const double sd = std::sqrt(Gamma);
  for (int n = 0; n < N; ++n) {
    Rng rng(derive_seed(seed, kStreamObservation, static_cast<std::uint64_t>(n)));
    std::normal_distribution<double> gauss(0.0, sd);
    out[n] += gauss(rng);
  }
  return out;
}

Matrix kalman_update(const Matrix& forecast, const Moments& moments, double y,
                     const MeasurementModel& model, double Gamma, const UpdateOptions& opts,
                     std::uint64_t seed) {
  const KalmanGain g = kalman_gain(moments.cov, model, Gamma, opts.ridge_factor);
  const Vector ys = observation_draws(static_cast<int>(forecast.cols()), y, Gamma,
                                      opts.perturbed_observations, seed);
  // (I - K H) v + K y_n  ==  v + K (y_n - H v)
  const Eigen::RowVectorXd innovation = ys.transpose() - model.H * forecast;
  return forecast + g.K * innovation;
}

Ensemble kalman_update(const Ensemble& forecast, const Moments& moments, double y,
                       const MeasurementModel& model, const NoiseSpec& noise,
                       const UpdateOptions& opts, std::uint64_t seed) {
  return Ensemble(forecast.selection,
                  kalman_update(forecast.members, moments, y, model, noise.Gamma, opts, seed));
}

// ---------------------------------------------------------------------------

GaussianSampler::GaussianSampler(const Matrix& cov) {
  if (cov.rows() != cov.cols()) throw ConfigError("covariance must be square");
  const auto d = cov.rows();
  factor_ = Matrix::Zero(d, d);
  if (d == 0 || cov.cwiseAbs().maxCoeff() == 0.0) return;
  zero_ = false;
  const bool diagonal = (cov - Matrix(cov.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  if (diagonal) {
    factor_.diagonal() = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
  factor_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vector GaussianSampler::sample(std::uint64_t seed) const {
  const auto d = factor_.rows();
  if (zero_) return Vector::Zero(d);
  Rng rng(seed);
  std::normal_distribution<double> gauss;
  Vector z(d);
  for (Eigen::Index i = 0; i < d; ++i) z[i] = gauss(rng);
  return factor_ * z;
}

PredictResult predict_members(const Matrix& members, const MemberPropagator& propagate, double t0,
                              double t1, const GaussianSampler& process_noise, std::uint64_t seed,
                              const PredictOptions& opts) {
  if (!(t1 >= t0)) throw IntegrationError("predict requires t1 >= t0");
  const int N = static_cast<int>(members.cols());
  PredictResult out;
  out.members = members;
  std::vector<char> ok(static_cast<std::size_t>(N), 1);
  for (int n = 0; n < N; ++n) {
    auto col = out.members.col(n);
    if (!propagate(col, t0, t1) || !col.allFinite()) {
      ok[static_cast<std::size_t>(n)] = 0;
      continue;
    }
    if (!process_noise.zero())
      col += process_noise.sample(derive_seed(seed, kStreamProcessNoise, static_cast<std::uint64_t>(n)));
  }

  if (std::find(ok.begin(), ok.end(), 0) != ok.end()) {
    // Failed members restart from N(mean, C) of the incoming ensemble and are propagated again.
    const Moments start = ensemble_moments(members, opts.norm);
    const GaussianSampler fresh(start.cov);
    for (int n = 0; n < N; ++n) {
      if (ok[static_cast<std::size_t>(n)]) continue;
      for (int a = 0; a < opts.redraw_attempts; ++a) {
        const std::uint64_t key = static_cast<std::uint64_t>(n) * 1000003ULL + static_cast<std::uint64_t>(a);
        Vector v = start.mean + fresh.sample(derive_seed(seed, kStreamReplacement, key));
        if (!propagate(v, t0, t1) || !v.allFinite()) continue;
        if (!process_noise.zero())
          v += process_noise.sample(derive_seed(seed, kStreamProcessNoise, static_cast<std::uint64_t>(n)));
        out.members.col(n) = v;
        ok[static_cast<std::size_t>(n)] = 2;
        break;
      }
    }
    const int good = static_cast<int>(std::count_if(ok.begin(), ok.end(), [](char c) { return c != 0; }));
    if (good < N) {
      if (good < 2) throw IntegrationError("ensemble collapse: fewer than two particles propagated");
      Matrix survivors(members.rows(), good);
      for (int n = 0, j = 0; n < N; ++n)
        if (ok[static_cast<std::size_t>(n)]) survivors.col(j++) = out.members.col(n);
      const Moments sm = ensemble_moments(survivors, opts.norm);
      const GaussianSampler redraw(sm.cov);
      for (int n = 0; n < N; ++n) {
        if (ok[static_cast<std::size_t>(n)]) continue;
        out.members.col(n) =
            sm.mean + redraw.sample(derive_seed(seed, kStreamReplacement, ~static_cast<std::uint64_t>(n)));
      }
    }
    out.replaced = static_cast<int>(std::count_if(ok.begin(), ok.end(), [](char c) { return c != 1; }));
  }
  out.moments = ensemble_moments(out.members, opts.norm);
  return out;
}

UltradianPropagator::UltradianPropagator(UltradianParams nominal, ParameterSelection selection,
                                         const ExogenousInputs& inputs, IntegratorConfig cfg)
    : nominal_(nominal), selection_(std::move(selection)), inputs_(&inputs), cfg_(cfg) {}

bool UltradianPropagator::operator()(Eigen::Ref<Vector> member, double t0, double t1) const {
  const auto np = static_cast<Eigen::Index>(selection_.size());
  const UltradianParams p = apply_selection(nominal_, selection_, member.tail(np));
  if (!p.valid()) return false;
  try {
    const PhysState v0(StateVector(member.head<kStateDim>()));
    member.head<kStateDim>() = integrate_between(v0, p, *inputs_, t0, t1, cfg_).x;
  } catch (const DomainError&) {
    return false;
  } catch (const IntegrationError&) {
    return false;
  }
  return true;
}

ForecastSummary summarize_forecast(double t, const Matrix& forecast, const MeasurementModel& model,
                                   CovarianceNorm norm) {
  const Eigen::RowVectorXd obs = model.H * forecast;
  ForecastSummary s;
  s.t = t;
  s.mean = obs.mean();
  const double denom = norm == CovarianceNorm::Population
                           ? static_cast<double>(obs.size())
                           : static_cast<double>(std::max<Eigen::Index>(obs.size() - 1, 1));
  s.std = std::sqrt((obs.array() - s.mean).square().sum() / denom);
  s.min = obs.minCoeff();
  s.max = obs.maxCoeff();
  return s;
}

// ---------------------------------------------------------------------------

Ensemble init_ensemble(const ParameterSelection& selection, const UltradianParams& nominal,
                       double first_glucose_mgdl, int N, const SpreadConfig& spread,
                       std::uint64_t seed) {
  if (N < 2) throw ConfigError("ensemble needs at least two particles");
  nominal.check();
  const int np = static_cast<int>(selection.size());
  Matrix m(kStateDim + np, N);
  const double G0 = glucose_mgdl_to_mg(first_glucose_mgdl, nominal.V_g);
  const double G_sd = glucose_mgdl_to_mg(spread.glucose_sd, nominal.V_g);
  for (int n = 0; n < N; ++n) {
    Rng srng(derive_seed(seed, kStreamInitState, static_cast<std::uint64_t>(n)));
    std::normal_distribution<double> gauss;
    auto positive = [&](double center, double sd) {
      if (sd <= 0.0) return center;
      for (;;) {
        const double v = center + sd * gauss(srng);
        if (v > 0.0) return v;
      }
    };
    const double Ip = positive(spread.plasma_insulin, spread.insulin_rel_sd * spread.plasma_insulin);
    const double Ii = positive(spread.interstitial_insulin,
                               spread.insulin_rel_sd * spread.interstitial_insulin);
    const double G = positive(G0, G_sd);
    m.col(n).head<kStateDim>() << Ip, Ii, G, Ip, Ip, Ip;

    Rng prng(derive_seed(seed, kStreamInitParams, static_cast<std::uint64_t>(n)));
    for (int i = 0; i < np; ++i) {
      const double nominal_value = nominal.get(selection[static_cast<std::size_t>(i)]);
      const double sd = spread.param_rel_sd * nominal_value;
      double v = nominal_value;
      if (sd > 0.0) {
        do {
          v = nominal_value + sd * gauss(prng);
        } while (!(v > 0.0));
      }
      m(param_row(i), n) = v;
    }
  }
  return Ensemble(selection, std::move(m));
}

NoiseSpec default_noise(const ParameterSelection& selection, const UltradianParams& nominal) {
  const int np = static_cast<int>(selection.size());
  const int dim = kStateDim + np;
  // Typical magnitudes: I_p, I_i, G (mg), h1..h3.
  const std::array<double, kStateDim> typical{100.0, 200.0, 12000.0, 100.0, 100.0, 100.0};
  Vector sd(dim);
  for (int i = 0; i < kStateDim; ++i) sd[i] = 0.01 * typical[static_cast<std::size_t>(i)];
  for (int i = 0; i < np; ++i) sd[param_row(i)] = 0.005 * nominal.get(selection[static_cast<std::size_t>(i)]);
  NoiseSpec noise;
  noise.Sigma = sd.array().square().matrix().asDiagonal();
  noise.Gamma = 25.0;
  return noise;
}

// ---------------------------------------------------------------------------

StepOutcome assimilate_step(const Matrix& members, const MemberPropagator& propagate, double t0,
                            double t1, double y, const GaussianSampler& process_noise,
                            const MeasurementModel& model, const UpdateFn& update,
                            std::uint64_t seed, const PredictOptions& opts,
                            const std::function<void(const ForecastSummary&)>& on_forecast) {
  PredictResult pred = predict_members(members, propagate, t0, t1, process_noise,
                                       derive_seed(seed, 10), opts);
  StepOutcome out;
  out.forecast = summarize_forecast(t1, pred.members, model, opts.norm);
  if (on_forecast) on_forecast(out.forecast);
  out.posterior = update(pred.members, pred.moments, y, derive_seed(seed, 11));
  out.forecast_members = std::move(pred.members);
  out.moments = std::move(pred.moments);
  out.replaced = pred.replaced;
  return out;
}

}  // namespace cenkf

#include "cenkf/cli.hpp"
#include "cenkf/constrained_filter.hpp"
#include "cenkf/errors.hpp"
#include "cenkf/export.hpp"
#include "cenkf/filter_core.hpp"
#include "cenkf/harness.hpp"
#include "cenkf/integrator.hpp"
#include "cenkf/patient_data.hpp"
#include "cenkf/qp.hpp"
#include "cenkf/ultradian.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <map>
#include <sstream>

namespace py = pybind11;
using namespace cenkf;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

UltradianParams params_from(const std::map<std::string, double>& overrides) {
  UltradianParams p;
  for (const auto& [name, value] : overrides) {
    const auto which = param_from_name(name);
    if (!which) throw ConfigError("unknown parameter '" + name + "'");
    p.set(*which, value);
  }
  p.check();
  return p;
}

std::map<std::string, double> params_to(const UltradianParams& p) {
  std::map<std::string, double> out;
  for (Param q : all_params()) out.emplace(std::string(param_name(q)), p.get(q));
  return out;
}

RowMatrix states_to(const std::vector<PhysState>& states) {
  RowMatrix m(static_cast<Eigen::Index>(states.size()), kStateDim);
  for (std::size_t i = 0; i < states.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = states[i].x.transpose();
  return m;
}

/// Columns of the forecast record table, as arrays.
py::dict result_to(const ExperimentResult& r) {
  const auto n = static_cast<Eigen::Index>(r.records.size());
  Eigen::VectorXd t(n), y(n), f(n), sd(n), viol(n);
  RowMatrix params(n, static_cast<Eigen::Index>(r.param_names.size()));
  std::vector<bool> initial;
  for (Eigen::Index i = 0; i < n; ++i) {
    const ForecastRecord& rec = r.records[static_cast<std::size_t>(i)];
    t[i] = rec.t;
    y[i] = rec.y;
    f[i] = rec.forecast;
    sd[i] = rec.spread_std;
    viol[i] = rec.posterior_max_violation;
    if (rec.param_means.size() == params.cols()) params.row(i) = rec.param_means.transpose();
    else params.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
    initial.push_back(rec.initial);
  }
  py::dict d;
  d["patient"] = r.patient;
  d["experiment"] = r.experiment;
  d["param_names"] = r.param_names;
  d["t"] = t;
  d["y"] = y;
  d["forecast"] = f;
  d["spread_std"] = sd;
  d["posterior_max_violation"] = viol;
  d["param_means"] = params;
  d["initial"] = initial;
  d["mse"] = r.mse;
  d["mse_sum"] = r.mse_sum;
  d["qualifying"] = r.qualifying;
  d["aborted"] = r.aborted;
  d["abort_reason"] = r.abort_reason;
  d["total_replaced"] = r.total_replaced;
  d["summary_json"] = summary_json(r);
  return d;
}

PatientTimeline timeline_from(const std::string& text, const std::string& id) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_timeline_json(text);
  return parse_timeline_csv(text, id);
}

}  // namespace

PYBIND11_MODULE(_cenkf, m) {
  m.doc() = "Constrained ensemble Kalman filtering for the ultradian glucose-insulin model.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ArithmeticError);
  py::register_exception<IntegrationError>(m, "IntegrationError", PyExc_RuntimeError);
  py::register_exception<QpError>(m, "QpError", PyExc_RuntimeError);

  m.def("nominal_params", [] { return params_to(UltradianParams{}); },
        "Nominal model parameters by name.");

  m.def(
      "simulate",
      [](const std::vector<double>& times, const Eigen::Matrix<double, 6, 1>& initial,
         const std::map<std::string, double>& params, const std::string& timeline) {
        ExogenousInputs u;
        if (!timeline.empty()) u = to_exogenous(timeline_from(timeline, "")).inputs;
        py::gil_scoped_release release;
        return states_to(solution_operator(times, PhysState(StateVector(initial)), params_from(params), u));
      },
      py::arg("times"), py::arg("initial"), py::arg("params") = std::map<std::string, double>{},
      py::arg("timeline") = std::string(),
      "States (I_p, I_i, G, h1, h2, h3) at each time. G is in mg. `timeline` is optional CSV or JSON "
      "text supplying nutrition and insulin inputs.");

  m.def(
      "validate_timeline",
      [](const std::string& text, const std::string& id) {
        const PatientTimeline tl = timeline_from(text, id);
        const FilterInputs fi = to_exogenous(tl);
        py::dict d;
        d["id"] = tl.id;
        d["events"] = tl.events.size();
        d["measurements"] = fi.measurements.size();
        d["warnings"] = fi.warnings;
        return d;
      },
      py::arg("text"), py::arg("id") = std::string(),
      "Parses timeline CSV or JSON text; raises SchemaError with the offending line.");

  m.def(
      "generate_twin",
      [](std::uint64_t seed, double days, double noise_sd, double feed_rate,
         const std::map<std::string, double>& truth) {
        TwinConfig cfg;
        cfg.duration_min = days * 1440.0;
        cfg.noise_sd = noise_sd;
        cfg.feed_rate = feed_rate;
        const TwinPatient twin = generate_twin_patient(params_from(truth), cfg, seed);
        py::dict d;
        d["timeline_csv"] = serialize_csv(twin.timeline);
        d["truth_t"] = twin.truth_t;
        d["truth"] = states_to(twin.truth);
        d["truth_params"] = params_to(twin.truth_params);
        return d;
      },
      py::arg("seed") = 1, py::arg("days") = 4.0, py::arg("noise_sd") = 5.0, py::arg("feed_rate") = 4800.0,
      py::arg("truth") = std::map<std::string, double>{},
      "Synthetic patient from the model: timeline CSV plus the true trajectory.");

  m.def("constraint_experiments", &constraint_experiment_names, "Names of the constraint experiments.");

  m.def(
      "run_experiment",
      [](const std::string& timeline, const std::string& constraint, int particles, std::uint64_t seed,
         const std::string& selection, bool perturbed_observations) {
        ExperimentConfig cfg;
        cfg.constraint = constraint;
        cfg.particles = particles;
        cfg.seed = seed;
        cfg.selection = ParameterSelection::parse(selection);
        cfg.update.perturbed_observations = perturbed_observations;
        const PatientTimeline tl = timeline_from(timeline, "patient");
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(tl, cfg);
        }
        return result_to(r);
      },
      py::arg("timeline"), py::arg("constraint") = std::string(kUnconstrained), py::arg("particles") = 50,
      py::arg("seed") = 1, py::arg("selection") = "PH", py::arg("perturbed_observations") = true,
      "Runs the forecast/assimilate loop over a timeline (CSV or JSON text).");

  m.def(
      "omega",
      [](double mse_constrained, double mse_unconstrained) {
        const Omega o = omega_ratio(mse_constrained, mse_unconstrained);
        return py::make_tuple(o.omega, std::string(omega_category_name(o.category)));
      },
      py::arg("mse_constrained"), py::arg("mse_unconstrained"), "Ratio and its category.");

  m.def(
      "mse_after_24h",
      [](const std::vector<double>& t, const std::vector<double>& y, const std::vector<double>& forecast,
         double admission) {
        if (t.size() != y.size() || t.size() != forecast.size())
          throw ConfigError("t, y and forecast must have equal length");
        std::vector<ForecastRecord> recs(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
          recs[i].t = t[i];
          recs[i].y = y[i];
          recs[i].forecast = forecast[i];
        }
        return mse_after_24h(recs, admission);
      },
      py::arg("t"), py::arg("y"), py::arg("forecast"), py::arg("admission") = 0.0,
      "Mean squared forecast error over records at least 24 h after admission.");

  m.def(
      "qp_solve",
      [](const Eigen::MatrixXd& Q, const Eigen::VectorXd& q, const std::optional<Eigen::MatrixXd>& A,
         const std::optional<Eigen::VectorXd>& a, const std::optional<Eigen::MatrixXd>& B,
         const std::optional<Eigen::VectorXd>& b) {
        LinearConstraints c = LinearConstraints::none(static_cast<int>(q.size()));
        if (A) c.A = *A;
        if (a) c.a = *a;
        if (B) c.B = *B;
        if (b) c.b = *b;
        return qp_solve(Q, q, c).x;
      },
      py::arg("Q"), py::arg("q"), py::arg("A") = py::none(), py::arg("a") = py::none(),
      py::arg("B") = py::none(), py::arg("b") = py::none(),
      "argmin 0.5 x'Qx + q'x subject to Ax = a, Bx <= b.");

  m.def(
      "kalman_update",
      [](const Eigen::MatrixXd& forecast, double y, const Eigen::RowVectorXd& H, double gamma, bool perturbed,
         std::uint64_t seed, const std::optional<Eigen::VectorXd>& lower,
         const std::optional<Eigen::VectorXd>& upper) {
        const int dim = static_cast<int>(forecast.rows());
        if (H.size() != dim) throw ConfigError("H must have one entry per state row");
        MeasurementModel model;
        model.H = H;
        UpdateOptions opts;
        opts.perturbed_observations = perturbed;
        const Moments mo = ensemble_moments(forecast);
        if (!lower && !upper) return kalman_update(forecast, mo, y, model, gamma, opts, seed);
        const double inf = std::numeric_limits<double>::infinity();
        const Eigen::VectorXd lo = lower.value_or(Eigen::VectorXd::Constant(dim, -inf));
        const Eigen::VectorXd hi = upper.value_or(Eigen::VectorXd::Constant(dim, inf));
        if (lo.size() != dim || hi.size() != dim) throw ConfigError("bounds must have one entry per state row");
        ConstraintBuilder builder(dim);
        for (int i = 0; i < dim; ++i) builder.bounds(i, lo[i], hi[i], "row " + std::to_string(i));
        return constrained_update(forecast, mo, y, model, gamma, builder.build(), opts, QpOptions{}, seed);
      },
      py::arg("forecast"), py::arg("y"), py::arg("H"), py::arg("gamma"), py::arg("perturbed") = true,
      py::arg("seed") = 0, py::arg("lower") = py::none(), py::arg("upper") = py::none(),
      "Ensemble analysis step on a (dim, N) forecast; with bounds, infeasible particles are projected.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in process; returns (exit code, stdout, stderr).");
}

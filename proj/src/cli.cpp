#include "cenkf/cli.hpp"

#include "cenkf/errors.hpp"
#include "cenkf/export.hpp"
#include "cenkf/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

namespace cenkf {

namespace fs = std::filesystem;

namespace {

struct GenerateOptions {
  std::string out = "twins";
  int size = 20;
  std::uint64_t seed = 1;
  double duration_days = 4.0;
  double feed_rate = 4800.0;
  double mean_interval = 90.0;
  double noise_sd = 5.0;
  double rel_spread = 0.3;
  std::string format = "csv";
};

struct RunOptions {
  std::vector<std::string> inputs;
  std::vector<std::string> patients;
  std::string experiments = "all";
  int particles = 50;
  std::uint64_t seed = 1;
  std::string out = "results";
  int jobs = 1;
  std::string selection = "PH";
  std::string mse_rule = "time";
  std::string covariance = "population";
  bool shared_y = false;
  bool no_iv_drip = false;
  bool no_iv_bolus = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool timeline_file(const fs::path& p) {
  const auto ext = p.extension();
  return fs::is_regular_file(p) && (ext == ".csv" || ext == ".json");
}

// Files are taken as given; directories contribute their *.csv/*.json
// entries (non-recursive), sorted by name.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& args, bool require_exists) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> entries;
      for (const auto& e : fs::directory_iterator(p))
        if (timeline_file(e.path())) entries.push_back(e.path());
      std::sort(entries.begin(), entries.end());
      out.insert(out.end(), entries.begin(), entries.end());
    } else if (fs::exists(p) || !require_exists) {
      out.push_back(p);
    } else {
      throw ConfigError("input not found: " + a);
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string truth_csv(const TwinPatient& twin) {
  std::string out = "t_min,I_p,I_i,G,h1,h2,h3,glucose_mgdl\n";
  for (std::size_t i = 0; i < twin.truth.size(); ++i) {
    const PhysState& s = twin.truth[i];
    out += format_double(twin.truth_t[i]);
    for (int k = 0; k < kStateDim; ++k) out += ',' + format_double(s.x[k]);
    out += ',' + format_double(glucose_mg_to_mgdl(s.G(), twin.truth_params.V_g)) + '\n';
  }
  return out;
}

std::string truth_params_json(const TwinPatient& twin) {
  nlohmann::ordered_json j;
  for (Param p : all_params()) j[std::string(param_name(p))] = twin.truth_params.get(p);
  return j.dump(2) + "\n";
}

int cmd_generate(const GenerateOptions& o, std::ostream& out) {
  if (o.format != "csv" && o.format != "json") throw ConfigError("format must be csv or json");
  CohortConfig cfg;
  cfg.size = o.size;
  cfg.rel_spread = o.rel_spread;
  cfg.twin.duration_min = o.duration_days * 1440.0;
  cfg.twin.feed_rate = o.feed_rate;
  cfg.twin.mean_interval = o.mean_interval;
  cfg.twin.noise_sd = o.noise_sd;
  const auto cohort = generate_twin_cohort(cfg, o.seed);
  const fs::path root(o.out);
  fs::create_directories(root / "truth");
  for (const auto& twin : cohort) {
    const std::string& id = twin.timeline.id;
    if (o.format == "csv")
      write_text_file(root / (id + ".csv"), serialize_csv(twin.timeline));
    else
      write_text_file(root / (id + ".json"), serialize_json(twin.timeline));
    write_text_file(root / "truth" / (id + "_truth.csv"), truth_csv(twin));
    write_text_file(root / "truth" / (id + "_params.json"), truth_params_json(twin));
  }
  out << "wrote " << cohort.size() << " twin timelines to " << root.string() << "\n";
  return 0;
}

int cmd_validate(const std::vector<std::string>& paths, std::ostream& out) {
  bool all_ok = true;
  for (const auto& a : paths) {
    std::vector<fs::path> files;
    try {
      files = expand_inputs({a}, true);
    } catch (const std::exception& e) {
      out << a << ": error: " << e.what() << "\n";
      all_ok = false;
      continue;
    }
    for (const auto& f : files) {
      try {
        const PatientTimeline tl = load_timeline(f);
        out << f.string() << ": ok (" << tl.events.size() << " events, "
            << tl.count(EventKind::GlucoseMeas) << " glucose measurements)\n";
      } catch (const std::exception& e) {
        out << f.string() << ": error: " << e.what() << "\n";
        all_ok = false;
      }
    }
  }
  return all_ok ? 0 : 1;
}

struct Task {
  std::size_t patient;
  std::string experiment;
};

int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
  // Everything is validated before the first experiment starts.
  if (o.jobs < 1) throw ConfigError("--jobs must be >= 1");
  std::vector<std::string> inputs = o.inputs;
  inputs.insert(inputs.end(), o.patients.begin(), o.patients.end());
  if (inputs.empty()) throw ConfigError("no input timelines given");
  const auto files = expand_inputs(inputs, true);

  std::vector<std::string> experiments;
  if (o.experiments == "all") {
    experiments.push_back(kUnconstrained);
    for (const auto& n : constraint_experiment_names()) experiments.push_back(n);
  } else {
    experiments = split_list(o.experiments);
    if (experiments.empty()) throw ConfigError("--experiments is empty");
    for (const auto& e : experiments)
      if (e != kUnconstrained) experiment_tiers(e);
  }

  ExperimentConfig base;
  base.selection = ParameterSelection::parse(o.selection);
  base.particles = o.particles;
  base.seed = o.seed;
  base.inclusion.include_iv_drip = !o.no_iv_drip;
  base.inclusion.include_iv_bolus = !o.no_iv_bolus;
  base.update.perturbed_observations = !o.shared_y;
  if (o.mse_rule == "count")
    base.mse.kind = MseRule::Kind::Count;
  else if (o.mse_rule != "time")
    throw ConfigError("--mse-rule must be time or count");
  if (o.covariance == "sample")
    base.norm = CovarianceNorm::Sample;
  else if (o.covariance != "population")
    throw ConfigError("--covariance must be population or sample");
  base.validate();

  std::vector<PatientTimeline> timelines;
  std::map<std::string, fs::path> seen;
  for (const auto& f : files) {
    PatientTimeline tl;
    try {
      tl = load_timeline(f);
    } catch (const std::exception& e) {
      throw SchemaError(f.string() + ": " + e.what());
    }
    if (tl.count(EventKind::GlucoseMeas) < 2)
      throw SchemaError(f.string() + ": needs at least two glucose measurements");
    if (tl.id.empty()) tl.id = f.stem().string();
    if (!seen.emplace(tl.id, f).second)
      throw ConfigError("duplicate patient id '" + tl.id + "' (" + f.string() + ")");
    timelines.push_back(std::move(tl));
  }

  std::vector<Task> tasks;
  for (std::size_t p = 0; p < timelines.size(); ++p)
    for (const auto& e : experiments) tasks.push_back({p, e});

  std::vector<ExperimentResult> results(tasks.size());
  std::vector<std::string> failures(tasks.size());
  const fs::path root(o.out);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      try {
        ExperimentConfig cfg = base;
        cfg.constraint = t.experiment;
        results[i] = run_experiment(timelines[t.patient], cfg);
        results[i].experiment = t.experiment;
        export_result(results[i], root / timelines[t.patient].id / t.experiment);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  const int nthreads = std::min<int>(o.jobs, std::max<int>(1, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < nthreads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  // Omega table over the constrained experiments present alongside a baseline.
  const bool have_baseline =
      std::find(experiments.begin(), experiments.end(), kUnconstrained) != experiments.end();
  std::vector<std::string> constrained;
  for (const auto& e : experiments)
    if (e != kUnconstrained) constrained.push_back(e);

  std::vector<PatientMatrix> matrix;
  const std::size_t ne = experiments.size();
  for (std::size_t p = 0; p < timelines.size(); ++p) {
    PatientMatrix row;
    row.patient = timelines[p].id;
    const ExperimentResult* baseline = nullptr;
    for (std::size_t e = 0; e < ne; ++e) {
      const std::size_t i = p * ne + e;
      if (tasks[i].experiment == kUnconstrained) {
        row.baseline = results[i];
        if (failures[i].empty()) baseline = &results[i];
      }
    }
    for (std::size_t e = 0; e < ne; ++e) {
      const std::size_t i = p * ne + e;
      if (tasks[i].experiment == kUnconstrained) continue;
      ExperimentResult r = results[i];
      r.experiment = tasks[i].experiment;
      std::optional<Omega> om;
      if (baseline && failures[i].empty()) om = omega_between(r, *baseline);
      row.constrained.push_back(std::move(r));
      row.omegas.push_back(om);
    }
    matrix.push_back(std::move(row));
  }
  if (have_baseline && !constrained.empty()) export_omega_report(build_omega_report(matrix), root);

  out << std::left << std::setw(16) << "patient" << std::setw(16) << "experiment" << std::right
      << std::setw(9) << "records" << std::setw(14) << "mse" << std::setw(10) << "omega"
      << "  status\n";
  int failed = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Task& t = tasks[i];
    const ExperimentResult& r = results[i];
    std::string omega = "";
    if (t.experiment != kUnconstrained && have_baseline) {
      const auto& row = matrix[t.patient];
      const auto it = std::find(constrained.begin(), constrained.end(), t.experiment);
      const auto& om = row.omegas[static_cast<std::size_t>(it - constrained.begin())];
      omega = om ? fixed(om->omega, 3) : "-";
    }
    std::string status = "ok";
    if (failures[i].empty() && r.aborted) {
      status = "aborted (partial): " + r.abort_reason;
      err << timelines[t.patient].id << "/" << t.experiment << ": aborted: " << r.abort_reason << "\n";
    }
    if (!failures[i].empty()) {
      status = "FAILED: " + failures[i];
      ++failed;
      err << timelines[t.patient].id << "/" << t.experiment << ": " << failures[i] << "\n";
    }
    out << std::left << std::setw(16) << timelines[t.patient].id << std::setw(16) << t.experiment
        << std::right << std::setw(9) << r.records.size() << std::setw(14) << fixed(r.mse, 3)
        << std::setw(10) << omega << "  " << status << "\n";
  }
  out << tasks.size() - static_cast<std::size_t>(failed) << "/" << tasks.size()
      << " experiments completed; results in " << root.string() << "\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Constrained ensemble Kalman filtering for glucose forecasting", "cenkf"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key=value configuration file ([generate]/[run] sections)");

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic twin-patient cohort");
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();
  g->add_option("--size", gen.size, "Number of patients")->capture_default_str()->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--days", gen.duration_days, "Record length in days")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--feed-rate", gen.feed_rate, "Tube feed per minute")->capture_default_str()->check(CLI::NonNegativeNumber);
  g->add_option("--mean-interval", gen.mean_interval, "Mean measurement spacing (min)")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--noise-sd", gen.noise_sd, "Measurement noise std (mg/dl)")->capture_default_str()->check(CLI::NonNegativeNumber);
  g->add_option("--spread", gen.rel_spread, "Relative spread of true parameters")->capture_default_str();
  g->add_option("--format", gen.format, "csv or json")->capture_default_str();

  RunOptions run;
  auto* r = app.add_subcommand("run", "Run experiments on patient timelines");
  r->add_option("inputs", run.inputs, "Timeline files or directories");
  r->add_option("--patients", run.patients, "Timeline files or directories")->delimiter(',');
  r->add_option("--experiments", run.experiments, "'all' or a comma list (unconstrained, gm, is, ...)")->capture_default_str();
  r->add_option("--particles", run.particles, "Ensemble size")->capture_default_str();
  r->add_option("--seed", run.seed, "Random seed")->capture_default_str();
  r->add_option("--out", run.out, "Output root")->capture_default_str();
  r->add_option("--jobs", run.jobs, "Concurrent experiments")->capture_default_str();
  r->add_option("--selection", run.selection, "PH, PRH or a comma list of parameters")->capture_default_str();
  r->add_option("--mse-rule", run.mse_rule, "time (24 h after admission) or count (after 24 records)")->capture_default_str();
  r->add_option("--covariance", run.covariance, "population (1/N) or sample (1/(N-1))")->capture_default_str();
  r->add_flag("--shared-y", run.shared_y, "Use the same observation for every particle");
  r->add_flag("--no-iv-drip", run.no_iv_drip, "Ignore iv_glucose_drip events");
  r->add_flag("--no-iv-bolus", run.no_iv_bolus, "Ignore iv_glucose_bolus events");

  std::vector<std::string> paths;
  auto* v = app.add_subcommand("validate", "Check timeline files against the schema");
  v->add_option("paths", paths, "Files or directories");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (v->parsed()) return cmd_validate(paths, out);
    return cmd_run(run, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cenkf

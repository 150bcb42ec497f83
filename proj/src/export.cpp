#include "cenkf/export.hpp"

#include "cenkf/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cenkf {

namespace {

double parse_field(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw SchemaError("forecasts.csv line " + std::to_string(line) + ": bad number '" +
                      std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto c = line.find(',', start);
    out.push_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
    if (c == std::string_view::npos) return out;
    start = c + 1;
  }
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

constexpr const char* kForecastHeader =
    "t,y,forecast,spread_std,spread_min,spread_max,forecast_violations,"
    "forecast_max_violation,posterior_max_violation,projected,replaced,initial\n";

}  // namespace

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string forecasts_csv(const ExperimentResult& r) {
  std::string out = kForecastHeader;
  for (const auto& rec : r.records) {
    out += format_double(rec.t) + ',' + format_double(rec.y) + ',' + format_double(rec.forecast) +
           ',' + format_double(rec.spread_std) + ',' + format_double(rec.spread_min) + ',' +
           format_double(rec.spread_max) + ',' + std::to_string(rec.forecast_violations) + ',' +
           format_double(rec.forecast_max_violation) + ',' +
           format_double(rec.posterior_max_violation) + ',' + std::to_string(rec.projected) + ',' +
           std::to_string(rec.replaced) + ',' + (rec.initial ? "1" : "0") + '\n';
  }
  return out;
}

std::string params_csv(const ExperimentResult& r) {
  std::string out = "t";
  for (const auto& n : r.param_names) out += ',' + n;
  out += '\n';
  for (const auto& rec : r.records) {
    out += format_double(rec.t);
    for (Eigen::Index i = 0; i < rec.param_means.size(); ++i) out += ',' + format_double(rec.param_means[i]);
    out += '\n';
  }
  return out;
}

std::string mse_csv(const ExperimentResult& r) {
  std::string out = "t,residual,qualifies,cumulative_sum,cumulative_mse\n";
  double sum = 0.0;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& rec = r.records[i];
    const bool q = record_qualifies(rec, i, r.admission, r.mse_rule);
    const double res = rec.y - rec.forecast;
    if (q) sum += res * res;
    const double curve = i < r.mse_curve.size() ? r.mse_curve[i] : std::nan("");
    out += format_double(rec.t) + ',' + format_double(res) + ',' + (q ? "1" : "0") + ',' +
           format_double(sum) + ',' + format_double(curve) + '\n';
  }
  return out;
}

Histogram forecast_histogram(const std::vector<ForecastRecord>& records, int bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.forecast_counts.assign(static_cast<std::size_t>(bins), 0);
  h.measurement_counts.assign(static_cast<std::size_t>(bins), 0);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& rec : records) {
    for (double v : {rec.forecast, rec.y}) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo <= hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi == lo) hi = lo + 1.0;
  const double w = (hi - lo) / bins;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(i == bins ? hi : lo + i * w);
  auto bin_of = [&](double v) {
    if (!std::isfinite(v)) return 0;
    const int b = static_cast<int>(std::floor((v - lo) / w));
    return std::clamp(b, 0, bins - 1);
  };
  for (const auto& rec : records) {
    ++h.forecast_counts[static_cast<std::size_t>(bin_of(rec.forecast))];
    ++h.measurement_counts[static_cast<std::size_t>(bin_of(rec.y))];
  }
  return h;
}

std::string hist_csv(const ExperimentResult& r, int bins) {
  const Histogram h = forecast_histogram(r.records, bins);
  std::string out = "bin_lo,bin_hi,forecast_count,measurement_count\n";
  for (std::size_t i = 0; i < h.forecast_counts.size(); ++i)
    out += format_double(h.edges[i]) + ',' + format_double(h.edges[i + 1]) + ',' +
           std::to_string(h.forecast_counts[i]) + ',' + std::to_string(h.measurement_counts[i]) + '\n';
  return out;
}

std::string summary_json(const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["patient"] = r.patient;
  j["experiment"] = r.experiment;
  j["particles"] = r.particles;
  j["seed"] = r.seed;
  j["parameters"] = r.param_names;
  j["records"] = r.records.size();
  j["admission"] = r.admission;
  j["mse_rule"] = r.mse_rule.kind == MseRule::Kind::Time ? "time" : "count";
  j["mse_cutoff_min"] = r.mse_rule.cutoff_min;
  j["mse_skip_count"] = r.mse_rule.skip_count;
  j["qualifying"] = r.qualifying;
  j["mse_after_24h"] = number_or_null(r.mse);
  j["mse_sum"] = r.mse_sum;
  j["aborted"] = r.aborted;
  j["abort_reason"] = r.abort_reason;
  j["replaced_particles"] = r.total_replaced;
  double post = 0.0;
  int fviol = 0;
  for (const auto& rec : r.records) {
    post = std::max(post, rec.posterior_max_violation);
    fviol += rec.forecast_violations;
  }
  j["max_posterior_violation"] = post;
  j["forecast_violations"] = fviol;
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void export_result(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "forecasts.csv", forecasts_csv(r));
  write_text_file(dir / "params.csv", params_csv(r));
  write_text_file(dir / "mse.csv", mse_csv(r));
  write_text_file(dir / "hist.csv", hist_csv(r));
  write_text_file(dir / "summary.json", summary_json(r));
}

std::string omega_csv(const OmegaReport& rep) {
  std::string out = "patient";
  for (const auto& e : rep.experiments) out += ',' + e;
  out += '\n';
  for (std::size_t p = 0; p < rep.patients.size(); ++p) {
    out += rep.patients[p];
    for (const auto& o : rep.omega[p]) out += ',' + (o ? format_double(o->omega) : std::string());
    out += '\n';
  }
  return out;
}

std::string omega_fractions_csv(const OmegaReport& rep) {
  std::string out = "category";
  for (const auto& e : rep.experiments) out += ',' + e;
  out += '\n';
  for (std::size_t c = 0; c < 4; ++c) {
    out += std::string(omega_category_name(static_cast<OmegaCategory>(c)));
    for (const auto& f : rep.fractions) out += ',' + format_double(f[c]);
    out += '\n';
  }
  return out;
}

void export_omega_report(const OmegaReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "omega.csv", omega_csv(rep));
  write_text_file(dir / "omega_fractions.csv", omega_fractions_csv(rep));
}

std::vector<ForecastRecord> parse_forecasts_csv(const std::string& text) {
  std::vector<ForecastRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line + '\n' != kForecastHeader) throw SchemaError("forecasts.csv: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 12) throw SchemaError("forecasts.csv line " + std::to_string(line_no) + ": expected 12 columns");
    ForecastRecord r;
    r.t = parse_field(f[0], line_no);
    r.y = parse_field(f[1], line_no);
    r.forecast = parse_field(f[2], line_no);
    r.spread_std = parse_field(f[3], line_no);
    r.spread_min = parse_field(f[4], line_no);
    r.spread_max = parse_field(f[5], line_no);
    r.forecast_violations = static_cast<int>(parse_field(f[6], line_no));
    r.forecast_max_violation = parse_field(f[7], line_no);
    r.posterior_max_violation = parse_field(f[8], line_no);
    r.projected = static_cast<int>(parse_field(f[9], line_no));
    r.replaced = static_cast<int>(parse_field(f[10], line_no));
    r.initial = f[11] == "1";
    out.push_back(std::move(r));
  }
  if (line_no == 0) throw SchemaError("forecasts.csv: empty file");
  return out;
}

std::vector<ForecastRecord> read_forecasts_csv(const std::filesystem::path& path) {
  return parse_forecasts_csv(read_text_file(path));
}

}  // namespace cenkf

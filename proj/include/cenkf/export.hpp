#pragma once

// Plot-ready CSV series and JSON summaries. Doubles are written in shortest
// round-trip form so that values read back compare bit-exactly.

#include "cenkf/harness.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cenkf {

std::string format_double(double v);

std::string forecasts_csv(const ExperimentResult& r);
std::string params_csv(const ExperimentResult& r);
std::string mse_csv(const ExperimentResult& r);
/// Histogram of forecasts and measurements over shared bins.
std::string hist_csv(const ExperimentResult& r, int bins = 20);
std::string summary_json(const ExperimentResult& r);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<int> forecast_counts;
  std::vector<int> measurement_counts;
};

/// Equal-width bins spanning all forecasts and measurements; the last bin is
/// closed. Every record lands in exactly one bin.
Histogram forecast_histogram(const std::vector<ForecastRecord>& records, int bins = 20);

/// Writes forecasts.csv, params.csv, mse.csv, hist.csv and summary.json into
/// `dir` (created if needed). Throws std::runtime_error on I/O failure.
void export_result(const ExperimentResult& r, const std::filesystem::path& dir);

std::string omega_csv(const OmegaReport& rep);
std::string omega_fractions_csv(const OmegaReport& rep);
void export_omega_report(const OmegaReport& rep, const std::filesystem::path& dir);

/// Reads a forecasts.csv back into records (t, y, forecast, initial flag and
/// the diagnostic columns).
std::vector<ForecastRecord> parse_forecasts_csv(const std::string& text);
std::vector<ForecastRecord> read_forecasts_csv(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cenkf

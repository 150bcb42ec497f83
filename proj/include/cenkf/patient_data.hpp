#pragma once

// Clinical event timelines.
//
// CSV schema (UTF-8, header required, no other columns):
//
//   t_min,kind,value
//
// JSON schema:
//
//   { "id": "...", "events": [ {"t_min": 0, "kind": "tube_feed", "value": 6000}, ... ] }
//
// t_min is minutes since admission. Units of `value` by kind:
//   glucose_meas       mg/dl
//   insulin_bolus      mU
//   insulin_drip_rate  mU/min, held until the next insulin_drip_rate row (0 stops)
//   tube_feed          carbohydrate amount (nutrition event)
//   iv_glucose_bolus   carbohydrate amount (nutrition event)
//   iv_glucose_drip    carbohydrate amount per minute, held until the next
//                      iv_glucose_drip row (0 stops)

#include "cenkf/ultradian.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cenkf {

enum class EventKind : std::uint8_t {
  GlucoseMeas,
  InsulinBolus,
  InsulinDripRate,
  TubeFeed,
  IvGlucoseDrip,
  IvGlucoseBolus,
};

std::string_view event_kind_name(EventKind k) noexcept;
std::optional<EventKind> event_kind_from_name(std::string_view name) noexcept;

struct PatientEvent {
  double t = 0.0;
  EventKind kind = EventKind::GlucoseMeas;
  double value = 0.0;

  bool operator==(const PatientEvent&) const = default;
};

struct PatientTimeline {
  std::string id;
  std::vector<PatientEvent> events;  // stable-sorted by t

  /// Throws SchemaError if unsorted, a value is negative/non-finite, t < 0, or
  /// there is no glucose measurement.
  void validate() const;
  std::size_t count(EventKind k) const;
  /// Time of the first event ("admission" reference).
  double admission_time() const;
};

/// Parses CSV text. Rows are stable-sorted by time. Errors name the line.
PatientTimeline parse_timeline_csv(std::string_view text, std::string id = "");
PatientTimeline parse_timeline_json(std::string_view text);
/// Dispatches on extension (.json, anything else is CSV). The id defaults to
/// the file stem for CSV.
PatientTimeline load_timeline(const std::filesystem::path& path);

std::string serialize_csv(const PatientTimeline& tl);
std::string serialize_json(const PatientTimeline& tl);

struct DataInclusion {
  bool include_iv_drip = true;
  bool include_iv_bolus = true;
};

/// Drops iv_glucose_drip / iv_glucose_bolus events as flagged; everything else
/// is kept in order.
PatientTimeline apply_inclusion(const PatientTimeline& tl, const DataInclusion& inc);

struct Measurement {
  double t = 0.0;
  double y = 0.0;  // mg/dl
};

struct FilterInputs {
  ExogenousInputs inputs;
  std::vector<Measurement> measurements;  // strictly increasing in t
  std::vector<std::string> warnings;
};

/// Nutrition kinds become decaying-appearance events (drips become infusions),
/// insulin kinds become deliveries, glucose rows the measurement sequence.
/// Duplicate measurement times keep the last row and add a warning.
FilterInputs to_exogenous(const PatientTimeline& tl);

}  // namespace cenkf

#include "cenkf/patient_data.hpp"

#include "cenkf/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cenkf {

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 6> kKinds{{
    {EventKind::GlucoseMeas, "glucose_meas"},
    {EventKind::InsulinBolus, "insulin_bolus"},
    {EventKind::InsulinDripRate, "insulin_drip_rate"},
    {EventKind::TubeFeed, "tube_feed"},
    {EventKind::IvGlucoseDrip, "iv_glucose_drip"},
    {EventKind::IvGlucoseBolus, "iv_glucose_bolus"},
}};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(std::string_view s, const std::string& where) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw SchemaError(where + ": '" + std::string(s) + "' is not a number");
  return v;
}

void check_event(const PatientEvent& e, const std::string& where) {
  if (!std::isfinite(e.t) || e.t < 0.0) throw SchemaError(where + ": t_min must be finite and >= 0");
  if (!std::isfinite(e.value) || e.value < 0.0)
    throw SchemaError(where + ": value must be finite and >= 0");
}

EventKind require_kind(std::string_view name, const std::string& where) {
  auto k = event_kind_from_name(name);
  if (!k) throw SchemaError(where + ": unknown kind '" + std::string(name) + "'");
  return *k;
}

void finish(PatientTimeline& tl) {
  std::stable_sort(tl.events.begin(), tl.events.end(),
                   [](const PatientEvent& a, const PatientEvent& b) { return a.t < b.t; });
  tl.validate();
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

// Piecewise-constant rate rows of one kind -> [start, end) segments.
template <typename Emit>
void rate_segments(const std::vector<PatientEvent>& events, EventKind kind, Emit emit) {
  const PatientEvent* open = nullptr;
  for (const auto& e : events) {
    if (e.kind != kind) continue;
    if (open && open->value > 0.0 && e.t > open->t) emit(open->t, e.t, open->value);
    open = &e;
  }
  if (open && open->value > 0.0)
    emit(open->t, std::numeric_limits<double>::infinity(), open->value);
}

}  // namespace

std::string_view event_kind_name(EventKind k) noexcept {
  for (const auto& [kind, name] : kKinds)
    if (kind == k) return name;
  return "?";
}

std::optional<EventKind> event_kind_from_name(std::string_view name) noexcept {
  for (const auto& [kind, n] : kKinds)
    if (n == name) return kind;
  return std::nullopt;
}

void PatientTimeline::validate() const {
  bool has_glucose = false;
  for (std::size_t i = 0; i < events.size(); ++i) {
    check_event(events[i], "event " + std::to_string(i));
    if (i > 0 && events[i].t < events[i - 1].t) throw SchemaError("timeline events are not sorted");
    has_glucose |= events[i].kind == EventKind::GlucoseMeas;
  }
  if (!has_glucose) throw SchemaError("timeline has no glucose_meas rows");
}

std::size_t PatientTimeline::count(EventKind k) const {
  return static_cast<std::size_t>(
      std::count_if(events.begin(), events.end(), [k](const PatientEvent& e) { return e.kind == k; }));
}

double PatientTimeline::admission_time() const {
  if (events.empty()) throw SchemaError("empty timeline");
  return events.front().t;
}

PatientTimeline parse_timeline_csv(std::string_view text, std::string id) {
  PatientTimeline tl;
  tl.id = std::move(id);
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
    text.remove_prefix(3);

  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    const auto fields = split_fields(line);
    if (!header_seen) {
      if (fields.size() != 3 || fields[0] != "t_min" || fields[1] != "kind" || fields[2] != "value")
        throw SchemaError(where + ": header must be exactly 't_min,kind,value'");
      header_seen = true;
      continue;
    }
    if (fields.size() != 3)
      throw SchemaError(where + ": expected 3 columns, found " + std::to_string(fields.size()));
    PatientEvent e;
    e.t = parse_number(fields[0], where);
    e.kind = require_kind(fields[1], where);
    e.value = parse_number(fields[2], where);
    check_event(e, where);
    tl.events.push_back(e);
  }
  if (!header_seen) throw SchemaError("empty file: missing header 't_min,kind,value'");
  if (tl.events.empty()) throw SchemaError("file has a header but no events");
  finish(tl);
  return tl;
}

PatientTimeline parse_timeline_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("timeline JSON must be an object");
  for (const auto& [key, _] : doc.items())
    if (key != "id" && key != "events") throw SchemaError("unknown top-level key '" + key + "'");
  if (!doc.contains("id") || !doc["id"].is_string()) throw SchemaError("missing string field 'id'");
  if (!doc.contains("events") || !doc["events"].is_array())
    throw SchemaError("missing array field 'events'");

  PatientTimeline tl;
  tl.id = doc["id"].get<std::string>();
  std::size_t i = 0;
  for (const auto& ev : doc["events"]) {
    const std::string where = "event " + std::to_string(i++);
    if (!ev.is_object()) throw SchemaError(where + ": must be an object");
    for (const auto& [key, _] : ev.items())
      if (key != "t_min" && key != "kind" && key != "value")
        throw SchemaError(where + ": unknown field '" + key + "'");
    if (!ev.contains("t_min") || !ev["t_min"].is_number() || !ev.contains("value") ||
        !ev["value"].is_number() || !ev.contains("kind") || !ev["kind"].is_string())
      throw SchemaError(where + ": requires numeric t_min, string kind, numeric value");
    PatientEvent e;
    e.t = ev["t_min"].get<double>();
    e.kind = require_kind(ev["kind"].get<std::string>(), where);
    e.value = ev["value"].get<double>();
    check_event(e, where);
    tl.events.push_back(e);
  }
  if (tl.events.empty()) throw SchemaError("timeline has no events");
  finish(tl);
  return tl;
}

PatientTimeline load_timeline(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (path.extension() == ".json") return parse_timeline_json(text);
  return parse_timeline_csv(text, path.stem().string());
}

std::string serialize_csv(const PatientTimeline& tl) {
  std::string out = "t_min,kind,value\n";
  for (const auto& e : tl.events) {
    out += format_double(e.t);
    out += ',';
    out += event_kind_name(e.kind);
    out += ',';
    out += format_double(e.value);
    out += '\n';
  }
  return out;
}

std::string serialize_json(const PatientTimeline& tl) {
  nlohmann::json doc;
  doc["id"] = tl.id;
  doc["events"] = nlohmann::json::array();
  for (const auto& e : tl.events)
    doc["events"].push_back({{"t_min", e.t}, {"kind", std::string(event_kind_name(e.kind))}, {"value", e.value}});
  return doc.dump(2) + "\n";
}

PatientTimeline apply_inclusion(const PatientTimeline& tl, const DataInclusion& inc) {
  PatientTimeline out;
  out.id = tl.id;
  out.events.reserve(tl.events.size());
  for (const auto& e : tl.events) {
    if (e.kind == EventKind::IvGlucoseDrip && !inc.include_iv_drip) continue;
    if (e.kind == EventKind::IvGlucoseBolus && !inc.include_iv_bolus) continue;
    out.events.push_back(e);
  }
  return out;
}

FilterInputs to_exogenous(const PatientTimeline& tl) {
  FilterInputs out;
  for (const auto& e : tl.events) {
    switch (e.kind) {
      case EventKind::GlucoseMeas:
        if (!out.measurements.empty() && out.measurements.back().t == e.t) {
          out.warnings.push_back("duplicate glucose measurement at t=" + format_double(e.t) +
                                 " min; keeping the last row");
          out.measurements.back().y = e.value;
        } else {
          out.measurements.push_back({e.t, e.value});
        }
        break;
      case EventKind::TubeFeed:
      case EventKind::IvGlucoseBolus:
        out.inputs.nutrition.push_back({e.t, e.value});
        break;
      case EventKind::InsulinBolus:
        out.inputs.insulin.push_back(InsulinDelivery::bolus(e.t, e.value));
        break;
      case EventKind::InsulinDripRate:
      case EventKind::IvGlucoseDrip:
        break;
    }
  }
  rate_segments(tl.events, EventKind::IvGlucoseDrip, [&](double s, double e, double rate) {
    out.inputs.infusions.push_back({s, e, rate});
  });
  rate_segments(tl.events, EventKind::InsulinDripRate, [&](double s, double e, double rate) {
    out.inputs.insulin.push_back(InsulinDelivery::drip(s, e, rate));
  });
  out.inputs.sort();
  return out;
}

}  // namespace cenkf

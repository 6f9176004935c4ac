#pragma once

#include "error.hpp"
#include "matrix.hpp"

#include <absl/time/civil_time.h>
#include <absl/time/time.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace emfusion {

// ---------------------------------------------------------------------------
// Channel metadata and physical conversion
// ---------------------------------------------------------------------------

struct ChannelSpec
{
  double frequency_hz{ 0.0 };
  double antenna_factor_db_per_m{ 0.0 };
  std::vector<std::string> labels;

  void validate() const
  {
    if (!(frequency_hz > 0.0) || !std::isfinite(frequency_hz)) {
      throw InvalidInput("channel frequency must be positive and finite");
    }
    if (!std::isfinite(antenna_factor_db_per_m)) {
      throw InvalidInput("antenna factor must be finite");
    }
    if (labels.empty()) {
      throw InvalidInput("channel needs at least one band label");
    }
  }

  bool has_label(std::string_view tag) const
  {
    for (const auto& l : labels) {
      if (l == tag) {
        return true;
      }
    }
    return false;
  }
};

struct PhysicalConstants
{
  double wave_impedance_ohm{ 376.73 };
  double antenna_gain_calibration{ 9.73 };
  double speed_of_light_m_s{ 299792458.0 };

  void validate() const
  {
    if (!(wave_impedance_ohm > 0.0) || !(antenna_gain_calibration > 0.0) ||
        !(speed_of_light_m_s > 0.0)) {
      throw InvalidInput("physical constants must be strictly positive");
    }
  }
};

//! Readings below this level are clamped before conversion.
inline constexpr double kDbmFloor = -150.0;

//! Received power (dBm) to electric-field strength (V/m) through the
//! antenna's effective aperture.
inline double
dbm_to_field(double p_dbm,
             const ChannelSpec& spec,
             const PhysicalConstants& consts = {})
{
  spec.validate();
  consts.validate();
  if (!std::isfinite(p_dbm)) {
    throw InvalidInput("received power must be finite");
  }
  p_dbm = std::max(p_dbm, kDbmFloor);
  const double wavelength = consts.speed_of_light_m_s / spec.frequency_hz;
  const double gain_root = consts.antenna_gain_calibration /
                           (wavelength * std::pow(10.0, spec.antenna_factor_db_per_m / 20.0));
  const double gain = gain_root * gain_root;
  const double aperture = gain * wavelength * wavelength / (4.0 * std::numbers::pi);
  const double power_w = std::pow(10.0, (p_dbm - 30.0) / 10.0);
  return std::sqrt(power_w * consts.wave_impedance_ohm / aperture);
}

//! Root-sum-square of per-frequency fields belonging to one band.
inline double
aggregate_band(std::span<const double> fields)
{
  if (fields.empty()) {
    throw InvalidInput("aggregate_band: empty field set");
  }
  double sum = 0.0;
  for (double e : fields) {
    if (!(e >= 0.0)) {
      throw InvalidInput("aggregate_band: fields must be non-negative");
    }
    sum += e * e;
  }
  return std::sqrt(sum);
}

// ---------------------------------------------------------------------------
// Series container
// ---------------------------------------------------------------------------

//! Timestamped multichannel EMF series; mask is 1 where a value was observed.
struct SeriesFrame
{
  std::vector<std::int64_t> timestamps; // UTC seconds
  Matrix values;                        // steps x channels, V/m
  Matrix mask;                          // same shape, 0/1
  std::vector<ChannelSpec> channel_specs;

  std::size_t steps() const { return values.rows(); }
  std::size_t channels() const { return values.cols(); }

  void validate() const
  {
    if (values.rows() != timestamps.size() || mask.rows() != values.rows() ||
        mask.cols() != values.cols()) {
      throw InvalidInput("series frame shapes disagree");
    }
    if (!channel_specs.empty() && channel_specs.size() != values.cols()) {
      throw InvalidInput("one channel spec per column required");
    }
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
      if (timestamps[i] <= timestamps[i - 1]) {
        throw InvalidInput("timestamps must be strictly increasing");
      }
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      double m = mask.data()[i];
      if (m != 0.0 && m != 1.0) {
        throw InvalidInput("mask entries must be 0 or 1");
      }
      if (m == 1.0 && !(values.data()[i] >= 0.0)) {
        throw InvalidInput("observed field values must be non-negative");
      }
    }
  }

  SeriesFrame slice(std::size_t first, std::size_t count) const
  {
    SeriesFrame out;
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(first),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(first + count));
    out.values = values.slice_rows(first, count);
    out.mask = mask.slice_rows(first, count);
    out.channel_specs = channel_specs;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Calendar conditions
// ---------------------------------------------------------------------------

enum class ConditionSchema
{
  none,
  working_day,
  working_hour,
  season,
  multi
};

inline ConditionSchema
parse_condition_schema(std::string_view tag)
{
  if (tag == "none") return ConditionSchema::none;
  if (tag == "working_day" || tag == "workingday") return ConditionSchema::working_day;
  if (tag == "working_hour" || tag == "workinghour") return ConditionSchema::working_hour;
  if (tag == "season") return ConditionSchema::season;
  if (tag == "multi") return ConditionSchema::multi;
  throw ConfigError("unknown condition schema '" + std::string(tag) + "'");
}

inline std::string
to_string(ConditionSchema s)
{
  switch (s) {
    case ConditionSchema::none: return "none";
    case ConditionSchema::working_day: return "working_day";
    case ConditionSchema::working_hour: return "working_hour";
    case ConditionSchema::season: return "season";
    case ConditionSchema::multi: return "multi";
  }
  return "none";
}

//! Number of raw feature columns a schema produces.
inline std::size_t
condition_width(ConditionSchema s)
{
  switch (s) {
    case ConditionSchema::none: return 0;
    case ConditionSchema::multi: return 2;
    default: return 1;
  }
}

class HolidayCalendar
{
public:
  HolidayCalendar() = default;
  explicit HolidayCalendar(std::set<absl::CivilDay> days)
    : days_(std::move(days))
  {}

  void add(absl::CivilDay d) { days_.insert(d); }
  bool contains(absl::CivilDay d) const { return days_.count(d) > 0; }
  std::size_t size() const { return days_.size(); }

private:
  std::set<absl::CivilDay> days_;
};

//! Calendar flags of one local civil time.
struct CalendarFlags
{
  int working_day{ 0 };
  int working_hour{ 0 };
  int season{ 0 };
};

//! 1 spring, 2 summer, 3 autumn, 4 winter on fixed equinox/solstice dates.
inline int
season_of(absl::CivilDay day)
{
  const int md = day.month() * 100 + day.day();
  if (md >= 321 && md <= 620) return 1;
  if (md >= 621 && md <= 922) return 2;
  if (md >= 923 && md <= 1220) return 3;
  return 4;
}

inline CalendarFlags
calendar_flags(absl::CivilSecond local, const HolidayCalendar& holidays)
{
  CalendarFlags f;
  const absl::CivilDay day(local);
  const auto wd = absl::GetWeekday(day);
  const bool weekday = wd != absl::Weekday::saturday && wd != absl::Weekday::sunday;
  f.working_day = (weekday && !holidays.contains(day)) ? 1 : 0;
  f.working_hour = (local.hour() >= 9 && local.hour() < 17) ? 1 : 0;
  f.season = season_of(day);
  return f;
}

//! Per-timestep exogenous features; columns depend on the schema:
//! working_day -> [wd], working_hour -> [wh], season -> [season],
//! multi -> [season, wd], none -> no columns.
struct ConditionTrack
{
  ConditionSchema schema{ ConditionSchema::none };
  Matrix features;

  std::size_t steps() const { return features.rows(); }

  ConditionTrack slice(std::size_t first, std::size_t count) const
  {
    return { schema, features.slice_rows(first, count) };
  }
};

inline absl::TimeZone
load_time_zone(const std::string& name)
{
  absl::TimeZone tz;
  if (!absl::LoadTimeZone(name, &tz)) {
    throw ConfigError("unknown time zone '" + name + "'");
  }
  return tz;
}

inline ConditionTrack
build_conditions(std::span<const std::int64_t> timestamps,
                 ConditionSchema schema,
                 const std::optional<HolidayCalendar>& holidays,
                 const std::string& time_zone = "Europe/Rome")
{
  const bool needs_calendar =
    schema == ConditionSchema::working_day || schema == ConditionSchema::multi;
  if (needs_calendar && !holidays) {
    throw ConfigError("condition schema '" + to_string(schema) +
                      "' requires a holiday calendar");
  }
  const absl::TimeZone tz = load_time_zone(time_zone);
  const HolidayCalendar empty;
  const HolidayCalendar& cal = holidays ? *holidays : empty;

  ConditionTrack track{ schema, Matrix(timestamps.size(), condition_width(schema)) };
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    const auto local = absl::ToCivilSecond(absl::FromUnixSeconds(timestamps[i]), tz);
    const CalendarFlags f = calendar_flags(local, cal);
    switch (schema) {
      case ConditionSchema::none: break;
      case ConditionSchema::working_day: track.features(i, 0) = f.working_day; break;
      case ConditionSchema::working_hour: track.features(i, 0) = f.working_hour; break;
      case ConditionSchema::season: track.features(i, 0) = f.season; break;
      case ConditionSchema::multi:
        track.features(i, 0) = f.season;
        track.features(i, 1) = f.working_day;
        break;
    }
  }
  return track;
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

struct WindowPair
{
  std::size_t start{ 0 }; // first source row of the past block
  Matrix past;
  Matrix future;
  Matrix past_mask;
  Matrix future_mask;
  ConditionTrack conditions; // covers H + F rows

  std::size_t history() const { return past.rows(); }
  std::size_t horizon() const { return future.rows(); }

  Matrix full_values() const { return vstack(past, future); }
  Matrix full_mask() const { return vstack(past_mask, future_mask); }
  bool fully_observed() const
  {
    auto one = [](double m) { return m == 1.0; };
    return std::all_of(past_mask.data().begin(), past_mask.data().end(), one) &&
           std::all_of(future_mask.data().begin(), future_mask.data().end(), one);
  }
};

inline std::size_t
window_count(std::size_t length, std::size_t history, std::size_t horizon, std::size_t stride)
{
  if (history == 0 || horizon == 0 || stride == 0) {
    throw InvalidInput("window sizes and stride must be positive");
  }
  if (length < history + horizon) {
    throw InvalidInput("frame of " + std::to_string(length) +
                       " rows is shorter than one window (" +
                       std::to_string(history + horizon) + ")");
  }
  return (length - history - horizon) / stride + 1;
}

inline WindowPair
make_window(const SeriesFrame& frame,
            const ConditionTrack& conditions,
            std::size_t start,
            std::size_t history,
            std::size_t horizon)
{
  WindowPair w;
  w.start = start;
  w.past = frame.values.slice_rows(start, history);
  w.future = frame.values.slice_rows(start + history, horizon);
  w.past_mask = frame.mask.slice_rows(start, history);
  w.future_mask = frame.mask.slice_rows(start + history, horizon);
  w.conditions = conditions.slice(start, history + horizon);
  return w;
}

inline std::vector<WindowPair>
make_windows(const SeriesFrame& frame,
             const ConditionTrack& conditions,
             std::size_t history,
             std::size_t horizon,
             std::size_t stride)
{
  if (conditions.steps() != frame.steps()) {
    throw InvalidInput("condition track length differs from frame length");
  }
  const std::size_t n = window_count(frame.steps(), history, horizon, stride);
  std::vector<WindowPair> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(make_window(frame, conditions, k * stride, history, horizon));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

//! Per-channel min-max record: x_norm = (x - offset) / scale.
struct ScaleRecord
{
  std::vector<double> offset;
  std::vector<double> scale;
};

//! Fits min-max statistics on observed entries of rows [0, train_rows).
inline ScaleRecord
fit_scale(const SeriesFrame& frame, std::size_t train_rows)
{
  train_rows = std::min(train_rows, frame.steps());
  ScaleRecord rec;
  for (std::size_t c = 0; c < frame.channels(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t r = 0; r < train_rows; ++r) {
      if (frame.mask(r, c) == 1.0) {
        lo = std::min(lo, frame.values(r, c));
        hi = std::max(hi, frame.values(r, c));
      }
    }
    if (!std::isfinite(lo)) {
      throw InvalidInput("channel " + std::to_string(c) +
                         " has no observed value in the training split");
    }
    rec.offset.push_back(lo);
    rec.scale.push_back(hi > lo ? hi - lo : 1.0);
  }
  return rec;
}

inline Matrix
normalize(const Matrix& values, const Matrix& mask, const ScaleRecord& rec)
{
  Matrix out(values.rows(), values.cols());
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      if (mask(r, c) == 1.0) {
        out(r, c) = (values(r, c) - rec.offset[c]) / rec.scale[c];
      }
    }
  }
  return out;
}

inline Matrix
denormalize(const Matrix& values, const ScaleRecord& rec)
{
  Matrix out(values.rows(), values.cols());
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      out(r, c) = values(r, c) * rec.scale[c] + rec.offset[c];
    }
  }
  return out;
}

//! Normalizes a frame with statistics fitted on its first `train_rows` rows.
inline std::pair<SeriesFrame, ScaleRecord>
normalize(const SeriesFrame& frame, std::size_t train_rows)
{
  ScaleRecord rec = fit_scale(frame, train_rows);
  SeriesFrame out = frame;
  out.values = normalize(frame.values, frame.mask, rec);
  return { std::move(out), std::move(rec) };
}

// ---------------------------------------------------------------------------
// Band grouping and correlation
// ---------------------------------------------------------------------------

struct BandGroup
{
  std::string name;
  std::vector<std::size_t> columns;
};

//! One group per channel.
inline std::vector<BandGroup>
per_channel_groups(const SeriesFrame& frame)
{
  std::vector<BandGroup> g;
  for (std::size_t c = 0; c < frame.channels(); ++c) {
    std::string name = c < frame.channel_specs.size()
                         ? std::to_string(frame.channel_specs[c].frequency_hz / 1e6)
                         : std::to_string(c);
    g.push_back({ name, { c } });
  }
  return g;
}

//! One group per tag, holding every channel labelled with it.
inline std::vector<BandGroup>
groups_by_label(const std::vector<ChannelSpec>& specs, const std::vector<std::string>& tags)
{
  std::vector<BandGroup> g;
  for (const auto& tag : tags) {
    BandGroup grp{ tag, {} };
    for (std::size_t c = 0; c < specs.size(); ++c) {
      if (specs[c].has_label(tag)) {
        grp.columns.push_back(c);
      }
    }
    if (grp.columns.empty()) {
      throw InvalidInput("no channel carries label '" + tag + "'");
    }
    g.push_back(std::move(grp));
  }
  return g;
}

//! Band-aggregated series; a row is observed only if every member is.
inline SeriesFrame
aggregate_groups(const SeriesFrame& frame, const std::vector<BandGroup>& groups)
{
  SeriesFrame out;
  out.timestamps = frame.timestamps;
  out.values = Matrix(frame.steps(), groups.size());
  out.mask = Matrix(frame.steps(), groups.size());
  std::vector<double> buf;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t r = 0; r < frame.steps(); ++r) {
      buf.clear();
      bool complete = true;
      for (std::size_t c : groups[g].columns) {
        if (frame.mask(r, c) != 1.0) {
          complete = false;
          break;
        }
        buf.push_back(frame.values(r, c));
      }
      if (complete) {
        out.values(r, g) = aggregate_band(buf);
        out.mask(r, g) = 1.0;
      }
    }
  }
  return out;
}

//! Pearson correlation between band groups over rows where both are
//! observed. Entries involving a zero-variance series are NaN.
inline Matrix
correlation_matrix(const SeriesFrame& frame, const std::vector<BandGroup>& groups)
{
  const SeriesFrame agg = aggregate_groups(frame, groups);
  const std::size_t k = groups.size();
  Matrix corr(k, k, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      std::size_t n = 0;
      double ma = 0.0, mb = 0.0;
      for (std::size_t r = 0; r < agg.steps(); ++r) {
        if (agg.mask(r, a) == 1.0 && agg.mask(r, b) == 1.0) {
          ++n;
          ma += agg.values(r, a);
          mb += agg.values(r, b);
        }
      }
      if (n < 2) {
        throw InvalidInput("correlation needs at least two joint observations");
      }
      ma /= static_cast<double>(n);
      mb /= static_cast<double>(n);
      double sab = 0.0, saa = 0.0, sbb = 0.0;
      for (std::size_t r = 0; r < agg.steps(); ++r) {
        if (agg.mask(r, a) == 1.0 && agg.mask(r, b) == 1.0) {
          const double da = agg.values(r, a) - ma;
          const double db = agg.values(r, b) - mb;
          sab += da * db;
          saa += da * da;
          sbb += db * db;
        }
      }
      if (saa > 0.0 && sbb > 0.0) {
        double rho = a == b ? 1.0 : sab / std::sqrt(saa * sbb);
        rho = std::clamp(rho, -1.0, 1.0);
        corr(a, b) = rho;
        corr(b, a) = rho;
      }
    }
  }
  return corr;
}

} // namespace emfusion

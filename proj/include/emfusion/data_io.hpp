#pragma once

#include "emf_data.hpp"
#include "error.hpp"

#include <absl/time/civil_time.h>
#include <absl/time/time.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace emfusion::io {

inline std::string
trim(std::string_view s)
{
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string>
split_csv_line(std::string_view line)
{
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    out.push_back(trim(line.substr(pos, next == std::string_view::npos ? next : next - pos)));
    if (next == std::string_view::npos) {
      break;
    }
    pos = next + 1;
  }
  return out;
}

inline double
parse_double(const std::string& s, const std::string& context)
{
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw InvalidInput("cannot parse number '" + s + "' in " + context);
  }
  return v;
}

//! Shortest round-trip representation of a double.
inline std::string
format_double(double v)
{
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

//! ISO-8601 timestamp to UTC seconds. Strings without an offset are UTC.
inline std::int64_t
parse_timestamp(const std::string& text)
{
  static const char* const formats[] = { "%Y-%m-%d%ET%H:%M:%E*S%Ez",
                                         "%Y-%m-%d%ET%H:%M:%E*S",
                                         "%Y-%m-%d %H:%M:%E*S%Ez",
                                         "%Y-%m-%d %H:%M:%E*S",
                                         "%Y-%m-%d%ET%H:%M",
                                         "%Y-%m-%d" };
  for (const char* fmt : formats) {
    absl::Time t;
    std::string err;
    if (absl::ParseTime(fmt, text, absl::UTCTimeZone(), &t, &err)) {
      return absl::ToUnixSeconds(t);
    }
  }
  throw InvalidInput("unparseable timestamp '" + text + "'");
}

inline std::string
format_timestamp(std::int64_t unix_seconds)
{
  return absl::FormatTime(
    "%Y-%m-%dT%H:%M:%SZ", absl::FromUnixSeconds(unix_seconds), absl::UTCTimeZone());
}

inline std::vector<std::string>
read_lines(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open '" + path.string() + "'");
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (!t.empty() && t.front() != '#') {
      lines.push_back(std::move(t));
    }
  }
  return lines;
}

//! Writes through a temporary file and renames it into place.
template<class Writer>
void
write_atomically(const std::filesystem::path& path, Writer&& writer, bool binary = false)
{
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) {
      throw ConfigError("cannot write '" + tmp.string() + "'");
    }
    writer(out);
    out.flush();
    if (!out) {
      throw ConfigError("write failed for '" + tmp.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Channel specs and holidays
// ---------------------------------------------------------------------------

//! One record per line: frequency MHz, antenna factor dB/m, labels...
inline std::vector<ChannelSpec>
read_channel_specs(const std::filesystem::path& path)
{
  std::vector<ChannelSpec> specs;
  for (const auto& line : read_lines(path)) {
    auto fields = split_csv_line(line);
    if (fields.size() < 3) {
      throw InvalidInput("channel spec record needs frequency, factor and a label: '" +
                         line + "'");
    }
    if (fields[0] == "frequency_mhz") {
      continue; // header
    }
    ChannelSpec spec;
    spec.frequency_hz = parse_double(fields[0], "channel spec") * 1e6;
    spec.antenna_factor_db_per_m = parse_double(fields[1], "channel spec");
    for (std::size_t i = 2; i < fields.size(); ++i) {
      if (!fields[i].empty()) {
        spec.labels.push_back(fields[i]);
      }
    }
    spec.validate();
    specs.push_back(std::move(spec));
  }
  return specs;
}

inline HolidayCalendar
read_holidays(const std::filesystem::path& path)
{
  HolidayCalendar cal;
  for (const auto& line : read_lines(path)) {
    absl::CivilDay day;
    if (!absl::ParseCivilTime(line, &day)) {
      throw InvalidInput("bad holiday date '" + line + "'");
    }
    cal.add(day);
  }
  return cal;
}

// ---------------------------------------------------------------------------
// Series CSV files
// ---------------------------------------------------------------------------

//! Raw table: header `timestamp,<freq MHz...>`, empty cells are NaN.
struct RawTable
{
  std::vector<std::int64_t> timestamps;
  std::vector<double> frequencies_mhz;
  Matrix values;
};

inline RawTable
read_table(const std::filesystem::path& path)
{
  const auto lines = read_lines(path);
  if (lines.empty()) {
    throw InvalidInput("'" + path.string() + "' is empty");
  }
  const auto header = split_csv_line(lines.front());
  if (header.size() < 2 || header.front() != "timestamp") {
    throw InvalidInput("header must be 'timestamp,<frequency columns>'");
  }
  RawTable t;
  for (std::size_t i = 1; i < header.size(); ++i) {
    t.frequencies_mhz.push_back(parse_double(header[i], "header"));
  }
  if (lines.size() < 2) {
    throw InvalidInput("'" + path.string() + "' has no data rows");
  }
  const std::size_t cols = t.frequencies_mhz.size();
  t.values = Matrix(lines.size() - 1, cols, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto fields = split_csv_line(lines[r]);
    if (fields.size() != cols + 1) {
      throw InvalidInput("row " + std::to_string(r) + " has " +
                         std::to_string(fields.size()) + " cells, expected " +
                         std::to_string(cols + 1));
    }
    t.timestamps.push_back(parse_timestamp(fields[0]));
    for (std::size_t c = 0; c < cols; ++c) {
      if (!fields[c + 1].empty()) {
        t.values(r - 1, c) = parse_double(fields[c + 1], "row " + std::to_string(r));
      }
    }
  }
  return t;
}

inline void
write_table(const std::filesystem::path& path,
            const std::vector<std::int64_t>& timestamps,
            const std::vector<double>& frequencies_mhz,
            const Matrix& values,
            const Matrix* mask = nullptr)
{
  write_atomically(path, [&](std::ostream& out) {
    out << "timestamp";
    for (double f : frequencies_mhz) {
      out << ',' << format_double(f);
    }
    out << '\n';
    for (std::size_t r = 0; r < values.rows(); ++r) {
      out << format_timestamp(timestamps[r]);
      for (std::size_t c = 0; c < values.cols(); ++c) {
        out << ',';
        if (mask == nullptr || (*mask)(r, c) == 1.0) {
          out << format_double(values(r, c));
        }
      }
      out << '\n';
    }
  });
}

inline std::filesystem::path
mask_path_for(const std::filesystem::path& field_csv)
{
  auto p = field_csv;
  p.replace_extension(".mask.csv");
  return p;
}

//! Writes the field CSV (missing cells empty) and its `.mask.csv` sibling.
inline void
write_field_frame(const std::filesystem::path& path, const SeriesFrame& frame)
{
  std::vector<double> freqs;
  for (const auto& s : frame.channel_specs) {
    freqs.push_back(s.frequency_hz / 1e6);
  }
  write_table(path, frame.timestamps, freqs, frame.values, &frame.mask);
  write_table(mask_path_for(path), frame.timestamps, freqs, frame.mask);
}

//! Reads a field CSV. The mask comes from the sibling `.mask.csv` when it
//! exists, otherwise from empty cells.
inline SeriesFrame
read_field_frame(const std::filesystem::path& path,
                 const std::vector<ChannelSpec>& specs = {})
{
  RawTable t = read_table(path);
  SeriesFrame f;
  f.timestamps = t.timestamps;
  f.values = Matrix(t.values.rows(), t.values.cols());
  f.mask = Matrix(t.values.rows(), t.values.cols());
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    if (std::isfinite(t.values.data()[i])) {
      f.values.data()[i] = t.values.data()[i];
      f.mask.data()[i] = 1.0;
    }
  }
  const auto mpath = mask_path_for(path);
  if (std::filesystem::exists(mpath)) {
    RawTable m = read_table(mpath);
    if (m.values.rows() != f.values.rows() || m.values.cols() != f.values.cols()) {
      throw InvalidInput("mask file shape differs from field file");
    }
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      const double v = m.values.data()[i];
      f.mask.data()[i] = v == 1.0 ? 1.0 : 0.0;
      if (v != 1.0) {
        f.values.data()[i] = 0.0;
      }
    }
  }
  if (!specs.empty()) {
    if (specs.size() != t.frequencies_mhz.size()) {
      throw InvalidInput("channel spec count differs from column count");
    }
    f.channel_specs = specs;
  } else {
    for (double mhz : t.frequencies_mhz) {
      f.channel_specs.push_back({ mhz * 1e6, 0.0, { "ch" + format_double(mhz) } });
    }
  }
  f.validate();
  return f;
}

//! Converts a raw dBm table into an electric-field frame. Each column is
//! matched to the channel spec with the same frequency.
inline SeriesFrame
convert_table(const RawTable& raw,
              const std::vector<ChannelSpec>& specs,
              const PhysicalConstants& consts = {})
{
  SeriesFrame f;
  f.timestamps = raw.timestamps;
  f.values = Matrix(raw.values.rows(), raw.values.cols());
  f.mask = Matrix(raw.values.rows(), raw.values.cols());
  for (double mhz : raw.frequencies_mhz) {
    auto it = std::find_if(specs.begin(), specs.end(), [&](const ChannelSpec& s) {
      return std::abs(s.frequency_hz / 1e6 - mhz) < 1e-6;
    });
    if (it == specs.end()) {
      throw InvalidInput("no channel spec for column " + format_double(mhz) + " MHz");
    }
    f.channel_specs.push_back(*it);
  }
  for (std::size_t r = 0; r < raw.values.rows(); ++r) {
    for (std::size_t c = 0; c < raw.values.cols(); ++c) {
      const double p = raw.values(r, c);
      if (std::isfinite(p)) {
        f.values(r, c) = dbm_to_field(p, f.channel_specs[c], consts);
        f.mask(r, c) = 1.0;
      }
    }
  }
  f.validate();
  return f;
}

inline void
write_conditions(const std::filesystem::path& path,
                 const std::vector<std::int64_t>& timestamps,
                 const ConditionTrack& track)
{
  write_atomically(path, [&](std::ostream& out) {
    out << "timestamp,schema";
    for (std::size_t c = 0; c < track.features.cols(); ++c) {
      out << ",f" << c;
    }
    out << '\n';
    for (std::size_t r = 0; r < track.steps(); ++r) {
      out << format_timestamp(timestamps[r]) << ',' << to_string(track.schema);
      for (std::size_t c = 0; c < track.features.cols(); ++c) {
        out << ',' << format_double(track.features(r, c));
      }
      out << '\n';
    }
  });
}

} // namespace emfusion::io

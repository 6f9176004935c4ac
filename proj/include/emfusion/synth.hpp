#pragma once

#include "emf_data.hpp"
#include "error.hpp"
#include "rng.hpp"

#include <absl/time/civil_time.h>
#include <absl/time/time.h>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace emfusion {

//! Generator of working-hour modulated field series:
//! x_c(t) = base_c (1 + kappa wh(t)) + amp_c sin(2 pi h(t) / 24 + phi_c) + noise,
//! clamped at zero, with h(t) the local hour of day.
struct SynthSpec
{
  std::size_t channels{ 4 };
  std::size_t days{ 28 };
  std::size_t cadence_minutes{ 15 };
  std::string start{ "2024-03-04" }; // local midnight of the first day
  std::string time_zone{ "Europe/Rome" };
  double base{ 1.0 };        // base_c = base (1 + base_step c)
  double base_step{ 0.25 };
  double kappa{ 0.8 };       // working-hour amplitude coupling
  double daily_amp{ 0.3 };   // amp_c = daily_amp base_c
  double noise{ 0.05 };      // noise sd relative to base_c
  double missing{ 0.0 };     // per-entry missingness probability

  void validate() const
  {
    if (channels < 1 || channels > 64) throw ConfigError("synth channels must be in [1, 64]");
    if (days < 1) throw ConfigError("synth days must be >= 1");
    if (cadence_minutes < 1 || 1440 % cadence_minutes != 0) {
      throw ConfigError("synth cadence must divide one day");
    }
    if (!(base > 0.0) || base_step < 0.0 || kappa < 0.0 || daily_amp < 0.0 || noise < 0.0) {
      throw ConfigError("synth amplitudes must be non-negative (base positive)");
    }
    if (!(missing >= 0.0 && missing < 1.0)) throw ConfigError("synth missingness must be in [0, 1)");
  }

  double channel_base(std::size_t c) const { return base * (1.0 + base_step * static_cast<double>(c)); }
  double channel_phase(std::size_t c) const { return static_cast<double>(c) * std::numbers::pi / 4.0; }
};

//! Real channel frequencies and antenna factors, cycled if more are needed.
inline std::vector<ChannelSpec>
synth_channel_specs(std::size_t n)
{
  static const std::vector<ChannelSpec> table = {
    { 935.0e6, 34.7, { "TIM", "2G" } },
    { 1835.0e6, 31.2, { "Iliad", "4G" } },
    { 2150.0e6, 31.9, { "Iliad", "3G" } },
    { 3630.0e6, 36.6, { "Iliad", "5G" } },
    { 945.0e6, 34.8, { "VF", "2G" } },
    { 2137.0e6, 31.8, { "TIM", "3G" } },
  };
  std::vector<ChannelSpec> out;
  for (std::size_t i = 0; i < n; ++i) {
    ChannelSpec s = table[i % table.size()];
    s.frequency_hz += static_cast<double>(i / table.size()) * 0.5e6;
    out.push_back(s);
  }
  return out;
}

struct SynthResult
{
  SeriesFrame frame;
  Matrix clean;               // noiseless signal
  std::vector<double> working_hour;
};

inline SynthResult
generate_synthetic(const SynthSpec& spec, std::uint64_t seed)
{
  spec.validate();
  absl::CivilDay day0;
  if (!absl::ParseCivilTime(spec.start, &day0)) {
    throw ConfigError("bad synth start date '" + spec.start + "'");
  }
  const absl::TimeZone tz = load_time_zone(spec.time_zone);
  const std::size_t per_day = 1440 / spec.cadence_minutes;
  const std::size_t steps = per_day * spec.days;
  const std::int64_t t0 = absl::ToUnixSeconds(absl::FromCivil(absl::CivilSecond(day0), tz));

  SynthResult r;
  r.frame.timestamps.resize(steps);
  r.frame.values = Matrix(steps, spec.channels);
  r.frame.mask = Matrix(steps, spec.channels, 1.0);
  r.frame.channel_specs = synth_channel_specs(spec.channels);
  r.clean = Matrix(steps, spec.channels);
  r.working_hour.resize(steps);
  CounterRng noise_rng = CounterRng(seed).derive(1);
  CounterRng miss_rng = CounterRng(seed).derive(2);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::int64_t ts = t0 + static_cast<std::int64_t>(i * spec.cadence_minutes * 60);
    r.frame.timestamps[i] = ts;
    const auto local = absl::ToCivilSecond(absl::FromUnixSeconds(ts), tz);
    const double hour = local.hour() + local.minute() / 60.0 + local.second() / 3600.0;
    const double wh = (local.hour() >= 9 && local.hour() < 17) ? 1.0 : 0.0;
    r.working_hour[i] = wh;
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const double b = spec.channel_base(c);
      const double clean = b * (1.0 + spec.kappa * wh) +
                           spec.daily_amp * b * std::sin(2.0 * std::numbers::pi * hour / 24.0 + spec.channel_phase(c));
      r.clean(i, c) = std::max(0.0, clean);
      const double e = spec.noise > 0.0 ? spec.noise * b * noise_rng.normal() : 0.0;
      r.frame.values(i, c) = std::max(0.0, clean + e);
    }
  }
  if (spec.missing > 0.0) {
    for (std::size_t i = 0; i < r.frame.values.size(); ++i) {
      if (miss_rng.uniform() < spec.missing) {
        r.frame.mask.data()[i] = 0.0;
        r.frame.values.data()[i] = 0.0;
      }
    }
  }
  r.frame.validate();
  return r;
}

} // namespace emfusion

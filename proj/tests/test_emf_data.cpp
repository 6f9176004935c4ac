#include "emfusion/data_io.hpp"
#include "emfusion/emf_data.hpp"
#include "emfusion/encoding.hpp"
#include "emfusion/rng.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace emfusion;

namespace {

ChannelSpec
spec(double mhz, double af)
{
  return { mhz * 1e6, af, { "x" } };
}

std::filesystem::path
scratch(const std::string& name)
{
  auto p = std::filesystem::temp_directory_path() / ("emf_data_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

SeriesFrame
ramp_frame(std::size_t steps, std::size_t channels)
{
  SeriesFrame f;
  for (std::size_t r = 0; r < steps; ++r) f.timestamps.push_back(1709506800 + 900 * static_cast<std::int64_t>(r));
  f.values = Matrix(steps, channels);
  f.mask = Matrix(steps, channels, 1.0);
  for (std::size_t r = 0; r < steps; ++r)
    for (std::size_t c = 0; c < channels; ++c) f.values(r, c) = static_cast<double>(r * 10 + c);
  for (std::size_t c = 0; c < channels; ++c) f.channel_specs.push_back(spec(900.0 + c, 34.0));
  return f;
}

} // namespace

// Reference values: 50-digit evaluation of the aperture conversion.
TEST(Conversion, GoldenChannels)
{
  struct Case { double mhz, af, dbm, expect; };
  const Case cases[] = {
    { 935.0, 34.7, -60.0, 0.012148067448377494081 },
    { 1835.0, 31.2, -45.5, 0.043102969839968916497 },
    { 2150.0, 31.9, -80.0, 0.00088004969050210847173 },
    { 3630.0, 36.6, -30.25, 0.46452297046362407006 },
    { 945.0, 34.8, -95.0, 0.00021852805207909061419 },
  };
  for (const auto& c : cases) {
    const double e = dbm_to_field(c.dbm, spec(c.mhz, c.af));
    EXPECT_LT(std::abs(e - c.expect) / c.expect, 1e-10) << c.mhz;
  }
}

TEST(Conversion, MonotoneInPower)
{
  const auto s = spec(935.0, 34.7);
  EXPECT_LT(dbm_to_field(-70.0, s), dbm_to_field(-69.0, s));
  // +20 dB is a factor 10 in field strength
  EXPECT_NEAR(dbm_to_field(-40.0, s) / dbm_to_field(-60.0, s), 10.0, 1e-12);
}

TEST(Conversion, FloorAndErrors)
{
  const auto s = spec(935.0, 34.7);
  EXPECT_EQ(dbm_to_field(-400.0, s), dbm_to_field(kDbmFloor, s));
  EXPECT_THROW(dbm_to_field(std::nan(""), s), InvalidInput);
  EXPECT_THROW(dbm_to_field(-60.0, spec(0.0, 34.7)), InvalidInput);
  ChannelSpec unlabeled{ 935e6, 34.7, {} };
  EXPECT_THROW(dbm_to_field(-60.0, unlabeled), InvalidInput);
}

TEST(Aggregation, RootSumSquare)
{
  const double a[] = { 3.0, 4.0 };
  EXPECT_DOUBLE_EQ(aggregate_band(a), 5.0);
  const double one[] = { 2.5 };
  EXPECT_DOUBLE_EQ(aggregate_band(one), 2.5);
  EXPECT_THROW(aggregate_band(std::span<const double>{}), InvalidInput);
  const double neg[] = { 1.0, -1.0 };
  EXPECT_THROW(aggregate_band(neg), InvalidInput);
}

TEST(Aggregation, GroupsByLabel)
{
  std::vector<ChannelSpec> specs = { { 935e6, 34.7, { "TIM", "2G" } },
                                     { 945e6, 34.8, { "VF", "2G" } },
                                     { 2137e6, 31.8, { "TIM", "3G" } } };
  const auto g = groups_by_label(specs, { "TIM", "2G" });
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].columns, (std::vector<std::size_t>{ 0, 2 }));
  EXPECT_EQ(g[1].columns, (std::vector<std::size_t>{ 0, 1 }));
  EXPECT_THROW(groups_by_label(specs, { "5G" }), InvalidInput);

  SeriesFrame f = ramp_frame(4, 3);
  f.mask(1, 2) = 0.0;
  const auto agg = aggregate_groups(f, g);
  EXPECT_DOUBLE_EQ(agg.values(0, 0), std::hypot(0.0, 2.0));
  EXPECT_EQ(agg.mask(1, 0), 0.0);
  EXPECT_EQ(agg.mask(1, 1), 1.0);
}

TEST(Aggregation, CorrelationOfIdenticalSeries)
{
  SeriesFrame f = ramp_frame(20, 2);
  const auto corr = correlation_matrix(f, per_channel_groups(f));
  EXPECT_NEAR(corr(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(corr(1, 0), 1.0, 1e-12);
}

TEST(Windows, EnumerationMatchesBruteForce)
{
  const SeriesFrame f = ramp_frame(37, 2);
  const ConditionTrack track{ ConditionSchema::none, Matrix(37, 0) };
  for (std::size_t stride : { 1u, 2u, 5u }) {
    const auto ws = make_windows(f, track, 8, 4, stride);
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + 12 <= 37; s += stride) starts.push_back(s);
    ASSERT_EQ(ws.size(), starts.size());
    for (std::size_t i = 0; i < ws.size(); ++i) {
      EXPECT_EQ(ws[i].start, starts[i]);
      EXPECT_EQ(ws[i].past(0, 1), f.values(starts[i], 1));
      EXPECT_EQ(ws[i].future(3, 0), f.values(starts[i] + 11, 0));
      EXPECT_EQ(ws[i].conditions.steps(), 12u);
    }
  }
  EXPECT_EQ(window_count(12, 8, 4, 3), 1u);
  EXPECT_THROW(window_count(11, 8, 4, 1), InvalidInput);
  EXPECT_THROW(window_count(20, 8, 4, 0), InvalidInput);
}

TEST(Windows, FullyObservedFlag)
{
  SeriesFrame f = ramp_frame(12, 1);
  const ConditionTrack track{ ConditionSchema::none, Matrix(12, 0) };
  EXPECT_TRUE(make_window(f, track, 0, 8, 4).fully_observed());
  f.mask(10, 0) = 0.0;
  EXPECT_FALSE(make_window(f, track, 0, 8, 4).fully_observed());
}

TEST(Normalization, RoundTripAndTrainOnlyFit)
{
  SeriesFrame f = ramp_frame(10, 2);
  f.values(9, 0) = 1e6; // outside the train split
  auto [norm, rec] = normalize(f, 5);
  EXPECT_DOUBLE_EQ(rec.offset[0], 0.0);
  EXPECT_DOUBLE_EQ(rec.scale[0], 40.0);
  EXPECT_DOUBLE_EQ(norm.values(4, 0), 1.0);
  const Matrix back = denormalize(norm.values, rec);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back.data()[i], f.values.data()[i], 1e-9);
}

TEST(Normalization, ConstantChannelAndUnobserved)
{
  SeriesFrame f = ramp_frame(4, 1);
  for (std::size_t r = 0; r < 4; ++r) f.values(r, 0) = 7.0;
  auto rec = fit_scale(f, 4);
  EXPECT_DOUBLE_EQ(rec.scale[0], 1.0);
  for (std::size_t r = 0; r < 4; ++r) f.mask(r, 0) = 0.0;
  EXPECT_THROW(fit_scale(f, 4), InvalidInput);
}

TEST(Conditions, WorkingHourInLocalTime)
{
  // 2024-03-04 is a Monday; Rome is UTC+1 in March before the DST switch.
  const std::int64_t t0 = io::parse_timestamp("2024-03-04T07:45:00Z"); // 08:45 local
  const std::int64_t t1 = io::parse_timestamp("2024-03-04T08:00:00Z"); // 09:00
  const std::int64_t t2 = io::parse_timestamp("2024-03-04T16:00:00Z"); // 17:00
  const std::vector<std::int64_t> ts = { t0, t1, t2 };
  const auto tr = build_conditions(ts, ConditionSchema::working_hour, std::nullopt);
  EXPECT_EQ(tr.features(0, 0), 0.0);
  EXPECT_EQ(tr.features(1, 0), 1.0);
  EXPECT_EQ(tr.features(2, 0), 0.0);
}

TEST(Conditions, WorkingDayNeedsCalendar)
{
  const std::vector<std::int64_t> ts = { io::parse_timestamp("2024-04-25T10:00:00Z"),
                                         io::parse_timestamp("2024-04-26T10:00:00Z"),
                                         io::parse_timestamp("2024-04-27T10:00:00Z") };
  EXPECT_THROW(build_conditions(ts, ConditionSchema::working_day, std::nullopt), ConfigError);
  HolidayCalendar cal;
  cal.add(absl::CivilDay(2024, 4, 25));
  const auto tr = build_conditions(ts, ConditionSchema::multi, cal);
  ASSERT_EQ(tr.features.cols(), 2u);
  EXPECT_EQ(tr.features(0, 1), 0.0); // holiday
  EXPECT_EQ(tr.features(1, 1), 1.0); // Friday
  EXPECT_EQ(tr.features(2, 1), 0.0); // Saturday
  EXPECT_EQ(tr.features(0, 0), 1.0); // spring
}

TEST(Conditions, Seasons)
{
  EXPECT_EQ(season_of(absl::CivilDay(2024, 3, 20)), 4);
  EXPECT_EQ(season_of(absl::CivilDay(2024, 3, 21)), 1);
  EXPECT_EQ(season_of(absl::CivilDay(2024, 7, 1)), 2);
  EXPECT_EQ(season_of(absl::CivilDay(2024, 10, 1)), 3);
  EXPECT_EQ(season_of(absl::CivilDay(2024, 12, 25)), 4);
  EXPECT_THROW(parse_condition_schema("weekday"), ConfigError);
  EXPECT_THROW(load_time_zone("Mars/Olympus"), ConfigError);
}

TEST(Io, ConvertRoundTrip)
{
  const auto dir = scratch("convert");
  {
    std::ofstream a(dir / "raw.csv");
    a << "timestamp,935,1835\n2024-03-04T00:00:00Z,-60,-45.5\n2024-03-04T00:15:00Z,,-50\n";
    std::ofstream b(dir / "chan.csv");
    b << "frequency_mhz,antenna_factor,labels\n935,34.7,TIM,2G\n1835,31.2,Iliad,4G\n";
  }
  const auto specs = io::read_channel_specs(dir / "chan.csv");
  const auto frame = io::convert_table(io::read_table(dir / "raw.csv"), specs);
  EXPECT_NEAR(frame.values(0, 0), 0.012148067448377494081, 1e-15);
  EXPECT_EQ(frame.mask(1, 0), 0.0);
  io::write_field_frame(dir / "field.csv", frame);
  const auto back = io::read_field_frame(dir / "field.csv", specs);
  EXPECT_EQ(back.mask, frame.mask);
  EXPECT_EQ(back.values, frame.values);
  EXPECT_EQ(back.timestamps, frame.timestamps);
}

TEST(Io, EmptyAndSingleRow)
{
  const auto dir = scratch("empty");
  { std::ofstream(dir / "empty.csv"); }
  EXPECT_THROW(io::read_table(dir / "empty.csv"), InvalidInput);
  {
    std::ofstream a(dir / "one.csv");
    a << "timestamp,935\n2024-03-04T00:00:00Z,-60\n";
  }
  const auto t = io::read_table(dir / "one.csv");
  EXPECT_EQ(t.values.rows(), 1u);
  {
    std::ofstream a(dir / "ragged.csv");
    a << "timestamp,935,945\n2024-03-04T00:00:00Z,-60\n";
  }
  EXPECT_THROW(io::read_table(dir / "ragged.csv"), InvalidInput);
  EXPECT_THROW(io::read_table(dir / "missing.csv"), ConfigError);
}

TEST(Io, TimestampFormats)
{
  EXPECT_EQ(io::parse_timestamp("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(io::parse_timestamp("2024-03-04T01:00:00+01:00"), io::parse_timestamp("2024-03-04T00:00:00Z"));
  EXPECT_EQ(io::format_timestamp(86400), "1970-01-02T00:00:00Z");
  EXPECT_THROW(io::parse_timestamp("yesterday"), InvalidInput);
}

TEST(Rng, DeterministicAndDerivedStreamsDiffer)
{
  CounterRng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  CounterRng c = CounterRng(42).derive(1), d = CounterRng(42).derive(2);
  EXPECT_NE(c.next_u64(), d.next_u64());
  CounterRng u(7);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 3.0 / std::sqrt(n) * 1.5);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
  for (int i = 0; i < 1000; ++i) {
    const auto k = u.uniform_int(3, 5);
    ASSERT_TRUE(k >= 3 && k <= 5);
  }
}

TEST(Encoding, TimestepAndPositional)
{
  const auto e = embed_timestep(0.0, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(e[i], 1.0);
    EXPECT_EQ(e[4 + i], 0.0);
  }
  const auto e3 = embed_timestep(3.0, 4);
  EXPECT_DOUBLE_EQ(e3[0], std::cos(3.0));
  EXPECT_DOUBLE_EQ(e3[1], std::cos(3.0 * 0.01));
  EXPECT_DOUBLE_EQ(e3[3], std::sin(3.0 * 0.01));
  EXPECT_THROW(embed_timestep(1.0, 3), ConfigError);
  const auto pe = positional_table(2, 4);
  EXPECT_EQ(pe[0], 0.0);
  EXPECT_EQ(pe[1], 1.0);
  EXPECT_DOUBLE_EQ(pe[4], std::sin(1.0));
  EXPECT_DOUBLE_EQ(pe[7], std::cos(0.01));
}

#pragma once

#include "error.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace emfusion {

//! N̂ sampled future trajectories, stored (scenario, step, channel).
struct ScenarioEnsemble
{
  static constexpr std::uint64_t kFormatVersion = 1;

  std::size_t scenarios{ 0 };
  std::size_t horizon{ 0 };
  std::size_t channels{ 0 };
  std::uint64_t seed{ 0 };
  std::vector<double> values;

  ScenarioEnsemble() = default;
  ScenarioEnsemble(std::size_t n, std::size_t f, std::size_t c, std::uint64_t s)
    : scenarios(n)
    , horizon(f)
    , channels(c)
    , seed(s)
    , values(n * f * c, 0.0)
  {}

  double& at(std::size_t s, std::size_t k, std::size_t c)
  {
    return values[(s * horizon + k) * channels + c];
  }
  double at(std::size_t s, std::size_t k, std::size_t c) const
  {
    return values[(s * horizon + k) * channels + c];
  }

  //! All scenario values of one (step, channel) cell.
  std::vector<double> cell(std::size_t k, std::size_t c) const
  {
    std::vector<double> out(scenarios);
    for (std::size_t s = 0; s < scenarios; ++s) {
      out[s] = at(s, k, c);
    }
    return out;
  }

  Matrix scenario(std::size_t s) const
  {
    Matrix m(horizon, channels);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(s * horizon * channels),
                horizon * channels,
                m.data().begin());
    return m;
  }

  void validate() const
  {
    if (scenarios < 1) throw InvalidInput("ensemble needs at least one scenario");
    if (values.size() != scenarios * horizon * channels) throw InvalidInput("ensemble size mismatch");
    if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericError("ensemble contains non-finite values");
    }
  }

  friend bool operator==(const ScenarioEnsemble&, const ScenarioEnsemble&) = default;
};

namespace detail {
inline void
put_u64(std::ostream& out, std::uint64_t v)
{
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t
get_u64(std::istream& in)
{
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw InvalidInput("truncated binary file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{ b[i] } << (8 * i);
  return v;
}

inline void
put_f64(std::ostream& out, double d)
{
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

inline double
get_f64(std::istream& in)
{
  const std::uint64_t v = get_u64(in);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}
} // namespace detail

//! Header: N̂, F, N, seed, version (u64 little-endian), then row-major f64.
inline void
write_ensemble(std::ostream& out, const ScenarioEnsemble& e)
{
  detail::put_u64(out, e.scenarios);
  detail::put_u64(out, e.horizon);
  detail::put_u64(out, e.channels);
  detail::put_u64(out, e.seed);
  detail::put_u64(out, ScenarioEnsemble::kFormatVersion);
  for (double v : e.values) detail::put_f64(out, v);
}

inline ScenarioEnsemble
read_ensemble(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open ensemble '" + path.string() + "'");
  ScenarioEnsemble e;
  e.scenarios = detail::get_u64(in);
  e.horizon = detail::get_u64(in);
  e.channels = detail::get_u64(in);
  e.seed = detail::get_u64(in);
  const auto version = detail::get_u64(in);
  if (version != ScenarioEnsemble::kFormatVersion) {
    throw InvalidInput("unsupported ensemble format version " + std::to_string(version));
  }
  if (e.scenarios * e.horizon * e.channels > (std::uint64_t{ 1 } << 32)) {
    throw InvalidInput("implausible ensemble header");
  }
  e.values.resize(e.scenarios * e.horizon * e.channels);
  for (double& v : e.values) v = detail::get_f64(in);
  return e;
}

} // namespace emfusion

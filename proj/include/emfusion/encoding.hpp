#pragma once

#include "error.hpp"
#include "matrix.hpp"

#include <cmath>
#include <vector>

namespace emfusion {

//! Sinusoidal diffusion-step embedding: the first half holds cos(t * w_m),
//! the second half sin(t * w_m), with w_m = exp(-ln(10000) * 2m / width).
inline std::vector<double>
embed_timestep(double t, std::size_t width)
{
  if (width < 2 || width % 2 != 0) {
    throw ConfigError("timestep embedding width must be even and >= 2");
  }
  const std::size_t half = width / 2;
  std::vector<double> e(width);
  for (std::size_t m = 0; m < half; ++m) {
    const double omega =
      std::exp(-std::log(10000.0) * 2.0 * static_cast<double>(m) / static_cast<double>(width));
    e[m] = std::cos(t * omega);
    e[half + m] = std::sin(t * omega);
  }
  return e;
}

//! Transformer positional table: PE(p, 2i) = sin(p / 10000^(2i/d)),
//! PE(p, 2i+1) = cos(p / 10000^(2i/d)). Row-major (positions x d).
inline std::vector<double>
positional_table(std::size_t positions, std::size_t d)
{
  std::vector<double> pe(positions * d);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t j = 0; j < d; j += 2) {
      const double denom =
        std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
      const double angle = static_cast<double>(p) / denom;
      pe[p * d + j] = std::sin(angle);
      if (j + 1 < d) {
        pe[p * d + j + 1] = std::cos(angle);
      }
    }
  }
  return pe;
}

//! Adds the positional table to a (positions x d) sequence.
inline Matrix
positional_encode(const Matrix& sequence)
{
  if (sequence.empty()) {
    throw InvalidInput("positional_encode: empty sequence");
  }
  const auto pe = positional_table(sequence.rows(), sequence.cols());
  Matrix out = sequence;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] += pe[i];
  }
  return out;
}

} // namespace emfusion

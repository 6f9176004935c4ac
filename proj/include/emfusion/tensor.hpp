#pragma once

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace emfusion {

using Shape = std::vector<std::size_t>;

inline std::size_t
shape_numel(const Shape& s)
{
  return std::accumulate(s.begin(), s.end(), std::size_t{ 1 }, std::multiplies<>());
}

inline std::string
shape_string(const Shape& s)
{
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += (i ? "," : "") + std::to_string(s[i]);
  }
  return out + ")";
}

//! Dense row-major n-d array of doubles.
struct Tensor
{
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
    : shape(std::move(s))
    , data(shape_numel(shape), fill)
  {}
  Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s))
    , data(std::move(values))
  {
    if (data.size() != shape_numel(shape)) {
      throw UsageError("tensor data size does not match shape " + shape_string(shape));
    }
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  bool all_finite() const
  {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

} // namespace emfusion

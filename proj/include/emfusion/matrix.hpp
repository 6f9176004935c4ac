#pragma once

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace emfusion {

//! Dense row-major matrix of doubles (steps x channels for series data).
class Matrix
{
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
    : rows_(rows)
    , cols_(cols)
    , data_(rows * cols, fill)
  {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return { data_.data() + r * cols_, cols_ }; }
  std::span<const double> row(std::size_t r) const
  {
    return { data_.data() + r * cols_, cols_ };
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  //! Rows [first, first + count) as a new matrix.
  Matrix slice_rows(std::size_t first, std::size_t count) const
  {
    if (first + count > rows_) {
      throw InvalidInput("row slice out of range");
    }
    Matrix out(count, cols_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
                count * cols_,
                out.data_.begin());
    return out;
  }

  //! Single column as a new (rows x 1) matrix.
  Matrix column(std::size_t c) const
  {
    Matrix out(rows_, 1);
    for (std::size_t r = 0; r < rows_; ++r) {
      out(r, 0) = (*this)(r, c);
    }
    return out;
  }

  bool all_finite() const
  {
    return std::all_of(
      data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_{ 0 };
  std::size_t cols_{ 0 };
  std::vector<double> data_;
};

//! Stack `top` over `bottom` (same column count).
inline Matrix
vstack(const Matrix& top, const Matrix& bottom)
{
  if (top.cols() != bottom.cols()) {
    throw InvalidInput("vstack: column count mismatch");
  }
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(),
            bottom.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

} // namespace emfusion

#pragma once

#include "ensemble.hpp"
#include "error.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace emfusion {

enum class IntervalMethod
{
  kde,
  order_statistic
};

struct PredictionInterval
{
  Matrix lower;
  Matrix upper;
  double gamma{ 0.8 };
  IntervalMethod method{ IntervalMethod::kde };
};

struct Bounds
{
  double lower;
  double upper;
};

inline double
sample_std(std::span<const double> z)
{
  if (z.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  double ss = 0.0;
  for (double v : z) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(z.size() - 1));
}

//! 1.06 sigma N^(-1/5).
inline double
silverman_bandwidth(std::span<const double> z)
{
  return 1.06 * sample_std(z) * std::pow(static_cast<double>(z.size()), -0.2);
}

//! Gaussian kernel density f(x) = 1/(N h) sum K((x - z_i)/h).
class KdeDensity
{
public:
  KdeDensity(std::vector<double> samples, double bandwidth)
    : z_(std::move(samples))
    , h_(bandwidth)
  {
    if (z_.empty()) throw InvalidInput("kde needs at least one sample");
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
      throw InvalidInput("kde bandwidth must be positive");
    }
  }

  double bandwidth() const { return h_; }
  const std::vector<double>& samples() const { return z_; }

  double operator()(double x) const
  {
    const double norm = 1.0 / (static_cast<double>(z_.size()) * h_ * std::sqrt(2.0 * std::numbers::pi));
    double s = 0.0;
    for (double zi : z_) {
      const double u = (x - zi) / h_;
      s += std::exp(-0.5 * u * u);
    }
    return s * norm;
  }

  //! Evenly spaced grid over [min - 5h, max + 5h].
  std::vector<double> grid(std::size_t points = 512) const
  {
    const auto [lo, hi] = std::minmax_element(z_.begin(), z_.end());
    const double a = *lo - 5.0 * h_, b = *hi + 5.0 * h_;
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i) {
      g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return g;
  }

private:
  std::vector<double> z_;
  double h_;
};

inline KdeDensity
kde_density(std::span<const double> samples, double bandwidth)
{
  return KdeDensity(std::vector<double>(samples.begin(), samples.end()), bandwidth);
}

//! Trapezoid CDF of the density on a grid, rescaled to end at exactly 1.
inline std::vector<double>
kde_cdf(const KdeDensity& f, const std::vector<double>& grid)
{
  std::vector<double> cdf(grid.size(), 0.0);
  double prev = f(grid[0]);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double cur = f(grid[i]);
    cdf[i] = cdf[i - 1] + 0.5 * (prev + cur) * (grid[i] - grid[i - 1]);
    prev = cur;
  }
  const double total = cdf.back();
  for (double& c : cdf) c /= total;
  return cdf;
}

//! Inverse of a monotone grid CDF by linear interpolation.
inline double
invert_cdf(const std::vector<double>& grid, const std::vector<double>& cdf, double q)
{
  auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
  if (it == cdf.begin()) return grid.front();
  if (it == cdf.end()) return grid.back();
  const std::size_t i = static_cast<std::size_t>(it - cdf.begin());
  const double c0 = cdf[i - 1], c1 = cdf[i];
  const double w = c1 > c0 ? (q - c0) / (c1 - c0) : 0.0;
  return grid[i - 1] + w * (grid[i] - grid[i - 1]);
}

inline void
check_gamma(double gamma)
{
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("interval level must be in (0, 1)");
}

//! Quantiles (1-g)/2 and (1+g)/2 of the KDE. All-equal samples give [c, c].
inline Bounds
kde_interval(std::span<const double> samples, double gamma, std::size_t grid_points = 512)
{
  check_gamma(gamma);
  if (samples.empty()) throw InvalidInput("kde needs at least one sample");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (*lo == *hi) {
    return { *lo, *lo };
  }
  const KdeDensity f = kde_density(samples, silverman_bandwidth(samples));
  const auto grid = f.grid(grid_points);
  const auto cdf = kde_cdf(f, grid);
  return { invert_cdf(grid, cdf, 0.5 * (1.0 - gamma)), invert_cdf(grid, cdf, 0.5 * (1.0 + gamma)) };
}

//! floor((1 - gamma) N), guarded against representation error.
inline std::size_t
order_statistic_rank(std::size_t n, double gamma)
{
  return static_cast<std::size_t>(std::floor((1.0 - gamma) * static_cast<double>(n) + 1e-9));
}

//! [z_k, z_{N-k}] on sorted samples (1-indexed), k = floor((1 - gamma) N);
//! index 0 clamps to 1.
inline Bounds
order_statistic_interval(std::span<const double> samples, double gamma)
{
  check_gamma(gamma);
  const std::size_t n = samples.size();
  if (n == 0) throw InvalidInput("order-statistic interval needs samples");
  const std::size_t k = order_statistic_rank(n, gamma);
  if (n <= 2 * k && !(n == 1 && k == 0)) {
    throw InvalidInput("order-statistic interval at gamma " + std::to_string(gamma) + " needs more than " +
                       std::to_string(2 * k) + " scenarios, got " + std::to_string(n));
  }
  std::vector<double> z(samples.begin(), samples.end());
  std::sort(z.begin(), z.end());
  const std::size_t lo = std::max<std::size_t>(k, 1);
  const std::size_t hi = n - k;
  return { z[lo - 1], z[hi - 1] };
}

//! Expected probability mass between the selected order statistics of a
//! continuous distribution, (hi - lo) / (N + 1).
inline double
order_statistic_coverage(std::size_t n, double gamma)
{
  const std::size_t k = order_statistic_rank(n, gamma);
  const std::size_t lo = std::max<std::size_t>(k, 1);
  return static_cast<double>(n - k - lo) / static_cast<double>(n + 1);
}

//! Per-cell intervals over an ensemble.
inline PredictionInterval
ensemble_interval(const ScenarioEnsemble& e, double gamma, IntervalMethod method)
{
  PredictionInterval pi{ Matrix(e.horizon, e.channels), Matrix(e.horizon, e.channels), gamma, method };
  for (std::size_t k = 0; k < e.horizon; ++k) {
    for (std::size_t c = 0; c < e.channels; ++c) {
      const auto cell = e.cell(k, c);
      const Bounds b = method == IntervalMethod::kde ? kde_interval(cell, gamma)
                                                     : order_statistic_interval(cell, gamma);
      pi.lower(k, c) = b.lower;
      pi.upper(k, c) = b.upper;
    }
  }
  return pi;
}

} // namespace emfusion

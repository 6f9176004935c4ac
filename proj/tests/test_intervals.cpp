#include "emfusion/intervals.hpp"
#include "emfusion/rng.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace emfusion;

namespace {

// exact CDF of a Gaussian KDE
double
kde_exact_cdf(const std::vector<double>& z, double h, double x)
{
  double s = 0.0;
  for (double zi : z) s += 0.5 * std::erfc(-(x - zi) / (h * std::sqrt(2.0)));
  return s / static_cast<double>(z.size());
}

double
bisect_quantile(const std::vector<double>& z, double h, double q)
{
  double a = *std::min_element(z.begin(), z.end()) - 10 * h, b = *std::max_element(z.begin(), z.end()) + 10 * h;
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (a + b);
    (kde_exact_cdf(z, h, m) < q ? a : b) = m;
  }
  return 0.5 * (a + b);
}

} // namespace

TEST(Kde, SilvermanFixture)
{
  const std::vector<double> z = { 0.3, -1.2, 2.5, 0.9, 1.1, -0.4 };
  EXPECT_NEAR(silverman_bandwidth(z), 0.9517114752293301, 1e-14);
  EXPECT_EQ(sample_std(std::vector<double>{ 4.0 }), 0.0);
}

TEST(Kde, DensityMatchesDoubleLoop)
{
  const std::vector<double> z = { 0.3, -1.2, 2.5, 0.9 };
  const double h = 0.4;
  const KdeDensity f(z, h);
  for (double x = -3.0; x <= 4.0; x += 0.37) {
    double s = 0.0;
    for (double zi : z) s += std::exp(-0.5 * ((x - zi) / h) * ((x - zi) / h)) / std::sqrt(2 * std::numbers::pi);
    EXPECT_NEAR(f(x), s / (4 * h), 1e-15);
  }
  EXPECT_THROW(KdeDensity(z, 0.0), InvalidInput);
  EXPECT_THROW(KdeDensity({}, 1.0), InvalidInput);
}

TEST(Kde, IntervalMatchesExactQuantiles)
{
  CounterRng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(40);
    for (double& v : z) v = 2.0 + 3.0 * rng.normal();
    const double h = silverman_bandwidth(z);
    for (double g : { 0.5, 0.8, 0.95 }) {
      const Bounds b = kde_interval(z, g);
      const double spacing = (*std::max_element(z.begin(), z.end()) - *std::min_element(z.begin(), z.end()) + 10 * h) / 511;
      EXPECT_NEAR(b.lower, bisect_quantile(z, h, 0.5 * (1 - g)), 0.1 * spacing);
      EXPECT_NEAR(b.upper, bisect_quantile(z, h, 0.5 * (1 + g)), 0.1 * spacing);
      EXPECT_LT(b.lower, b.upper);
    }
  }
}

TEST(Kde, CdfMonotoneAndDegenerateCases)
{
  const std::vector<double> z = { 1.0, 2.0, 2.5 };
  const KdeDensity f(z, 0.5);
  const auto g = f.grid(64);
  EXPECT_DOUBLE_EQ(g.front(), 1.0 - 2.5);
  EXPECT_DOUBLE_EQ(g.back(), 2.5 + 2.5);
  const auto c = kde_cdf(f, g);
  EXPECT_EQ(c.front(), 0.0);
  EXPECT_DOUBLE_EQ(c.back(), 1.0);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GE(c[i], c[i - 1]);
  const Bounds same = kde_interval(std::vector<double>(5, 3.25), 0.8);
  EXPECT_EQ(same.lower, 3.25);
  EXPECT_EQ(same.upper, 3.25);
  const Bounds one = kde_interval(std::vector<double>{ -1.0 }, 0.8);
  EXPECT_EQ(one.lower, -1.0);
  EXPECT_THROW(kde_interval(z, 1.0), InvalidInput);
  EXPECT_THROW(kde_interval(z, 0.0), InvalidInput);
  EXPECT_THROW(kde_interval(std::vector<double>{}, 0.8), InvalidInput);
}

TEST(OrderStatistic, TwentiethAndEightiethOfHundred)
{
  std::vector<double> z(100);
  std::iota(z.begin(), z.end(), 1.0);
  CounterRng rng(2);
  for (std::size_t i = z.size(); i > 1; --i) std::swap(z[i - 1], z[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
  EXPECT_EQ(order_statistic_rank(100, 0.8), 20u);
  const Bounds b = order_statistic_interval(z, 0.8);
  EXPECT_EQ(b.lower, 20.0);
  EXPECT_EQ(b.upper, 80.0);
  EXPECT_NEAR(order_statistic_coverage(100, 0.8), 60.0 / 101.0, 1e-15);
}

TEST(OrderStatistic, SmallEnsembles)
{
  const Bounds one = order_statistic_interval(std::vector<double>{ 4.5 }, 0.8);
  EXPECT_EQ(one.lower, 4.5);
  EXPECT_EQ(one.upper, 4.5);
  const Bounds two = order_statistic_interval(std::vector<double>{ 3.0, 1.0 }, 0.8);
  EXPECT_EQ(two.lower, 1.0);
  EXPECT_EQ(two.upper, 3.0);
  EXPECT_THROW(order_statistic_interval(std::vector<double>{ 1.0, 2.0 }, 0.2), InvalidInput);
  EXPECT_THROW(order_statistic_interval(std::vector<double>{}, 0.8), InvalidInput);
}

TEST(OrderStatistic, BruteForceCoverageMatchesFormula)
{
  CounterRng rng(3);
  const std::size_t n = 2000, trials = 400;
  double total = 0.0;
  std::vector<double> z(n);
  for (std::size_t t = 0; t < trials; ++t) {
    for (double& v : z) v = rng.normal();
    const Bounds b = order_statistic_interval(z, 0.8);
    // exact coverage of [lo, hi] for a fresh draw from N(0,1)
    const double cov = 0.5 * (std::erfc(-b.upper / std::sqrt(2.0)) - std::erfc(-b.lower / std::sqrt(2.0)));
    total += cov;
  }
  EXPECT_NEAR(100.0 * total / trials, 100.0 * order_statistic_coverage(n, 0.8), 0.5);
}

TEST(EnsembleIntervals, PerCell)
{
  ScenarioEnsemble e(5, 2, 1, 0);
  for (std::size_t s = 0; s < 5; ++s) {
    e.at(s, 0, 0) = static_cast<double>(s);
    e.at(s, 1, 0) = 7.0;
  }
  const auto os = ensemble_interval(e, 0.6, IntervalMethod::order_statistic);
  EXPECT_EQ(os.lower(0, 0), 1.0);
  EXPECT_EQ(os.upper(0, 0), 2.0);
  EXPECT_EQ(os.lower(1, 0), 7.0);
  const auto kd = ensemble_interval(e, 0.6, IntervalMethod::kde);
  EXPECT_LT(kd.lower(0, 0), 2.0);
  EXPECT_GT(kd.upper(0, 0), 2.0);
  EXPECT_EQ(kd.upper(1, 0), 7.0);
}

#include "emfusion/metrics.hpp"
#include "emfusion/rng.hpp"

#include <gtest/gtest.h>

using namespace emfusion;

namespace {

// integral of (F(z) - 1{y <= z})^2 with the empirical CDF, by midpoint rule
// on the piecewise-constant pieces
double
crps_grid(std::vector<double> x, double y)
{
  std::vector<double> pts = x;
  pts.push_back(y);
  std::sort(pts.begin(), pts.end());
  double total = 0.0;
  const double s = static_cast<double>(x.size());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double a = pts[i], b = pts[i + 1];
    if (b <= a) continue;
    // refine each piece; the integrand is constant inside, so this is exact
    // up to rounding, but sample it anyway at 16 points
    for (int k = 0; k < 16; ++k) {
      const double z = a + (b - a) * (k + 0.5) / 16.0;
      double f = 0.0;
      for (double v : x) f += v <= z ? 1.0 : 0.0;
      const double d = f / s - (y <= z ? 1.0 : 0.0);
      total += d * d * (b - a) / 16.0;
    }
  }
  return total;
}

} // namespace

TEST(Crps, PairFormMatchesGridIntegration)
{
  CounterRng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t s = 1 + static_cast<std::size_t>(rng.uniform_int(0, 40));
    std::vector<double> x(s);
    for (double& v : x) v = rng.normal() * 2.0;
    const double y = rng.normal() * 2.5;
    EXPECT_NEAR(crps_empirical(x, y), crps_grid(x, y), 1e-6);
  }
  EXPECT_NEAR(crps_empirical(std::vector<double>{ 0.0, 1.0 }, 0.5), 0.25, 1e-15);
}

TEST(Crps, DegenerateCases)
{
  EXPECT_EQ(crps_empirical(std::vector<double>{ 2.75 }, -1.5), 4.25);
  EXPECT_EQ(crps_empirical(std::vector<double>(7, 3.0), 3.0), 0.0);
  EXPECT_THROW(crps_empirical(std::vector<double>{}, 0.0), InvalidInput);
}

TEST(Energy, ReducesToCrpsInOneDimension)
{
  CounterRng rng(2);
  std::vector<std::vector<double>> xs;
  std::vector<double> flat;
  for (int i = 0; i < 30; ++i) {
    flat.push_back(rng.normal());
    xs.push_back({ flat.back() });
  }
  const std::vector<double> y = { 0.4 };
  EXPECT_NEAR(energy_score(xs, y).value, crps_empirical(flat, 0.4), 1e-9);
  EXPECT_FALSE(energy_score(xs, y).single_sample);
  const std::vector<double> y2 = { 1.0, 2.0 };
  EXPECT_EQ(energy_score({ y2, y2, y2 }, y2).value, 0.0);
  const auto one = energy_score({ { 4.0, 6.0 } }, std::vector<double>{ 1.0, 2.0 });
  EXPECT_TRUE(one.single_sample);
  EXPECT_DOUBLE_EQ(one.value, 5.0);
  EXPECT_THROW(energy_score({ { 1.0 } }, y2), InvalidInput);
}

TEST(PointMetrics, Fixtures)
{
  const std::vector<double> y = { 1.0, 1.0 }, yh = { 0.0, 2.0 };
  EXPECT_DOUBLE_EQ(rmse(y, yh), 1.0);
  EXPECT_DOUBLE_EQ(rmse(y, y), 0.0);
  EXPECT_DOUBLE_EQ(nrmse(std::vector<double>{ 3.0, 4.0 }, std::vector<double>{ 0.0, 0.0 }), 1.0);
  EXPECT_DOUBLE_EQ(nd(y, yh), 1.0);
  EXPECT_DOUBLE_EQ(mape(y, yh), 100.0);
  EXPECT_DOUBLE_EQ(mape(std::vector<double>{ 2.0, 4.0 }, std::vector<double>{ 1.0, 5.0 }), 37.5);
  EXPECT_TRUE(is_undefined(nd(std::vector<double>{ 0.0, 0.0 }, y)));
  EXPECT_TRUE(is_undefined(nrmse(std::vector<double>{ 0.0 }, std::vector<double>{ 1.0 })));
  EXPECT_THROW(rmse(y, std::vector<double>{ 1.0 }), InvalidInput);
}

TEST(PointMetrics, MapeZeroPolicy)
{
  const std::vector<double> y = { 0.0, 2.0, 1e-13, 4.0 }, yh = { 5.0, 1.0, 9.0, 4.0 };
  const auto r = mape_detail(y, yh);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_DOUBLE_EQ(r.value, 25.0);
  EXPECT_TRUE(is_undefined(mape(std::vector<double>{ 0.0 }, std::vector<double>{ 1.0 })));
}

TEST(PointMetrics, ScaleInvariance)
{
  CounterRng rng(3);
  std::vector<double> y(20), yh(20), ys(20), yhs(20);
  for (std::size_t i = 0; i < 20; ++i) {
    y[i] = 1.0 + rng.uniform();
    yh[i] = y[i] + 0.3 * rng.normal();
    ys[i] = 7.5 * y[i];
    yhs[i] = 7.5 * yh[i];
  }
  EXPECT_NEAR(nd(y, yh), nd(ys, yhs), 1e-12);
  EXPECT_NEAR(nrmse(y, yh), nrmse(ys, yhs), 1e-12);
  EXPECT_NEAR(mape(y, yh), mape(ys, yhs), 1e-9);
  EXPECT_NEAR(7.5 * rmse(y, yh), rmse(ys, yhs), 1e-12);
}

TEST(Picp, CountingAndMonotone)
{
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> y = { 0.1, 0.5, 0.9, 1.3, 2.0, -0.2, 0.7, 1.0, 1.5, 0.0 };
  EXPECT_EQ(picp(y, std::vector<double>(10, -inf), std::vector<double>(10, inf)), 100.0);
  EXPECT_EQ(picp(y, std::vector<double>(10, 5.0), std::vector<double>(10, 5.0)), 0.0);
  const std::vector<double> lo(10, 0.0), hi(10, 1.0);
  std::size_t count = 0;
  for (double v : y) count += (v >= 0.0 && v <= 1.0) ? 1 : 0;
  EXPECT_DOUBLE_EQ(picp(y, lo, hi), 10.0 * static_cast<double>(count));
  EXPECT_DOUBLE_EQ(picp(y, lo, hi), 60.0); // closed interval keeps 0.0 and 1.0
  EXPECT_GE(picp(y, std::vector<double>(10, -0.5), hi), picp(y, lo, hi));
  EXPECT_THROW(picp(y, hi, lo), InvalidInput);
}

TEST(Median, LowerOfTwoMiddles)
{
  EXPECT_EQ(lower_median(std::vector<double>{ 4.0, 1.0, 3.0, 2.0 }), 2.0);
  EXPECT_EQ(lower_median(std::vector<double>{ 5.0, 1.0, 3.0 }), 3.0);
  EXPECT_THROW(lower_median(std::vector<double>{}), InvalidInput);
}

TEST(Report, PerfectForecast)
{
  ScenarioEnsemble e(10, 3, 2, 0);
  Matrix truth(3, 2);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < 2; ++c) {
      truth(k, c) = 1.0 + static_cast<double>(k + 3 * c);
      for (std::size_t s = 0; s < 10; ++s) e.at(s, k, c) = truth(k, c);
    }
  const auto rep = evaluate_forecasts({ e }, { truth }, 0.8, { "a", "b" });
  ASSERT_EQ(rep.channels.size(), 2u);
  EXPECT_EQ(rep.channels[1].name, "b");
  EXPECT_EQ(rep.all.name, "ALL");
  for (const auto* r : { &rep.channels[0], &rep.channels[1], &rep.all }) {
    EXPECT_EQ(r->mape, 0.0);
    EXPECT_EQ(r->nd, 0.0);
    EXPECT_EQ(r->nrmse, 0.0);
    EXPECT_EQ(r->crps, 0.0);
    EXPECT_EQ(r->picp_kde, 100.0);
    EXPECT_EQ(r->picp_os, 100.0);
    EXPECT_EQ(r->energy, 0.0);
  }
  EXPECT_EQ(rep.all.count, 6u);
}

TEST(Report, AggregatesMatchDirectComputation)
{
  CounterRng rng(4);
  std::vector<ScenarioEnsemble> es;
  std::vector<Matrix> ts;
  for (int w = 0; w < 3; ++w) {
    ScenarioEnsemble e(12, 4, 2, 0);
    for (double& v : e.values) v = 5.0 + rng.normal();
    Matrix t(4, 2);
    for (double& v : t.data()) v = 5.0 + rng.normal();
    es.push_back(e);
    ts.push_back(t);
  }
  const auto rep = evaluate_forecasts(es, ts, 0.8);
  double crps = 0.0;
  std::vector<double> y, yh;
  for (int w = 0; w < 3; ++w)
    for (std::size_t k = 0; k < 4; ++k) {
      crps += crps_empirical(es[w].cell(k, 1), ts[w](k, 1));
      y.push_back(ts[w](k, 1));
      yh.push_back(lower_median(es[w].cell(k, 1)));
    }
  EXPECT_NEAR(rep.channels[1].crps, crps / 12.0, 1e-12);
  EXPECT_NEAR(rep.channels[1].rmse, rmse(y, yh), 1e-12);
  EXPECT_THROW(evaluate_forecasts(es, { ts[0] }, 0.8), InvalidInput);
  EXPECT_THROW(evaluate_forecasts({}, {}, 0.8), InvalidInput);
}

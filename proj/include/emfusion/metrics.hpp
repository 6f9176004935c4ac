#pragma once

#include "ensemble.hpp"
#include "error.hpp"
#include "intervals.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emfusion {

//! Value of a metric whose denominator vanished.
inline constexpr double kUndefinedMetric = std::numeric_limits<double>::quiet_NaN();

inline bool
is_undefined(double v)
{
  return std::isnan(v);
}

namespace detail {
inline void
same_size(std::span<const double> a, std::span<const double> b, const char* what)
{
  if (a.size() != b.size()) throw InvalidInput(std::string(what) + ": length mismatch");
  if (a.empty()) throw InvalidInput(std::string(what) + ": empty input");
}
} // namespace detail

inline constexpr double kMapeZeroTolerance = 1e-12;

struct MapeResult
{
  double value{ kUndefinedMetric };
  std::size_t excluded{ 0 };
};

//! Percentage error over targets with |y| >= 1e-12; the others are counted.
inline MapeResult
mape_detail(std::span<const double> y, std::span<const double> yhat)
{
  detail::same_size(y, yhat, "mape");
  MapeResult r;
  double s = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) < kMapeZeroTolerance) {
      ++r.excluded;
      continue;
    }
    s += std::abs(y[i] - yhat[i]) / std::abs(y[i]);
    ++m;
  }
  if (m > 0) r.value = 100.0 * s / static_cast<double>(m);
  return r;
}

inline double
mape(std::span<const double> y, std::span<const double> yhat)
{
  return mape_detail(y, yhat).value;
}

inline double
nd(std::span<const double> y, std::span<const double> yhat)
{
  detail::same_size(y, yhat, "nd");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += std::abs(y[i] - yhat[i]);
    den += std::abs(y[i]);
  }
  return den > 0.0 ? num / den : kUndefinedMetric;
}

inline double
rmse(std::span<const double> y, std::span<const double> yhat)
{
  detail::same_size(y, yhat, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

inline double
nrmse(std::span<const double> y, std::span<const double> yhat)
{
  detail::same_size(y, yhat, "nrmse");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    den += y[i] * y[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : kUndefinedMetric;
}

//! Percentage of targets inside closed intervals.
inline double
picp(std::span<const double> y, std::span<const double> lower, std::span<const double> upper)
{
  detail::same_size(y, lower, "picp");
  detail::same_size(y, upper, "picp");
  std::size_t inside = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (lower[i] > upper[i]) throw InvalidInput("picp: lower bound above upper bound");
    if (y[i] >= lower[i] && y[i] <= upper[i]) ++inside;
  }
  return 100.0 * static_cast<double>(inside) / static_cast<double>(y.size());
}

//! CRPS of the empirical distribution of `samples` at `y`, via
//! mean|X - y| - 1/2 mean|X - X'| with the pair sum from sorted samples.
inline double
crps_empirical(std::span<const double> samples, double y)
{
  if (samples.empty()) throw InvalidInput("crps needs at least one sample");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double s = static_cast<double>(x.size());
  double abs_err = 0.0, pair = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    abs_err += std::abs(x[i] - y);
    pair += x[i] * (2.0 * static_cast<double>(i + 1) - s - 1.0);
  }
  // sum over ordered pairs |x_i - x_j| = 2 * pair
  return abs_err / s - pair / (s * s);
}

struct EnergyScore
{
  double value{ 0.0 };
  bool single_sample{ false };
};

//! mean ||X - y|| - 1/2 mean ||X - X'||; samples are rows of equal length.
inline EnergyScore
energy_score(const std::vector<std::vector<double>>& samples, std::span<const double> y)
{
  if (samples.empty()) throw InvalidInput("energy score needs at least one sample");
  auto dist = [](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  const double n = static_cast<double>(samples.size());
  double first = 0.0;
  for (const auto& x : samples) {
    if (x.size() != y.size()) throw InvalidInput("energy score: dimension mismatch");
    first += dist(x, y);
  }
  EnergyScore es;
  es.single_sample = samples.size() == 1;
  double pair = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      pair += 2.0 * dist(samples[i], samples[j]);
    }
  }
  es.value = first / n - 0.5 * pair / (n * n);
  return es;
}

//! Median with the lower of the two middle values for even counts.
inline double
lower_median(std::span<const double> v)
{
  if (v.empty()) throw InvalidInput("median of an empty set");
  std::vector<double> s(v.begin(), v.end());
  const std::size_t mid = (s.size() - 1) / 2;
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mid), s.end());
  return s[mid];
}

inline Matrix
ensemble_median(const ScenarioEnsemble& e)
{
  Matrix m(e.horizon, e.channels);
  for (std::size_t k = 0; k < e.horizon; ++k) {
    for (std::size_t c = 0; c < e.channels; ++c) {
      m(k, c) = lower_median(e.cell(k, c));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricRow
{
  std::string name;
  std::size_t count{ 0 };
  std::size_t mape_excluded{ 0 };
  double mape{ kUndefinedMetric };
  double nd{ kUndefinedMetric };
  double rmse{ kUndefinedMetric };
  double nrmse{ kUndefinedMetric };
  double picp_kde{ kUndefinedMetric };
  double picp_os{ kUndefinedMetric };
  double crps{ kUndefinedMetric };
  double energy{ kUndefinedMetric };
};

struct EvalReport
{
  double gamma{ 0.8 };
  std::size_t scenarios{ 0 };
  bool energy_single_sample{ false };
  std::vector<MetricRow> channels;
  MetricRow all;
};

//! Scores forecasts against truth. Each ensemble pairs with one F x N truth
//! block; rows are per channel plus an aggregate over every cell. The
//! energy score treats each (window, channel) trajectory, or each window
//! for the aggregate, as one vector.
inline EvalReport
evaluate_forecasts(const std::vector<ScenarioEnsemble>& ensembles,
                   const std::vector<Matrix>& truth,
                   double gamma,
                   const std::vector<std::string>& channel_names = {})
{
  if (ensembles.empty() || ensembles.size() != truth.size()) {
    throw InvalidInput("one truth block per forecast required");
  }
  check_gamma(gamma);
  const std::size_t f = ensembles[0].horizon, n = ensembles[0].channels;
  EvalReport rep;
  rep.gamma = gamma;
  rep.scenarios = ensembles[0].scenarios;

  struct Acc
  {
    std::vector<double> y, yhat, lk, uk, lo, uo;
    double crps{ 0.0 };
    double energy{ 0.0 };
    std::size_t vectors{ 0 };
  };
  std::vector<Acc> acc(n + 1);
  for (std::size_t w = 0; w < ensembles.size(); ++w) {
    const auto& e = ensembles[w];
    e.validate();
    if (e.horizon != f || e.channels != n || truth[w].rows() != f || truth[w].cols() != n) {
      throw InvalidInput("forecast and truth shapes disagree at window " + std::to_string(w));
    }
    if (!truth[w].all_finite()) throw InvalidInput("truth contains non-finite values");
    for (std::size_t k = 0; k < f; ++k) {
      for (std::size_t c = 0; c < n; ++c) {
        const auto cell = e.cell(k, c);
        const double y = truth[w](k, c);
        const double med = lower_median(cell);
        const Bounds bk = kde_interval(cell, gamma);
        std::optional<Bounds> bo;
        if (e.scenarios > 2 * order_statistic_rank(e.scenarios, gamma) || e.scenarios == 1) {
          bo = order_statistic_interval(cell, gamma);
        }
        const double cr = crps_empirical(cell, y);
        for (Acc* a : { &acc[c], &acc[n] }) {
          a->y.push_back(y);
          a->yhat.push_back(med);
          a->lk.push_back(bk.lower);
          a->uk.push_back(bk.upper);
          if (bo) {
            a->lo.push_back(bo->lower);
            a->uo.push_back(bo->upper);
          }
          a->crps += cr;
        }
      }
    }
    for (std::size_t c = 0; c <= n; ++c) {
      std::vector<std::vector<double>> vecs(e.scenarios);
      std::vector<double> yv;
      for (std::size_t k = 0; k < f; ++k) {
        for (std::size_t cc = 0; cc < n; ++cc) {
          if (c < n && cc != c) continue;
          yv.push_back(truth[w](k, cc));
          for (std::size_t s = 0; s < e.scenarios; ++s) vecs[s].push_back(e.at(s, k, cc));
        }
      }
      const EnergyScore es = energy_score(vecs, yv);
      rep.energy_single_sample = es.single_sample;
      acc[c].energy += es.value;
      ++acc[c].vectors;
    }
  }
  auto finish = [&](Acc& a, std::string name) {
    MetricRow r;
    r.name = std::move(name);
    r.count = a.y.size();
    const MapeResult mr = mape_detail(a.y, a.yhat);
    r.mape = mr.value;
    r.mape_excluded = mr.excluded;
    r.nd = nd(a.y, a.yhat);
    r.rmse = rmse(a.y, a.yhat);
    r.nrmse = nrmse(a.y, a.yhat);
    r.picp_kde = picp(a.y, a.lk, a.uk);
    if (a.lo.size() == a.y.size()) r.picp_os = picp(a.y, a.lo, a.uo);
    r.crps = a.crps / static_cast<double>(r.count);
    r.energy = a.energy / static_cast<double>(a.vectors);
    return r;
  };
  for (std::size_t c = 0; c < n; ++c) {
    rep.channels.push_back(finish(acc[c], c < channel_names.size() ? channel_names[c] : "ch" + std::to_string(c)));
  }
  rep.all = finish(acc[n], "ALL");
  return rep;
}

} // namespace emfusion

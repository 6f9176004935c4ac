#include "emfusion/diffusion.hpp"
#include "emfusion/ensemble.hpp"
#include "emfusion/optimizer.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace emfusion;

namespace {

NoiseSchedule
desk_schedule()
{
  return NoiseSchedule::linear({ 50, 1e-4, 0.02 });
}

// Deterministic stand-in for the network: a fixed nonlinear map of x and t.
Predictor
toy_predictor(std::size_t* calls = nullptr)
{
  return [calls](const Tensor& x, std::span<const int> t, const Tensor& c) {
    if (calls) ++*calls;
    Tensor out(x.shape);
    const std::size_t per = x.numel() / x.dim(0), cper = c.numel() / c.dim(0);
    for (std::size_t b = 0; b < x.dim(0); ++b) {
      double csum = 0.0;
      for (std::size_t i = 0; i < cper; ++i) csum += c.data[b * cper + i];
      for (std::size_t i = 0; i < per; ++i) {
        out.data[b * per + i] = 0.3 * std::tanh(x.data[b * per + i]) + 0.01 * t[b] / 50.0 + 1e-3 * csum;
      }
    }
    return out;
  };
}

NetConfig
tiny_net()
{
  NetConfig c;
  c.depth = 1;
  c.width = 4;
  c.heads = 2;
  c.cond_width = 2;
  return c;
}

} // namespace

TEST(Schedule, Invariants)
{
  for (std::size_t T : { 1u, 10u, 50u, 1000u }) {
    const auto s = NoiseSchedule::linear({ T, 1e-4, 0.02 });
    ASSERT_EQ(s.alpha_bar.size(), T + 1);
    EXPECT_EQ(s.alpha_bar[0], 1.0);
    EXPECT_EQ(s.sigma[0], 0.0);
    double prod = 1.0;
    for (std::size_t t = 1; t <= T; ++t) {
      EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
      prod *= 1.0 - s.beta[t];
      EXPECT_NEAR(s.alpha_bar[t], prod, 1e-12);
      EXPECT_DOUBLE_EQ(s.sigma[t], std::sqrt(s.beta[t]));
    }
  }
  EXPECT_LT(desk_schedule().alpha_bar[50], 0.05);
  const auto ref = NoiseSchedule::linear({ 1000, 1e-4, 0.02 });
  EXPECT_DOUBLE_EQ(ref.beta[1], 1e-4);
  EXPECT_DOUBLE_EQ(ref.beta[1000], 0.02);
}

TEST(Schedule, RejectsBadConfig)
{
  EXPECT_THROW(NoiseSchedule::linear({ 0, 1e-4, 0.02 }), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear({ 10, 0.0, 0.02 }), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear({ 10, 0.03, 0.02 }), ConfigError);
  EXPECT_THROW(NoiseSchedule::from_betas({ 0.1, 1.0 }), ConfigError);
  EXPECT_THROW(desk_schedule().check_step(0), InvalidInput);
  EXPECT_THROW(desk_schedule().check_step(51), InvalidInput);
}

TEST(Forward, ComposedTransitionsMatchMarginal)
{
  const auto s = desk_schedule();
  const double x0 = 0.7;
  const std::size_t n = 100000;
  CounterRng rng(3);
  std::vector<double> x(n, x0);
  for (std::size_t t = 1; t <= s.steps; ++t) {
    double sum = 0.0, sq = 0.0;
    for (double& v : x) {
      v = std::sqrt(s.alpha[t]) * v + std::sqrt(s.beta[t]) * rng.normal();
      sum += v;
    }
    const double mean = sum / n;
    for (double v : x) sq += (v - mean) * (v - mean);
    const double var = sq / (n - 1);
    const double want_mean = std::sqrt(s.alpha_bar[t]) * x0, want_var = 1.0 - s.alpha_bar[t];
    EXPECT_LT(std::abs(mean - want_mean), 3.0 * std::sqrt(want_var / n)) << t;
    EXPECT_LT(std::abs(var / want_var - 1.0), 0.05) << t;
  }
}

TEST(Forward, ClosedFormAndErrors)
{
  const auto s = desk_schedule();
  Matrix x0(2, 2, 1.5), eps(2, 2, -0.5);
  const Matrix xt = forward_sample(x0, eps, 7, s);
  EXPECT_DOUBLE_EQ(xt(1, 1), std::sqrt(s.alpha_bar[7]) * 1.5 - std::sqrt(1.0 - s.alpha_bar[7]) * 0.5);
  EXPECT_THROW(forward_sample(x0, Matrix(2, 3), 7, s), InvalidInput);
  Matrix bad = x0;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(forward_sample(bad, eps, 7, s), InvalidInput);
  CounterRng a(9), b(9);
  EXPECT_EQ(forward_sample(x0, 3, s, a).first, forward_sample(x0, 3, s, b).first);
}

TEST(Reverse, PerfectNoiseRecoversCleanAtStepOne)
{
  const auto s = desk_schedule();
  CounterRng rng(4);
  const Matrix x0 = standard_normal(5, 3, rng), eps = standard_normal(5, 3, rng);
  const Matrix x1 = forward_sample(x0, eps, 1, s);
  const Matrix back = reverse_step(x1, 1, eps, s, rng);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(back.data()[i], x0.data()[i], 1e-12);
}

TEST(Reverse, PosteriorMeanFormula)
{
  const auto s = desk_schedule();
  Matrix xt(1, 1, 0.4), e(1, 1, 0.2);
  CounterRng r1(5), r2(5);
  const double z = r2.normal();
  const double want = (0.4 - s.beta[10] / std::sqrt(1.0 - s.alpha_bar[10]) * 0.2) / std::sqrt(s.alpha[10]) +
                      s.sigma[10] * z;
  EXPECT_DOUBLE_EQ(reverse_step(xt, 10, e, s, r1)(0, 0), want);
}

TEST(Guidance, ZeroScaleSingleCallAndBlend)
{
  std::size_t calls = 0;
  const Predictor p = toy_predictor(&calls);
  Tensor x({ 1, 1, 3, 1 }, std::vector<double>{ 0.1, 0.2, 0.3 });
  Tensor c({ 1, 3, 2 }, 1.0);
  const int t[] = { 4 };
  const Tensor e0 = guided_noise(p, x, t, c, 0.0);
  EXPECT_EQ(calls, 1u);
  EXPECT_EQ(e0, p(x, t, c));
  calls = 0;
  const Tensor e2 = guided_noise(p, x, t, c, 2.0);
  EXPECT_EQ(calls, 2u);
  const Tensor ec = p(x, t, c), eu = p(x, t, Tensor(c.shape));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(e2.data[i], 3.0 * ec.data[i] - 2.0 * eu.data[i]);
  GuidanceConfig bad{ -1.0, 0.1 };
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Sampler, ClampExactOnRandomMasks)
{
  const auto s = NoiseSchedule::linear({ 10, 1e-4, 0.02 });
  CounterRng mask_rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t hist = 6, hor = 3, n = 2;
    Matrix past = standard_normal(hist, n, mask_rng), mask(hist, n);
    for (double& m : mask.data()) m = mask_rng.uniform() < 0.7 ? 1.0 : 0.0;
    std::size_t checks = 0;
    bool ok = true;
    const SamplingObserver obs = [&](std::size_t, const Matrix& state, const Matrix& o) {
      for (std::size_t r = 0; r < hist; ++r)
        for (std::size_t c = 0; c < n; ++c)
          if (mask(r, c) == 1.0 && state(r, c) != o(r, c)) ok = false;
      ++checks;
    };
    CounterRng rng(100 + trial);
    const Matrix out =
      sample_with_imputation(past, mask, hor, Tensor({ 1, hist + hor, 2 }), toy_predictor(), s, {}, rng, obs);
    EXPECT_TRUE(ok) << trial;
    EXPECT_EQ(checks, s.steps + 1);
    for (std::size_t r = 0; r < hist; ++r)
      for (std::size_t c = 0; c < n; ++c)
        if (mask(r, c) == 1.0) ASSERT_EQ(out(r, c), past(r, c));
  }
}

TEST(Sampler, BatchSizeDoesNotChangeScenarios)
{
  Denoiser net(tiny_net());
  CounterRng init(7);
  net.randomize(init, 0.3);
  const auto s = NoiseSchedule::linear({ 8, 1e-4, 0.02 });
  CounterRng d(8);
  const Matrix past = standard_normal(6, 2, d);
  const Matrix mask(6, 2, 1.0);
  const Tensor cond({ 1, 8, 2 }, 0.5);
  const CounterRng master(21);
  const auto a = sample_scenarios(past, mask, 2, cond, make_predictor(net), s, {}, master, 5, 1);
  const auto b = sample_scenarios(past, mask, 2, cond, make_predictor(net), s, {}, master, 5, 3);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a[i], b[i]) << i;
  EXPECT_NE(a[0], a[1]);
  const auto e = sample_ensemble(past, mask, 2, cond, make_predictor(net), s, {}, master, 5, 2);
  EXPECT_EQ(e.scenarios, 5u);
  EXPECT_EQ(e.at(3, 1, 0), a[3](7, 0));
}

TEST(Sampler, InputErrors)
{
  const auto s = NoiseSchedule::linear({ 4, 1e-4, 0.02 });
  CounterRng rng(9);
  const Matrix past(4, 1, 0.0);
  EXPECT_THROW(sample_with_imputation(past, Matrix(3, 1, 1.0), 2, Tensor({ 1, 6, 2 }), toy_predictor(), s, {}, rng),
               ConfigError);
  EXPECT_THROW(sample_with_imputation(past, Matrix(4, 1, 0.5), 2, Tensor({ 1, 6, 2 }), toy_predictor(), s, {}, rng),
               InvalidInput);
  EXPECT_THROW(sample_with_imputation(past, Matrix(4, 1, 1.0), 2, Tensor({ 1, 5, 2 }), toy_predictor(), s, {}, rng),
               ConfigError);
  const Predictor nan_pred = [](const Tensor& x, std::span<const int>, const Tensor&) {
    return Tensor(x.shape, std::nan(""));
  };
  EXPECT_THROW(sample_with_imputation(past, Matrix(4, 1, 1.0), 2, Tensor({ 1, 6, 2 }), nan_pred, s, {}, rng),
               NumericError);
}

TEST(Training, ConditionDropoutRate)
{
  const auto s = desk_schedule();
  std::vector<Matrix> ws(400, Matrix(4, 1, 0.5));
  ConditionTrack tr{ ConditionSchema::working_hour, Matrix(4, 1, 1.0) };
  std::vector<const Matrix*> xs;
  std::vector<const ConditionTrack*> cs;
  for (const auto& w : ws) {
    xs.push_back(&w);
    cs.push_back(&tr);
  }
  CounterRng rng(10);
  const auto tb = prepare_training_batch(xs, cs, 2, s, { 0.0, 0.1 }, rng);
  EXPECT_GT(tb.null_count, 20u);
  EXPECT_LT(tb.null_count, 65u);
  for (std::size_t b = 0; b < 400; ++b) {
    const double presence = tb.cond.data[b * 8 + 1];
    EXPECT_EQ(presence, tb.null_condition[b] ? 0.0 : 1.0);
    EXPECT_GE(tb.t[b], 1);
    EXPECT_LE(tb.t[b], 50);
  }
  const auto none = prepare_training_batch(xs, cs, 2, s, { 0.0, 0.0 }, rng);
  EXPECT_EQ(none.null_count, 0u);
  const auto all = prepare_training_batch(xs, cs, 2, s, { 0.0, 1.0 }, rng);
  EXPECT_EQ(all.null_count, 400u);
}

TEST(Training, LossDecreasesOnToyWindows)
{
  Denoiser net(tiny_net());
  CounterRng init(11);
  net.initialize(init);
  Adam opt(5e-3);
  const auto s = NoiseSchedule::linear({ 20, 1e-4, 0.02 });
  std::vector<Matrix> ws;
  for (int k = 0; k < 8; ++k) {
    Matrix m(8, 2);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 2; ++c) m(r, c) = std::sin(0.7 * r + k + c);
    ws.push_back(m);
  }
  ConditionTrack tr{ ConditionSchema::none, Matrix(8, 0) };
  std::vector<const Matrix*> xs;
  std::vector<const ConditionTrack*> cs;
  for (const auto& w : ws) {
    xs.push_back(&w);
    cs.push_back(&tr);
  }
  CounterRng rng(12), drop(13);
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 150; ++it) {
    const auto tb = prepare_training_batch(xs, cs, 2, s, {}, rng);
    const double l = training_step(net, opt, tb, drop);
    if (it < 10) first += l;
    if (it >= 140) last += l;
  }
  EXPECT_LT(last, 0.7 * first);
  EXPECT_EQ(opt.steps(), 150u);
}

TEST(Training, NonFiniteWeightsRaiseNumericError)
{
  Denoiser net(tiny_net());
  CounterRng init(14);
  net.initialize(init);
  net.params().tensors[0].data[0] = std::nan("");
  Adam opt;
  Matrix w(4, 1, 0.1);
  ConditionTrack tr{ ConditionSchema::none, Matrix(4, 0) };
  const Matrix* xs[] = { &w };
  const ConditionTrack* cs[] = { &tr };
  CounterRng rng(15);
  const auto tb = prepare_training_batch(xs, cs, 2, desk_schedule(), {}, rng);
  EXPECT_THROW(training_step(net, opt, tb, rng), NumericError);
}

TEST(Adam, ScalarRecurrence)
{
  std::vector<Tensor> p = { Tensor({ 1 }, 1.0) };
  Adam opt(0.1, 0.9, 0.999, 1e-8);
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double gval = 2.0 * x; // d/dx x^2
    Tensor g({ 1 }, gval);
    opt.step(p, { &g });
    m = 0.9 * m + 0.1 * gval;
    v = 0.999 * v + 0.001 * gval * gval;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_DOUBLE_EQ(p[0].data[0], x);
  }
  // first step moves by lr * sign(g)
  std::vector<Tensor> q = { Tensor({ 1 }, 0.0) };
  Adam o2(0.5);
  Tensor g({ 1 }, -3.0);
  o2.step(q, { &g });
  EXPECT_NEAR(q[0].data[0], 0.5, 1e-8);
  Tensor wrong({ 2 });
  EXPECT_THROW(o2.step(q, { &wrong }), UsageError);
}

TEST(Ensemble, BinaryRoundTrip)
{
  ScenarioEnsemble e(3, 2, 2, 77);
  for (std::size_t i = 0; i < e.values.size(); ++i) e.values[i] = 0.1 * static_cast<double>(i) - 0.25;
  const auto path = std::filesystem::temp_directory_path() / "emf_ens_roundtrip.bin";
  {
    std::ofstream out(path, std::ios::binary);
    write_ensemble(out, e);
  }
  EXPECT_EQ(read_ensemble(path), e);
  EXPECT_EQ(std::filesystem::file_size(path), 5 * 8 + 12 * 8u);
  std::filesystem::resize_file(path, 5 * 8 + 3);
  EXPECT_THROW(read_ensemble(path), InvalidInput);
  EXPECT_THROW(read_ensemble("/nonexistent/e.bin"), ConfigError);
}

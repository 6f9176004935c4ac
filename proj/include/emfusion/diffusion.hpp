#pragma once

#include "autograd.hpp"
#include "denoiser.hpp"
#include "emf_data.hpp"
#include "ensemble.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "optimizer.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace emfusion {

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

struct ScheduleConfig
{
  std::size_t steps{ 50 };
  double beta_start{ 1e-4 }; // at the 1000-step reference length
  double beta_end{ 0.02 };
};

//! Arrays are indexed by step t = 0..T; entry 0 is the clean state
//! (alpha = alpha_bar = 1, beta = sigma = 0).
struct NoiseSchedule
{
  std::size_t steps{ 0 };
  std::vector<double> beta, alpha, alpha_bar, sigma;

  static NoiseSchedule from_betas(const std::vector<double>& betas)
  {
    if (betas.empty()) {
      throw ConfigError("schedule needs at least one step");
    }
    NoiseSchedule s;
    s.steps = betas.size();
    s.beta.push_back(0.0);
    s.alpha.push_back(1.0);
    s.alpha_bar.push_back(1.0);
    s.sigma.push_back(0.0);
    for (double b : betas) {
      if (!(b > 0.0 && b < 1.0)) {
        throw ConfigError("beta values must lie in (0, 1)");
      }
      s.beta.push_back(b);
      s.alpha.push_back(1.0 - b);
      s.alpha_bar.push_back(s.alpha_bar.back() * (1.0 - b));
      s.sigma.push_back(std::sqrt(b));
    }
    return s;
  }

  //! Linear betas between the reference endpoints, rescaled by 1000 / T so
  //! that short schedules still reach a nearly pure-noise terminal state.
  static NoiseSchedule linear(const ScheduleConfig& cfg)
  {
    if (cfg.steps < 1) {
      throw ConfigError("schedule steps must be >= 1");
    }
    if (!(cfg.beta_start > 0.0 && cfg.beta_end >= cfg.beta_start)) {
      throw ConfigError("beta range must satisfy 0 < beta_start <= beta_end");
    }
    const double scale = 1000.0 / static_cast<double>(cfg.steps);
    std::vector<double> betas(cfg.steps);
    for (std::size_t i = 0; i < cfg.steps; ++i) {
      const double frac =
        cfg.steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
      betas[i] = std::min(0.999, scale * (cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start)));
    }
    return from_betas(betas);
  }

  void check_step(std::size_t t) const
  {
    if (t < 1 || t > steps) {
      throw InvalidInput("diffusion step " + std::to_string(t) + " outside [1, " +
                         std::to_string(steps) + "]");
    }
  }
};

struct GuidanceConfig
{
  double scale{ 0.0 };
  double condition_dropout{ 0.1 };

  void validate() const
  {
    if (!std::isfinite(scale) || scale < 0.0) throw ConfigError("guidance scale must be finite and >= 0");
    if (!(condition_dropout >= 0.0 && condition_dropout <= 1.0)) {
      throw ConfigError("condition dropout must be in [0, 1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Forward process
// ---------------------------------------------------------------------------

//! X_t = sqrt(ab_t) X0 + sqrt(1 - ab_t) eps with the given noise.
inline Matrix
forward_sample(const Matrix& x0, const Matrix& eps, std::size_t t, const NoiseSchedule& s)
{
  s.check_step(t);
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw InvalidInput("forward_sample: noise shape differs");
  }
  if (!x0.all_finite()) {
    throw InvalidInput("forward_sample: X0 not finite");
  }
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  Matrix out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
  }
  return out;
}

inline Matrix
standard_normal(std::size_t rows, std::size_t cols, CounterRng& rng)
{
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

//! Draws eps and returns (X_t, eps).
inline std::pair<Matrix, Matrix>
forward_sample(const Matrix& x0, std::size_t t, const NoiseSchedule& s, CounterRng& rng)
{
  s.check_step(t);
  Matrix eps = standard_normal(x0.rows(), x0.cols(), rng);
  Matrix xt = forward_sample(x0, eps, t, s);
  return { std::move(xt), std::move(eps) };
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingBatch
{
  Tensor x0;   // (B, 1, L, N)
  Tensor x_t;  // (B, 1, L, N)
  Tensor eps;  // (B, 1, L, N)
  std::vector<int> t;
  Tensor cond; // (B, L, d_f)
  std::vector<char> null_condition;
  std::size_t null_count{ 0 };
};

//! Samples steps, noise and condition dropout for a batch of full windows
//! (already normalized, L x N each).
inline TrainingBatch
prepare_training_batch(std::span<const Matrix* const> windows,
                       std::span<const ConditionTrack* const> conditions,
                       std::size_t cond_width,
                       const NoiseSchedule& s,
                       const GuidanceConfig& g,
                       CounterRng& rng)
{
  if (windows.empty() || windows.size() != conditions.size()) {
    throw ConfigError("training batch needs one condition track per window");
  }
  const std::size_t batch = windows.size(), len = windows[0]->rows(), n = windows[0]->cols();
  TrainingBatch tb;
  tb.x0 = Tensor({ batch, 1, len, n });
  tb.x_t = Tensor({ batch, 1, len, n });
  tb.eps = Tensor({ batch, 1, len, n });
  tb.null_condition.assign(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix& x0 = *windows[b];
    if (x0.rows() != len || x0.cols() != n) {
      throw ConfigError("windows of different shape in one batch");
    }
    const int t = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(s.steps)));
    tb.t.push_back(t);
    auto [xt, eps] = forward_sample(x0, static_cast<std::size_t>(t), s, rng);
    std::copy(x0.data().begin(), x0.data().end(), tb.x0.ptr() + b * len * n);
    std::copy(xt.data().begin(), xt.data().end(), tb.x_t.ptr() + b * len * n);
    std::copy(eps.data().begin(), eps.data().end(), tb.eps.ptr() + b * len * n);
    if (g.condition_dropout > 0.0 && rng.uniform() < g.condition_dropout) {
      tb.null_condition[b] = 1;
      ++tb.null_count;
    }
  }
  tb.cond = condition_tensor(conditions, cond_width, tb.null_condition);
  return tb;
}

//! Predictor used during training: (tape, x_t, t, cond) -> predicted noise.
using TapePredictor =
  std::function<ag::Var(ag::Tape&, const Tensor&, std::span<const int>, const Tensor&)>;

//! ||eps - eps_theta||^2 summed per sample, averaged over the batch.
inline ag::Var
training_loss(ag::Tape& tape, const TapePredictor& predict, const TrainingBatch& batch)
{
  ag::Var pred = predict(tape, batch.x_t, batch.t, batch.cond);
  if (tape.value(pred).shape != batch.eps.shape) {
    throw ConfigError("predictor output " + shape_string(tape.value(pred).shape) +
                      " differs from noise shape " + shape_string(batch.eps.shape));
  }
  return ag::batch_squared_error(tape, pred, batch.eps);
}

//! One optimizer update of `model` on `batch`; returns the loss.
inline double
training_step(Denoiser& model, Adam& opt, const TrainingBatch& batch, CounterRng& dropout_rng)
{
  ag::Tape tape;
  const auto vars = model.bind(tape);
  TapePredictor fn = [&](ag::Tape& tp, const Tensor& x, std::span<const int> t, const Tensor& c) {
    return model.forward(tp, vars, x, t, c, { &dropout_rng, nullptr });
  };
  ag::Var loss = training_loss(tape, fn, batch);
  const double value = tape.value(loss).data[0];
  if (!std::isfinite(value)) {
    throw NumericError("non-finite training loss");
  }
  tape.backward(loss);
  std::vector<const Tensor*> grads;
  grads.reserve(vars.size());
  for (ag::Var v : vars) grads.push_back(&tape.grad(v));
  opt.step(model.params().tensors, grads);
  return value;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

//! Inference predictor: (x_t (B,1,L,N), t, cond (B,L,d_f)) -> noise.
using Predictor = std::function<Tensor(const Tensor&, std::span<const int>, const Tensor&)>;

inline Predictor
make_predictor(const Denoiser& model)
{
  return [&model](const Tensor& x, std::span<const int> t, const Tensor& c) { return model.predict(x, t, c); };
}

//! (1 + s) eps(c) - s eps(null). With s = 0 only the conditional branch runs.
inline Tensor
guided_noise(const Predictor& predict,
             const Tensor& x_t,
             std::span<const int> t,
             const Tensor& cond,
             double scale)
{
  Tensor ec = predict(x_t, t, cond);
  if (scale == 0.0) {
    return ec;
  }
  const Tensor null_cond(cond.shape);
  const Tensor eu = predict(x_t, t, null_cond);
  for (std::size_t i = 0; i < ec.numel(); ++i) {
    ec.data[i] = (1.0 + scale) * ec.data[i] - scale * eu.data[i];
  }
  return ec;
}

//! One ancestral step from t to t - 1; z = 0 at t = 1.
inline Matrix
reverse_step(const Matrix& x_t, std::size_t t, const Matrix& eps_hat, const NoiseSchedule& s, CounterRng& rng)
{
  s.check_step(t);
  const double inv_sqrt_a = 1.0 / std::sqrt(s.alpha[t]);
  const double coef = (1.0 - s.alpha[t]) / std::sqrt(1.0 - s.alpha_bar[t]);
  Matrix out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = t > 1 ? rng.normal() : 0.0;
    out.data()[i] = inv_sqrt_a * (x_t.data()[i] - coef * eps_hat.data()[i]) + s.sigma[t] * z;
  }
  return out;
}

//! Called with (t, state at t, re-noised observations at t).
using SamplingObserver = std::function<void(std::size_t, const Matrix&, const Matrix&)>;

//! Inpainting sampler for a batch of independent trajectories sharing one
//! window. Each trajectory draws from its own generator.
inline std::vector<Matrix>
sample_batch(const Matrix& x_past,
             const Matrix& past_mask,
             std::size_t horizon,
             const Tensor& cond,
             const Predictor& predict,
             const NoiseSchedule& s,
             const GuidanceConfig& g,
             std::span<CounterRng> rngs,
             const SamplingObserver& observer = {})
{
  const std::size_t hist = x_past.rows(), n = x_past.cols(), len = hist + horizon;
  const std::size_t batch = rngs.size();
  if (past_mask.rows() != hist || past_mask.cols() != n) {
    throw ConfigError("mask shape differs from past block");
  }
  if (cond.rank() != 3 || cond.dim(0) != 1 || cond.dim(1) != len) {
    throw ConfigError("condition tensor must be (1, H+F, d_f), got " + shape_string(cond.shape));
  }
  for (double m : past_mask.data()) {
    if (m != 0.0 && m != 1.0) throw InvalidInput("mask entries must be 0 or 1");
  }
  Matrix omega(len, n);
  Matrix x_obs(len, n);
  for (std::size_t r = 0; r < hist; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      omega(r, c) = past_mask(r, c);
      x_obs(r, c) = past_mask(r, c) == 1.0 ? x_past(r, c) : 0.0;
    }
  }
  if (!x_obs.all_finite()) {
    throw InvalidInput("observed past values must be finite");
  }
  const std::size_t df = cond.dim(2);
  Tensor bcond({ batch, len, df });
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(cond.data.begin(), cond.data.end(), bcond.ptr() + b * len * df);
  }

  auto renoise = [&](std::size_t t, CounterRng& rng) {
    Matrix o(len, n);
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double e = t > 0 ? rng.normal() : 0.0;
      o.data()[i] = omega.data()[i] == 1.0 ? a * x_obs.data()[i] + b * e : 0.0;
    }
    return o;
  };
  auto clamp = [&](Matrix& x, const Matrix& o) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (omega.data()[i] == 1.0) x.data()[i] = o.data()[i];
    }
  };

  std::vector<Matrix> states;
  states.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    states.push_back(standard_normal(len, n, rngs[b]));
    const Matrix o = renoise(s.steps, rngs[b]);
    clamp(states[b], o);
    if (observer) observer(s.steps, states[b], o);
  }

  Tensor x({ batch, 1, len, n });
  std::vector<int> tv(batch);
  for (std::size_t t = s.steps; t >= 1; --t) {
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(states[b].data().begin(), states[b].data().end(), x.ptr() + b * len * n);
    }
    std::fill(tv.begin(), tv.end(), static_cast<int>(t));
    const Tensor eps = guided_noise(predict, x, tv, bcond, g.scale);
    if (!eps.all_finite()) {
      throw NumericError("non-finite noise prediction at step " + std::to_string(t));
    }
    for (std::size_t b = 0; b < batch; ++b) {
      Matrix e(len, n);
      std::copy_n(eps.ptr() + b * len * n, len * n, e.data().begin());
      Matrix next = reverse_step(states[b], t, e, s, rngs[b]);
      const Matrix o = renoise(t - 1, rngs[b]);
      clamp(next, o);
      if (observer) observer(t - 1, next, o);
      states[b] = std::move(next);
    }
  }
  return states;
}

//! Single trajectory; returns the full (H+F) x N final state.
inline Matrix
sample_with_imputation(const Matrix& x_past,
                       const Matrix& past_mask,
                       std::size_t horizon,
                       const Tensor& cond,
                       const Predictor& predict,
                       const NoiseSchedule& s,
                       const GuidanceConfig& g,
                       CounterRng& rng,
                       const SamplingObserver& observer = {})
{
  std::span<CounterRng> one(&rng, 1);
  return sample_batch(x_past, past_mask, horizon, cond, predict, s, g, one, observer).front();
}

//! N scenarios, scenario i driven by `master.derive(i)`. Results do not
//! depend on `batch_size`.
inline std::vector<Matrix>
sample_scenarios(const Matrix& x_past,
                 const Matrix& past_mask,
                 std::size_t horizon,
                 const Tensor& cond,
                 const Predictor& predict,
                 const NoiseSchedule& s,
                 const GuidanceConfig& g,
                 const CounterRng& master,
                 std::size_t n_scenarios,
                 std::size_t batch_size = 16)
{
  if (n_scenarios < 1) {
    throw ConfigError("at least one scenario required");
  }
  batch_size = std::max<std::size_t>(1, batch_size);
  std::vector<Matrix> out;
  out.reserve(n_scenarios);
  for (std::size_t first = 0; first < n_scenarios; first += batch_size) {
    const std::size_t count = std::min(batch_size, n_scenarios - first);
    std::vector<CounterRng> rngs;
    for (std::size_t i = 0; i < count; ++i) rngs.push_back(master.derive(first + i));
    auto states = sample_batch(x_past, past_mask, horizon, cond, predict, s, g, rngs);
    for (auto& st : states) out.push_back(std::move(st));
  }
  return out;
}

//! Future blocks of full-window scenarios as an ensemble.
inline ScenarioEnsemble
to_ensemble(const std::vector<Matrix>& states, std::size_t horizon, std::uint64_t seed)
{
  if (states.empty()) {
    throw ConfigError("empty scenario set");
  }
  const std::size_t n = states[0].cols(), hist = states[0].rows() - horizon;
  ScenarioEnsemble e(states.size(), horizon, n, seed);
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (std::size_t k = 0; k < horizon; ++k) {
      for (std::size_t c = 0; c < n; ++c) {
        e.at(s, k, c) = states[s](hist + k, c);
      }
    }
  }
  return e;
}

inline ScenarioEnsemble
sample_ensemble(const Matrix& x_past,
                const Matrix& past_mask,
                std::size_t horizon,
                const Tensor& cond,
                const Predictor& predict,
                const NoiseSchedule& s,
                const GuidanceConfig& g,
                const CounterRng& master,
                std::size_t n_scenarios,
                std::size_t batch_size = 16)
{
  return to_ensemble(
    sample_scenarios(x_past, past_mask, horizon, cond, predict, s, g, master, n_scenarios, batch_size),
    horizon,
    master.seed());
}

} // namespace emfusion

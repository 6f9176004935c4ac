#pragma once

#include "checkpoint.hpp"
#include "config.hpp"
#include "data_io.hpp"
#include "denoiser.hpp"
#include "diffusion.hpp"
#include "emf_data.hpp"
#include "ensemble.hpp"
#include "intervals.hpp"
#include "metrics.hpp"
#include "optimizer.hpp"
#include "synth.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace emfusion {

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

struct PreparedData
{
  SeriesFrame raw;
  SeriesFrame normalized;
  ScaleRecord scale;
  std::size_t train_rows{ 0 };
};

inline std::size_t
train_row_count(std::size_t steps, double fraction)
{
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(steps))));
}

inline PreparedData
prepare_data(const SeriesFrame& frame, double train_fraction)
{
  PreparedData p;
  p.raw = frame;
  p.train_rows = train_row_count(frame.steps(), train_fraction);
  auto [norm, rec] = normalize(frame, p.train_rows);
  p.normalized = std::move(norm);
  p.scale = std::move(rec);
  return p;
}

inline std::optional<HolidayCalendar>
load_holidays(const RunConfig& cfg)
{
  if (cfg.holidays.empty()) {
    return std::nullopt;
  }
  return io::read_holidays(cfg.holidays);
}

//! Timestamps of rows [first, first + count), extrapolated with the last
//! cadence beyond the end of the frame.
inline std::vector<std::int64_t>
window_timestamps(const std::vector<std::int64_t>& ts, std::size_t first, std::size_t count)
{
  if (ts.empty()) throw InvalidInput("empty frame");
  std::vector<std::int64_t> out(count);
  const std::int64_t step = ts.size() > 1 ? ts[ts.size() - 1] - ts[ts.size() - 2] : 900;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = first + i;
    out[i] = r < ts.size() ? ts[r]
                           : ts.back() + static_cast<std::int64_t>(r - ts.size() + 1) * step;
  }
  return out;
}

//! Fully observed training windows lying inside the training rows.
inline std::vector<WindowPair>
training_windows(const PreparedData& data,
                 const ConditionTrack& track,
                 std::size_t history,
                 std::size_t horizon,
                 std::size_t stride)
{
  const SeriesFrame train = data.normalized.slice(0, data.train_rows);
  auto all = make_windows(train, track.slice(0, data.train_rows), history, horizon, stride);
  std::vector<WindowPair> out;
  for (auto& w : all) {
    if (w.fully_observed()) out.push_back(std::move(w));
  }
  if (out.empty()) {
    throw InvalidInput("no fully observed training window");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochLoss
{
  std::size_t model{ 0 };
  std::size_t epoch{ 0 };
  double mean_loss{ 0.0 };
};

//! Trains one denoiser on full-window matrices.
inline Denoiser
train_denoiser(const std::vector<Matrix>& windows,
               const std::vector<const ConditionTrack*>& tracks,
               const RunConfig& cfg,
               std::size_t model_index,
               std::vector<EpochLoss>* log = nullptr,
               const std::function<void(const EpochLoss&)>& progress = {})
{
  if (windows.empty() || windows.size() != tracks.size()) {
    throw ConfigError("training needs one condition track per window");
  }
  const NoiseSchedule schedule = NoiseSchedule::linear(cfg.schedule);
  const GuidanceConfig guidance = cfg.guidance();
  const CounterRng master = CounterRng(cfg.seed).derive(1000 + model_index);
  CounterRng init_rng = master.derive(0);
  CounterRng order_rng = master.derive(1);
  CounterRng batch_rng = master.derive(2);
  CounterRng dropout_rng = master.derive(3);

  Denoiser model(cfg.net);
  model.initialize(init_rng);
  Adam opt(cfg.learning_rate);
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      std::vector<const Matrix*> xs;
      std::vector<const ConditionTrack*> cs;
      for (std::size_t k = 0; k < count; ++k) {
        xs.push_back(&windows[order[first + k]]);
        cs.push_back(tracks[order[first + k]]);
      }
      const TrainingBatch batch =
        prepare_training_batch(xs, cs, cfg.net.cond_width, schedule, guidance, batch_rng);
      try {
        total += training_step(model, opt, batch, dropout_rng);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      ++batches;
    }
    const EpochLoss entry{ model_index, epoch, total / static_cast<double>(batches) };
    if (!std::isfinite(entry.mean_loss)) {
      throw NumericError("non-finite loss in epoch " + std::to_string(epoch));
    }
    if (log) log->push_back(entry);
    if (progress) progress(entry);
  }
  return model;
}

//! One model in multivariate mode, one per channel in univariate mode.
inline Checkpoint
train_checkpoint(const PreparedData& data,
                 const RunConfig& cfg,
                 const std::optional<HolidayCalendar>& holidays,
                 std::vector<EpochLoss>* log = nullptr,
                 const std::function<void(const EpochLoss&)>& progress = {})
{
  cfg.validate();
  const ConditionTrack track = build_conditions(data.normalized.timestamps, cfg.condition, holidays, cfg.time_zone);
  const auto windows = training_windows(data, track, cfg.history, cfg.horizon, cfg.stride);
  Checkpoint ck;
  ck.net = cfg.net;
  ck.schedule = cfg.schedule;
  ck.history = cfg.history;
  ck.horizon = cfg.horizon;
  ck.channels = data.normalized.channels();
  ck.schema = cfg.condition;
  ck.scale = data.scale;
  std::vector<const ConditionTrack*> tracks;
  for (const auto& w : windows) tracks.push_back(&w.conditions);
  if (cfg.net.mode == NetMode::multivariate) {
    std::vector<Matrix> xs;
    for (const auto& w : windows) xs.push_back(w.full_values());
    ck.models.push_back(train_denoiser(xs, tracks, cfg, 0, log, progress));
  } else {
    for (std::size_t c = 0; c < ck.channels; ++c) {
      std::vector<Matrix> xs;
      for (const auto& w : windows) xs.push_back(w.full_values().column(c));
      ck.models.push_back(train_denoiser(xs, tracks, cfg, c, log, progress));
    }
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Forecasting
// ---------------------------------------------------------------------------

struct ForecastResult
{
  std::size_t origin{ 0 };
  std::vector<std::int64_t> timestamps; // H + F rows
  ScenarioEnsemble ensemble;            // future block, physical units
  Matrix past_median;                   // H x N, physical units, observed entries echoed
};

inline Matrix
select_column(const Matrix& m, std::size_t c)
{
  return m.column(c);
}

//! Samples the ensemble for the window whose past block starts at `origin`.
//! Observed past entries are checked against the clamp before returning.
inline ForecastResult
forecast_window(const Checkpoint& ck,
                const PreparedData& data,
                std::size_t origin,
                const RunConfig& cfg,
                const std::optional<HolidayCalendar>& holidays)
{
  const std::size_t hist = ck.history, hor = ck.horizon, n = ck.channels;
  if (data.normalized.channels() != n) {
    throw ConfigError("checkpoint expects " + std::to_string(n) + " channels, data has " +
                      std::to_string(data.normalized.channels()));
  }
  if (origin + hist > data.normalized.steps()) {
    throw InvalidInput("origin " + std::to_string(origin) + " leaves fewer than " + std::to_string(hist) +
                       " past rows");
  }
  const NoiseSchedule schedule = NoiseSchedule::linear(ck.schedule);
  const GuidanceConfig guidance = cfg.guidance();
  ForecastResult fr;
  fr.origin = origin;
  fr.timestamps = window_timestamps(data.normalized.timestamps, origin, hist + hor);
  const ConditionTrack track = build_conditions(fr.timestamps, ck.schema, holidays, cfg.time_zone);
  std::vector<const ConditionTrack*> tp{ &track };
  const Tensor cond = condition_tensor(tp, ck.net.cond_width);
  const Matrix past = data.normalized.values.slice_rows(origin, hist);
  const Matrix mask = data.normalized.mask.slice_rows(origin, hist);
  const CounterRng master = CounterRng(cfg.seed).derive(2000000 + origin);

  fr.ensemble = ScenarioEnsemble(cfg.scenarios, hor, n, cfg.seed);
  Matrix past_norm(hist, n);
  auto check_and_store = [&](const std::vector<Matrix>& states, const Matrix& xp, const Matrix& mp, std::size_t c0) {
    const std::size_t w = xp.cols();
    std::vector<double> cell(states.size());
    for (std::size_t r = 0; r < hist; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t s = 0; s < states.size(); ++s) {
          if (mp(r, c) == 1.0 && states[s](r, c) != xp(r, c)) {
            throw NumericError("observed entry (" + std::to_string(r) + "," + std::to_string(c0 + c) +
                               ") not preserved by the sampler");
          }
          cell[s] = states[s](r, c);
        }
        past_norm(r, c0 + c) = lower_median(cell);
      }
    }
    for (std::size_t s = 0; s < states.size(); ++s) {
      for (std::size_t k = 0; k < hor; ++k) {
        for (std::size_t c = 0; c < w; ++c) {
          const std::size_t cc = c0 + c;
          fr.ensemble.at(s, k, cc) = states[s](hist + k, c) * ck.scale.scale[cc] + ck.scale.offset[cc];
        }
      }
    }
  };
  if (ck.net.mode == NetMode::multivariate) {
    const auto states = sample_scenarios(past, mask, hor, cond, make_predictor(ck.models.at(0)), schedule,
                                         guidance, master, cfg.scenarios, cfg.sample_batch);
    check_and_store(states, past, mask, 0);
  } else {
    if (ck.models.size() != n) throw ConfigError("univariate checkpoint needs one model per channel");
    for (std::size_t c = 0; c < n; ++c) {
      const Matrix xp = past.column(c), mp = mask.column(c);
      const auto states = sample_scenarios(xp, mp, hor, cond, make_predictor(ck.models[c]), schedule,
                                           guidance, master.derive(c), cfg.scenarios, cfg.sample_batch);
      check_and_store(states, xp, mp, c);
    }
  }
  fr.past_median = denormalize(past_norm, ck.scale);
  for (std::size_t r = 0; r < hist; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (mask(r, c) == 1.0) fr.past_median(r, c) = data.raw.values(origin + r, c);
    }
  }
  fr.ensemble.validate();
  return fr;
}

//! Past-block starts whose forecast begins at the end of the training rows
//! and advances by one horizon per window.
inline std::vector<std::size_t>
default_origins(std::size_t steps, std::size_t train_rows, std::size_t history, std::size_t horizon, std::size_t max_windows)
{
  std::vector<std::size_t> out;
  if (steps < history + horizon) {
    throw InvalidInput("series shorter than one window");
  }
  std::size_t k = train_rows >= history ? train_rows - history : 0;
  for (; k + history + horizon <= steps && out.size() < max_windows; k += horizon) {
    out.push_back(k);
  }
  if (out.empty()) out.push_back(steps - history - horizon);
  return out;
}

// ---------------------------------------------------------------------------
// Artifact writers
// ---------------------------------------------------------------------------

inline std::vector<double>
frequencies_mhz(const SeriesFrame& f)
{
  std::vector<double> out;
  for (const auto& s : f.channel_specs) out.push_back(s.frequency_hz / 1e6);
  if (out.empty()) {
    for (std::size_t c = 0; c < f.channels(); ++c) out.push_back(static_cast<double>(c));
  }
  return out;
}

inline void
write_interval_csv(const std::filesystem::path& path,
                   const ScenarioEnsemble& e,
                   const std::vector<double>& gammas,
                   IntervalMethod method)
{
  const Matrix med = ensemble_median(e);
  std::vector<PredictionInterval> pis;
  for (double g : gammas) pis.push_back(ensemble_interval(e, g, method));
  io::write_atomically(path, [&](std::ostream& out) {
    out << "step,channel,gamma,lower,upper,median\n";
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
      for (std::size_t k = 0; k < e.horizon; ++k) {
        for (std::size_t c = 0; c < e.channels; ++c) {
          out << k << ',' << c << ',' << io::format_double(gammas[gi]) << ','
              << io::format_double(pis[gi].lower(k, c)) << ',' << io::format_double(pis[gi].upper(k, c)) << ','
              << io::format_double(med(k, c)) << '\n';
        }
      }
    }
  });
}

inline void
write_forecast(const std::filesystem::path& dir,
               const ForecastResult& fr,
               const std::vector<double>& freqs,
               const std::vector<double>& gammas)
{
  std::filesystem::create_directories(dir);
  io::write_atomically(dir / "ensemble.bin", [&](std::ostream& out) { write_ensemble(out, fr.ensemble); }, true);
  const std::size_t hist = fr.past_median.rows();
  std::vector<std::int64_t> past_ts(fr.timestamps.begin(), fr.timestamps.begin() + static_cast<std::ptrdiff_t>(hist));
  std::vector<std::int64_t> fut_ts(fr.timestamps.begin() + static_cast<std::ptrdiff_t>(hist), fr.timestamps.end());
  io::write_table(dir / "median.csv", fut_ts, freqs, ensemble_median(fr.ensemble));
  io::write_table(dir / "past.csv", past_ts, freqs, fr.past_median);
  write_interval_csv(dir / "intervals_kde.csv", fr.ensemble, gammas, IntervalMethod::kde);
  write_interval_csv(dir / "intervals_os.csv", fr.ensemble, gammas, IntervalMethod::order_statistic);
}

inline void
write_loss_log(const std::filesystem::path& path, const std::vector<EpochLoss>& log)
{
  io::write_atomically(path, [&](std::ostream& out) {
    out << "model,epoch,mean_loss\n";
    for (const auto& e : log) {
      out << e.model << ',' << e.epoch << ',' << io::format_double(e.mean_loss) << '\n';
    }
  });
}

inline std::string
metric_text(double v)
{
  return is_undefined(v) ? std::string("undefined") : io::format_double(v);
}

inline void
write_report(const std::filesystem::path& dir, const EvalReport& rep, std::size_t windows)
{
  std::filesystem::create_directories(dir);
  std::vector<const MetricRow*> rows;
  for (const auto& r : rep.channels) rows.push_back(&r);
  rows.push_back(&rep.all);
  io::write_atomically(dir / "report.txt", [&](std::ostream& out) {
    out << "windows = " << windows << '\n';
    out << "scenarios = " << rep.scenarios << '\n';
    out << "gamma = " << io::format_double(rep.gamma) << '\n';
    out << "os_formula_coverage = "
        << io::format_double(100.0 * order_statistic_coverage(rep.scenarios, rep.gamma)) << '\n';
    out << "energy_single_sample = " << (rep.energy_single_sample ? 1 : 0) << '\n';
    for (const MetricRow* r : rows) {
      const std::string p = r->name + ".";
      out << p << "count = " << r->count << '\n';
      out << p << "mape = " << metric_text(r->mape) << '\n';
      out << p << "mape_excluded = " << r->mape_excluded << '\n';
      out << p << "nd = " << metric_text(r->nd) << '\n';
      out << p << "rmse = " << metric_text(r->rmse) << '\n';
      out << p << "nrmse = " << metric_text(r->nrmse) << '\n';
      out << p << "picp_kde = " << metric_text(r->picp_kde) << '\n';
      out << p << "picp_os = " << metric_text(r->picp_os) << '\n';
      out << p << "crps = " << metric_text(r->crps) << '\n';
      out << p << "energy = " << metric_text(r->energy) << '\n';
    }
  });
  io::write_atomically(dir / "report.csv", [&](std::ostream& out) {
    out << "channel,count,mape,mape_excluded,nd,rmse,nrmse,picp_kde,picp_os,crps,energy,gamma\n";
    for (const MetricRow* r : rows) {
      out << r->name << ',' << r->count << ',' << metric_text(r->mape) << ',' << r->mape_excluded << ','
          << metric_text(r->nd) << ',' << metric_text(r->rmse) << ',' << metric_text(r->nrmse) << ','
          << metric_text(r->picp_kde) << ',' << metric_text(r->picp_os) << ',' << metric_text(r->crps) << ','
          << metric_text(r->energy) << ',' << io::format_double(rep.gamma) << '\n';
    }
  });
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::filesystem::path
checkpoint_path(const RunConfig& cfg)
{
  return cfg.checkpoint.empty() ? cfg.out_dir / "model.ckpt" : cfg.checkpoint;
}

inline SeriesFrame
load_frame(const RunConfig& cfg, const std::filesystem::path& path)
{
  if (path.empty()) throw ConfigError("no data file configured");
  if (!std::filesystem::exists(path)) throw ConfigError("data file '" + path.string() + "' not found");
  std::vector<ChannelSpec> specs;
  if (!cfg.channels.empty()) specs = io::read_channel_specs(cfg.channels);
  return io::read_field_frame(path, specs);
}

inline std::filesystem::path
cmd_convert(const std::filesystem::path& raw_csv,
            const std::filesystem::path& channel_specs,
            const std::filesystem::path& out_csv)
{
  const auto specs = io::read_channel_specs(channel_specs);
  const auto raw = io::read_table(raw_csv);
  const SeriesFrame f = io::convert_table(raw, specs);
  io::write_field_frame(out_csv, f);
  return out_csv;
}

//! Writes field.csv (+ mask), channels.csv, holidays.csv, conditions.csv
//! and synth_params.txt under `dir`.
inline void
cmd_synth(const RunConfig& cfg, const std::filesystem::path& dir)
{
  const SynthResult r = generate_synthetic(cfg.synth, cfg.seed);
  std::filesystem::create_directories(dir);
  io::write_field_frame(dir / "field.csv", r.frame);
  io::write_atomically(dir / "channels.csv", [&](std::ostream& out) {
    out << "frequency_mhz,antenna_factor,labels\n";
    for (const auto& s : r.frame.channel_specs) {
      out << io::format_double(s.frequency_hz / 1e6) << ',' << io::format_double(s.antenna_factor_db_per_m);
      for (const auto& l : s.labels) out << ',' << l;
      out << '\n';
    }
  });
  io::write_atomically(dir / "holidays.csv", [&](std::ostream& out) { out << "# no holidays\n"; });
  const ConditionTrack track =
    build_conditions(r.frame.timestamps, ConditionSchema::working_hour, std::nullopt, cfg.synth.time_zone);
  io::write_conditions(dir / "conditions.csv", r.frame.timestamps, track);
  const SynthSpec& s = cfg.synth;
  io::write_atomically(dir / "synth_params.txt", [&](std::ostream& out) {
    out << "seed = " << cfg.seed << '\n'
        << "channels = " << s.channels << '\n'
        << "days = " << s.days << '\n'
        << "cadence_minutes = " << s.cadence_minutes << '\n'
        << "start = " << s.start << '\n'
        << "time_zone = " << s.time_zone << '\n'
        << "base = " << io::format_double(s.base) << '\n'
        << "base_step = " << io::format_double(s.base_step) << '\n'
        << "kappa = " << io::format_double(s.kappa) << '\n'
        << "daily_amp = " << io::format_double(s.daily_amp) << '\n'
        << "noise = " << io::format_double(s.noise) << '\n'
        << "missing = " << io::format_double(s.missing) << '\n';
    for (std::size_t c = 0; c < s.channels; ++c) {
      out << "channel" << c << ".base = " << io::format_double(s.channel_base(c)) << '\n'
          << "channel" << c << ".phase = " << io::format_double(s.channel_phase(c)) << '\n';
    }
  });
}

inline std::filesystem::path
cmd_train(const RunConfig& cfg, const std::function<void(const EpochLoss&)>& progress = {})
{
  cfg.validate();
  const SeriesFrame frame = load_frame(cfg, cfg.data);
  const PreparedData data = prepare_data(frame, cfg.train_fraction);
  std::vector<EpochLoss> log;
  const Checkpoint ck = train_checkpoint(data, cfg, load_holidays(cfg), &log, progress);
  const auto path = checkpoint_path(cfg);
  save_checkpoint(path, ck);
  write_loss_log(cfg.out_dir / "loss_log.csv", log);
  return path;
}

//! Forecasts every origin (default: consecutive test windows) and writes
//! one directory per origin plus a manifest.
inline std::filesystem::path
cmd_forecast(const RunConfig& cfg, std::vector<std::size_t> origins = {})
{
  cfg.validate();
  const Checkpoint ck = load_checkpoint(checkpoint_path(cfg));
  const SeriesFrame frame = load_frame(cfg, cfg.data);
  PreparedData data;
  data.raw = frame;
  data.train_rows = train_row_count(frame.steps(), cfg.train_fraction);
  data.scale = ck.scale;
  if (ck.scale.offset.size() != frame.channels()) {
    throw ConfigError("checkpoint was trained on " + std::to_string(ck.scale.offset.size()) + " channels, data has " +
                      std::to_string(frame.channels()));
  }
  data.normalized = frame;
  data.normalized.values = normalize(frame.values, frame.mask, ck.scale);
  if (origins.empty()) {
    origins = default_origins(frame.steps(), data.train_rows, ck.history, ck.horizon, cfg.max_windows);
  }
  const auto holidays = load_holidays(cfg);
  const auto dir = cfg.out_dir / "forecast";
  std::filesystem::create_directories(dir);
  const auto freqs = frequencies_mhz(frame);
  for (std::size_t k : origins) {
    const ForecastResult fr = forecast_window(ck, data, k, cfg, holidays);
    write_forecast(dir / ("origin_" + std::to_string(k)), fr, freqs, cfg.gammas);
  }
  io::write_atomically(dir / "manifest.csv", [&](std::ostream& out) {
    out << "origin,history,horizon,directory\n";
    for (std::size_t k : origins) {
      out << k << ',' << ck.history << ',' << ck.horizon << ",origin_" << k << '\n';
    }
  });
  return dir;
}

//! Scores a forecast directory against a truth field file.
inline EvalReport
cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& forecast_dir, const std::filesystem::path& truth_csv)
{
  cfg.validate();
  const auto lines = io::read_lines(forecast_dir / "manifest.csv");
  if (lines.size() < 2) throw InvalidInput("forecast manifest lists no windows");
  const SeriesFrame truth = load_frame(cfg, truth_csv);
  if (truth.steps() == 0) throw InvalidInput("truth file has no rows");
  std::vector<ScenarioEnsemble> ens;
  std::vector<Matrix> blocks;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = io::split_csv_line(lines[i]);
    if (f.size() != 4) throw InvalidInput("bad manifest row '" + lines[i] + "'");
    const auto origin = static_cast<std::size_t>(io::parse_double(f[0], "manifest"));
    const auto hist = static_cast<std::size_t>(io::parse_double(f[1], "manifest"));
    const auto hor = static_cast<std::size_t>(io::parse_double(f[2], "manifest"));
    ScenarioEnsemble e = read_ensemble(forecast_dir / f[3] / "ensemble.bin");
    if (e.horizon != hor || e.channels != truth.channels()) {
      throw InvalidInput("forecast shape differs from truth file");
    }
    const std::size_t first = origin + hist;
    if (first + hor > truth.steps()) {
      throw InvalidInput("truth file ends before the forecast window at origin " + std::to_string(origin));
    }
    const Matrix m = truth.mask.slice_rows(first, hor);
    for (double v : m.data()) {
      if (v != 1.0) throw InvalidInput("truth missing inside the forecast window at origin " + std::to_string(origin));
    }
    blocks.push_back(truth.values.slice_rows(first, hor));
    ens.push_back(std::move(e));
  }
  std::vector<std::string> names;
  for (double f : frequencies_mhz(truth)) names.push_back("f" + io::format_double(f));
  const EvalReport rep = evaluate_forecasts(ens, blocks, cfg.gammas.front(), names);
  write_report(cfg.out_dir, rep, ens.size());
  return rep;
}

} // namespace emfusion

#pragma once

#include "denoiser.hpp"
#include "diffusion.hpp"
#include "emf_data.hpp"
#include "error.hpp"
#include "synth.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace emfusion {

struct RunConfig
{
  // [paths]
  std::filesystem::path data;
  std::filesystem::path channels;
  std::filesystem::path holidays;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir{ "out" };

  // [data]
  std::string time_zone{ "Europe/Rome" };
  double train_fraction{ 0.8 };
  std::size_t stride{ 1 };

  // [window]
  std::size_t history{ 1344 };
  std::size_t horizon{ 192 };

  // [schedule]
  ScheduleConfig schedule;

  // [net]
  NetConfig net{ NetConfig::full() };

  // [train]
  double learning_rate{ 5e-4 };
  std::size_t batch_size{ 64 };
  std::size_t epochs{ 1500 };
  std::uint64_t seed{ 0 };
  ConditionSchema condition{ ConditionSchema::working_hour };
  double condition_dropout{ 0.1 };

  // [sampling]
  std::size_t scenarios{ 100 };
  double guidance_scale{ 0.0 };
  std::vector<double> gammas{ 0.8 };
  std::size_t sample_batch{ 16 };
  std::size_t max_windows{ 8 };

  // [synth]
  SynthSpec synth;

  GuidanceConfig guidance() const { return { guidance_scale, condition_dropout }; }

  //! Small-model preset for single-core runs.
  void apply_desk_scale()
  {
    net = NetConfig::desk();
    net.mode = mode_;
    history = 96;
    horizon = 24;
    epochs = 50;
    batch_size = 32;
    schedule.steps = 50;
    stride = 8;
  }

  NetMode mode() const { return net.mode; }
  void set_mode(NetMode m)
  {
    mode_ = m;
    net.mode = m;
  }

  void validate() const
  {
    if (history == 0 || horizon == 0) throw ConfigError("history and horizon must be positive");
    if (schedule.steps == 0) throw ConfigError("schedule steps must be positive");
    if (scenarios == 0) throw ConfigError("scenarios must be positive");
    if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be positive");
    if (stride == 0) throw ConfigError("stride must be positive");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must be in (0, 1]");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (gammas.empty()) throw ConfigError("at least one interval level required");
    for (double g : gammas) {
      if (!(g > 0.0 && g < 1.0)) throw ConfigError("interval levels must lie in (0, 1)");
    }
    net.validate();
    guidance().validate();
    synth.validate();
  }

private:
  NetMode mode_{ NetMode::multivariate };
};

namespace config_detail {

inline double
to_double(const std::string& key, const std::string& v)
{
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

inline std::uint64_t
to_uint(const std::string& key, const std::string& v)
{
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

inline std::vector<double>
to_list(const std::string& key, const std::string& v)
{
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(to_double(key, item.substr(a, b - a + 1)));
  }
  return out;
}

} // namespace config_detail

//! Overrides the fields present in an INI file. Relative paths resolve
//! against the file's directory; unknown keys are rejected.
inline void
apply_config_file(RunConfig& cfg, const std::filesystem::path& file)
{
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(file.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("cannot read config '" + file.string() + "': " + e.message());
  }
  const auto base = file.parent_path();
  auto path = [&](std::filesystem::path& field) {
    return [&field, base](const std::string& v) {
      std::filesystem::path p(v);
      field = p.is_relative() ? base / p : p;
    };
  };
  using Setter = std::function<void(const std::string&)>;
  auto dbl = [](double& f, std::string k) { return Setter([&f, k](const std::string& v) { f = config_detail::to_double(k, v); }); };
  auto uns = [](std::size_t& f, std::string k) {
    return Setter([&f, k](const std::string& v) { f = static_cast<std::size_t>(config_detail::to_uint(k, v)); });
  };
  std::map<std::string, Setter> keys = {
    { "paths.data", path(cfg.data) },
    { "paths.channels", path(cfg.channels) },
    { "paths.holidays", path(cfg.holidays) },
    { "paths.checkpoint", path(cfg.checkpoint) },
    { "paths.out_dir", path(cfg.out_dir) },
    { "data.time_zone", [&](const std::string& v) { cfg.time_zone = v; } },
    { "data.train_fraction", dbl(cfg.train_fraction, "data.train_fraction") },
    { "data.stride", uns(cfg.stride, "data.stride") },
    { "window.history", uns(cfg.history, "window.history") },
    { "window.horizon", uns(cfg.horizon, "window.horizon") },
    { "schedule.steps", uns(cfg.schedule.steps, "schedule.steps") },
    { "schedule.beta_start", dbl(cfg.schedule.beta_start, "schedule.beta_start") },
    { "schedule.beta_end", dbl(cfg.schedule.beta_end, "schedule.beta_end") },
    { "net.depth", uns(cfg.net.depth, "net.depth") },
    { "net.width", uns(cfg.net.width, "net.width") },
    { "net.heads", uns(cfg.net.heads, "net.heads") },
    { "net.cond_width", uns(cfg.net.cond_width, "net.cond_width") },
    { "net.dropout", dbl(cfg.net.dropout, "net.dropout") },
    { "net.mode", [&](const std::string& v) { cfg.set_mode(parse_net_mode(v)); } },
    { "train.learning_rate", dbl(cfg.learning_rate, "train.learning_rate") },
    { "train.batch_size", uns(cfg.batch_size, "train.batch_size") },
    { "train.epochs", uns(cfg.epochs, "train.epochs") },
    { "train.seed", [&](const std::string& v) { cfg.seed = config_detail::to_uint("train.seed", v); } },
    { "train.condition", [&](const std::string& v) { cfg.condition = parse_condition_schema(v); } },
    { "train.condition_dropout", dbl(cfg.condition_dropout, "train.condition_dropout") },
    { "sampling.scenarios", uns(cfg.scenarios, "sampling.scenarios") },
    { "sampling.guidance_scale", dbl(cfg.guidance_scale, "sampling.guidance_scale") },
    { "sampling.gammas", [&](const std::string& v) { cfg.gammas = config_detail::to_list("sampling.gammas", v); } },
    { "sampling.batch", uns(cfg.sample_batch, "sampling.batch") },
    { "sampling.max_windows", uns(cfg.max_windows, "sampling.max_windows") },
    { "synth.channels", uns(cfg.synth.channels, "synth.channels") },
    { "synth.days", uns(cfg.synth.days, "synth.days") },
    { "synth.cadence_minutes", uns(cfg.synth.cadence_minutes, "synth.cadence_minutes") },
    { "synth.start", [&](const std::string& v) { cfg.synth.start = v; } },
    { "synth.time_zone", [&](const std::string& v) { cfg.synth.time_zone = v; } },
    { "synth.base", dbl(cfg.synth.base, "synth.base") },
    { "synth.base_step", dbl(cfg.synth.base_step, "synth.base_step") },
    { "synth.kappa", dbl(cfg.synth.kappa, "synth.kappa") },
    { "synth.daily_amp", dbl(cfg.synth.daily_amp, "synth.daily_amp") },
    { "synth.noise", dbl(cfg.synth.noise, "synth.noise") },
    { "synth.missing", dbl(cfg.synth.missing, "synth.missing") },
  };
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("config entry '" + section + "' outside a section");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = keys.find(full);
      if (it == keys.end()) {
        throw ConfigError("unknown config key '" + full + "'");
      }
      it->second(value.get_value<std::string>());
    }
  }
}

} // namespace emfusion

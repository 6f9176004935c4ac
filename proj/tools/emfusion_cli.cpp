#include "emfusion/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Flags
{
  std::string config;
  bool desk = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> condition;
  std::optional<double> guidance;
  std::optional<std::size_t> scenarios;
  std::optional<std::string> out;
  std::optional<std::string> input;
  std::optional<std::size_t> epochs;
  std::string channels;
  std::string truth;
  std::vector<std::size_t> origins;
};

emfusion::RunConfig
resolve(const Flags& f)
{
  emfusion::RunConfig cfg;
  if (f.mode) cfg.set_mode(emfusion::parse_net_mode(*f.mode));
  if (f.desk) cfg.apply_desk_scale();
  if (!f.config.empty()) emfusion::apply_config_file(cfg, f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.mode) cfg.set_mode(emfusion::parse_net_mode(*f.mode));
  if (f.condition) cfg.condition = emfusion::parse_condition_schema(*f.condition);
  if (f.guidance) cfg.guidance_scale = *f.guidance;
  if (f.scenarios) cfg.scenarios = *f.scenarios;
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.out) cfg.out_dir = *f.out;
  if (!f.channels.empty()) cfg.channels = f.channels;
  cfg.validate();
  return cfg;
}

} // namespace

int
main(int argc, char** argv)
{
  CLI::App app{ "emfusion: probabilistic EMF forecasting with conditional diffusion" };
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config, "run config (INI)");
  app.add_flag("--desk-scale", f.desk, "small preset for single-core runs");
  app.add_option("--seed", f.seed, "master seed");
  app.add_option("--mode", f.mode, "uv or mv")->check(CLI::IsMember({ "uv", "mv" }));
  app.add_option("--condition", f.condition, "none, workingday, workinghour, season, multi")
    ->check(CLI::IsMember({ "none", "workingday", "workinghour", "working_day", "working_hour", "season", "multi" }));
  app.add_option("--guidance-scale", f.guidance, "classifier-free guidance scale");
  app.add_option("--scenarios", f.scenarios, "ensemble size");
  app.add_option("--epochs", f.epochs, "training epochs");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--channels", f.channels, "channel spec csv");

  auto* convert = app.add_subcommand("convert", "raw dBm csv to field strength csv + mask");
  std::string raw, converted;
  convert->add_option("--input", raw, "raw csv")->required();
  convert->add_option("--output", converted, "field csv")->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic working-hour dataset");
  auto* train = app.add_subcommand("train", "fit the denoiser(s) and write a checkpoint");
  train->add_option("--input", f.input, "field csv (overrides [paths] data)");
  auto* forecast = app.add_subcommand("forecast", "sample scenario ensembles");
  forecast->add_option("--input", f.input, "field csv (overrides [paths] data)");
  forecast->add_option("--origin", f.origins, "past-window start row (repeatable)");
  auto* evaluate = app.add_subcommand("evaluate", "score forecasts against truth");
  evaluate->add_option("--input", f.input, "forecast directory (default <out>/forecast)");
  evaluate->add_option("--truth", f.truth, "truth field csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  emfusion::ag::use_single_thread_blas();
  try {
    emfusion::RunConfig cfg = resolve(f);
    if (*convert) {
      if (cfg.channels.empty()) throw emfusion::ConfigError("convert needs --channels");
      emfusion::cmd_convert(raw, cfg.channels, converted);
      std::cout << converted << '\n';
    } else if (*synth) {
      emfusion::cmd_synth(cfg, cfg.out_dir);
      std::cout << (cfg.out_dir / "field.csv").string() << '\n';
    } else if (*train) {
      if (f.input) cfg.data = *f.input;
      const auto path = emfusion::cmd_train(cfg, [](const emfusion::EpochLoss& e) {
        std::cerr << "model " << e.model << " epoch " << e.epoch << " loss " << e.mean_loss << '\n';
      });
      std::cout << path.string() << '\n';
    } else if (*forecast) {
      if (f.input) cfg.data = *f.input;
      std::cout << emfusion::cmd_forecast(cfg, f.origins).string() << '\n';
    } else if (*evaluate) {
      const std::filesystem::path dir = f.input ? std::filesystem::path(*f.input) : cfg.out_dir / "forecast";
      emfusion::cmd_evaluate(cfg, dir, f.truth);
      std::cout << (cfg.out_dir / "report.txt").string() << '\n' << (cfg.out_dir / "report.csv").string() << '\n';
    }
  } catch (const emfusion::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

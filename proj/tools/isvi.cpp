// Command-line driver: fit a model, run the weight-decay study, or benchmark
// optimizer variants on a shared setup.

#include <CLI11.hpp>
#include <cstdint>
#include <optional>
#include <string>

#include "isvi/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"variational inference with importance-sampled gradient reuse"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "path to a JSON run configuration")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "override the output directory");
  };

  CLI::App* fit = app.add_subcommand("fit", "fit one model with one optimizer");
  add_common(fit);
  CLI::App* weight_decay = app.add_subcommand(
      "weight-decay", "track importance-weight decay across factor sizes");
  add_common(weight_decay);
  CLI::App* bench =
      app.add_subcommand("bench", "compare optimizer variants on an identical setup");
  add_common(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // bad usage is a config error
  }

  if (fit->parsed()) return isvi::cmd_fit(config_path, seed, out);
  if (weight_decay->parsed()) return isvi::cmd_weight_decay(config_path, seed, out);
  return isvi::cmd_bench(config_path, seed, out);
}

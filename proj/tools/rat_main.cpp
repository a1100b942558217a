// rat: command-line driver.
//
//   rat illustrate-gaussian|verify-kaczmarz|train|ablate --config <path> --out <dir>
//       [--seed N] [--override key=value]...
//
// Exit codes: 0 success, 1 bound violated, 2 configuration error, 3 runtime failure.

#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "rat/errors.hpp"
#include "rat/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Randomized advantage transformation experiments"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  const char* names[] = {"illustrate-gaussian", "verify-kaczmarz", "train", "ablate"};
  for (const char* name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "config file (key = value lines or JSON)")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "seed; overrides RAT_SEED and the config");
    sub->add_option("--override", overrides, "key=value applied after the config file");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto command = rat::parse_command(app.get_subcommands().front()->get_name());
    rat::Json raw = rat::load_config_file(config_path);
    for (const auto& o : overrides) rat::apply_override(raw, o);
    rat::apply_seed(command, raw, seed, std::getenv("RAT_SEED"));
    const rat::Json resolved = rat::resolve_config(command, raw);
    return rat::run_command(command, resolved, out_dir, std::cout);
  } catch (const rat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

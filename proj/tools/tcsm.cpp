// tcsm: command-line front end for training, post-training, sampling and
// evaluation runs.

#include <CLI11.hpp>
#include <iostream>

#include "tcsm/app.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"Discrete diffusion training with target concrete score matching"};
  cli.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;

  for (const auto& name : tcsm::subcommands()) {
    auto* sub = cli.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "global seed (overrides run.seed)");
    sub->add_option("--workers", workers, "worker threads (overrides run.workers)");
    sub->add_option("--out", out, "run directory (overrides run.out)");
  }

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? tcsm::kExitOk : tcsm::kExitConfig;
  }

  const std::string name = cli.get_subcommands().front()->get_name();
  try {
    const auto cfg = tcsm::load_config(config_path, {seed, workers, out});
    return tcsm::run_subcommand(name, cfg);
  } catch (const std::exception& e) {
    std::cerr << "tcsm " << name << ": " << e.what() << '\n';
    return tcsm::exit_code_for(e);
  }
}

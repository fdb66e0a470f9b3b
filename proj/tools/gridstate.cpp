#include <cstdio>

#include "CLI11.hpp"
#include "gridse/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"power-system state estimation experiments"};
  app.require_subcommand(1);

  CLI::App* run = app.add_subcommand("run", "run one experiment and write its outputs");
  std::string experiment, config_path, out_dir = "out";
  int trials = 0;
  long long seed = 0;
  run->add_option("experiment", experiment, "one of: convergence, plr, latency")
      ->required()
      ->check(CLI::IsMember({"convergence", "plr", "latency"}));
  run->add_option("--config", config_path, "experiment configuration file")->required();
  CLI::Option* trials_opt =
      run->add_option("--trials", trials, "override the configured trial count");
  CLI::Option* seed_opt = run->add_option("--seed", seed, "override the configured RNG seed");
  run->add_option("--out", out_dir, "output directory, created if missing (default: out)");

  CLI11_PARSE(app, argc, argv);

  gridse::RunOptions opt;
  opt.config_path = config_path;
  opt.out_dir = out_dir;
  if (trials_opt->count()) opt.trials = trials;
  if (seed_opt->count()) opt.seed = static_cast<std::uint64_t>(seed);

  try {
    return gridse::run_experiment(experiment, opt);
  } catch (const gridse::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gridse::CaseError& e) {
    std::fprintf(stderr, "case error: %s\n", e.what());
    return 2;
  } catch (const gridse::EstimationError& e) {
    std::fprintf(stderr, "estimation error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

// Command-line front end: named scenarios or explicit configs in, CSV/JSON
// records out. Exit codes: 0 ok, 2 config error, 3 solver failure,
// 4 assertion failure (with --assert).
#include "thickflow/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace thick;

int main(int argc, char** argv) {
  CLI::App app{"thickflow: gradient-constrained incompressible flow workbench"};
  app.require_subcommand(1);
  app.fallthrough();  // accept global flags after the subcommand too

  std::string config_path, out_dir = "out", scenario;
  int workers = 1;
  unsigned long long seed = 0;
  bool assert_mode = false;
  app.add_option("--config", config_path, "config file path");
  app.add_option("--scenario", scenario, "named scenario (S1, D1, Q1, Q2)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--workers", workers, "worker threads for sweeps");
  app.add_option("--seed", seed, "rng seed recorded in outputs");
  app.add_flag("--assert", assert_mode, "enforce acceptance bounds (exit 4 on violation)");

  auto* c_solve = app.add_subcommand("solve", "single run");
  auto* c_seps = app.add_subcommand("sweep-eps", "penalty sweep");
  auto* c_snu = app.add_subcommand("sweep-nu", "viscosity sweep");
  auto* c_dep = app.add_subcommand("depend", "continuous-dependence pairs");
  auto* c_qvi = app.add_subcommand("qvi", "fixed-point iteration with budget");
  auto* c_ora = app.add_subcommand("oracle", "1d penalty-vs-projection check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (config_path.empty()) {
      if (scenario.empty()) {
        std::cerr << "error: give --config or --scenario\n";
        return 2;
      }
      config_path = scenario_path(scenario);
    }
    const Config cfg = Config::from_file(config_path);
    const Experiment ex = build_experiment(cfg, seed);

    if (c_solve->parsed()) return cmd_solve(ex, out_dir, assert_mode);
    if (c_seps->parsed()) return cmd_sweep_eps(ex, out_dir, workers, assert_mode);
    if (c_snu->parsed()) return cmd_sweep_nu(ex, out_dir, workers, assert_mode);
    if (c_dep->parsed()) return cmd_depend(ex, out_dir, workers, assert_mode);
    if (c_qvi->parsed()) return cmd_qvi(ex, out_dir, assert_mode);
    if (c_ora->parsed()) return cmd_oracle(ex, out_dir, assert_mode);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ExprError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SolverFailure& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

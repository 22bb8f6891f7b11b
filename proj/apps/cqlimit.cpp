// cqlimit — hybrid classical-quantum master-equation toolkit.
//
//   cqlimit <mode> --config <path> [--out <dir>] [--threads N] [--seed S]
//
// Modes: evolve, unravel, check-positivity, trotter-convergence, cnm-table,
// ho-oracle.  The JSON config is the single source of truth for a run; the
// flags override only the output directory, the worker-thread cap, and the
// random seed.  Exit codes: 0 success, 1 configuration or I/O failure,
// 2 a verification mode found a violated invariant.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cq/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "Completely positive hybrid classical-quantum dynamics: grid "
      "evolution, stochastic unravelling, and built-in verification modes"};
  app.get_formatter()->column_width(28);

  std::string mode_str;
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  int threads = -1;

  app.add_option("mode", mode_str,
                 "Run mode: evolve | unravel | check-positivity | "
                 "trotter-convergence | cnm-table | ho-oracle")
      ->required()
      ->check(CLI::IsMember(cq::run_mode_names()));
  app.add_option("--config", config_path, "Path to the JSON run config")
      ->required();
  app.add_option("--out", out_dir,
                 "Output directory (overrides output.dir and CQLIMIT_OUT)");
  app.add_option("--threads", threads,
                 "Cap on worker threads (0 = hardware concurrency)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "Random seed override")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Collapse CLI11's varied exit codes onto the documented contract:
    // 0 for --help / --version, 1 for any usage error.
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const cq::RunMode mode = cq::run_mode_from_string(mode_str);
    cq::CliOverrides ov;
    if (!out_dir.empty()) ov.out_dir = out_dir;
    if (seed >= 0) ov.seed = static_cast<std::uint64_t>(seed);
    if (threads >= 0) ov.threads = threads;
    const cq::RunConfig cfg = cq::parse_config(config_path, mode, ov);
    return cq::run(cfg);
  } catch (const cq::InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  } catch (const cq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const cq::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

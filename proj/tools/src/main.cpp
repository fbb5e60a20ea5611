#include "gibbsdiag_cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-Gibbs diagnostics for approximate inference"};
  app.set_version_flag("--version", gibbsdiag::cli::version());
  app.require_subcommand(1);

  std::string config;
  std::string output;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  auto* output_opt = run->add_option("--output", output, "Output directory (overrides the config)");
  auto* seed_opt = run->add_option("--seed-override", seed, "Replace the config seed");

  std::string report_a;
  std::string report_b;
  auto* cmp = app.add_subcommand("compare", "Numeric deltas between two report.json files");
  cmp->add_option("report_a", report_a)->required();
  cmp->add_option("report_b", report_b)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : gibbsdiag::cli::kExitConfigError;
  }

  if (*run) {
    gibbsdiag::cli::RunOptions options;
    if (*output_opt) options.output_dir = output;
    if (*seed_opt) options.seed_override = seed;
    if (const char* threads = std::getenv("GIBBS_DIAG_THREADS")) {
      char* end = nullptr;
      const unsigned long n = std::strtoul(threads, &end, 10);
      if (end == threads || *end != '\0') {
        std::cerr << "config error: GIBBS_DIAG_THREADS must be a positive integer\n";
        return gibbsdiag::cli::kExitConfigError;
      }
      options.max_threads = n;
    }
    return gibbsdiag::cli::run(config, options, std::cerr);
  }
  return gibbsdiag::cli::compare(report_a, report_b, std::cout, std::cerr);
}

// bdx <subcommand> --config PATH [--set key=value]... --out DIR [--paper-scale] [--seed N]
// Exit codes: 0 success, 1 config error, 2 execution error.

#include <chrono>
#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bdx/config.hpp"
#include "bdx/output.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kExecutionError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brownian dynamics with multiplicative noise: transforms, integrators and experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bdx::software_version());

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  bool paper_scale = false;
  std::optional<std::uint64_t> seed;
  bool print_plan = false;

  for (const auto& name : bdx::subcommands()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " study");
    sub->add_option("--config", config_path, "experiment config file (omit for defaults)");
    sub->add_option("--set", overrides, "override a config key, key=value (repeatable)");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_flag("--paper-scale", paper_scale, "start from the full-scale defaults");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_flag("--print-plan", print_plan, "print the resolved plan and exit without running");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }
  const std::string subcommand = app.get_subcommands().front()->get_name();
  if (seed) overrides.push_back("seed=" + std::to_string(*seed));

  bdx::ResolvedConfig config;
  try {
    config = bdx::parse_config(config_path, subcommand, paper_scale, overrides);
  } catch (const std::exception& e) {
    std::cerr << "bdx: config error: " << e.what() << "\n";
    return kConfigError;
  }
  if (print_plan) {
    std::cout << bdx::write_config(config.plan);
    return 0;
  }

  try {
    const auto start = std::chrono::steady_clock::now();
    const bdx::StudyOutput output = bdx::run_study(config.plan);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bdx::write_outputs(output.tables, bdx::build_manifest(config, output, wall), out_dir);
    std::cout << "bdx: " << subcommand << " finished in " << wall << " s; wrote " << output.tables.size()
              << " table(s) to " << out_dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "bdx: execution error: " << e.what() << "\n";
    return kExecutionError;
  }
  return 0;
}

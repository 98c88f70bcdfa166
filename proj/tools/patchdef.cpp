#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "patchdef/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"adversarial patch attack / localize-and-inpaint defense toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool dry_run = false;
  bool resume = false;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "JSON configuration file");
  app.add_option("-s,--set", overrides, "override a config key, e.g. attack.occupancy=0.05");
  app.add_flag("--dry-run", dry_run, "validate configuration and prerequisites, do no work");
  app.add_flag("-q,--quiet", quiet, "suppress progress output");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate the synthetic dataset (or ingest an external one)"},
      {"train-victim", "train the victim classifier on the clean dataset"},
      {"attack", "generate adversarial patched datasets against the victim"},
      {"train-defense", "run the four-stage defense training schedule"},
      {"defend", "run the localize-and-inpaint defense over an attacked split"},
      {"evaluate", "compute accuracy/quality metrics for configured conditions"},
      {"report", "build the full defense report with tables and plots"},
  };
  for (const auto& [name, desc] : commands) app.add_subcommand(name, desc)->fallthrough();
  app.get_subcommand("train-defense")
      ->add_flag("--resume", resume, "resume from the latest epoch checkpoint");

  CLI11_PARSE(app, argc, argv);

  try {
    patchdef::PipelineConfig cfg =
        config_path.empty()
            ? patchdef::PipelineConfig::from_json_text("{}", overrides)
            : patchdef::PipelineConfig::from_file(config_path, overrides);
    patchdef::LogFn log;
    if (!quiet) log = [](const std::string& m) { std::cout << m << std::endl; };
    for (const auto* sub : app.get_subcommands())
      return patchdef::run_command(sub->get_name(), cfg, dry_run, resume, log);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}

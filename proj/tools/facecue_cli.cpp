#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "facecue/cli.hpp"

namespace cli = facecue::cli;

int main(int argc, char** argv) {
  CLI::App app{"facecue: gender cues from 3D facial expressions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", FACECUE_VERSION);

  std::string config_path, out_dir;
  long long seed = -1;
  std::size_t jobs = 1;
  std::string experiment;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)")->check(CLI::NonNegativeNumber);
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  auto* features = app.add_subcommand("features", "preprocess scans and write feature CSVs");
  auto* eval = app.add_subcommand("eval", "run an evaluation protocol");
  auto* analyze = app.add_subcommand("analyze", "saliency maps, variance spectra, demographic balance");
  auto* render = app.add_subcommand("render", "render feature rows as images");
  for (auto* s : {synth, features, eval, analyze, render}) add_common(s);
  eval->add_option("experiment", experiment, "general | matrix | expression_based | histograms")
      ->required()
      ->check(CLI::IsMember({"general", "matrix", "expression_based", "histograms"}));
  analyze->add_option("analysis", experiment, "ttest | pca | balance")
      ->required()
      ->check(CLI::IsMember({"ttest", "pca", "balance"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitConfig;
  }

  cli::Invocation inv;
  inv.command = app.get_subcommands().front()->get_name();
  inv.experiment = experiment;
  inv.out_dir = out_dir;
  inv.jobs = jobs;
  try {
    if (!config_path.empty()) inv.config = cli::Config::load(config_path);
    if (seed >= 0) inv.config.set("seed", std::to_string(seed));
  } catch (const facecue::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitConfig;
  }
  return cli::run(inv);
}

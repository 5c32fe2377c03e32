// steel: run experiment sweeps and summarize their results.
//
//   steel run configs/bandit.json --workers 4
//   steel summarize results/bandit

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "steel/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Pessimistic batch policy learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  int workers = 1;
  bool overwrite = false;
  bool quiet = false;
  std::string output_override;
  auto* run = app.add_subcommand("run", "Run every (method, N, T, seed) cell of a config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--workers,-j", workers, "Cells run concurrently")->check(CLI::PositiveNumber);
  run->add_flag("--overwrite", overwrite, "Discard existing records of this config first");
  run->add_option("--output-dir,-o", output_override, "Override the config's output directory");
  run->add_flag("--quiet,-q", quiet, "Only report failures");

  std::string summary_dir;
  auto* summ = app.add_subcommand("summarize", "Write summary.csv from results.jsonl");
  summ->add_option("dir", summary_dir, "Output directory of a run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = steel::ExperimentConfig::load(config_path);
      if (!output_override.empty()) cfg.output_dir = output_override;
      steel::RunOptions opts;
      opts.workers = workers;
      opts.overwrite = overwrite;
      opts.quiet = quiet;
      const auto report = steel::run_experiment(cfg, opts);
      std::cout << "config " << cfg.hash_hex() << ": " << report.added << " new, " << report.skipped
                << " skipped, " << report.failed << " failed\n";
      if (report.added > 0) std::cout << "summary: " << steel::summarize(cfg.output_dir) << "\n";
      return report.failed > 0 ? 1 : 0;
    }
    std::cout << steel::summarize(summary_dir) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

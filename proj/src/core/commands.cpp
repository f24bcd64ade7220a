#include "core/commands.hpp"

#include <cstdlib>

#include "core/errors.hpp"

namespace spsd {

namespace fs = std::filesystem;

fs::path resolve_out_dir(const std::optional<fs::path>& out_dir) {
  if (out_dir && !out_dir->empty()) return *out_dir;
  if (const char* env = std::getenv("SPSD_OUT_DIR"); env && *env) return env;
  return "spsd_out";
}

ExperimentConfig prepare_config(const CommandOptions& options) {
  if (options.config_path.empty()) fail(ErrorKind::Config, "--config: no config file given");
  ExperimentConfig cfg = load_experiment_config(options.config_path);
  if (options.seed) cfg.seeds = {*options.seed};
  cfg.validate();
  return cfg;
}

fs::path experiment_dir(const fs::path& out_root, const ExperimentConfig& config) {
  return out_root / "runs" / config.name;
}

std::vector<fs::path> cmd_make_data(const CommandOptions& options) {
  const ExperimentConfig cfg = prepare_config(options);
  if (!cfg.data.synthetic) fail(ErrorKind::Config, "data.synthetic: make-data needs a synthetic data section");
  const auto& syn = *cfg.data.synthetic;
  const fs::path out = resolve_out_dir(options.out_dir);
  std::vector<fs::path> dirs;
  for (const auto& spec : syn.domains) {
    const SyntheticDomainSpec one[] = {spec};
    const auto ds = generate_synthetic(one, syn.per_domain_count, cfg.network.num_classes, cfg.network.image_size,
                                       syn.seed, syn.class_profile);
    const auto dir = out / spec.name;
    write_folder_dataset(ds, dir);
    if (options.log) options.log("wrote " + std::to_string(ds.size()) + " images to " + dir.string());
    dirs.push_back(dir);
  }
  return dirs;
}

TrainOutcome cmd_train(const CommandOptions& options) {
  const ExperimentConfig cfg = prepare_config(options);
  // Domain lookup fails here, before any output exists.
  const auto catalog = DomainCatalog::from_config(cfg);
  for (const auto& t : cfg.targets) catalog.index_of(t);
  if (cfg.setting == Setting::SingleSource) catalog.index_of(cfg.source);

  TrainOutcome out;
  out.experiment_dir = experiment_dir(resolve_out_dir(options.out_dir), cfg);
  RunOptions run;
  run.experiment_dir = out.experiment_dir;
  run.resume = options.resume;
  run.log = options.log;
  out.results = run_experiment(cfg, run);
  return out;
}

SweepResult cmd_sweep(const CommandOptions& options) {
  const ExperimentConfig cfg = prepare_config(options);
  if (cfg.hparam_grid.lambda.empty() || cfg.hparam_grid.beta_final.empty())
    fail(ErrorKind::Config, "protocol.hparam_grid: grid is empty");
  const auto catalog = DomainCatalog::from_config(cfg);
  for (const auto& t : cfg.targets) catalog.index_of(t);
  if (cfg.setting == Setting::SingleSource) catalog.index_of(cfg.source);

  RunOptions run;
  run.experiment_dir = experiment_dir(resolve_out_dir(options.out_dir), cfg);
  run.resume = options.resume;
  run.log = options.log;
  return sweep(cfg, run);
}

ReportSummary cmd_report(const fs::path& results_dir, const std::function<void(const std::string&)>& log) {
  auto summary = generate_report(results_dir, log);
  if (log) {
    log("loaded " + std::to_string(summary.runs.size()) + " run(s), skipped " +
        std::to_string(summary.skipped.size()));
    for (const auto& f : summary.files) log("wrote " + f.string());
  }
  return summary;
}

}  // namespace spsd
